"""Invariant and property checks, shared by the test suite and the CLI
property-suite scenario.

Every check returns a list of human-readable findings (empty = pass) so the
CLI can aggregate them into one report; tests assert the lists are empty.
"""

from __future__ import annotations

import numpy as np

from . import rng as rnglib
from .cocycle import (SplittingField, _benettin, oseledets_splitting, psi_n,
                      restricted_cocycle_norms, subspace_angle)
from .dynamics import CAT_LAMBDA_S, CAT_MATRIX, make_map, torus_dist
from .entropy import GridPartition, itinerary_distribution, partition_entropy, \
    shannon_inequalities_check
from .graphs import (_coords_of_image, chart_at, graph_transform,
                     iterate_transform, leaf_volume, leaf_volume_bound,
                     make_graph)
from .measures import (EmpiricalMeasure, Lebesgue, TestFunctionFamily,
                       basin_distances, empirical_measure, make_psi_evaluator,
                       mix, weak_star_distance)
from .sampling import kronecker_sequence

CATALOG_2D = ("cat", "perturbed_cat")


def _random_points(seed: int, n: int, d: int) -> np.ndarray:
    return rnglib.generator(seed, "property-points").random((n, d))


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------

def check_roundtrip(n_points: int = 1000, seed: int = 0, tol: float = 1e-12) -> list[str]:
    """f^{-1}(f(x)) = x on random points, every catalog map."""
    findings = []
    for name in ("cat", "identity", "perturbed_cat", "cat3d"):
        m = make_map(name)
        pts = _random_points(seed, n_points, m.dimension)
        err = torus_dist(m.apply_inverse(m.apply(pts)), pts).max()
        if err > tol:
            findings.append(f"roundtrip: {name} residual {err:.3e} > {tol}")
    return findings


def check_jacobians(seed: int = 1, n_points: int = 50, tol: float = 1e-5) -> list[str]:
    """Analytic Jacobians against central finite differences (step 1e-6),
    and the chain rule for f o f through the finite-difference Jacobian."""
    findings = []
    h = 1e-6
    for name in ("cat", "identity", "perturbed_cat", "cat3d"):
        m = make_map(name)
        pts = _random_points(seed, n_points, m.dimension)
        J = m.jacobian(pts)
        J_fd = _fd_jacobian(m.apply, pts, h)
        err = np.abs(J - J_fd).max()
        if err > tol:
            findings.append(f"jacobian-fd: {name} error {err:.3e} > {tol}")
        J2_fd = _fd_jacobian(lambda p: m.apply(m.apply(p)), pts, h)
        J2 = m.jacobian(m.apply(pts)) @ J
        err2 = np.abs(J2 - J2_fd).max()
        if err2 > 10 * tol:
            findings.append(f"chain-rule: {name} error {err2:.3e} > {10 * tol}")
    det = np.linalg.det(CAT_MATRIX)
    if det != 1.0:
        findings.append(f"cat determinant {det!r} != 1")
    return findings


def _fd_jacobian(fn, pts, h):
    d = pts.shape[-1]
    cols = []
    for a in range(d):
        hi = pts.copy(); hi[..., a] += h
        lo = pts.copy(); lo[..., a] -= h
        from .dynamics import wrap_half
        cols.append(wrap_half(fn(hi) - fn(lo)) / (2 * h))
    return np.stack(cols, axis=-1)


# --------------------------------------------------------------------------
# cocycle
# --------------------------------------------------------------------------

def check_qr_determinant_consistency(seed: int = 2, n: int = 200,
                                     tol: float = 1e-8) -> list[str]:
    """Sum of QR exponents equals the orbit average of log|det df|."""
    findings = []
    for name in CATALOG_2D + ("cat3d",):
        m = make_map(name)
        x0 = _random_points(seed, 1, m.dimension)[0]
        sums = _benettin(m, x0, n, reorth_every=1, warmup=0).sum() * n
        logdet = 0.0
        p = x0
        for _ in range(n):
            logdet += np.log(abs(np.linalg.det(m.jacobian(p))))
            p = m.apply(p)
        if abs(sums - logdet) > tol * n:
            findings.append(
                f"qr-det: {name} |sum chi * n - sum log det| = {abs(sums - logdet):.3e}")
    return findings


def check_domination_monotone_cat(tol: float = 1e-10) -> list[str]:
    """Cat-map log domination products step down by exactly 2 log lambda_s."""
    m = make_map("cat")
    sp = oseledets_splitting(m, np.array([[0.15, 0.35]]), dim_F=1)
    logE, logFinv = restricted_cocycle_norms(m, sp, sp.points, 40)
    diffs = np.diff((logE + logFinv)[:, 0])
    err = np.abs(diffs - 2 * np.log(CAT_LAMBDA_S)).max()
    return [f"domination-monotone: err {err:.3e} > {tol}"] if err > tol else []


def check_psi_cocycle_identity(seed: int = 3, points: int = 100,
                               max_n: int = 50, tol: float = 1e-10) -> list[str]:
    """psi_{n+m}(x) = psi_n(x) + psi_m(f^n x) for all catalog maps."""
    findings = []
    gen = rnglib.generator(seed, "cocycle-identity")
    cases = [("cat", 1), ("perturbed_cat", 1), ("cat3d", 2)]
    for name, dim_F in cases:
        m = make_map(name)
        anchors = gen.random((4, m.dimension))
        sp = oseledets_splitting(m, anchors, dim_F=dim_F)
        worst = 0.0
        for _ in range(points // 4):
            x = gen.random(m.dimension)
            n = int(gen.integers(1, max_n))
            mm = int(gen.integers(1, max_n))
            fx = x.copy()
            for _ in range(n):
                fx = m.apply(fx)
            lhs = psi_n(m, sp, x, n + mm)
            rhs = psi_n(m, sp, x, n) + psi_n(m, sp, fx, mm)
            worst = max(worst, abs(lhs - rhs))
        if worst > tol:
            findings.append(f"psi-cocycle: {name} worst {worst:.3e} > {tol}")
    ident = make_map("identity")
    spc = SplittingField.constant(np.array([[1.0], [0.3]]), np.array([[0.2], [1.0]]))
    if abs(psi_n(ident, spc, [0.3, 0.4], 17)) > tol:
        findings.append("psi-cocycle: identity psi_n != 0")
    return findings


def check_oseledets_vs_singular_cat(tol: float = 1e-6) -> list[str]:
    """Estimated F agrees with the dominant singular subspace of df^n, n >= 40."""
    m = make_map("cat")
    x = np.array([0.21, 0.43])
    sp = oseledets_splitting(m, x[None], dim_F=1)
    A_n = np.linalg.matrix_power(CAT_MATRIX.astype(float), 40)
    U, _, _ = np.linalg.svd(A_n)
    ang = subspace_angle(sp.basis_F[0], U[:, :1])
    return [f"oseledets-svd: angle {ang:.3e} > {tol}"] if ang > tol else []


# --------------------------------------------------------------------------
# measures
# --------------------------------------------------------------------------

def _random_atom_measure(gen, d: int = 2, max_atoms: int = 6) -> EmpiricalMeasure:
    k = int(gen.integers(1, max_atoms + 1))
    pts = gen.random((k, d))
    w = gen.random(k)
    w /= w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return EmpiricalMeasure.from_points(pts, list(w))


def check_metric_axioms(seed: int = 4, trials: int = 100,
                        tol: float = 1e-12) -> list[str]:
    """dist* symmetry (exact), zero self-distance, triangle inequality."""
    findings = []
    fam = TestFunctionFamily(16, 2)
    gen = rnglib.generator(seed, "metric-axioms")
    for t in range(trials):
        mus = [_random_atom_measure(gen) for _ in range(3)]
        d01 = weak_star_distance(mus[0], mus[1], fam).value
        d10 = weak_star_distance(mus[1], mus[0], fam).value
        if d01 != d10:
            findings.append(f"metric symmetry broken at trial {t}")
        if weak_star_distance(mus[0], mus[0], fam).value != 0.0:
            findings.append(f"metric self-distance nonzero at trial {t}")
        d02 = weak_star_distance(mus[0], mus[2], fam).value
        d12 = weak_star_distance(mus[1], mus[2], fam).value
        if d02 > d01 + d12 + tol:
            findings.append(f"triangle inequality broken at trial {t}")
    return findings


def check_ball_convexity(seed: int = 5, trials: int = 50,
                         tol: float = 1e-12) -> list[str]:
    """dist*-balls are convex: mixtures stay within max of the radii."""
    findings = []
    fam = TestFunctionFamily(16, 2)
    gen = rnglib.generator(seed, "ball-convexity")
    for t in range(trials):
        nu = _random_atom_measure(gen)
        m1 = _random_atom_measure(gen)
        m2 = _random_atom_measure(gen)
        r = max(weak_star_distance(m1, nu, fam).value,
                weak_star_distance(m2, nu, fam).value)
        w = float(gen.random())
        mixture = mix([m1, m2], [w, 1.0 - w])
        dm = weak_star_distance(mixture, nu, fam).value
        if dm > r + tol:
            findings.append(f"ball convexity broken at trial {t}: {dm} > {r}")
    return findings


def check_orbit_measure_mixture(seed: int = 6, trials: int = 20) -> list[str]:
    """sigma_{n+m,x} = (n/(n+m)) sigma_{n,x} + (m/(n+m)) sigma_{m,f^n x}, exactly."""
    from fractions import Fraction
    findings = []
    gen = rnglib.generator(seed, "measure-mixture")
    m = make_map("cat")
    for t in range(trials):
        x = gen.random(2)
        n = int(gen.integers(1, 40))
        k = int(gen.integers(1, 40))
        fx = x.copy()
        for _ in range(n):
            fx = m.apply(fx)
        lhs = empirical_measure(m, x, n + k)
        rhs = mix([empirical_measure(m, x, n), empirical_measure(m, fx, k)],
                  [Fraction(n, n + k), Fraction(k, n + k)])
        if lhs != rhs:
            findings.append(f"orbit mixture identity broken at trial {t}")
    return findings


def check_basin_eps_monotone(seed: int = 7) -> list[str]:
    """C_n(eps) fractions are nonincreasing as eps shrinks (same n, sample)."""
    m = make_map("cat")
    fam = TestFunctionFamily(16, 2)
    pts = kronecker_sequence(256, 2)
    dists = basin_distances(m, Lebesgue(2), fam, pts, [200])[0]
    fracs = [(dists < e).mean() for e in (0.2, 0.1, 0.05, 0.02, 0.01)]
    if any(a < b for a, b in zip(fracs, fracs[1:])):
        return [f"basin fraction not monotone in eps: {fracs}"]
    return []


# --------------------------------------------------------------------------
# entropy
# --------------------------------------------------------------------------

def check_entropy_refinement_and_cap(seed: int = 8) -> list[str]:
    """H(alpha^{q+1}) >= H(alpha^q) and H <= log(#occupied words), exactly."""
    findings = []
    m = make_map("cat")
    part = GridPartition(8, 2)
    pts = kronecker_sequence(2000, 2)
    prev = -1.0
    for q in range(0, 6):
        dist = itinerary_distribution(m, pts, part, q)
        H = partition_entropy(dist)
        if H < prev - 1e-12:
            findings.append(f"refinement monotonicity broken at q={q}")
        if H > np.log(dist.n_distinct) + 1e-12:
            findings.append(f"entropy cap broken at q={q}")
        prev = H
    return findings


def check_entropy_concavity(seed: int = 9, trials: int = 50) -> list[str]:
    """Mixture entropy >= mixture of entropies on random word distributions."""
    findings = []
    gen = rnglib.generator(seed, "entropy-concavity")
    for t in range(trials):
        k = int(gen.integers(2, 30))
        p1 = gen.random(k); p1 /= p1.sum()
        p2 = gen.random(k); p2 /= p2.sum()
        w = float(gen.random())

        def H(p):
            q = p[p > 0]
            return float(-(q * np.log(q)).sum())

        if H(w * p1 + (1 - w) * p2) < w * H(p1) + (1 - w) * H(p2) - 1e-12:
            findings.append(f"entropy concavity broken at trial {t}")
    return findings


def check_shannon_suite(seed: int = 0) -> list[str]:
    rep = shannon_inequalities_check(seed=seed)
    return [str(f) for f in rep.findings]


def check_psi_lebesgue_exponent(tol: float = 1e-3) -> list[str]:
    """Volume-preserving 2D, dim F = 1: int psi dLeb = -chi_1."""
    m = make_map("cat")
    sp = oseledets_splitting(m, np.array([[0.3, 0.7]]), dim_F=1)
    psi_eval = make_psi_evaluator(m, sp)
    val = float(np.mean(psi_eval(kronecker_sequence(4096, 2))))
    err = abs(val + np.log(1.0 / CAT_LAMBDA_S))
    return [f"psi-lebesgue: |int psi + chi1| = {err:.3e} > {tol}"] if err > tol else []


def check_pesin_gap_order() -> list[str]:
    """sum_chi_F <= sum_chi_plus on catalog measures."""
    from .entropy import pesin_gap
    findings = []
    m = make_map("cat")
    sp = oseledets_splitting(m, np.array([[0.3, 0.7]]), dim_F=1)
    for mu in (Lebesgue(2), EmpiricalMeasure.dirac([0.0, 0.0])):
        rep = pesin_gap(m, sp, mu, {"entropy_samples": 20000})
        if rep.sum_chi_F > rep.sum_chi_plus:
            findings.append(f"sum_chi_F > sum_chi_plus for {mu}")
    return findings


# --------------------------------------------------------------------------
# graphs
# --------------------------------------------------------------------------

def _graph_fixture(map_name: str, seed: int, radius: float | None = None,
                   target_disp: float = 0.25):
    from .graphs import DEFAULT_CHART_RADIUS
    radius = DEFAULT_CHART_RADIUS if radius is None else radius
    m = make_map(map_name)
    x0 = rnglib.generator(seed, "graph-fixture").random(m.dimension)
    sp = oseledets_splitting(m, x0[None], dim_F=1)
    ch = chart_at(sp, x0, radius)
    g = make_graph(ch, {"kind": "banded", "target_disp": target_disp, "seed": seed})
    return m, sp, ch, g


def check_dispersion_recursion(seeds=(1, 2, 3), n: int = 10,
                               slack: float = 2e-3) -> list[str]:
    """disp(G_n) <= ||df^n|_E|| disp(G) ||df^{-n}|_F|| + slack, per step."""
    findings = []
    for map_name in CATALOG_2D:
        for seed in seeds:
            m, sp, ch, g = _graph_fixture(map_name, seed)
            _, rep = iterate_transform(m, g, n, sp, slack=slack)
            if not all(rep.bound_satisfied):
                bad = [k + 1 for k, ok in enumerate(rep.bound_satisfied) if not ok]
                findings.append(
                    f"dispersion recursion: {map_name} seed {seed} fails at n={bad}")
    return findings


def check_u1_independence(seeds=(1, 2), tol: float = 1e-8) -> list[str]:
    """The E'-intersection of a transformed leaf is independent of which leaf
    point seeds the solve (Property (B): u1 depends only on v1)."""
    findings = []
    for map_name in CATALOG_2D:
        for seed in seeds:
            m, sp, ch, g = _graph_fixture(map_name, seed)
            target = chart_at(sp, m.apply(ch.base_point), ch.radius)
            spread = _u1_spread(m, g, target)
            if spread > tol:
                findings.append(
                    f"u1-independence: {map_name} seed {seed} spread {spread:.3e}")
    return findings


def _u1_spread(m, g, target, n_leaves: int = 5, n_starts: int = 7) -> float:
    """Max spread of the solved u1 over different Newton starts along a leaf."""
    delta = g.chart.radius
    worst = 0.0
    for v1val in np.linspace(-0.3 * delta, 0.3 * delta, n_leaves):
        u1s = []
        for t0 in np.linspace(-0.6 * delta, 0.6 * delta, n_starts):
            v2 = np.array([[t0]])
            v1 = np.array([[v1val]])
            for _ in range(80):
                a, b = _coords_of_image(m, g, target, v1, v2)
                J = _db_dv2(m, g, target, v1, v2)
                step = b[0] / J[0]
                v2 = v2 - step
                if abs(b[0, 0]) < 1e-13:
                    break
            a, b = _coords_of_image(m, g, target, v1, v2)
            u1s.append(a[0, 0])
        worst = max(worst, max(u1s) - min(u1s))
    return worst


def _db_dv2(m, g, target, v1, v2, h: float = 1e-7):
    _, b_hi = _coords_of_image(m, g, target, v1, v2 + h)
    _, b_lo = _coords_of_image(m, g, target, v1, v2 - h)
    return (b_hi - b_lo) / (2 * h)


def check_du2_dv2_inverse(seeds=(1, 2), tol: float = 1e-4) -> list[str]:
    """(du2/dv2)^{-1} = df^{-1}|_{F_{f(x)}} between chart frames."""
    findings = []
    for map_name in CATALOG_2D:
        for seed in seeds:
            m, sp, ch, g = _graph_fixture(map_name, seed)
            target = chart_at(sp, m.apply(ch.base_point), ch.radius)
            P_inv = np.linalg.inv(np.concatenate([target.basis_E, target.basis_F], axis=1))
            T = (P_inv @ m.jacobian(ch.base_point) @ ch.basis_F)[ch.dim_E:, :]
            worst = 0.0
            for v1val in (-0.2 * ch.radius, 0.0, 0.2 * ch.radius):
                for v2val in (-0.5 * ch.radius, 0.1 * ch.radius, 0.4 * ch.radius):
                    D = _db_dv2(m, g, target, np.array([[v1val]]), np.array([[v2val]]))
                    worst = max(worst, float(np.abs(D @ np.linalg.inv(T) - 1.0).max()))
            if worst > tol:
                findings.append(
                    f"du2/dv2 inverse identity: {map_name} seed {seed} err {worst:.3e}")
    return findings


def check_leaf_image_consistency(seeds=(1, 2), tol: float = 1e-3) -> list[str]:
    """f(source leaf points) lie on a single leaf of the transformed graph."""
    findings = []
    for map_name in CATALOG_2D:
        for seed in seeds:
            m, sp, ch, g = _graph_fixture(map_name, seed)
            target = chart_at(sp, m.apply(ch.base_point), ch.radius)
            g1 = graph_transform(m, g, target)
            worst = _leaf_consistency_residual(m, g, g1, target)
            if worst > tol:
                findings.append(
                    f"leaf image consistency: {map_name} seed {seed} err {worst:.3e}")
    return findings


def _leaf_consistency_residual(m, g, g1, target, n_probe: int = 11) -> float:
    """Push source-leaf points through f; their target coordinates (a, b) must
    satisfy a = u1 + G1(u1, b) for one common leaf label u1."""
    delta = g.chart.radius
    worst = 0.0
    for v1val in np.linspace(-0.25 * delta, 0.25 * delta, 3):
        v2 = np.linspace(-0.3 * delta, 0.3 * delta, n_probe)[:, None]
        v1 = np.full((n_probe, 1), v1val)
        a, b = _coords_of_image(m, g, target, v1, v2)
        # Leaf label from the middle sample, then residual along the leaf.
        mid = n_probe // 2
        u1 = a[mid] - g1.evaluate(a[mid][None], b[mid][None])[0]
        for _ in range(60):
            u1_next = a[mid] - g1.evaluate(u1[None], b[mid][None])[0]
            if np.abs(u1_next - u1).max() < 1e-13:
                break
            u1 = u1_next
        preds = u1[None] + g1.evaluate(np.broadcast_to(u1, (n_probe, 1)).copy(), b)
        inside = np.abs(b[:, 0]) <= delta
        if inside.any():
            worst = max(worst, float(np.abs(preds - a)[inside].max()))
    return worst


def check_leaf_volume_bounds(seeds=(1, 2, 3)) -> list[str]:
    """Measured leaf volumes respect (2 delta (1 + disp))^{dim F}."""
    findings = []
    for map_name in CATALOG_2D:
        for seed in seeds:
            m, sp, ch, g = _graph_fixture(map_name, seed)
            bound = leaf_volume_bound(g)
            for v1 in (-0.4 * ch.radius, 0.0, 0.4 * ch.radius):
                vol = leaf_volume(g, [v1])
                if vol > bound:
                    findings.append(
                        f"leaf volume: {map_name} seed {seed} {vol} > {bound}")
    m3 = make_map("cat3d")
    sp3 = oseledets_splitting(m3, np.array([[0.2, 0.3, 0.05]]), dim_F=2)
    ch3 = chart_at(sp3, [0.2, 0.3, 0.05])
    g3 = make_graph(ch3, {"kind": "linear", "slope": 0.2})
    if leaf_volume(g3, [0.0]) > leaf_volume_bound(g3):
        findings.append("leaf volume: 3D linear graph exceeds bound")
    return findings


ALL_CHECKS = [
    ("dynamics/roundtrip", check_roundtrip),
    ("dynamics/jacobians", check_jacobians),
    ("cocycle/qr-determinant", check_qr_determinant_consistency),
    ("cocycle/domination-monotone", check_domination_monotone_cat),
    ("cocycle/psi-cocycle-identity", check_psi_cocycle_identity),
    ("cocycle/oseledets-vs-singular", check_oseledets_vs_singular_cat),
    ("measures/metric-axioms", check_metric_axioms),
    ("measures/ball-convexity", check_ball_convexity),
    ("measures/orbit-mixture", check_orbit_measure_mixture),
    ("measures/basin-eps-monotone", check_basin_eps_monotone),
    ("entropy/refinement-cap", check_entropy_refinement_and_cap),
    ("entropy/concavity", check_entropy_concavity),
    ("entropy/shannon-suite", check_shannon_suite),
    ("entropy/psi-lebesgue-exponent", check_psi_lebesgue_exponent),
    ("entropy/pesin-gap-order", check_pesin_gap_order),
    ("graphs/dispersion-recursion", check_dispersion_recursion),
    ("graphs/u1-independence", check_u1_independence),
    ("graphs/du2-dv2-inverse", check_du2_dv2_inverse),
    ("graphs/leaf-image-consistency", check_leaf_image_consistency),
    ("graphs/leaf-volume-bounds", check_leaf_volume_bounds),
]


def run_property_suite() -> dict:
    """Run every check; returns {name: findings list}."""
    return {name: fn() for name, fn in ALL_CHECKS}
