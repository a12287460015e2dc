"""Empirical measures, the explicit weak* metric, and basins of statistical
attraction.

The metric between probability measures is

    dist*(m1, m2) = |int psi dm1 - int psi dm2|
                    + sum_{i=1..N} 2^{-i} |int phi_i dm1 - int phi_i dm2|,

with a fixed, reproducible cosine test-function family phi_i and truncation
error bound 2 * 2^{-N}.  A "psi-less" variant (dropping the first term) is
available for maps without a resolved splitting and is labeled as such on
every returned value.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from fractions import Fraction
from itertools import product as iter_product

import numpy as np

from .cocycle import SplittingField, estimate_F_frames, psi_increment_batch
from .dynamics import DiffeoSpec, wrap
from .errors import ConfigurationError
from .sampling import kronecker_sequence

SHARDS = 32  # fixed shard count: results never depend on the worker count


@dataclass(frozen=True)
class Lebesgue:
    """Marker for the normalized Lebesgue measure on the torus."""
    dimension: int


class EmpiricalMeasure:
    """Finitely supported probability measure; atoms merged by exact coordinates.

    Weights may be floats or Fractions; orbit-built measures use Fractions so
    that mixtures and concatenations of orbit segments are exact.
    """

    def __init__(self, atoms: dict):
        cleaned = {pt: w for pt, w in atoms.items() if w != 0}
        if not cleaned:
            raise ValueError("a probability measure needs at least one atom")
        if any(w < 0 for w in cleaned.values()):
            raise ValueError("atom weights must be nonnegative")
        total = sum(cleaned.values())
        if abs(float(total) - 1.0) > 1e-12:
            raise ValueError(f"atom weights must sum to 1, got {float(total)!r}")
        self._atoms = dict(sorted(cleaned.items()))

    @classmethod
    def from_points(cls, points, weights=None) -> "EmpiricalMeasure":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        if weights is None:
            weights = [Fraction(1, n)] * n
        atoms: dict = {}
        for p, w in zip(pts, weights):
            key = tuple(p.tolist())
            atoms[key] = atoms.get(key, 0) + w
        return cls(atoms)

    @classmethod
    def dirac(cls, point) -> "EmpiricalMeasure":
        return cls.from_points(np.atleast_2d(point), [Fraction(1)])

    @property
    def atoms(self):
        """Sorted list of (coords tuple, weight)."""
        return list(self._atoms.items())

    def points(self) -> np.ndarray:
        return np.array([p for p in self._atoms], dtype=float)

    def weights(self) -> np.ndarray:
        return np.array([float(w) for w in self._atoms.values()])

    def __eq__(self, other) -> bool:
        return isinstance(other, EmpiricalMeasure) and self._atoms == other._atoms

    def __len__(self) -> int:
        return len(self._atoms)

    def integrate(self, values_at: "callable") -> float:
        """Integral of a vectorized function against the measure."""
        vals = np.asarray(values_at(self.points()), dtype=float)
        return float(np.dot(vals, self.weights()))


def empirical_measure(diffeo: DiffeoSpec, x: np.ndarray, n: int) -> EmpiricalMeasure:
    """sigma_{n,x}: n atoms of weight 1/n on the orbit segment of x."""
    if n < 1:
        raise ValueError("n must be >= 1")
    orbit = diffeo.orbit(np.asarray(x, dtype=float), n)
    return EmpiricalMeasure.from_points(orbit, [Fraction(1, n)] * n)


def mix(measures, weights) -> EmpiricalMeasure:
    """Convex combination of atom measures (exact when weights are Fractions)."""
    atoms: dict = {}
    for mu, w in zip(measures, weights):
        for pt, aw in mu.atoms:
            atoms[pt] = atoms.get(pt, 0) + w * aw
    return EmpiricalMeasure(atoms)


# --------------------------------------------------------------------------
# Test-function family and the metric
# --------------------------------------------------------------------------

class TestFunctionFamily:
    """The fixed dense family phi_i(x) = (1 + cos(2 pi k_i . x + theta_i)) / 2.

    Members run through all nonzero integer frequency vectors ordered by
    (max-norm, lexicographic order), each paired with phases 0 and pi/2, and
    are truncated to the first N.  The enumeration is injective and identical
    across runs, so dist* values are reproducible bit for bit.
    """

    __test__ = False      # API class; keep pytest collection away

    def __init__(self, truncation: int, dimension: int):
        if truncation < 1:
            raise ConfigurationError("test-function truncation N must be >= 1")
        self.truncation = int(truncation)
        self.dimension = int(dimension)
        ks, thetas = [], []
        shell = 0
        while len(ks) < self.truncation:
            shell += 1
            rng = range(-shell, shell + 1)
            vecs = sorted(k for k in iter_product(rng, repeat=dimension)
                          if max(abs(c) for c in k) == shell)
            for k in vecs:
                for theta in (0.0, np.pi / 2.0):
                    ks.append(k)
                    thetas.append(theta)
        self.freqs = np.array(ks[: self.truncation], dtype=float)
        self.phases = np.array(thetas[: self.truncation])
        self.weights = 0.5 ** np.arange(1, self.truncation + 1)
        self.truncation_error_bound = 2.0 * 2.0 ** (-self.truncation)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """phi values, shape (N_members, n_points)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        args = 2.0 * np.pi * (self.freqs @ pts.T) + self.phases[:, None]
        return 0.5 * (1.0 + np.cos(args))

    def lebesgue_integrals(self) -> np.ndarray:
        """Exact Lebesgue integrals: 1/2 for every (nonzero-frequency) member."""
        return np.full(self.truncation, 0.5)


@dataclass(frozen=True)
class WeakStarDistanceValue:
    value: float
    truncation_error_bound: float
    includes_psi_term: bool
    psi_quadrature_error: float = 0.0


@dataclass(frozen=True)
class MeasureSignature:
    """Cached integrals that determine dist* against any other measure."""
    phi: np.ndarray
    psi: float | None
    psi_error: float = 0.0


def make_psi_evaluator(diffeo: DiffeoSpec, splitting: SplittingField,
                       n_push: int | None = None):
    """Vectorized pointwise psi(x) = -log|det df(x)|_{F_x}| evaluator."""
    def evaluate(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if getattr(splitting, "_constant", False):
            F = np.broadcast_to(splitting.basis_F[0],
                                (pts.shape[0],) + splitting.basis_F[0].shape).copy()
        else:
            F = estimate_F_frames(diffeo, pts, splitting.dim_F,
                                  n_push or splitting._n_push)
        dpsi, _ = psi_increment_batch(diffeo.jacobian(pts), F)
        return dpsi
    return evaluate


def measure_signature(mu, family: TestFunctionFamily, psi_evaluator=None,
                      qmc_points: int = 2048) -> MeasureSignature:
    """Integrals of the family (and of psi, when an evaluator is given)."""
    if isinstance(mu, Lebesgue):
        phi = family.lebesgue_integrals()
        if psi_evaluator is None:
            return MeasureSignature(phi=phi, psi=None)
        pts = kronecker_sequence(qmc_points, mu.dimension)
        vals = psi_evaluator(pts)
        full = float(np.mean(vals))
        half = float(np.mean(vals[: qmc_points // 2]))
        return MeasureSignature(phi=phi, psi=full, psi_error=abs(full - half))
    pts = mu.points()
    w = mu.weights()
    phi = family.evaluate(pts) @ w
    if psi_evaluator is None:
        return MeasureSignature(phi=phi, psi=None)
    return MeasureSignature(phi=phi, psi=float(np.dot(psi_evaluator(pts), w)))


def distance_from_signatures(sig1: MeasureSignature, sig2: MeasureSignature,
                             family: TestFunctionFamily) -> WeakStarDistanceValue:
    value = float(np.dot(family.weights, np.abs(sig1.phi - sig2.phi)))
    includes_psi = sig1.psi is not None and sig2.psi is not None
    err = 0.0
    if includes_psi:
        value += abs(sig1.psi - sig2.psi)
        err = sig1.psi_error + sig2.psi_error
    return WeakStarDistanceValue(value=value,
                                 truncation_error_bound=family.truncation_error_bound,
                                 includes_psi_term=includes_psi,
                                 psi_quadrature_error=err)


def weak_star_distance(mu1, mu2, family: TestFunctionFamily,
                       psi_evaluator=None) -> WeakStarDistanceValue:
    """dist*(mu1, mu2); psi-less (and so labeled) when no evaluator is given."""
    sig1 = measure_signature(mu1, family, psi_evaluator)
    sig2 = measure_signature(mu2, family, psi_evaluator)
    return distance_from_signatures(sig1, sig2, family)


# --------------------------------------------------------------------------
# Basin sweeps
# --------------------------------------------------------------------------

def _orbit_signature_sweep(diffeo: DiffeoSpec, points: np.ndarray,
                           n_schedule: list[int], family: TestFunctionFamily,
                           splitting: SplittingField | None) -> list[MeasureSignature | None]:
    """Running signatures of sigma_{n,x} for every point, at each scheduled n.

    Returns, per scheduled n, a MeasureSignature with vectorized fields:
    phi (N_members, n_points) and psi (n_points,) or None.
    """
    pts = np.atleast_2d(points).copy()
    n_max = max(n_schedule)
    phi_sum = np.zeros((family.truncation, pts.shape[0]))
    use_psi = splitting is not None
    if use_psi:
        psi_sum = np.zeros(pts.shape[0])
        if getattr(splitting, "_constant", False):
            F = np.broadcast_to(splitting.basis_F[0],
                                (pts.shape[0],) + splitting.basis_F[0].shape).copy()
        else:
            F = estimate_F_frames(diffeo, pts, splitting.dim_F, splitting._n_push)
    snapshots: dict[int, MeasureSignature] = {}
    wanted = set(n_schedule)
    for step in range(1, n_max + 1):
        phi_sum += family.evaluate(pts)
        if use_psi:
            dpsi, F = psi_increment_batch(diffeo.jacobian(pts), F)
            psi_sum += dpsi
        pts = diffeo.apply(pts)
        if step in wanted:
            snapshots[step] = MeasureSignature(
                phi=phi_sum / step,
                psi=(psi_sum / step).copy() if use_psi else None)
    return [snapshots[n] for n in n_schedule]


def basin_distances(diffeo: DiffeoSpec, mu, family: TestFunctionFamily,
                    sample_points: np.ndarray, n_schedule: list[int],
                    splitting: SplittingField | None = None,
                    workers: int = 1, qmc_points: int = 2048) -> np.ndarray:
    """dist*(sigma_{n,x}, mu) for each sample point and scheduled n.

    Returns shape (len(n_schedule), n_samples).  Samples are processed in a
    fixed number of shards merged in index order, so the result is identical
    for any worker count.
    """
    pts = wrap(np.atleast_2d(np.asarray(sample_points, dtype=float)))
    psi_eval = make_psi_evaluator(diffeo, splitting) if splitting is not None else None
    ref = measure_signature(mu, family, psi_eval, qmc_points=qmc_points)
    schedule = sorted(set(int(n) for n in n_schedule))
    if schedule[0] < 1:
        raise ValueError("n_schedule entries must be >= 1")

    bounds = np.linspace(0, pts.shape[0], min(SHARDS, pts.shape[0]) + 1).astype(int)
    shards = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)
              if bounds[i] < bounds[i + 1]]

    def run_shard(lo_hi):
        lo, hi = lo_hi
        sigs = _orbit_signature_sweep(diffeo, pts[lo:hi], schedule, family, splitting)
        out = np.empty((len(schedule), hi - lo))
        for row, sig in enumerate(sigs):
            d = family.weights @ np.abs(sig.phi - ref.phi[:, None])
            if sig.psi is not None and ref.psi is not None:
                d = d + np.abs(sig.psi - ref.psi)
            out[row] = d
        return out

    if workers <= 1 or len(shards) == 1:
        parts = [run_shard(s) for s in shards]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_shard, shards))
    dists = np.concatenate(parts, axis=1)
    order = [schedule.index(int(n)) for n in n_schedule]
    return dists[order]


def approx_basin_fraction(diffeo: DiffeoSpec, mu, eps: float, n: int,
                          sample_points: np.ndarray, family: TestFunctionFamily,
                          splitting: SplittingField | None = None,
                          workers: int = 1) -> float:
    """Fraction of the Lebesgue sample lying in C_n(eps) = {x : dist*(sigma_{n,x}, mu) < eps}."""
    if eps <= family.truncation_error_bound:
        raise ConfigurationError(
            f"eps={eps} is not above the metric truncation error bound "
            f"{family.truncation_error_bound}")
    d = basin_distances(diffeo, mu, family, sample_points, [n], splitting, workers)
    return float(np.mean(d[0] < eps))


@dataclass(frozen=True)
class SrbLikeScore:
    fractions: list[float]
    n_schedule: list[int]
    eps: float
    floor: float
    candidate: bool

    @property
    def label(self) -> str:
        status = "SRB-like candidate" if self.candidate else "not SRB-like"
        return f"{status} at resolution (eps={self.eps}, floor={self.floor})"


def srb_like_score(diffeo: DiffeoSpec, mu, eps: float, n_schedule: list[int],
                   sample_points: np.ndarray, family: TestFunctionFamily,
                   splitting: SplittingField | None = None,
                   workers: int = 1, floor: float | None = None) -> SrbLikeScore:
    """Basin fractions along an increasing n schedule: a finite-resolution
    surrogate for the SRB-like property (so labeled).  The measure is a
    candidate when the final fractions hold at or above the floor."""
    if list(n_schedule) != sorted(n_schedule):
        raise ValueError("n_schedule must be increasing")
    pts = np.atleast_2d(sample_points)
    floor = 1.0 / pts.shape[0] if floor is None else floor
    dists = basin_distances(diffeo, mu, family, pts, list(n_schedule),
                            splitting, workers)
    fractions = [float(np.mean(row < eps)) for row in dists]
    tail = fractions[-2:] if len(fractions) >= 2 else fractions
    candidate = bool(min(tail) >= floor)
    return SrbLikeScore(fractions=fractions, n_schedule=list(n_schedule),
                        eps=eps, floor=floor, candidate=candidate)


def pomega_cluster(diffeo: DiffeoSpec, x: np.ndarray, n_schedule: list[int],
                   family: TestFunctionFamily,
                   splitting: SplittingField | None = None):
    """Empirical measures sigma_{n,x} at each scheduled n plus their pairwise
    dist* matrix, for detecting convergence vs oscillation of the statistics."""
    if len(n_schedule) < 2 or list(n_schedule) != sorted(n_schedule):
        raise ValueError("n_schedule must be increasing with length >= 2")
    measures = [empirical_measure(diffeo, x, n) for n in n_schedule]
    psi_eval = make_psi_evaluator(diffeo, splitting) if splitting is not None else None
    sigs = [measure_signature(mu, family, psi_eval) for mu in measures]
    m = len(sigs)
    dmat = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            dij = distance_from_signatures(sigs[i], sigs[j], family).value
            dmat[i, j] = dmat[j, i] = dij
    return measures, dmat
