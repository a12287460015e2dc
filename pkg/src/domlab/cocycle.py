"""Tangent-cocycle analysis: Lyapunov spectra (QR/Benettin), estimated invariant
splittings TM = E + F, domination-constant fits, and the functionals

    psi(x)   = -log |det df(x)|_{F_x}|
    psi_n(x) = sum_{j<n} psi(f^j x) = -log |det df^n(x)|_{F_x}|.

Subbundles are represented by orthonormal frames sampled at points; F is the
dominating bundle (recovered by forward push-forward), E the dominated one
(backward push-forward).  Restricted operator norms are accumulated step by
step through QR factors so that long products never overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dynamics import DiffeoSpec, torus_dist, wrap, wrap_half
from .errors import NumericalError, ResolutionError

#: QR steps discarded before Lyapunov sums are accumulated (frame alignment).
DEFAULT_WARMUP = 100

#: Forward/backward push length used when estimating splitting frames.
DEFAULT_N_PUSH = 40

#: Required growth-gap factor between the bundles to resolve a splitting.
MIN_GAP = 10.0

#: Steps over which the resolvability gap is measured.
GAP_STEPS = 25


def default_n_push(dimension: int) -> int:
    """Push length for frame estimation: the subspace iteration contracts per
    step by the domination ratio, which is much closer to 1 for the 3D catalog
    (weakest pair ~0.76) than for the 2D maps (~0.15)."""
    return 40 if dimension <= 2 else 120


def _positivize_qr(Q: np.ndarray, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fix the QR sign ambiguity: make diag(R) nonnegative."""
    s = np.sign(np.einsum("...ii->...i", R))
    s[s == 0] = 1.0
    return Q * s[..., None, :], R * s[..., :, None]


def orthonormalize(frames: np.ndarray) -> np.ndarray:
    """Batched orthonormal basis for the column span of (..., d, k) frames."""
    Q, R = np.linalg.qr(frames)
    Q, _ = _positivize_qr(Q, R)
    return Q


def subspace_angle(A: np.ndarray, B: np.ndarray) -> float:
    """Largest principal angle (radians) between the column spans of A and B.

    Sine-based form: accurate down to machine precision for nearly equal
    spans, where the arccos of an inner product saturates at ~3e-8.
    """
    QA = orthonormalize(np.atleast_2d(A))
    QB = orthonormalize(np.atleast_2d(B))
    C = QB - QA @ (QA.T @ QB)
    s = np.linalg.svd(C, compute_uv=False)
    return float(np.arcsin(np.clip(s.max(), 0.0, 1.0)))


def subspace_distance(A: np.ndarray, B: np.ndarray) -> float:
    """sin of the largest principal angle; the gap metric used for dist(L, F)."""
    return float(np.sin(subspace_angle(A, B)))


# --------------------------------------------------------------------------
# Lyapunov spectra
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LyapunovReport:
    exponents: np.ndarray          # sorted descending
    n_iterations: int
    base_point: np.ndarray
    warmup: int
    reorth_every: int


def _benettin(diffeo: DiffeoSpec, x0: np.ndarray, n: int, reorth_every: int,
              warmup: int) -> np.ndarray:
    """Batched QR cocycle; x0 shape (..., d) -> exponent sums shape (..., d)."""
    d = diffeo.dimension
    x = wrap(np.asarray(x0, dtype=float))
    Q = np.broadcast_to(np.eye(d), x.shape + (d,)).copy()
    sums = np.zeros(x.shape)

    def run(steps: int, accumulate: bool):
        nonlocal x, Q, sums
        done = 0
        while done < steps:
            block = min(reorth_every, steps - done)
            M = Q
            for _ in range(block):
                M = diffeo.jacobian(x) @ M
                x = diffeo.apply(x)
                if np.abs(M).max() > 1e250:
                    raise NumericalError("cocycle product overflow; reduce reorth_every")
            M, R = np.linalg.qr(M)
            M, R = _positivize_qr(M, R)
            Q = M
            diag = np.einsum("...ii->...i", R)
            if np.any(diag <= 0.0):
                raise NumericalError("degenerate QR step in Lyapunov iteration")
            if accumulate:
                sums += np.log(diag)
            done += block

    run(warmup, accumulate=False)
    run(n, accumulate=True)
    return sums / n


def lyapunov_spectrum(diffeo: DiffeoSpec, x0: np.ndarray, n: int,
                      reorth_every: int = 1,
                      warmup: int = DEFAULT_WARMUP) -> LyapunovReport:
    """Lyapunov exponents along the orbit of x0 by QR re-orthonormalization.

    The frame (and base point) is first evolved for `warmup` steps without
    accumulating, which removes the O(1/n) transient of a generic start frame.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if reorth_every < 1:
        raise ValueError("reorth_every must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    sums = _benettin(diffeo, x0, n, reorth_every, warmup)
    exponents = np.sort(sums)[::-1].copy()
    return LyapunovReport(exponents=exponents, n_iterations=n,
                          base_point=wrap(x0), warmup=warmup,
                          reorth_every=reorth_every)


def lyapunov_spectra_batch(diffeo: DiffeoSpec, points: np.ndarray, n: int,
                           reorth_every: int = 1,
                           warmup: int = DEFAULT_WARMUP) -> np.ndarray:
    """Exponents (descending) for a batch of base points; shape (N, d)."""
    sums = _benettin(diffeo, points, n, reorth_every, warmup)
    return np.sort(sums, axis=-1)[..., ::-1].copy()


# --------------------------------------------------------------------------
# Splitting estimation
# --------------------------------------------------------------------------

def _fixed_frame(d: int, k: int, tail: bool = False) -> np.ndarray:
    """Deterministic full-rank start frame (columns of a fixed rotation).

    Any generic frame works: push-forward converges geometrically to the
    dominant subspace regardless of the start, as long as it is transversal.
    The E estimator takes the tail columns so that maps with no contraction at
    all (identity) yield complementary rather than coincident frames.
    """
    mix = np.array([[0.6, -0.48, 0.64],
                    [0.8, 0.36, -0.48],
                    [0.0, 0.8, 0.6]])[:d, :d]
    Q = orthonormalize(mix)
    return Q[:, d - k:] if tail else Q[:, :k]


def estimate_F_frames(diffeo: DiffeoSpec, points: np.ndarray, dim_F: int,
                      n_push: int = DEFAULT_N_PUSH) -> np.ndarray:
    """Dominating frames F at each point via forward push from f^{-n_push}(x).

    points: (N, d) -> frames (N, d, dim_F), orthonormal columns.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    back = pts
    history = [back]
    for _ in range(n_push):
        back = diffeo.apply_inverse(back)
        history.append(back)
    Q = np.broadcast_to(_fixed_frame(diffeo.dimension, dim_F),
                        (pts.shape[0], diffeo.dimension, dim_F)).copy()
    for j in range(n_push, 0, -1):
        Q = orthonormalize(diffeo.jacobian(history[j]) @ Q)
    return Q


def estimate_E_frames(diffeo: DiffeoSpec, points: np.ndarray, dim_E: int,
                      n_push: int = DEFAULT_N_PUSH) -> np.ndarray:
    """Dominated frames E at each point via backward push from f^{n_push}(x)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    orbit = [pts]
    p = pts
    for _ in range(n_push):
        p = diffeo.apply(p)
        orbit.append(p)
    Q = np.broadcast_to(_fixed_frame(diffeo.dimension, dim_E, tail=True),
                        (pts.shape[0], diffeo.dimension, dim_E)).copy()
    for j in range(n_push - 1, -1, -1):
        Q = orthonormalize(np.linalg.solve(diffeo.jacobian(orbit[j]), Q))
    return Q


def _check_gap(diffeo: DiffeoSpec, field: "SplittingField",
               points: np.ndarray, n_gap: int = GAP_STEPS) -> float:
    """Resolvability check: the growth gap between the estimated bundles,
    min over sampled points of -log(||df^n|_E|| ||df^{-n}|_F||) at n = n_gap.
    Raises ResolutionError below log(MIN_GAP)."""
    pts = np.atleast_2d(points)
    subset = pts[:: max(1, len(pts) // 32)][:32]
    log_nE, log_nFinv = restricted_cocycle_norms(diffeo, field, subset, n_gap)
    gap = float(-(log_nE[-1] + log_nFinv[-1]).max())
    if gap <= np.log(MIN_GAP):
        raise ResolutionError(
            f"splitting not resolvable: bundle growth gap exp({gap:.3f}) "
            f"over {n_gap} steps is below {MIN_GAP}")
    return gap


@dataclass
class SplittingField:
    """df-invariant splitting E + F sampled at points, with lazy extension.

    `frames_at` returns the stored frames of the nearest sample within
    `lookup_tol`; away from all samples it either evaluates the attached
    estimator (adding a new sample) or fails.
    """

    dim_E: int
    dim_F: int
    points: np.ndarray                  # (N, d)
    basis_E: np.ndarray                 # (N, d, dim_E)
    basis_F: np.ndarray                 # (N, d, dim_F)
    equivariance_residual: float | None = None
    lookup_tol: float = 1e-3
    _diffeo: DiffeoSpec | None = field(default=None, repr=False)
    _n_push: int = DEFAULT_N_PUSH
    _constant: bool = False

    def __post_init__(self):
        cond = self.condition_numbers()
        if np.any(cond > 1e8):
            raise NumericalError(
                f"splitting frames nearly degenerate: cond {cond.max():.3e}")

    @property
    def dimension(self) -> int:
        return self.dim_E + self.dim_F

    @property
    def samples(self):
        """Sequence of (point, basis_E, basis_F) triples."""
        return list(zip(self.points, self.basis_E, self.basis_F))

    def condition_numbers(self) -> np.ndarray:
        full = np.concatenate([self.basis_E, self.basis_F], axis=-1)
        return np.linalg.cond(full)

    @classmethod
    def constant(cls, basis_E: np.ndarray, basis_F: np.ndarray,
                 dimension: int | None = None) -> "SplittingField":
        """A position-independent splitting from fixed frames (columns)."""
        E = orthonormalize(np.atleast_2d(np.asarray(basis_E, dtype=float)))
        F = orthonormalize(np.atleast_2d(np.asarray(basis_F, dtype=float)))
        d = dimension or E.shape[0]
        origin = np.zeros((1, d))
        return cls(dim_E=E.shape[1], dim_F=F.shape[1], points=origin,
                   basis_E=E[None], basis_F=F[None],
                   equivariance_residual=0.0, _constant=True)

    def frames_at(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(E, F) orthonormal frames at x; nearest stored sample within
        lookup_tol, else a fresh push-forward estimate when possible."""
        if self._constant:
            return self.basis_E[0], self.basis_F[0]
        x = wrap(np.asarray(x, dtype=float))
        dist = torus_dist(self.points, x[None])
        i = int(np.argmin(dist))
        if dist[i] < self.lookup_tol:
            return self.basis_E[i], self.basis_F[i]
        if self._diffeo is None:
            raise NumericalError(
                f"no splitting sample within {self.lookup_tol} of {x} "
                "and no estimator attached")
        E = estimate_E_frames(self._diffeo, x[None], self.dim_E, self._n_push)
        F = estimate_F_frames(self._diffeo, x[None], self.dim_F, self._n_push)
        self.points = np.vstack([self.points, x[None]])
        self.basis_E = np.concatenate([self.basis_E, E], axis=0)
        self.basis_F = np.concatenate([self.basis_F, F], axis=0)
        return E[0], F[0]

    def frames_batch(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(E, F) frames at a batch of points, shape (N, d, k).

        Constant fields broadcast; estimated fields evaluate fresh (stored
        samples are not consulted: re-estimation is cheaper than a nearest
        lookup at batch sizes and agrees to machine precision); sample-only
        fields require every point to be within lookup_tol of a sample.
        """
        pts = wrap(np.atleast_2d(np.asarray(points, dtype=float)))
        n = pts.shape[0]
        if self._constant:
            E = np.broadcast_to(self.basis_E[0], (n,) + self.basis_E[0].shape)
            F = np.broadcast_to(self.basis_F[0], (n,) + self.basis_F[0].shape)
            return E.copy(), F.copy()
        if self._diffeo is not None:
            return (estimate_E_frames(self._diffeo, pts, self.dim_E, self._n_push),
                    estimate_F_frames(self._diffeo, pts, self.dim_F, self._n_push))
        dist = np.abs(wrap_half(pts[:, None, :] - self.points[None, :, :])).max(axis=-1)
        idx = np.argmin(dist, axis=1)
        if np.any(dist[np.arange(n), idx] >= self.lookup_tol):
            raise NumericalError("batch query outside sampled splitting support")
        return self.basis_E[idx], self.basis_F[idx]


def oseledets_splitting(diffeo: DiffeoSpec, points: np.ndarray,
                        n_push: int | None = None,
                        dim_F: int = 1, residual_points: int = 8) -> SplittingField:
    """Estimate the dominated splitting at the given sample points.

    F is the dominant subspace under forward push-forward of a generic frame,
    E the dominant subspace of the inverse cocycle.  The df-equivariance
    residual (max principal angle between df(x)Bx and B_{f(x)}, B in {E, F}) is
    measured on a subsample against independently re-estimated frames.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pts = wrap(pts)
    d = diffeo.dimension
    dim_E = d - dim_F
    if not 0 < dim_F < d:
        raise ValueError(f"dim_F must be in (0, {d})")
    if n_push is None:
        n_push = default_n_push(d)
    F = estimate_F_frames(diffeo, pts, dim_F, n_push)
    E = estimate_E_frames(diffeo, pts, dim_E, n_push)

    field = SplittingField(dim_E=dim_E, dim_F=dim_F, points=pts,
                           basis_E=E, basis_F=F,
                           _diffeo=diffeo, _n_push=n_push)
    _check_gap(diffeo, field, pts)

    m = min(residual_points, pts.shape[0])
    img = diffeo.apply(pts[:m])
    F_img = estimate_F_frames(diffeo, img, dim_F, n_push)
    E_img = estimate_E_frames(diffeo, img, dim_E, n_push)
    J = diffeo.jacobian(pts[:m])
    residual = 0.0
    for i in range(m):
        residual = max(residual, subspace_angle(J[i] @ F[i], F_img[i]))
        residual = max(residual, subspace_angle(J[i] @ E[i], E_img[i]))
    field.equivariance_residual = residual
    return field


# --------------------------------------------------------------------------
# Restricted cocycle norms and the domination fit
# --------------------------------------------------------------------------

def restricted_cocycle_norms(diffeo: DiffeoSpec, splitting: "SplittingField",
                             points: np.ndarray,
                             n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """log ||df^n|_{E_x}|| and log ||df^{-n}|_{F_{f^n x}}|| for n = 1..n_max.

    Returns two arrays of shape (n_max, N).  Frames at every orbit point come
    from the splitting field (the dominated E-direction cannot be transported
    forward in floating point), the one-step restrictions are sandwiched
    between consecutive orthonormal frames, and each norm is read off as the
    largest singular value of a product oriented so that sigma_max is the
    quantity wanted -- sigma_max stays accurate where sigma_min of an
    ill-conditioned product would not.
    """
    pts = np.atleast_2d(points)
    N = pts.shape[0]
    kE, kF = splitting.dim_E, splitting.dim_F
    orbit = [pts]
    p = pts
    for _ in range(n_max):
        p = diffeo.apply(p)
        orbit.append(p)
    stacked = np.concatenate(orbit, axis=0)
    E_all, F_all = splitting.frames_batch(stacked)
    E_all = E_all.reshape(n_max + 1, N, diffeo.dimension, kE)
    F_all = F_all.reshape(n_max + 1, N, diffeo.dimension, kF)

    RE = np.broadcast_to(np.eye(kE), (N, kE, kE)).copy()   # df^n restricted to E
    TF = np.broadcast_to(np.eye(kF), (N, kF, kF)).copy()   # df^{-n} restricted to F
    logscale_E = np.zeros(N)
    logscale_F = np.zeros(N)
    log_nE = np.empty((n_max, N))
    log_nFinv = np.empty((n_max, N))
    for n in range(1, n_max + 1):
        J = diffeo.jacobian(orbit[n - 1])
        ME = np.swapaxes(E_all[n], -1, -2) @ J @ E_all[n - 1]
        MF = np.swapaxes(F_all[n], -1, -2) @ J @ F_all[n - 1]
        RE = ME @ RE
        TF = TF @ np.linalg.inv(MF)
        for acc, logscale in ((RE, logscale_E), (TF, logscale_F)):
            s = np.abs(acc).max(axis=(-2, -1))
            if np.any(s == 0.0):
                raise NumericalError("cocycle restriction collapsed to zero")
            off = (s > 1e100) | (s < 1e-100)
            if np.any(off):
                acc[off] /= s[off, None, None]
                logscale[off] += np.log(s[off])
        log_nE[n - 1] = logscale_E + np.log(np.linalg.norm(RE, ord=2, axis=(-2, -1)))
        log_nFinv[n - 1] = logscale_F + np.log(np.linalg.norm(TF, ord=2, axis=(-2, -1)))
    return log_nE, log_nFinv


@dataclass(frozen=True)
class DominationFit:
    """Fit of ||df^n|_E|| * ||df^{-n}|_F|| <= C * lambda^n over sampled points."""

    C: float
    lam: float
    slope: float
    slope_upper95: float
    residuals: np.ndarray
    n_range: tuple[int, int]
    dominated: bool
    log_products: np.ndarray   # worst case per n (regression target)

    @property
    def message(self) -> str:
        return "dominated" if self.dominated else "no domination detected"


def domination_fit(diffeo: DiffeoSpec, splitting: SplittingField,
                   n_max: int = 30) -> DominationFit:
    """Least-squares fit of the uniform domination bound of the splitting.

    The regression target at each n is the worst case over the splitting's
    sample points (the bound being checked is uniform in x).  The fit is
    reported dominated only when the 95% upper slope bound is negative.
    """
    if n_max < 4:
        raise ValueError("n_max must be >= 4 for a meaningful slope fit")
    if splitting.equivariance_residual is not None and \
            splitting.equivariance_residual >= 1e-4:
        raise NumericalError(
            f"splitting equivariance residual {splitting.equivariance_residual:.2e}"
            " too large for a domination fit (>= 1e-4)")
    log_nE, log_nFinv = restricted_cocycle_norms(
        diffeo, splitting, splitting.points, n_max)
    target = (log_nE + log_nFinv).max(axis=1)          # worst case per n
    ns = np.arange(1, n_max + 1, dtype=float)
    slope, intercept = np.polyfit(ns, target, 1)
    resid = target - (intercept + slope * ns)
    dof = len(ns) - 2
    se = np.sqrt(np.sum(resid ** 2) / dof / np.sum((ns - ns.mean()) ** 2))
    upper = slope + stats.t.ppf(0.975, dof) * se
    log_C = float(np.max(target - slope * ns))
    dominated = bool(upper < 0.0 and slope < 0.0)
    return DominationFit(C=float(np.exp(log_C)), lam=float(np.exp(slope)),
                         slope=float(slope), slope_upper95=float(upper),
                         residuals=resid, n_range=(1, n_max),
                         dominated=dominated, log_products=target)


# --------------------------------------------------------------------------
# psi and psi_n
# --------------------------------------------------------------------------

def _log_det_restricted(J: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """log |det (df restricted to span Q)| via the Gram determinant ratio.

    Q must have orthonormal columns; batched over leading axes.
    """
    M = J @ Q
    G = np.swapaxes(M, -1, -2) @ M
    sign, logabs = np.linalg.slogdet(G)
    if np.any(sign <= 0.0):
        raise NumericalError("degenerate F-frame: df collapses the bundle")
    return 0.5 * logabs


def psi(diffeo: DiffeoSpec, splitting: SplittingField, x: np.ndarray) -> float:
    """-log |det df(x)|_{F_x}| for the splitting's dominating bundle."""
    _, F = splitting.frames_at(x)
    J = diffeo.jacobian(np.asarray(x, dtype=float))
    return float(-_log_det_restricted(J, F))


def psi_n(diffeo: DiffeoSpec, splitting: SplittingField, x: np.ndarray,
          n: int) -> float:
    """Birkhoff sum of psi along the orbit of x; equals -log|det df^n|_{F_x}|.

    The F-frame is transported by df along the orbit, so the summed Gram
    ratios telescope to the direct n-step determinant.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    total = 0.0
    if n == 0:
        return total
    _, Q = splitting.frames_at(x)
    Q = Q.copy()
    p = np.asarray(x, dtype=float)
    for _ in range(n):
        J = diffeo.jacobian(p)
        total -= float(_log_det_restricted(J, Q))
        Q = orthonormalize(J @ Q)
        p = diffeo.apply(p)
    return total


def psi_increment_batch(J: np.ndarray, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One vectorized psi step: (-log-det increments, transported frames).

    J: (N, d, d) Jacobians, Q: (N, d, k) orthonormal F-frames.
    """
    M = J @ Q
    if Q.shape[-1] == 1:
        norms = np.linalg.norm(M, axis=-2)
        dpsi = -np.log(norms[..., 0])
        return dpsi, M / norms[..., None, :]
    dpsi = -_log_det_restricted(J, Q)
    return dpsi, orthonormalize(M)
