"""Phase space and map catalog: diffeomorphisms of the flat torus T^d, d in {2, 3}.

Points are numpy arrays with coordinates in [0, 1); all map evaluators are
vectorized over a leading batch axis.  Every catalog map carries an analytic
Jacobian and either a closed-form or Newton-solved inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericalError

TWO_PI = 2.0 * np.pi

CAT_MATRIX = np.array([[2.0, 1.0], [1.0, 1.0]])
CAT_INVERSE = np.array([[1.0, -1.0], [-1.0, 2.0]])

# Eigenvalues of [[2,1],[1,1]]: (3 +/- sqrt(5))/2.
CAT_LAMBDA_U = (3.0 + np.sqrt(5.0)) / 2.0
CAT_LAMBDA_S = (3.0 - np.sqrt(5.0)) / 2.0
CAT_CHI = np.log(CAT_LAMBDA_U)  # 0.9624236501192069


def wrap(points: np.ndarray) -> np.ndarray:
    """Canonical representative with every coordinate in [0, 1)."""
    out = np.mod(points, 1.0)
    # mod can return 1.0 for tiny negative inputs; fold it back.
    return np.where(out >= 1.0, out - 1.0, out)


def wrap_half(delta: np.ndarray) -> np.ndarray:
    """Displacement wrapped to [-1/2, 1/2) per coordinate."""
    return np.mod(np.asarray(delta) + 0.5, 1.0) - 0.5


def torus_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Max over coordinates of the circle distance."""
    d = np.abs(wrap_half(np.asarray(a) - np.asarray(b)))
    return d.max(axis=-1)


@dataclass(frozen=True)
class DiffeoSpec:
    """A named torus diffeomorphism with forward/inverse/Jacobian evaluators."""

    name: str
    params: dict
    dimension: int
    _forward: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _jacobian: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _inverse: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    _inverse_guess: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """f(x), canonical in [0,1)^d.  Accepts (..., d) batches."""
        return wrap(self._forward(np.asarray(x, dtype=float)))

    def apply_inverse(self, x: np.ndarray) -> np.ndarray:
        """f^{-1}(x); closed form when available, damped Newton otherwise."""
        x = np.asarray(x, dtype=float)
        if self._inverse is not None:
            return wrap(self._inverse(x))
        return self._newton_inverse(x)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """df(x), shape (..., d, d)."""
        return self._jacobian(np.asarray(x, dtype=float))

    def jacobian_inv(self, x: np.ndarray) -> np.ndarray:
        """df(x)^{-1} = df^{-1}(f(x)), shape (..., d, d)."""
        return np.linalg.inv(self.jacobian(x))

    def orbit(self, x0: np.ndarray, n: int) -> np.ndarray:
        """The first n orbit points x, f(x), ..., f^{n-1}(x); shape (n, ..., d)."""
        x0 = wrap(np.asarray(x0, dtype=float))
        out = np.empty((n,) + x0.shape)
        p = x0
        for j in range(n):
            out[j] = p
            p = self.apply(p)
        return out

    def _newton_inverse(self, target: np.ndarray, max_iter: int = 100,
                        tol: float = 1e-13) -> np.ndarray:
        p = wrap(self._inverse_guess(target) if self._inverse_guess else target)
        for _ in range(max_iter):
            resid = wrap_half(self.apply(p) - target)
            if np.abs(resid).max() < tol:
                return p
            step = np.linalg.solve(self.jacobian(p), resid[..., None])[..., 0]
            p = wrap(p - step)
        resid = np.abs(wrap_half(self.apply(p) - target)).max()
        raise NumericalError(
            f"Newton inverse for map '{self.name}' did not converge in "
            f"{max_iter} steps; residual {resid:.3e}")


def _make_cat(params: dict) -> DiffeoSpec:
    def forward(x):
        return x @ CAT_MATRIX.T

    def inverse(x):
        return x @ CAT_INVERSE.T

    def jac(x):
        return np.broadcast_to(CAT_MATRIX, x.shape + (2,)).copy()

    return DiffeoSpec("cat", {}, 2, forward, jac, inverse)


def _make_identity(params: dict) -> DiffeoSpec:
    d = int(params.get("dimension", 2))
    if d not in (2, 3):
        raise ConfigurationError(f"identity map dimension must be 2 or 3, got {d}")
    eye = np.eye(d)

    def forward(x):
        return x.copy()

    def jac(x):
        return np.broadcast_to(eye, x.shape + (d,)).copy()

    return DiffeoSpec("identity", {"dimension": d}, d, forward, jac, forward)


def _make_perturbed_cat(params: dict) -> DiffeoSpec:
    eps = float(params.get("eps", 0.05))
    if not 0.0 <= abs(eps) <= 0.1:
        raise ConfigurationError(
            f"perturbed_cat catalog keeps |eps| <= 0.1 so domination persists; got {eps}")

    def forward(x):
        out = x @ CAT_MATRIX.T
        out[..., 0] += eps * np.sin(TWO_PI * x[..., 1]) / TWO_PI
        return out

    def jac(x):
        J = np.broadcast_to(CAT_MATRIX, x.shape + (2,)).copy()
        J[..., 0, 1] += eps * np.cos(TWO_PI * x[..., 1])
        return J

    def guess(x):
        return x @ CAT_INVERSE.T

    return DiffeoSpec("perturbed_cat", {"eps": eps}, 2, forward, jac, None, guess)


def _make_cat3d(params: dict) -> DiffeoSpec:
    # Third coordinate: degree-one circle map z - a*sin(2 pi z)/(2 pi) contracting
    # toward z = 0 at rate 1 - a, coupled to x.  Needs 1 - a > lambda_s of the cat
    # block (a < 0.618) for the dim-F = 2 splitting to stay dominated.
    a = float(params.get("a", 0.5))
    c = float(params.get("c", 0.05))
    if not 0.0 < a <= 0.6:
        raise ConfigurationError(f"cat3d contraction strength a must be in (0, 0.6], got {a}")
    if abs(c) > 0.1:
        raise ConfigurationError(f"cat3d coupling |c| <= 0.1 required, got {c}")

    def forward(x):
        out = np.empty_like(x)
        out[..., 0] = 2.0 * x[..., 0] + x[..., 1]
        out[..., 1] = x[..., 0] + x[..., 1]
        out[..., 2] = (x[..., 2] - a * np.sin(TWO_PI * x[..., 2]) / TWO_PI
                       + c * np.sin(TWO_PI * x[..., 0]) / TWO_PI)
        return out

    def jac(x):
        J = np.zeros(x.shape + (3,))
        J[..., 0, 0] = 2.0
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = 1.0
        J[..., 1, 1] = 1.0
        J[..., 2, 0] = c * np.cos(TWO_PI * x[..., 0])
        J[..., 2, 2] = 1.0 - a * np.cos(TWO_PI * x[..., 2])
        return J

    def guess(x):
        out = x.copy()
        out[..., :2] = x[..., :2] @ CAT_INVERSE.T
        return out

    return DiffeoSpec("cat3d", {"a": a, "c": c}, 3, forward, jac, None, guess)


_CATALOG: dict[str, Callable[[dict], DiffeoSpec]] = {
    "cat": _make_cat,
    "identity": _make_identity,
    "perturbed_cat": _make_perturbed_cat,
    "cat3d": _make_cat3d,
}


def catalog_names() -> list[str]:
    return sorted(_CATALOG)


def make_map(name: str, params: dict | None = None) -> DiffeoSpec:
    """Build a catalog map by name; unknown names raise ConfigurationError."""
    if name not in _CATALOG:
        raise ConfigurationError(
            f"unknown map '{name}'; catalog: {', '.join(catalog_names())}")
    return _CATALOG[name](dict(params or {}))


def apply(diffeo: DiffeoSpec, x: np.ndarray) -> np.ndarray:
    return diffeo.apply(x)


def apply_inverse(diffeo: DiffeoSpec, x: np.ndarray) -> np.ndarray:
    return diffeo.apply_inverse(x)


def jacobian(diffeo: DiffeoSpec, x: np.ndarray) -> np.ndarray:
    return diffeo.jacobian(x)
