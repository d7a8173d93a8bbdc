"""Coefficient maps ``A: R^2 -> R^2`` with Lipschitz and monotonicity constants."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "CoefficientModel",
    "make_identity",
    "make_anisotropic",
    "make_benchmark_nonlinear",
    "fd_jacobian",
]


def fd_jacobian(apply: Callable, y: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of a vectorized map, shape (..., 2, 2)."""
    y = np.asarray(y, dtype=float)
    h = rel_step * np.maximum(1.0, np.linalg.norm(y, axis=-1, keepdims=True))
    cols = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = 1.0
        cols.append((apply(y + h * e) - apply(y - h * e)) / (2.0 * h))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class CoefficientModel:
    """Vectorized coefficient map.

    ``apply`` maps an array of gradients (..., 2) to fluxes (..., 2);
    ``jacobian`` returns (..., 2, 2). When no analytic Jacobian is given a
    central difference is used.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    c_lip: float
    c_ell: float
    jacobian_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"
    linear: bool = False

    def __post_init__(self):
        if not (self.c_ell > 0 and self.c_lip >= self.c_ell):
            raise ValueError("constants must satisfy 0 < c_ell <= c_lip")

    def __call__(self, y):
        return self.apply(np.asarray(y, dtype=float))

    def jacobian(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.jacobian_fn is not None:
            return self.jacobian_fn(y)
        return fd_jacobian(self.apply, y)

    @property
    def small_ellipticity(self) -> bool:
        """True when c_ell <= 1/4, where BMC/JN solvability is not guaranteed."""
        return self.c_ell <= 0.25


def _diag_model(c: float, name: str) -> CoefficientModel:
    scale = np.array([c, 1.0])
    mat = np.diag(scale)

    def apply(y):
        return y * scale

    def jac(y):
        return np.broadcast_to(mat, y.shape[:-1] + (2, 2)).copy()

    return CoefficientModel(apply, max(c, 1.0), min(c, 1.0), jac, name=name, linear=True)


def make_identity() -> CoefficientModel:
    return _diag_model(1.0, "identity")


def make_anisotropic(c: float) -> CoefficientModel:
    """``A(y1, y2) = (c*y1, y2)`` with c_ell = min(c, 1), c_lip = max(c, 1)."""
    c = float(c)
    if not c > 0:
        raise ValueError(f"anisotropy factor must be positive, got {c}")
    return _diag_model(c, "identity" if c == 1.0 else f"anisotropic({c:g})")


def _g(t):
    return 2.0 + 1.0 / (1.0 + t)


def _dg(t):
    return -1.0 / (1.0 + t) ** 2


def _nl_apply(y):
    t = np.linalg.norm(y, axis=-1, keepdims=True)
    return _g(t) * y


def _nl_jacobian(y):
    t = np.linalg.norm(y, axis=-1)
    g = _g(t)
    # dg/dt / t is finite at t = 0 only after multiplying by y y^T, which vanishes
    safe = np.where(t > 0, t, 1.0)
    coef = np.where(t > 0, _dg(t) / safe, 0.0)
    eye = np.eye(2)
    return g[..., None, None] * eye + coef[..., None, None] * y[..., :, None] * y[..., None, :]


def _sampled_lipschitz(jac, radius: float = 1e3, n: int = 4001) -> float:
    # the Jacobian of g(|y|) y is rotation-equivariant, so sampling |y| on a ray suffices
    t = np.concatenate([[0.0], np.geomspace(1e-8, radius, n - 1)])
    y = np.stack([t, np.zeros_like(t)], axis=1)
    return float(np.max(np.linalg.norm(jac(y), ord=2, axis=(1, 2))))


def make_benchmark_nonlinear() -> CoefficientModel:
    """``A y = g(|y|) y`` with ``g(t) = 2 + 1/(1+t)``.

    The Jacobian has eigenvalues ``g(t)`` (tangential) and
    ``2 + 1/(1+t)**2`` (radial), both in [2, 3].
    """
    return CoefficientModel(
        _nl_apply,
        c_lip=_sampled_lipschitz(_nl_jacobian),
        c_ell=2.0,
        jacobian_fn=_nl_jacobian,
        name="nonlinear",
    )
