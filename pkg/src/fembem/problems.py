"""
Benchmark transmission problems with prescribed interior/exterior solutions.

The interior solutions are corner singularities ``u = Im(w**alpha)`` with
``w = exp(-i theta0) z`` and the angle of ``w`` taken in [0, 2 pi), so that
``u`` vanishes on both edges meeting at the reentrant corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .mesh import build_initial
from .nonlinearity import (
    CoefficientModel,
    make_anisotropic,
    make_benchmark_nonlinear,
    make_identity,
)

__all__ = ["ProblemSpec", "make_problem", "PROBLEM_NAMES", "CornerSingularity"]

PROBLEM_NAMES = ("lshape-laplace", "lshape-anisotropic", "zshape-unknown", "zshape-nonlinear")

_SINGULAR_POINT = np.array([-0.125, -0.125])


@dataclass(frozen=True)
class CornerSingularity:
    """``u = r**alpha sin(alpha phi')`` with ``phi'`` measured from angle ``theta0``.

    The domain occupies ``0 <= phi' <= pi / alpha``; the branch cut of
    ``phi'`` is placed in the middle of the complementary wedge so that
    points on either edge evaluate consistently.
    """

    alpha: float
    theta0: float

    def _polar(self, x):
        x = np.asarray(x, dtype=float)
        r = np.hypot(x[..., 0], x[..., 1])
        gap = 0.5 * (2.0 * np.pi - np.pi / self.alpha)
        phi = np.mod(np.arctan2(x[..., 1], x[..., 0]) - self.theta0 + gap, 2.0 * np.pi) - gap
        return r, phi

    def value(self, x):
        r, phi = self._polar(x)
        return r**self.alpha * np.sin(self.alpha * phi)

    def grad(self, x):
        r, phi = self._polar(x)
        a = self.alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            mag = a * r ** (a - 1.0)
        ang = (a - 1.0) * phi - self.theta0
        return np.stack([mag * np.sin(ang), mag * np.cos(ang)], axis=-1)

    def uxx(self, x):
        r, phi = self._polar(x)
        a = self.alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            mag = a * (a - 1.0) * r ** (a - 2.0)
        return mag * np.sin((a - 2.0) * phi - 2.0 * self.theta0)


def _log_ext(x):
    d = np.asarray(x, dtype=float) - _SINGULAR_POINT
    return 0.5 * np.log(d[..., 0] ** 2 + d[..., 1] ** 2)


def _log_ext_grad(x):
    d = np.asarray(x, dtype=float) - _SINGULAR_POINT
    return d / (d[..., 0] ** 2 + d[..., 1] ** 2)[..., None]


def _dipole_ext(x):
    d = np.asarray(x, dtype=float) - _SINGULAR_POINT
    return (d[..., 0] + d[..., 1]) / (d[..., 0] ** 2 + d[..., 1] ** 2)


def _dipole_ext_grad(x):
    d = np.asarray(x, dtype=float) - _SINGULAR_POINT
    r2 = (d[..., 0] ** 2 + d[..., 1] ** 2)[..., None]
    s = (d[..., 0] + d[..., 1])[..., None]
    return 1.0 / r2 - 2.0 * s * d / r2**2


@dataclass(frozen=True)
class ProblemSpec:
    """Data ``(f, u0, phi0)`` of a transmission problem plus optional exact solution.

    Evaluators take points of shape (..., 2); ``phi0`` and ``u0_dtau``
    also take unit vectors (normal resp. tangent) of the same shape.
    """

    name: str
    domain_name: str
    model: CoefficientModel
    f: Callable
    u0: Callable
    phi0: Callable
    u0_dtau: Callable
    exact_u: Optional[Callable] = None
    exact_grad_u: Optional[Callable] = None
    exact_u_ext: Optional[Callable] = None
    exact_grad_u_ext: Optional[Callable] = None
    description: str = ""
    compatible: bool = True
    f_is_zero: bool = False
    params: dict = field(default_factory=dict)
    singular_points: tuple = ()

    @property
    def has_exact(self) -> bool:
        return self.exact_u is not None

    def initial_mesh(self):
        return build_initial(self.domain_name)


def _with_exact(name, domain, model, sing: CornerSingularity, ext, ext_grad, f, description,
                compatible, f_is_zero=False, params=None):
    def u0(x):
        return sing.value(x) - ext(x)

    def u0_dtau(x, tau):
        return np.sum((sing.grad(x) - ext_grad(x)) * tau, axis=-1)

    def phi0(x, nu):
        return np.sum((model.apply(sing.grad(x)) - ext_grad(x)) * nu, axis=-1)

    return ProblemSpec(
        name=name,
        domain_name=domain,
        model=model,
        f=f,
        u0=u0,
        phi0=phi0,
        u0_dtau=u0_dtau,
        exact_u=sing.value,
        exact_grad_u=sing.grad,
        exact_u_ext=ext,
        exact_grad_u_ext=ext_grad,
        description=description,
        compatible=compatible,
        f_is_zero=f_is_zero,
        params=params or {},
        singular_points=((0.0, 0.0),),
    )


def make_problem(name: str, c: float = 0.25) -> ProblemSpec:
    """Build one of the benchmark problems.

    Parameters
    ----------
    name : one of ``PROBLEM_NAMES`` (CamelCase aliases such as
        ``"LShapeLaplace"`` are accepted as well)
    c : anisotropy factor for ``lshape-anisotropic`` and ``zshape-unknown``
    """
    key = _normalize_name(name)
    if key == "lshape-laplace":
        sing = CornerSingularity(2.0 / 3.0, 0.0)

        def f(x):
            return np.zeros(np.shape(x)[:-1])

        # the exterior field grows logarithmically, so the data carry net flux
        return _with_exact(key, "LShape", make_identity(), sing, _log_ext, _log_ext_grad, f,
                           "Laplace transmission problem on the L-shape", compatible=False, f_is_zero=True)
    if key == "lshape-anisotropic":
        model = make_anisotropic(c)
        sing = CornerSingularity(2.0 / 3.0, 0.0)

        def f(x):
            return -(c - 1.0) * sing.uxx(x)

        return _with_exact(key, "LShape", model, sing, _log_ext, _log_ext_grad, f,
                           f"anisotropic transmission problem on the L-shape, c={c:g}",
                           compatible=False, f_is_zero=(c == 1.0), params={"c": c})
    if key == "zshape-unknown":
        model = make_anisotropic(c)

        def f(x):
            return np.ones(np.shape(x)[:-1])

        def zero(x, *_):
            return np.zeros(np.shape(x)[:-1])

        return ProblemSpec(
            name=key,
            domain_name="ZShape",
            model=model,
            f=f,
            u0=zero,
            phi0=zero,
            u0_dtau=zero,
            description=f"Z-shape with data (1, 0, 0) and unknown solution, c={c:g}",
            compatible=False,
            params={"c": c},
            singular_points=((0.0, 0.0),),
        )
    if key == "zshape-nonlinear":
        model = make_benchmark_nonlinear()
        sing = CornerSingularity(4.0 / 7.0, -np.pi / 4.0)
        a = sing.alpha

        def f(x):
            r, phi = sing._polar(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = a * r ** (a - 1.0)
                return a * a * (a - 1.0) * r ** (2.0 * a - 3.0) * np.sin(a * phi) / (1.0 + t) ** 2

        return _with_exact(key, "ZShape", model, sing, _dipole_ext, _dipole_ext_grad, f,
                           "nonlinear transmission problem on the Z-shape", compatible=True)
    raise ValueError(f"unknown problem {name!r}; expected one of {PROBLEM_NAMES}")


def _normalize_name(name: str) -> str:
    aliases = {
        "lshapelaplace": "lshape-laplace",
        "lshapeanisotropic": "lshape-anisotropic",
        "zshapeunknown": "zshape-unknown",
        "zshapenonlinear": "zshape-nonlinear",
    }
    k = name.strip().lower().replace("_", "-")
    return aliases.get(k.replace("-", ""), k)


def compatibility_defect(problem: ProblemSpec, mesh=None) -> float:
    """``<f, 1>_Omega + <phi0, 1>_Gamma`` by quadrature on ``mesh``."""
    from .fem import integrate_per_boundary_edge, integrate_per_triangle

    mesh = mesh if mesh is not None else problem.initial_mesh()
    sing = problem.singular_points
    vol = integrate_per_triangle(mesh, lambda x, t: problem.f(x), sing)
    nrm = mesh.boundary_normals

    def flux(x, e):
        return problem.phi0(x, np.broadcast_to(nrm[e][:, None, :], x.shape))

    bnd = integrate_per_boundary_edge(mesh, flux, sing, panels=32)
    return float(math.fsum(vol) + math.fsum(bnd))
