"""Finite-difference residual maps ``F(u, v)`` and their Jacobians in ``v``.

Supported kinds
---------------
``elliptic``      ``-Lap v + kappa v^3 - u``
``burgers_step``  ``v - dt (nu Lap v - v Dv) - u``  (one implicit Euler step)
``darcy``         ``-e^u (grad u . grad v + Lap v) + kappa v^3 - f``
``gordon_step``   ``v - 2 u1 + u2 - dt^2 (kappa1 Lap v - kappa2 tau(v))``
``calderon``      boundary-flux misfit, see :mod:`nkemu.calderon`

All Jacobians are dense ``n x n`` arrays built from the stencils in
:mod:`nkemu.grid`.  Every second-order Jacobian here has the form
``diag(a) Lap + sum_k diag(b_k) D_k + diag(c)``; the coefficient triple
``(a, b, c)`` is exposed through :func:`fonknoris_coefficients`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import grid as _grid
from .errors import (MissingFixedData, NonFiniteResidual, ShapeMismatch,
                     UnsupportedKind, ValidationError)
from .grid import Grid

KINDS = ("elliptic", "burgers_step", "darcy", "gordon_step", "calderon")
REQUIRED_PARAMS = {
    "elliptic": ("kappa",),
    "burgers_step": ("nu", "dt"),
    "darcy": ("kappa",),
    "gordon_step": ("kappa1", "kappa2", "dt", "nonlinearity"),
    "calderon": (),
}
REQUIRED_DATA = {"darcy": ("f",), "calderon": ("excitations",)}


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    kind: str
    grid: Grid
    params: dict = field(default_factory=dict)
    fixed_data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKind(f"unknown problem kind {self.kind!r}")
        missing = [p for p in REQUIRED_PARAMS[self.kind] if p not in self.params]
        if missing:
            raise ValidationError(f"{self.kind} needs parameters {missing}")
        for key in REQUIRED_DATA.get(self.kind, ()):
            if key not in self.fixed_data:
                raise MissingFixedData(f"{self.kind} needs fixed data {key!r}")
        if self.kind == "darcy":
            self.grid.check(self.fixed_data["f"], "forcing f")
        if self.kind == "gordon_step" and self.params["nonlinearity"] not in ("sine", "cubic"):
            raise ValidationError("gordon nonlinearity must be 'sine' or 'cubic'")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def jacobian_depends_on_u(self) -> bool:
        return self.kind in ("elliptic", "darcy")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "grid": self.grid.to_dict(),
            "params": dict(self.params),
            "fixed_data": {k: np.asarray(v).tolist() for k, v in self.fixed_data.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        return cls(d["kind"], Grid.from_dict(d["grid"]), dict(d.get("params", {})),
                   {k: np.asarray(v, dtype=float) for k, v in d.get("fixed_data", {}).items()})


# -- cached read-only stencils ---------------------------------------------

@lru_cache(maxsize=32)
def _lap(g: Grid) -> np.ndarray:
    L = _grid.laplacian(g)
    L.flags.writeable = False
    return L


@lru_cache(maxsize=32)
def _grad(g: Grid, axis: int) -> np.ndarray:
    D = _grid.gradient(g, axis)
    D.flags.writeable = False
    return D


def _field(spec: ProblemSpec, x, name: str) -> np.ndarray:
    return spec.grid.check(x, name)


# -- constructors ------------------------------------------------------------

def elliptic_problem(n: int = 63, kappa: float = 50.0, topology: str = "dirichlet") -> ProblemSpec:
    """Nonlinear elliptic problem on ``n`` unknowns of the unit interval."""
    g = Grid((n + 2,), "dirichlet") if topology == "dirichlet" else Grid((n,), "periodic")
    return ProblemSpec("elliptic", g, {"kappa": float(kappa)})


def burgers_problem(nx: int = 63, nt: int = 51, T: float = 1.0, nu: float = 1 / 50) -> ProblemSpec:
    return ProblemSpec("burgers_step", Grid((nx,), "periodic"),
                       {"nu": float(nu), "dt": T / (nt - 1), "nt": int(nt), "T": float(T)})


def darcy_problem(f, grid: Grid | None = None, kappa: float = 1.0) -> ProblemSpec:
    g = grid if grid is not None else Grid((20, 20), "dirichlet")
    return ProblemSpec("darcy", g, {"kappa": float(kappa)}, {"f": np.asarray(f, dtype=float)})


def gordon_problem(variant: str = "sine", nx: int = 64, dt: float = 0.01,
                   nt: int = 101) -> ProblemSpec:
    """Leapfrog step of the Sine-Gordon (``variant='sine'``) or Klein-Gordon
    (``'klein'``) equation with their standard coefficients."""
    if variant == "sine":
        params = {"kappa1": 1.0, "kappa2": 1.0, "nonlinearity": "sine"}
    elif variant == "klein":
        params = {"kappa1": 0.1, "kappa2": 10.0, "nonlinearity": "cubic"}
    else:
        raise ValidationError(f"unknown gordon variant {variant!r}")
    params.update(dt=float(dt), nt=int(nt))
    return ProblemSpec("gordon_step", Grid((nx,), "periodic"), params)


# -- elliptic ---------------------------------------------------------------

def elliptic_residual(spec: ProblemSpec, u, v) -> np.ndarray:
    u, v = _field(spec, u, "u"), _field(spec, v, "v")
    return -(_lap(spec.grid) @ v) + spec.params["kappa"] * v**3 - u


def elliptic_jacobian(spec: ProblemSpec, v) -> np.ndarray:
    v = _field(spec, v, "v")
    J = -_lap(spec.grid)
    J[np.diag_indices_from(J)] += 3.0 * spec.params["kappa"] * v**2
    return J


# -- Burgers ----------------------------------------------------------------

def burgers_residual(spec: ProblemSpec, u, v) -> np.ndarray:
    u, v = _field(spec, u, "u"), _field(spec, v, "v")
    g, p = spec.grid, spec.params
    return v - p["dt"] * (p["nu"] * (_lap(g) @ v) - v * (_grad(g, 0) @ v)) - u


def burgers_jacobian(spec: ProblemSpec, v) -> np.ndarray:
    v = _field(spec, v, "v")
    g, p = spec.grid, spec.params
    D = _grad(g, 0)
    inner = p["nu"] * _lap(g) - v[:, None] * D
    inner[np.diag_indices_from(inner)] -= D @ v
    return np.eye(g.n) - p["dt"] * inner


# -- Darcy ------------------------------------------------------------------

def darcy_residual(spec: ProblemSpec, u, v) -> np.ndarray:
    u, v = _field(spec, u, "u"), _field(spec, v, "v")
    g = spec.grid
    adv = sum((_grad(g, a) @ u) * (_grad(g, a) @ v) for a in range(g.dims))
    return (-np.exp(u) * (adv + _lap(g) @ v) + spec.params["kappa"] * v**3
            - spec.fixed_data["f"])


def darcy_jacobian(spec: ProblemSpec, u, v) -> np.ndarray:
    u, v = _field(spec, u, "u"), _field(spec, v, "v")
    g = spec.grid
    op = _lap(g).copy()
    for a in range(g.dims):
        op += (_grad(g, a) @ u)[:, None] * _grad(g, a)
    J = -np.exp(u)[:, None] * op
    J[np.diag_indices_from(J)] += 3.0 * spec.params["kappa"] * v**2
    return J


# -- Klein/Sine-Gordon --------------------------------------------------------

def _gordon_u(spec: ProblemSpec, u):
    arr = np.asarray(u, dtype=float)
    if arr.shape != (2, spec.n):
        raise ShapeMismatch(f"gordon state must have shape (2, {spec.n}), got {arr.shape}")
    return arr[0], arr[1]


def _tau(spec: ProblemSpec, v, derivative: bool = False):
    if spec.params["nonlinearity"] == "sine":
        return np.cos(v) if derivative else np.sin(v)
    return 3.0 * v**2 if derivative else v**3


def gordon_residual(spec: ProblemSpec, u, v) -> np.ndarray:
    u1, u2 = _gordon_u(spec, u)
    v = _field(spec, v, "v")
    p = spec.params
    return v - 2.0 * u1 + u2 - p["dt"] ** 2 * (p["kappa1"] * (_lap(spec.grid) @ v)
                                              - p["kappa2"] * _tau(spec, v))


def gordon_jacobian(spec: ProblemSpec, v) -> np.ndarray:
    v = _field(spec, v, "v")
    p = spec.params
    inner = p["kappa1"] * _lap(spec.grid)
    inner[np.diag_indices_from(inner)] -= p["kappa2"] * _tau(spec, v, derivative=True)
    return np.eye(spec.n) - p["dt"] ** 2 * inner


# -- dispatch -----------------------------------------------------------------

def residual(spec: ProblemSpec, u, v) -> np.ndarray:
    """Residual ``F(u, v)`` for any supported kind."""
    if spec.kind == "elliptic":
        return elliptic_residual(spec, u, v)
    if spec.kind == "burgers_step":
        return burgers_residual(spec, u, v)
    if spec.kind == "darcy":
        return darcy_residual(spec, u, v)
    if spec.kind == "gordon_step":
        return gordon_residual(spec, u, v)
    from .calderon import calderon_residual
    return calderon_residual(spec, u, v)


def jacobian(spec: ProblemSpec, u, v) -> np.ndarray:
    """Jacobian ``dF/dv`` at ``(u, v)``."""
    if spec.kind == "elliptic":
        return elliptic_jacobian(spec, v)
    if spec.kind == "burgers_step":
        return burgers_jacobian(spec, v)
    if spec.kind == "darcy":
        return darcy_jacobian(spec, u, v)
    if spec.kind == "gordon_step":
        return gordon_jacobian(spec, v)
    from .calderon import calderon_jacobian
    return calderon_jacobian(spec, u, v)


# -- coefficient form ----------------------------------------------------------

@dataclass(frozen=True)
class CoefficientTriple:
    """Pointwise coefficients of ``a Lap + sum_k b_k D_k + c``.

    ``b`` has shape ``(dims, n)``.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.a, self.b.ravel(), self.c])

    @classmethod
    def unflatten(cls, z, n: int) -> "CoefficientTriple":
        z = np.asarray(z, dtype=float)
        if z.size % n or z.size // n < 3:
            raise ShapeMismatch(f"cannot split {z.size} values into coefficients of size {n}")
        dims = z.size // n - 2
        return cls(z[:n], z[n:n + dims * n].reshape(dims, n), z[n + dims * n:])


def fonknoris_coefficients(spec: ProblemSpec, u, v) -> CoefficientTriple:
    n, dims = spec.n, spec.grid.dims
    p = spec.params
    if spec.kind == "elliptic":
        v = _field(spec, v, "v")
        return CoefficientTriple(-np.ones(n), np.zeros((dims, n)), 3.0 * p["kappa"] * v**2)
    if spec.kind == "burgers_step":
        v = _field(spec, v, "v")
        dt = p["dt"]
        return CoefficientTriple(np.full(n, -dt * p["nu"]), (dt * v)[None, :],
                                 1.0 + dt * (_grad(spec.grid, 0) @ v))
    if spec.kind == "darcy":
        u, v = _field(spec, u, "u"), _field(spec, v, "v")
        eu = np.exp(u)
        b = np.stack([-eu * (_grad(spec.grid, k) @ u) for k in range(dims)])
        return CoefficientTriple(-eu, b, 3.0 * p["kappa"] * v**2)
    if spec.kind == "gordon_step":
        v = _field(spec, v, "v")
        dt2 = p["dt"] ** 2
        return CoefficientTriple(np.full(n, -p["kappa1"] * dt2), np.zeros((dims, n)),
                                 1.0 + p["kappa2"] * dt2 * _tau(spec, v, derivative=True))
    raise UnsupportedKind(f"{spec.kind} has no local coefficient form")


def build_jacobian_from_coefficients(triple: CoefficientTriple, grid: Grid) -> np.ndarray:
    n = grid.n
    a, b, c = (np.asarray(x, dtype=float) for x in (triple.a, triple.b, triple.c))
    b = b.reshape(-1, n) if b.size else np.zeros((grid.dims, n))
    if a.shape != (n,) or c.shape != (n,) or b.shape != (grid.dims, n):
        raise ShapeMismatch("coefficient shapes do not match the grid")
    J = a[:, None] * _lap(grid)
    for k in range(grid.dims):
        J += b[k][:, None] * _grad(grid, k)
    J[np.diag_indices_from(J)] += c
    return J


# -- finite differences ------------------------------------------------------

def fd_jacobian(residual_fn: Callable, u, v, t: float) -> np.ndarray:
    """Forward-difference Jacobian, column ``j`` along ``e_j`` with step ``t``."""
    if not t > 0:
        raise ValidationError("finite-difference step must be positive")
    v = np.asarray(v, dtype=float)
    F0 = np.asarray(residual_fn(u, v), dtype=float)
    if not np.all(np.isfinite(F0)):
        raise NonFiniteResidual("residual is not finite at the base point")
    J = np.empty((F0.size, v.size))
    vp = v.copy()
    for j in range(v.size):
        vp[j] = v[j] + t
        Fj = np.asarray(residual_fn(u, vp), dtype=float)
        vp[j] = v[j]
        if not np.all(np.isfinite(Fj)):
            raise NonFiniteResidual(f"residual is not finite along direction {j}")
        J[:, j] = (Fj - F0) / t
    return J
