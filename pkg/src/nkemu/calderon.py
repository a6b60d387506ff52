"""Discrete Calderon (electrical impedance) problem on the unit square.

The conductivity ``v`` lives on the interior nodes of a Dirichlet grid.  An
edge between two interior nodes carries the mean of their conductivities;
an edge from interior node ``p`` to a boundary node carries ``v_p``.  The
potential ``c`` solves the conservative five-point scheme with boundary
voltage ``g``; the flux at a non-corner boundary node ``b`` with inward
neighbour ``p`` is the one-sided difference ``v_p (g_b - c_p) / h``.
Corner nodes touch no interior node, so they carry no flux.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .errors import (CountMismatch, NonPositiveConductivity, ShapeMismatch,
                     SingularSystem, ValidationError)
from .grid import Grid
from .problems import ProblemSpec, fd_jacobian


@dataclass(frozen=True)
class _Topology:
    n_int: int
    n_bnd: int
    ii: np.ndarray        # (E, 2) interior-interior edges
    ib: np.ndarray        # (F, 2) interior p, boundary index b
    flux_b: np.ndarray    # boundary indices carrying flux
    flux_p: np.ndarray    # their inward interior neighbours
    boundary_xy: np.ndarray


@lru_cache(maxsize=8)
def _topology(grid: Grid) -> _Topology:
    if grid.dims != 2 or grid.topology != "dirichlet":
        raise ValidationError("the Calderon problem needs a 2-D Dirichlet grid")
    n1, n2 = grid.sizes
    interior = -np.ones((n1, n2), dtype=int)
    interior[1:-1, 1:-1] = np.arange((n1 - 2) * (n2 - 2)).reshape(n1 - 2, n2 - 2)
    bmask = interior < 0
    boundary = -np.ones((n1, n2), dtype=int)
    boundary[bmask] = np.arange(bmask.sum())

    ii, ib = [], []
    for i in range(n1):
        for j in range(n2):
            for di, dj in ((1, 0), (0, 1)):
                k, l = i + di, j + dj
                if k >= n1 or l >= n2:
                    continue
                a, b = interior[i, j], interior[k, l]
                if a >= 0 and b >= 0:
                    ii.append((a, b))
                elif a >= 0:
                    ib.append((a, boundary[k, l]))
                elif b >= 0:
                    ib.append((b, boundary[i, j]))
    ib = np.array(ib, dtype=int)
    order = np.argsort(ib[:, 1], kind="stable")
    ib = ib[order]
    h = grid.spacing
    bxy = np.array([(i * h[0], j * h[1]) for i in range(n1) for j in range(n2) if bmask[i, j]])
    return _Topology((n1 - 2) * (n2 - 2), int(bmask.sum()), np.array(ii, dtype=int), ib,
                     ib[:, 1].copy(), ib[:, 0].copy(), bxy)


def boundary_nodes(grid: Grid) -> np.ndarray:
    """Coordinates of the boundary nodes in the package's boundary ordering."""
    return _topology(grid).boundary_xy.copy()


def flux_nodes(grid: Grid) -> np.ndarray:
    """Boundary indices at which fluxes are reported."""
    return _topology(grid).flux_b.copy()


def default_excitations(grid: Grid) -> np.ndarray:
    """One indicator voltage pattern per boundary node, shape ``(n_bnd, n_bnd)``."""
    return np.eye(_topology(grid).n_bnd)


def calderon_problem(size: int = 9, excitations=None, jacobian: str = "fd") -> ProblemSpec:
    g = Grid((size, size), "dirichlet")
    exc = default_excitations(g) if excitations is None else np.atleast_2d(np.asarray(excitations, float))
    if exc.shape[1] != _topology(g).n_bnd:
        raise ShapeMismatch(f"excitations need {_topology(g).n_bnd} boundary values each")
    if jacobian not in ("fd", "analytic"):
        raise ValidationError("calderon jacobian must be 'fd' or 'analytic'")
    return ProblemSpec("calderon", g, {"jacobian": jacobian}, {"excitations": exc})


def _system(grid: Grid, v: np.ndarray):
    top = _topology(grid)
    v = np.asarray(v, dtype=float)
    if v.shape != (top.n_int,):
        raise ShapeMismatch(f"conductivity must have shape ({top.n_int},)")
    if not np.all(np.isfinite(v)):
        raise NonPositiveConductivity("conductivity is not finite")
    if np.any(v <= 0):
        raise NonPositiveConductivity("conductivity must be positive")
    A = np.zeros((top.n_int, top.n_int))
    p, q = top.ii[:, 0], top.ii[:, 1]
    s = 0.5 * (v[p] + v[q])
    np.add.at(A, (p, p), s)
    np.add.at(A, (q, q), s)
    np.add.at(A, (p, q), -s)
    np.add.at(A, (q, p), -s)
    pb, bb = top.ib[:, 0], top.ib[:, 1]
    np.add.at(A, (pb, pb), v[pb])
    B = np.zeros((top.n_int, top.n_bnd))
    np.add.at(B, (pb, bb), v[pb])
    return A, B


def _factor(A):
    try:
        return sla.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("discrete conductivity operator is singular") from exc


def calderon_forward(spec: ProblemSpec, v, g):
    """Interior potential and boundary flux for voltage pattern(s) ``g``.

    ``g`` may be one pattern of length ``n_bnd`` or a matrix whose columns
    are patterns.  Returns ``(c, flux)`` with matching trailing shape.
    """
    grid = spec.grid
    top = _topology(grid)
    v = np.asarray(v, dtype=float)
    A, B = _system(grid, v)
    g = np.asarray(g, dtype=float)
    if g.shape[0] != top.n_bnd:
        raise ShapeMismatch(f"boundary data needs {top.n_bnd} rows")
    c = sla.cho_solve(_factor(A), B @ g, check_finite=False)
    h = grid.h
    flux = v[top.flux_p].reshape((-1,) + (1,) * (g.ndim - 1)) * (g[top.flux_b] - c[top.flux_p]) / h
    return c, flux


def _observations(spec: ProblemSpec, u) -> np.ndarray:
    exc = spec.fixed_data["excitations"]
    n_flux = _topology(spec.grid).flux_b.size
    u = np.asarray(u, dtype=float)
    if u.size != exc.shape[0] * n_flux:
        raise CountMismatch(f"expected {exc.shape[0]} observed flux sets of length {n_flux}")
    return u.reshape(exc.shape[0], n_flux)


def simulate_observations(spec: ProblemSpec, v) -> np.ndarray:
    """Noise-free flux data ``(n_exc, n_flux)`` for conductivity ``v``."""
    _, flux = calderon_forward(spec, v, spec.fixed_data["excitations"].T)
    return flux.T.copy()


def calderon_residual(spec: ProblemSpec, u, v) -> np.ndarray:
    """Stacked predicted-minus-observed fluxes over all excitations."""
    obs = _observations(spec, u)
    return (simulate_observations(spec, v) - obs).ravel()


def calderon_fd_step(v) -> float:
    return 1e-7 * (1.0 + float(np.max(np.abs(v))))


def calderon_jacobian(spec: ProblemSpec, u, v) -> np.ndarray:
    """Jacobian of :func:`calderon_residual` in ``v``.

    Forward differences by default; ``params['jacobian'] == 'analytic'``
    selects the adjoint-free sensitivity computed below.
    """
    if spec.params.get("jacobian", "fd") == "fd":
        return fd_jacobian(lambda uu, vv: calderon_residual(spec, uu, vv), u, v,
                           calderon_fd_step(v))
    return calderon_jacobian_analytic(spec, v)


def calderon_jacobian_analytic(spec: ProblemSpec, v) -> np.ndarray:
    grid = spec.grid
    top = _topology(grid)
    v = np.asarray(v, dtype=float)
    G = spec.fixed_data["excitations"].T          # (n_bnd, K)
    A, B = _system(grid, v)
    fac = _factor(A)
    C = sla.cho_solve(fac, B @ G, check_finite=False)  # (n_int, K)
    n, K = top.n_int, G.shape[1]

    # P[:, s, k] = d/dv_s of (A(v) c_k - B(v) g_k) at fixed c_k
    P = np.zeros((n, n, K))
    p, q = top.ii[:, 0], top.ii[:, 1]
    half = 0.5 * (C[p] - C[q])
    np.add.at(P, (p, p), half)
    np.add.at(P, (p, q), half)
    np.add.at(P, (q, p), -half)
    np.add.at(P, (q, q), -half)
    pb, bb = top.ib[:, 0], top.ib[:, 1]
    np.add.at(P, (pb, pb), C[pb] - G[bb])
    dC = -sla.cho_solve(fac, P.reshape(n, n * K), check_finite=False).reshape(n, n, K)

    h = grid.h
    fb, fp = top.flux_b, top.flux_p
    m = fb.size
    J = -(v[fp][:, None, None] / h) * dC[fp]        # (m, n, K)
    J[np.arange(m), fp, :] += (G[fb] - C[fp]) / h
    return J.transpose(2, 0, 1).reshape(K * m, n)
