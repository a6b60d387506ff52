"""Dense SPD factorizations, triangular solves and the max-min ordering.

Factors follow a lower-triangular convention throughout: ``cholesky_lower``
returns ``L`` with ``L @ L.T = A`` and ``inverse_cholesky_factor`` returns a
lower ``R`` with ``R @ R.T = inv(A)``.  The upper factor used in some texts is
simply ``R.T`` applied in reversed order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NotPositiveDefinite, ValidationError

_EPS = np.finfo(float).eps
JITTER_SCALE = 1e-12
SYMMETRY_RTOL = 1e-12


def _as_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {A.shape}")
    return A


def _is_symmetric(A: np.ndarray, block: int = 1024) -> bool:
    # blockwise to avoid a full-size temporary on large kernel matrices
    n = A.shape[0]
    tol = SYMMETRY_RTOL * max(float(np.max(np.abs(np.diag(A)))), 1e-300)
    for s in range(0, n, block):
        if np.max(np.abs(A[s:s + block] - A[:, s:s + block].T)) > tol:
            return False
    return True


def _try_cholesky(A: np.ndarray):
    try:
        L = sla.cholesky(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(L)
    # Pivot test: a squared pivot below n*eps*max|diag| is numerical noise.
    thresh = A.shape[0] * _EPS * np.max(np.abs(np.diag(A)))
    if not np.all(np.isfinite(L)) or np.min(d) ** 2 <= thresh:
        return None
    return L


def cholesky_lower(A, jitter: bool = True) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    On a failed or negligible pivot the factorization is retried once with
    ``1e-12 * trace(A)/n`` added to the diagonal.

    Raises
    ------
    NotPositiveDefinite
        If the (jittered) matrix still fails the pivot test.
    """
    A = _as_square(A)
    if not _is_symmetric(A):
        raise ValidationError("matrix is not symmetric")
    L = _try_cholesky(A)
    if L is not None:
        return L
    if jitter:
        n = A.shape[0]
        shift = JITTER_SCALE * np.trace(A) / n
        if shift > 0:
            L = _try_cholesky(A + shift * np.eye(n))
            if L is not None:
                return L
    raise NotPositiveDefinite("Cholesky pivot at or below the jitter threshold")


def solve_lower(L, b) -> np.ndarray:
    """Forward substitution ``L x = b`` (``b`` may hold several columns)."""
    L = _as_square(L)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != L.shape[0]:
        raise DimensionMismatch(f"factor is {L.shape}, right-hand side has {b.shape[0]} rows")
    return sla.solve_triangular(L, b, lower=True, check_finite=False)


def cho_solve_lower(L, b) -> np.ndarray:
    """Solve ``(L L^T) x = b`` from a lower factor."""
    y = solve_lower(L, b)
    return sla.solve_triangular(L, y, lower=True, trans="T", check_finite=False)


def tikhonov_gram(J, lam: float) -> np.ndarray:
    """``lam*I + J^T J``, symmetrized."""
    J = np.asarray(J, dtype=float)
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    M = J.T @ J
    M = 0.5 * (M + M.T)
    M[np.diag_indices_from(M)] += lam
    return M


def inverse_cholesky_factor(J, lam: float) -> np.ndarray:
    """Lower ``R`` with ``R R^T = (lam I + J^T J)^{-1}``.

    Computed without forming the inverse: with the reversal permutation
    ``P``, factor ``P A P = Lp Lp^T``; then ``R = P Lp^{-T} P`` is lower
    triangular with positive diagonal.
    """
    A = tikhonov_gram(J, lam)
    R = inverse_factor_of_spd(A)
    return _refine(np.asarray(J, dtype=float), lam, R)


def _refine(J, lam, R):
    # One correction step.  E = R^T A R is formed as (JR)^T (JR) + lam R^T R, whose
    # rounding scales with cond(J) rather than cond(J^T J).  With E = U U^T (U upper)
    # the factor R U^{-T} is still lower triangular and satisfies the identity exactly.
    B = J @ R
    E = B.T @ B
    if lam:
        E += lam * (R.T @ R)
    E = 0.5 * (E + E.T)
    U = _try_cholesky(E[::-1, ::-1])
    if U is None:
        return R
    U = U[::-1, ::-1]
    return np.ascontiguousarray(sla.solve_triangular(U, R.T, lower=False, check_finite=False).T)


def inverse_factor_of_spd(A) -> np.ndarray:
    """Lower inverse Cholesky factor of an SPD matrix ``A``."""
    A = _as_square(A)
    Lp = cholesky_lower(A[::-1, ::-1])
    Linv = sla.solve_triangular(Lp, np.eye(A.shape[0]), lower=True, check_finite=False)
    return np.ascontiguousarray(Linv.T[::-1, ::-1])


def condition_estimate(A, iters: int = 60, seed: int = 0) -> float:
    """Spectral condition number estimate of an SPD matrix.

    Power iteration gives the largest eigenvalue and inverse iteration
    (through the Cholesky factor) the smallest one.
    """
    A = _as_square(A)
    L = cholesky_lower(A)
    n = A.shape[0]
    if n == 1:
        return 1.0
    x0 = np.random.default_rng(seed).standard_normal(n)
    x = x0 / np.linalg.norm(x0)
    for _ in range(iters):
        y = A @ x
        x = y / np.linalg.norm(y)
    lmax = x @ (A @ x)
    x = x0 / np.linalg.norm(x0)
    for _ in range(iters):
        y = cho_solve_lower(L, x)
        x = y / np.linalg.norm(y)
    lmin = x @ (A @ x)
    return float(lmax / lmin)


@dataclass(frozen=True)
class OrderingResult:
    permutation: np.ndarray
    distances: np.ndarray


def maxmin_ordering(points, boundary_distance: Callable) -> OrderingResult:
    """Greedy max-min ordering.

    The first point maximizes the distance to the boundary; every later point
    maximizes its distance to the boundary and all points chosen so far.
    Ties go to the lowest original index.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n < 1:
        raise ValidationError("need at least one point")
    m = np.array([float(boundary_distance(p if p.size > 1 else p[0])) for p in pts])
    if np.any(m < 0):
        raise ValidationError("boundary distances must be non-negative")
    chosen = np.zeros(n, dtype=bool)
    perm = np.empty(n, dtype=int)
    dist = np.empty(n)
    for k in range(n):
        cand = np.where(chosen, -np.inf, m)
        i = int(np.argmax(cand))  # first maximizer => lowest index
        perm[k] = i
        dist[k] = m[i]
        chosen[i] = True
        m = np.minimum(m, np.linalg.norm(pts - pts[i], axis=1))
    return OrderingResult(perm, dist)
