"""Convergence certification for the regularized, inexact Newton iteration.

Everything here is measured in Euclidean norms on the discrete unknowns,
except :func:`h_minus_one_norm` and :func:`v_norm`, which reproduce the
continuous periodic frame (``||u||_V = ||u'||_{L2}``) on a uniform grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field

import numpy as np

from .errors import (ForcingExceedsOne, KantorovichViolated, SingularOnConstants,
                     UnsupportedKind, ValidationError, ZeroResidual)
from .grid import Grid, forward_difference, laplacian
from .linalg import cho_solve_lower, cholesky_lower, tikhonov_gram
from .nk import apply_factor, features, nk_solve
from .problems import ProblemSpec, jacobian, residual


@dataclass
class ConvergenceCertificate:
    beta: float
    L: float
    M: float
    sigma_star: float
    eta: float
    eps_lambda: float
    theta_bar: float
    L_tilde: float
    h_tilde: float
    t_star: float
    lam: float = 0.0
    radius: float = float("nan")
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = [self.beta, self.L, self.M, self.sigma_star, self.eta, self.eps_lambda,
                self.theta_bar, self.L_tilde, self.h_tilde]
        if any(not (x >= 0) for x in vals):
            raise ValidationError("certificate constants must be non-negative")

    @property
    def valid(self) -> bool:
        return self.theta_bar < 1 and self.h_tilde <= 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- scalar pieces -------------------------------------------------------------

def forcing_bound(lam: float, sigma_star: float, M: float, eps_lambda: float) -> float:
    """``lam/(lam + sigma*^2) + M^2 eps``: Tikhonov bias plus model error."""
    if min(lam, M, eps_lambda) < 0 or not sigma_star > 0:
        raise ValidationError("need lam, M, eps >= 0 and sigma_star > 0")
    if np.isinf(lam):
        return 1.0 + M * M * eps_lambda
    return lam / (lam + sigma_star**2) + M * M * eps_lambda


def kantorovich_limit(eta: float, beta: float, L_tilde: float) -> float:
    """Smallest root of ``eta - t + beta*L_tilde*t^2/2``."""
    a = beta * L_tilde
    if a == 0:
        return float(eta)
    h = a * eta
    if h > 0.5:
        raise KantorovichViolated(f"h = {h:.6g} exceeds 1/2")
    # 2*eta/(1+sqrt(1-2h)) is the cancellation-free form of (1-sqrt(1-2h))/a
    return 2.0 * eta / (1.0 + np.sqrt(max(1.0 - 2.0 * h, 0.0)))


def majorant_sequence(eta: float, beta: float, L_tilde: float, k_max: int) -> np.ndarray:
    """``t_0 = 0, ..., t_{k_max}``: Newton's method on ``phi(t) = eta - t + beta*L_tilde*t^2/2``."""
    if min(eta, beta, L_tilde) < 0:
        raise ValidationError("eta, beta and L_tilde must be non-negative")
    a = beta * L_tilde
    if a * eta > 0.5:
        raise KantorovichViolated(f"h = {a * eta:.6g} exceeds 1/2")
    t = np.zeros(int(k_max) + 1)
    for k in range(int(k_max)):
        phi = eta - t[k] + 0.5 * a * t[k] ** 2
        dphi = a * t[k] - 1.0
        if dphi == 0.0 or phi == 0.0:
            t[k + 1:] = t[k]
            break
        t[k + 1] = t[k] - phi / dphi
    return t


# -- discrete norms on periodic 1-D grids ----------------------------------------

def _periodic_1d(grid: Grid):
    if grid.dims != 1 or grid.topology != "periodic":
        raise ValidationError("a periodic 1-D grid is required")


def v_norm(x, grid: Grid) -> float:
    """Discrete ``||x'||_{L2}`` from forward differences."""
    x = grid.check(x)
    return float(np.sqrt(grid.h) * np.linalg.norm(forward_difference(grid) @ x))


def _mean_zero_solve(g: np.ndarray, grid: Grid) -> np.ndarray:
    n = grid.n
    A = -laplacian(grid) + np.ones((n, n)) / n  # rank-one fix pins the mean to zero
    x = np.linalg.solve(A, g)
    return x - x.mean()


def h_minus_one_norm(f, grid: Grid, mean_tol: float = 1e-10) -> float:
    """``||A^{-1} f||_V`` with ``A = -Lap_h`` on mean-zero periodic fields."""
    _periodic_1d(grid)
    f = grid.check(f)
    scale = max(float(np.max(np.abs(f))), np.finfo(float).tiny)
    if abs(f.mean()) > mean_tol * scale:
        raise SingularOnConstants("field has a non-zero mean; -Lap is singular on constants")
    if not np.any(f):
        return 0.0
    return v_norm(_mean_zero_solve(f - f.mean(), grid), grid)


def w_norm(g, grid: Grid) -> float:
    """Dual norm, identical to :func:`h_minus_one_norm`."""
    return h_minus_one_norm(g, grid)


# -- closed-form elliptic constants ----------------------------------------------

def elliptic_constants(r: float, lam: float, eps_lambda: float, f, grid: Grid | None = None,
                       ) -> ConvergenceCertificate:
    """Constants for ``-v'' + v^3 = f`` on the unit torus in the ball ``||v||_V <= r``.

    ``L = 3r/(2 pi^2)``, ``M = 1 + 3r^2/(4 pi^2)``, ``beta = sigma* = 1`` and
    ``eta = ||f||_{H^-1}`` evaluated on ``grid`` (periodic, default sized to ``f``).
    """
    if not r > 0:
        raise ValidationError("radius must be positive")
    if lam < 0 or eps_lambda < 0:
        raise ValidationError("lam and eps must be non-negative")
    f = np.asarray(f, dtype=float)
    grid = Grid((f.size,), "periodic") if grid is None else grid
    L = 3.0 * r / (2.0 * np.pi**2)
    M = 1.0 + 3.0 * r**2 / (4.0 * np.pi**2)
    theta = lam / (1.0 + lam) + M * M * eps_lambda
    if theta >= 1.0:
        raise ForcingExceedsOne(f"forcing bound {theta:.6g} is not below one")
    eta = h_minus_one_norm(f, grid)
    Lt = L / (1.0 - theta)
    h = Lt * eta
    t_star = kantorovich_limit(eta, 1.0, Lt) if h <= 0.5 else float("nan")
    return ConvergenceCertificate(1.0, L, M, 1.0, eta, eps_lambda, theta, Lt, h, t_star,
                                  lam=lam, radius=r)


# -- resolvent identity ------------------------------------------------------------

def resolvent_identity_check(J, lam: float) -> float:
    """Frobenius defect of ``I - J (lam I + J^T J)^{-1} J^T = lam (lam I + J J^T)^{-1}``."""
    if not lam > 0:
        raise ValidationError("lam must be positive")
    J = np.asarray(J, dtype=float)
    m = J.shape[0]
    left = np.eye(m) - J @ cho_solve_lower(cholesky_lower(tikhonov_gram(J, lam)), J.T)
    right = lam * cho_solve_lower(cholesky_lower(tikhonov_gram(J.T, lam)), np.eye(m))
    return float(np.linalg.norm(left - right))


# -- measured forcing ----------------------------------------------------------------

@dataclass(frozen=True)
class ForcingMeasurement:
    ratio: float
    theta: float
    sigma_star: float
    M: float
    eps_lambda: float

    @property
    def holds(self) -> bool:
        return self.ratio <= self.theta


def design_error(spec: ProblemSpec, model, u, v, lam: float) -> float:
    """Spectral norm of ``Rhat Rhat^T - (lam I + J^T J)^{-1}`` at ``v``."""
    J = jacobian(spec, u, v)
    R, perm = model.predict_factor(features(spec, u, v, model.mode), lam, J)
    B_hat = _gram_of_factor(R, perm)
    B = cho_solve_lower(cholesky_lower(tikhonov_gram(J, lam)), np.eye(J.shape[1]))
    return float(np.linalg.norm(B_hat - B, 2))


def _gram_of_factor(R, perm):
    B = R @ R.T
    if perm is not None:
        inv = np.argsort(perm)
        B = B[np.ix_(inv, inv)]
    return B


def empirical_forcing(spec: ProblemSpec, model, u, v, lam: float, sigma_star: float | None = None,
                      M: float | None = None) -> ForcingMeasurement:
    """Linearized-residual ratio of one surrogate step, with its bound.

    ``sigma_star`` and ``M`` default to the extreme singular values of the
    Jacobian at ``v``; trajectory-wide values may be passed instead.
    """
    F = residual(spec, u, v)
    nF = np.linalg.norm(F)
    if nF == 0:
        raise ZeroResidual("residual vanishes; the ratio is undefined")
    J = jacobian(spec, u, v)
    R, perm = model.predict_factor(features(spec, u, v, model.mode), lam, J)
    step = -apply_factor(R, J.T @ F, perm)
    ratio = float(np.linalg.norm(J @ step + F) / nF)
    s = np.linalg.svd(J, compute_uv=False)
    sig = float(s[-1]) if sigma_star is None else float(sigma_star)
    Mv = float(s[0]) if M is None else float(M)
    B = cho_solve_lower(cholesky_lower(tikhonov_gram(J, lam)), np.eye(J.shape[1]))
    eps = float(np.linalg.norm(_gram_of_factor(R, perm) - B, 2))
    return ForcingMeasurement(ratio, forcing_bound(lam, sig, Mv, eps), sig, Mv, eps)


# -- local order ----------------------------------------------------------------------

def fit_local_order(errors, floor: float = 1e-13, window: int = 4) -> float:
    """Least-squares slope of ``log e_{k+1}`` against ``log e_k``.

    Uses the last ``window`` errors above ``floor``.
    """
    e = np.asarray(errors, dtype=float)
    e = e[e > floor]
    if e.size < 3:
        raise ValidationError("need at least three errors above the floor")
    e = e[-window:]
    x, y = np.log(e[:-1]), np.log(e[1:])
    return float(np.polyfit(x, y, 1)[0])


def tail_ratio(errors, floor: float = 1e-13) -> float:
    """Largest ``e_{k+1}/e_k`` over the last three ratios above ``floor``."""
    e = np.asarray(errors, dtype=float)
    e = e[e > floor]
    if e.size < 2:
        raise ValidationError("need at least two errors above the floor")
    r = e[1:] / e[:-1]
    return float(np.max(r[-3:]))


# -- certified elliptic runs -------------------------------------------------------------

@dataclass
class CertifiedRun:
    certificate: ConvergenceCertificate
    iterates: np.ndarray
    increments: np.ndarray
    majorant: np.ndarray
    forcing: list
    dominated: bool
    in_ball: bool

    def to_dict(self) -> dict:
        return {"certificate": self.certificate.to_dict(),
                "increments": self.increments.tolist(),
                "majorant_steps": np.diff(self.majorant).tolist(),
                "forcing_ratios": [m.ratio for m in self.forcing],
                "forcing_bounds": [m.theta for m in self.forcing],
                "dominated": self.dominated, "in_ball": self.in_ball}


def _elliptic_ball_constants(spec: ProblemSpec, v0, radius: float):
    # F'(a) - F'(b) = 3 kappa diag(a^2 - b^2) and |.|_inf <= |.|_2 on the ball
    kappa = spec.params["kappa"]
    w = float(np.max(np.abs(v0))) + radius
    L = 6.0 * kappa * w
    A = -laplacian(spec.grid)
    ev = np.linalg.eigvalsh(A)
    sigma = float(ev[0])            # 3 kappa v^2 >= 0 only raises the spectrum
    M = float(ev[-1]) + 3.0 * kappa * w * w
    return L, M, sigma


def certify_elliptic_run(spec: ProblemSpec, model, u, v0, lam: float, k_max: int = 12,
                         radius: float | None = None, fixed_point_iters: int = 20) -> CertifiedRun:
    """Run ``k_max`` surrogate steps from ``v0`` and test the majorant bounds.

    ``L``, ``M`` and ``sigma*`` are rigorous over the Euclidean ball around
    ``v0``; the design error is measured along the run.  Unless ``radius`` is
    given it is set self-consistently to ``t*``.
    """
    if spec.kind != "elliptic":
        raise UnsupportedKind("certified runs are implemented for the elliptic problem")
    v = np.asarray(v0, dtype=float).copy()
    iterates = [v.copy()]
    for _ in range(k_max):
        F = residual(spec, u, v)
        if not np.any(F):
            break
        J = jacobian(spec, u, v)
        R, perm = model.predict_factor(features(spec, u, v, model.mode), lam, J)
        v = v - apply_factor(R, J.T @ F, perm)
        iterates.append(v.copy())
    X = np.array(iterates)
    inc = np.linalg.norm(np.diff(X, axis=0), axis=1)

    J0 = jacobian(spec, u, X[0])
    s0 = np.linalg.svd(J0, compute_uv=False)
    beta = 1.0 / float(s0[-1])
    eta = float(np.linalg.norm(np.linalg.solve(J0, residual(spec, u, X[0]))))
    eps = max((design_error(spec, model, u, x, lam) for x in X[:-1]), default=0.0)

    R_ball = eta if radius is None else float(radius)
    for _ in range(fixed_point_iters if radius is None else 1):
        L, M, sigma = _elliptic_ball_constants(spec, X[0], R_ball)
        theta = forcing_bound(lam, sigma, M, eps)
        Lt = L / (1.0 - theta) if theta < 1 else float("inf")
        h = beta * Lt * eta
        t_star = kantorovich_limit(eta, beta, Lt) if h <= 0.5 else float("inf")
        if radius is not None or not np.isfinite(t_star) or abs(t_star - R_ball) <= 1e-12 * R_ball:
            break
        R_ball = t_star
    cert = ConvergenceCertificate(beta, L, M, sigma, eta, eps, theta,
                                  Lt if np.isfinite(Lt) else 0.0, h if np.isfinite(h) else 0.0,
                                  t_star, lam=lam, radius=R_ball,
                                  notes={"norm": "euclidean", "sigma_M": "rigorous over ball",
                                         "eps_lambda": "empirical over trajectory"})
    if not (theta < 1 and h <= 0.5 and t_star <= R_ball * (1 + 1e-12)):
        raise KantorovichViolated(f"run not certifiable: theta={theta:.3g}, h={h:.3g}")
    t = majorant_sequence(eta, beta, Lt, len(inc))
    # rounding allowance: steps go through J^T J, so their relative error is
    # eps*cond(J)^2; once converged the increments are eps*cond(J)*|v| noise
    eps_m, cond = np.finfo(float).eps, float(s0[0] / s0[-1])
    floor = eps_m * cond * float(np.max(np.linalg.norm(X, axis=1)))
    dt = np.diff(t)
    slack = eps_m * cond**2 * dt + floor
    dominated = bool(np.all(inc <= dt + slack))
    in_ball = bool(np.all(np.linalg.norm(X - X[0], axis=1) <= t_star * (1 + 1e-12) + floor))
    forcing = [empirical_forcing(spec, model, u, x, lam, sigma, M) for x in X[:-1]
               if np.any(residual(spec, u, x))]
    return CertifiedRun(cert, X, inc, t, forcing, dominated, in_ball)


def exact_order_trace(spec: ProblemSpec, u, v0, c: float = 1.0, max_iter: int = 30):
    """Exact-factor solve with ``lam_k = c ||F(v_k)||``; returns ``(errors, trace)``.

    Errors are Euclidean distances to the final iterate.
    """
    tr = nk_solve(spec, u, v0, max_iter=max_iter, tol=0.0, relative=False,
                  lam_rule=lambda F: c * float(np.linalg.norm(F)))
    X = np.array(tr.iterates)
    v_star = X[-1]
    return np.linalg.norm(X[:-1] - v_star, axis=1), tr
