"""Online phase: quasi-Newton iteration driven by a learned inverse factor.

Each iteration forms the direction ``d = R R^T J^T F`` from a predicted
lower factor ``R`` (two triangular matrix-vector products) and moves to
``v - alpha d``.  A line search over the nine ``(lambda, alpha)`` pairs
obtained by deflating, keeping or inflating each parameter keeps the
residual strictly decreasing.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import (Diverged, NonFiniteUpdate, NonPositiveConductivity, NumericalError,
                     StallDetected, UnsupportedKind, ValidationError)
from .nk import DIVERGENCE_FACTOR, NKTrace, apply_factor, factor_for, features, march, rel_l2, rmse
from .problems import (ProblemSpec, build_jacobian_from_coefficients, fonknoris_coefficients,
                       jacobian, residual)

FALLBACK_HALVINGS = 20


@dataclass(frozen=True)
class ScheduleState:
    lam: float = 0.0
    alpha: float = 1.0
    kappa_lam: float = 0.5
    kappa_alpha: float = 0.5
    beta_lam: float = 2.0
    beta_alpha: float = 2.0

    def __post_init__(self):
        if self.lam < 0 or not self.alpha >= 0:
            raise ValidationError("schedule needs lambda >= 0 and alpha >= 0")
        if not (0 < self.kappa_lam <= 1 <= self.beta_lam and 0 < self.kappa_alpha <= 1 <= self.beta_alpha):
            raise ValidationError("schedule factors need 0 < kappa <= 1 <= beta")

    @classmethod
    def fixed(cls, lam: float, alpha: float = 1.0) -> "ScheduleState":
        """Degenerate schedule that never changes ``(lam, alpha)``."""
        return cls(lam, alpha, 1.0, 1.0, 1.0, 1.0)


def propose_candidates(schedule: ScheduleState) -> list:
    """The 9 pairs ``{k_l l, l, b_l l} x {k_a a, a, b_a a}`` (duplicates kept)."""
    s = schedule
    lams = (s.kappa_lam * s.lam, s.lam, s.beta_lam * s.lam)
    alphas = (s.kappa_alpha * s.alpha, s.alpha, s.beta_alpha * s.alpha)
    return [(l, a) for l in lams for a in alphas]


class ExactFactorModel:
    """Stand-in model returning the exact inverse factor of the current Jacobian."""

    lambda_aware = True

    def __init__(self, mode: str = "chonknoris", perm=None):
        self.mode = mode
        self.perm = None if perm is None else np.asarray(perm, dtype=int)

    def predict_factor(self, z, lam, J=None):
        if J is None:
            raise ValidationError("the exact model needs the Jacobian")
        return factor_for(J, lam, self.perm), self.perm


class ZeroModel:
    """Adversarial model predicting the floor factor everywhere."""

    lambda_aware = False

    def __init__(self, n: int, mode: str = "chonknoris", floor: float = 0.0):
        self.n, self.mode, self.perm, self.floor = n, mode, None, floor

    def predict_factor(self, z, lam, J=None):
        return self.floor * np.eye(self.n), None


@dataclass
class Counters:
    jacobian_builds: int = 0
    factor_predictions: int = 0
    triangular_matvecs: int = 0
    residual_evals: int = 0


def _linearize(spec, model, u, v, pathway, counters):
    """Model input and Jacobian at ``v`` for the chosen pathway."""
    counters.jacobian_builds += 1
    if pathway == "fonknoris":
        triple = fonknoris_coefficients(spec, u, v)
        return triple.flatten(), build_jacobian_from_coefficients(triple, spec.grid)
    return features(spec, u, v, getattr(model, "mode", "chonknoris")), jacobian(spec, u, v)


def _direction(model, z, lam, J, F, counters):
    R, perm = model.predict_factor(z, lam, J)
    counters.factor_predictions += 1
    counters.triangular_matvecs += 2
    return apply_factor(R, J.T @ F, perm)


def _safe_rmse(spec, u, v, counters) -> float:
    counters.residual_evals += 1
    try:
        r = rmse(residual(spec, u, v))
    except (NumericalError, NonPositiveConductivity):
        return np.inf
    return r if np.isfinite(r) else np.inf


def chonknoris_step(spec: ProblemSpec, model, u, v, schedule: ScheduleState,
                    pathway: str = "chonknoris", counters: Counters | None = None) -> np.ndarray:
    """``v - alpha R R^T J^T F(u, v)`` with ``R`` predicted at ``schedule.lam``."""
    counters = counters or Counters()
    v = np.asarray(v, dtype=float)
    z, J = _linearize(spec, model, u, v, pathway, counters)
    F = residual(spec, u, v)
    counters.residual_evals += 1
    out = v - schedule.alpha * _direction(model, z, schedule.lam, J, F, counters)
    if not np.all(np.isfinite(out)):
        raise NonFiniteUpdate("update produced non-finite values")
    return out


def line_search_step(spec: ProblemSpec, model, u, v, schedule: ScheduleState,
                     pathway: str = "chonknoris", counters: Counters | None = None,
                     current: float | None = None):
    """Best of the nine candidate updates, or a damped gradient fallback.

    Returns ``(v_new, schedule_new, info)`` where ``info`` records the new
    residual and whether the fallback was used.  Single-lambda models see
    a collapsed lambda grid so they are never queried off their training
    lambda.
    """
    counters = counters or Counters()
    v = np.asarray(v, dtype=float)
    z, J = _linearize(spec, model, u, v, pathway, counters)
    F = residual(spec, u, v)
    counters.residual_evals += 1
    r_cur = rmse(F) if current is None else current
    eff = schedule if getattr(model, "lambda_aware", False) else replace(schedule, kappa_lam=1.0, beta_lam=1.0)
    cands = sorted(propose_candidates(eff))
    dirs = {}
    best = (np.inf, None, None)
    for lam, alpha in cands:
        if lam not in dirs:
            dirs[lam] = _direction(model, z, lam, J, F, counters)
        vc = v - alpha * dirs[lam]
        if not np.all(np.isfinite(vc)):
            continue
        r = _safe_rmse(spec, u, vc, counters)
        if r < best[0]:
            best = (r, vc, (lam, alpha))
    if best[0] < r_cur:
        lam, alpha = best[2]
        return best[1], replace(schedule, lam=lam, alpha=alpha), {"residual": best[0], "fallback": False}

    # gradient fallback, step length matched to the model direction
    g = J.T @ F
    d = dirs.get(schedule.lam)
    scale = np.linalg.norm(d) if d is not None and np.all(np.isfinite(d)) else 0.0
    gn = np.linalg.norm(g)
    if gn == 0:
        raise StallDetected("zero gradient")
    if scale == 0:
        scale = max(np.linalg.norm(v), 1.0)
    step = g * (scale / gn)
    alpha = schedule.alpha if schedule.alpha > 0 else 1.0
    for _ in range(FALLBACK_HALVINGS):
        alpha *= 0.5
        vc = v - alpha * step
        r = _safe_rmse(spec, u, vc, counters)
        if r < r_cur:
            return vc, replace(schedule, alpha=alpha), {"residual": r, "fallback": True}
    raise StallDetected("no candidate or fallback step reduces the residual")


@dataclass
class SolveReport:
    trace: NKTrace
    rel_l2_errors: list = field(default_factory=list)
    schedule_history: list = field(default_factory=list)
    stop_reason: str = ""
    stalled: bool = False
    fallbacks: int = 0
    counters: Counters = field(default_factory=Counters)
    seconds: float = 0.0

    @property
    def solution(self) -> np.ndarray:
        return self.trace.solution

    @property
    def iterations(self) -> int:
        return self.trace.iterations

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual_norms": [float(x) for x in self.trace.residual_norms],
            "increments": [float(x) for x in self.trace.increments],
            "rel_l2_errors": [float(x) for x in self.rel_l2_errors],
            "schedule": [[float(l), float(a)] for l, a in self.schedule_history],
            "stop_reason": self.stop_reason,
            "stalled": self.stalled,
            "fallbacks": self.fallbacks,
            "counters": asdict(self.counters),
            "seconds": self.seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "residual_rmse", "rel_l2_error", "lambda", "alpha"])
        sched = [(None, None)] + list(self.schedule_history)
        for k, r in enumerate(self.trace.residual_norms):
            e = self.rel_l2_errors[k] if k < len(self.rel_l2_errors) else ""
            l, a = sched[k] if k < len(sched) else (None, None)
            w.writerow([k, repr(float(r)), "" if e == "" else repr(float(e)),
                        "" if l is None else repr(float(l)), "" if a is None else repr(float(a))])
        return buf.getvalue()


def chonknoris_solve(spec: ProblemSpec, model, u, v0, budget: int = 50, tol_res: float = 1e-14,
                     tol_step: float = 1e-14, reference=None, schedule: ScheduleState | None = None,
                     pathway: str = "chonknoris") -> SolveReport:
    """Line-searched learned-factor iteration from ``v0``.

    Stops when ``||F|| / ||F(v0)|| <= tol_res``, when the relative step is
    ``<= tol_step`` (a line-search stall counts as a vanishing step), or
    after ``budget`` iterations.
    """
    t0 = time.perf_counter()
    if schedule is None:
        lt = getattr(model, "lambda_train", None)
        schedule = ScheduleState(lam=float(lt[0]) if lt else 0.0)
    v = np.array(v0, dtype=float)
    r0 = rmse(residual(spec, u, v))
    rep = SolveReport(NKTrace([v.copy()], [r0]))
    rep.counters.residual_evals += 1
    if reference is not None:
        rep.rel_l2_errors.append(rel_l2(v, reference))
    r = r0
    for _ in range(budget):
        if r <= tol_res * r0:
            rep.stop_reason = "tol_residual"
            break
        try:
            v_new, schedule, info = line_search_step(spec, model, u, v, schedule, pathway,
                                                     rep.counters, current=r)
        except StallDetected:
            rep.stop_reason, rep.stalled = "tol_step", True
            break
        step = float(np.linalg.norm(v_new - v))
        v, r = v_new, info["residual"]
        rep.fallbacks += int(info["fallback"])
        rep.trace.iterates.append(v.copy())
        rep.trace.residual_norms.append(r)
        rep.trace.increments.append(step)
        rep.trace.lambdas.append(schedule.lam)
        rep.schedule_history.append((schedule.lam, schedule.alpha))
        if reference is not None:
            rep.rel_l2_errors.append(rel_l2(v, reference))
        if r > DIVERGENCE_FACTOR * r0:
            rep.stop_reason = "diverged"
            raise Diverged("learned iteration diverged", rep.trace)
        if step <= tol_step * max(np.linalg.norm(v), np.finfo(float).tiny):
            rep.stop_reason = "tol_step"
            break
    else:
        rep.stop_reason = "tol_residual" if r <= tol_res * r0 else "budget"
    rep.trace.stop_reason = rep.stop_reason
    rep.seconds = time.perf_counter() - t0
    return rep


def fonknoris_solve(spec: ProblemSpec, ensemble, u, v0, budget: int = 50, tol_res: float = 1e-14,
                    tol_step: float = 1e-14, reference=None,
                    schedule: ScheduleState | None = None) -> SolveReport:
    """Coefficient pathway: the model sees ``(a, b, c)`` and ``J`` is rebuilt from them."""
    if spec.kind == "calderon":
        raise UnsupportedKind("the Calderon problem has no coefficient form")
    return chonknoris_solve(spec, ensemble, u, v0, budget, tol_res, tol_step, reference,
                            schedule, pathway="fonknoris")


def emulated_march(spec: ProblemSpec, model, f0, n_steps: int, budget: int = 50,
                   tol_res: float = 1e-14, tol_step: float = 1e-14, pathway: str = "chonknoris",
                   guess: str = "previous", reports: list | None = None,
                   schedule: ScheduleState | None = None) -> np.ndarray:
    """Time march where every step is a learned-factor solve.

    Each step restarts from ``schedule`` (default: the model's training lambda).
    """
    def step(u, v0):
        rep = chonknoris_solve(spec, model, u, v0, budget, tol_res, tol_step,
                               schedule=schedule, pathway=pathway)
        if reports is not None:
            reports.append(rep)
        return rep.solution
    return march(spec, f0, n_steps, step, guess)
