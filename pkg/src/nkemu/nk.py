"""Reference Tikhonov-regularized Newton-Kantorovich solver and data generation.

One step reads ``v <- v - (J^T J + lam I)^{-1} J^T F(u, v)``.  The inverse is
applied through the lower inverse Cholesky factor ``R`` (``R R^T`` equals the
inverse), so the reference solver and the learned iteration share exactly
the same arithmetic when the learned factor is exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import Diverged, EmptyDataset, ValidationError
from .linalg import inverse_cholesky_factor
from .problems import ProblemSpec, fonknoris_coefficients, jacobian, residual
from .sampling import RNG_ALGORITHM, KernelSpec, sample_gp, sample_sum_of_sines

DIVERGENCE_FACTOR = 1e6
MODES = ("chonknoris", "fonknoris")
# manifest entries added when a dataset is written; they do not describe its content
STORAGE_KEYS = ("records", "format_version", "config_hash")


def rmse(r) -> float:
    r = np.asarray(r, dtype=float)
    return float(np.sqrt(np.mean(r * r))) if r.size else 0.0


def rel_l2(x, ref) -> float:
    ref = np.asarray(ref, dtype=float)
    nr = np.linalg.norm(ref)
    d = np.linalg.norm(np.asarray(x, dtype=float) - ref)
    return float(d / nr) if nr > 0 else float(d)


# -- factor application ------------------------------------------------------

def apply_factor(R: np.ndarray, g: np.ndarray, perm=None) -> np.ndarray:
    """``R R^T g`` as two triangular matrix-vector products.

    With a permutation ``perm`` the factor describes the reordered unknowns,
    and the product is mapped back to natural order.
    """
    if perm is None:
        return R @ (R.T @ g)
    perm = np.asarray(perm)
    out = np.empty_like(g)
    out[perm] = R @ (R.T @ g[perm])
    return out


def factor_for(J: np.ndarray, lam: float, perm=None) -> np.ndarray:
    return inverse_cholesky_factor(J if perm is None else J[:, perm], lam)


# -- features ---------------------------------------------------------------

def features(spec: ProblemSpec, u, v, mode: str = "chonknoris") -> np.ndarray:
    """Model input ``z`` for state ``(u, v)``.

    ``chonknoris`` uses ``(u, v)``, or ``v`` alone for time steppers whose
    Jacobian does not depend on ``u``; ``fonknoris`` uses the flattened
    coefficient triple.
    """
    if mode == "fonknoris":
        return fonknoris_coefficients(spec, u, v).flatten()
    if mode != "chonknoris":
        raise ValidationError(f"unknown mode {mode!r}")
    v = np.asarray(v, dtype=float).ravel()
    if spec.kind in ("burgers_step", "gordon_step"):
        return v.copy()
    return np.concatenate([np.asarray(u, dtype=float).ravel(), v])


# -- single step and solve -----------------------------------------------------

def nk_step(spec: ProblemSpec, u, v, lam: float, perm=None):
    """One regularized NK step; returns ``(v_new, R)``."""
    v = np.asarray(v, dtype=float)
    J = jacobian(spec, u, v)
    F = residual(spec, u, v)
    R = factor_for(J, lam, perm)
    return v - apply_factor(R, J.T @ F, perm), R


@dataclass
class NKTrace:
    iterates: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def solution(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1

    def relative_residuals(self) -> np.ndarray:
        r = np.asarray(self.residual_norms)
        return r / r[0] if r[0] > 0 else r

    def to_dict(self) -> dict:
        return {"residual_norms": list(map(float, self.residual_norms)),
                "increments": list(map(float, self.increments)),
                "lambdas": list(map(float, self.lambdas)),
                "stop_reason": self.stop_reason}


def nk_solve(spec: ProblemSpec, u, v0, lam: float = 0.0, max_iter: int = 50,
             tol: float = 1e-14, relative: bool = True, stall_window: int = 3,
             lam_rule: Callable | None = None) -> NKTrace:
    """Iterate :func:`nk_step` until the (relative) RMSE residual is ``<= tol``.

    Also stops after ``stall_window`` consecutive steps without residual
    decrease (the rounding floor).  ``lam_rule(F)`` may supply a per-step
    regularization in place of the fixed ``lam``.

    Raises
    ------
    Diverged
        If the residual exceeds ``1e6`` times its initial value.
    """
    v = np.array(v0, dtype=float)
    F = residual(spec, u, v)
    r0 = rmse(F)
    tr = NKTrace([v.copy()], [r0])
    scale = r0 if relative else 1.0
    best, stalls = r0, 0
    for _ in range(max_iter):
        if tr.residual_norms[-1] <= tol * scale:
            tr.stop_reason = "tol_residual"
            return tr
        lam_k = float(lam_rule(F)) if lam_rule is not None else lam
        J = jacobian(spec, u, v)
        R = inverse_cholesky_factor(J, lam_k)
        step = apply_factor(R, J.T @ F)
        v = v - step
        F = residual(spec, u, v)
        r = rmse(F)
        tr.iterates.append(v.copy())
        tr.residual_norms.append(r)
        tr.increments.append(float(np.linalg.norm(step)))
        tr.lambdas.append(lam_k)
        if not np.isfinite(r) or r > DIVERGENCE_FACTOR * max(r0, np.finfo(float).tiny):
            tr.stop_reason = "diverged"
            raise Diverged(f"residual grew from {r0:.3e} to {r:.3e}", tr)
        if r < best:
            best, stalls = r, 0
        else:
            stalls += 1
            if stalls >= stall_window:
                tr.stop_reason = "stalled"
                return tr
    tr.stop_reason = "tol_residual" if tr.residual_norms[-1] <= tol * scale else "budget"
    return tr


# -- time marching ---------------------------------------------------------------

def initial_guess(spec: ProblemSpec, u) -> np.ndarray:
    """Default starting iterate for a solve with data ``u``."""
    if spec.kind == "burgers_step":
        return np.array(u, dtype=float)
    if spec.kind == "calderon":
        return np.ones(spec.n)
    return np.zeros(spec.n)


def march(spec: ProblemSpec, f0, n_steps: int, solve_step: Callable,
          guess: str = "previous") -> np.ndarray:
    """Time march a one-step (``burgers_step``) or two-step (``gordon_step``) scheme.

    ``solve_step(u, v0)`` returns the next state.  The two-step scheme starts
    from zero initial velocity (``f^{-1} = f^0``).  ``guess`` is
    ``'previous'`` (last state) or ``'zero'``.
    Returns the states ``(n_steps + 1, n)``.
    """
    f0 = np.asarray(f0, dtype=float)
    states = [f0.copy()]
    prev = f0.copy()
    for _ in range(n_steps):
        cur = states[-1]
        if spec.kind == "burgers_step":
            u = cur
        elif spec.kind == "gordon_step":
            u = np.stack([cur, prev])
        else:
            raise ValidationError(f"{spec.kind} is not a time-stepping problem")
        v0 = cur.copy() if guess == "previous" else np.zeros_like(cur)
        nxt = np.asarray(solve_step(u, v0), dtype=float)
        prev = cur
        states.append(nxt)
    return np.stack(states)


def reference_march(spec: ProblemSpec, f0, n_steps: int | None = None, lam: float = 0.0,
                    max_iter: int = 50, tol: float = 1e-15, guess: str = "previous") -> np.ndarray:
    if n_steps is None:
        n_steps = int(spec.params["nt"]) - 1
    return march(spec, f0, n_steps,
                 lambda u, v0: nk_solve(spec, u, v0, lam, max_iter, tol).solution, guess)


# -- datasets ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingRecord:
    z: np.ndarray
    lam: float
    factor: np.ndarray   # packed lower triangle


def packed_size(n: int) -> int:
    return n * (n + 1) // 2


@dataclass
class Dataset:
    """Training records stored column-blocked: inputs, lambdas, packed factors."""

    Z: np.ndarray
    lambdas: np.ndarray
    factors: np.ndarray
    manifest: dict

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.lambdas = np.asarray(self.lambdas, dtype=float).ravel()
        self.factors = np.atleast_2d(np.asarray(self.factors, dtype=float))
        if not (self.Z.shape[0] == self.lambdas.size == self.factors.shape[0]):
            raise ValidationError("record block lengths disagree")
        n = int(self.manifest.get("n", 0))
        if n and self.factors.shape[1] != packed_size(n):
            raise ValidationError("factor length does not match the problem size")

    def __len__(self):
        return self.Z.shape[0]

    @property
    def records(self) -> list:
        return [TrainingRecord(self.Z[i], float(self.lambdas[i]), self.factors[i])
                for i in range(len(self))]

    @property
    def n(self) -> int:
        return int(self.manifest["n"])

    @property
    def mode(self) -> str:
        return self.manifest.get("mode", "chonknoris")

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.Z, self.lambdas, self.factors):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        content = {k: v for k, v in self.manifest.items() if k not in STORAGE_KEYS}
        h.update(json.dumps(content, sort_keys=True).encode())
        return h.hexdigest()

    @classmethod
    def concatenate(cls, parts: Sequence["Dataset"], manifest: dict | None = None) -> "Dataset":
        if not parts:
            raise EmptyDataset("nothing to concatenate")
        return cls(np.vstack([p.Z for p in parts]), np.concatenate([p.lambdas for p in parts]),
                   np.vstack([p.factors for p in parts]), manifest or dict(parts[0].manifest))


def pack_lower(R: np.ndarray) -> np.ndarray:
    return R[np.tril_indices(R.shape[0])]


@dataclass
class Draw:
    """One realization: data ``u``, start ``v0`` and optionally its own problem."""

    u: np.ndarray
    v0: np.ndarray
    spec: ProblemSpec | None = None


def default_draws(spec: ProblemSpec, kernel: KernelSpec | None, M: int, seed: int,
                  start: int = 0) -> list:
    """Input realizations for ``spec`` following the standard experiment setups.

    * elliptic, darcy: ``u`` is a GP draw, ``v0 = 0``
    * burgers_step: ``u`` is a sum of sines (or a GP draw if ``kernel``), ``v0 = u``
    * calderon: a log-conductivity GP draw is exponentiated and its
      noise-free fluxes become ``u``; ``v0 = 1``
    """
    if spec.kind in ("elliptic", "darcy"):
        batch = sample_gp(kernel, spec.grid, M, seed, start)
        return [Draw(f, initial_guess(spec, f)) for f in batch.fields]
    if spec.kind == "burgers_step":
        if kernel is None:
            us = [sample_sum_of_sines(spec.grid, seed, start + i) for i in range(M)]
        else:
            us = list(sample_gp(kernel, spec.grid, M, seed, start).fields)
        return [Draw(u, u.copy()) for u in us]
    if spec.kind == "calderon":
        from .calderon import simulate_observations
        logc = sample_gp(kernel, spec.grid, M, seed, start).fields
        return [Draw(simulate_observations(spec, np.exp(lc)).ravel(), np.ones(spec.n))
                for lc in logc]
    raise ValidationError(f"no default input distribution for {spec.kind}")


def _flow_records(spec, u, v0, mode, n_warm, lam_flow, lam_train, perm):
    Z, L, Y = [], [], []
    v = np.array(v0, dtype=float)
    for _ in range(n_warm + 1):
        J = jacobian(spec, u, v)
        z = features(spec, u, v, mode)
        for lam in lam_train:
            Z.append(z)
            L.append(lam)
            Y.append(pack_lower(factor_for(J, lam, perm)))
        R = factor_for(J, lam_flow, perm)
        v = v - apply_factor(R, J.T @ residual(spec, u, v), perm)
    return Z, L, Y, v


def generate_training_data(spec: ProblemSpec, mode: str, kernel: KernelSpec | None, M: int,
                           n_warm: int, lambda_flow: float, lambda_train_set: Iterable[float],
                           seed: int, draws: Sequence[Draw] | None = None,
                           march_steps: int = 0, perm=None, meta: dict | None = None) -> Dataset:
    """Offline phase: warm-up flows and stored factors.

    For each draw, ``n_warm`` flow steps are taken at ``lambda_flow``; at
    each visited iterate ``i = 0..n_warm`` one record per training lambda is
    stored.  With ``march_steps > 0`` (time steppers) every draw is an initial
    condition and the flow is repeated along the march, the state after the
    warm-up becoming the next step's data.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    lam_train = [float(x) for x in lambda_train_set]
    if not lam_train:
        raise ValidationError("lambda_train_set is empty")
    if draws is None:
        draws = default_draws(spec, kernel, M, seed)
    Z, L, Y = [], [], []
    for d in draws:
        sp = d.spec or spec
        if march_steps:
            cur, prev = np.asarray(d.u, float), np.asarray(d.u, float)
            for _ in range(march_steps):
                u = cur if sp.kind == "burgers_step" else np.stack([cur, prev])
                z, l, y, nxt = _flow_records(sp, u, initial_guess(sp, cur) if sp.kind != "gordon_step" else cur,
                                             mode, n_warm, lambda_flow, lam_train, perm)
                Z += z; L += l; Y += y
                prev, cur = cur, nxt
        else:
            z, l, y, _ = _flow_records(sp, d.u, d.v0, mode, n_warm, lambda_flow, lam_train, perm)
            Z += z; L += l; Y += y
    manifest = {
        "kind": spec.kind, "grid": spec.grid.to_dict(), "params": dict(spec.params),
        "n": spec.n, "mode": mode, "M": int(len(draws)), "seed": int(seed),
        "n_warm": int(n_warm), "lambda_flow": float(lambda_flow),
        "lambda_train": lam_train, "march_steps": int(march_steps),
        "kernel": kernel.to_dict() if kernel is not None else None,
        "rng": RNG_ALGORITHM, "packing": "lower-row-major",
        "permutation": None if perm is None else [int(i) for i in perm],
    }
    if meta:
        manifest.update(meta)
    if not Z:
        raise EmptyDataset("no records were generated")
    return Dataset(np.array(Z), np.array(L), np.array(Y), manifest)
