"""Run configuration: defaults, named profiles, validation and hashing.

A config is a nested JSON object.  Every level rejects unknown keys, missing
keys are filled from the problem's default profile, and the hash covers
everything that can change a numerical result (``output_dir`` and
``workers`` are excluded).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .sampling import FAMILIES

PROBLEMS = ("elliptic", "burgers", "darcy", "calderon", "fonknoris")
WORKERS_ENV = "NKEMU_WORKERS"

_PROBLEM_PARAMS = {
    "elliptic": {"n": 63, "kappa": 50.0, "topology": "dirichlet"},
    "burgers": {"nx": 63, "nt": 51, "T": 1.0, "nu": 1 / 50},
    "darcy": {"size": 20, "kappa": 1.0, "forcing_lengthscale": 0.3, "forcing_seed": 21},
    "calderon": {"size": 9, "jacobian": "fd"},
    "fonknoris": {"nx": 64, "dt": 0.01, "steps": 100, "variants": ["sine", "klein"],
                  "expert_M": [64, 64, 64], "kappa": 50.0, "nu": 1 / 50, "burgers_nt": 51},
}

_KERNELS = {
    "elliptic": {"family": "periodic", "lengthscale": 10.0, "period": 0.5, "scale": 1.0, "shift": 0.01},
    "burgers": None,
    "darcy": {"family": "inv_laplacian", "lengthscale": 1.0, "period": 1.0, "scale": 5.0, "shift": 0.01},
    "calderon": {"family": "inv_laplacian", "lengthscale": 1.0, "period": 1.0, "scale": 5.0, "shift": 0.01},
    "fonknoris": {"family": "periodic", "lengthscale": 10.0, "period": 0.5, "scale": 1.0, "shift": 0.01},
}

_COMMON = {
    "profile": "desk",
    "seed": 1,
    "n_warm": 5,
    "lambda_flow": 0.0,
    "lambda_train": [0.0],
    "march_steps": 0,
    "validation": {"count": 32, "seed": 2, "budget": 50, "tol_res": 1e-14, "tol_step": 1e-14,
                   "checkpoints": []},
    "schedule": {"alpha": 1.0, "kappa_lam": 0.5, "kappa_alpha": 0.5, "beta_lam": 2.0,
                 "beta_alpha": 2.0},
    "surrogate": {"sigma2": 1e-10, "lengthscale_factor": 1.0, "standardize": True},
    "theory": {"draws": 8, "seed": 2, "lambdas": [0.0, 1.0], "perturbations": [1e-3, 1e-2],
               "order_c": 0.1, "order_start_scale": 0.3, "order_draws": 16, "k_max": 12,
               "r": 1.0, "eps_lambda": 0.0, "forcing_draws": 16},
    "thresholds": {},
    "output_dir": "runs",
    "workers": 1,
}

# desk overrides per problem; "paper" mirrors the published parameter table
_DESK = {
    "elliptic": {"M": 64, "thresholds": {"median_final": {"max": 1e-12},
                                         "max_iterations": {"max": 20}},
                 "validation": {"budget": 20}},
    "burgers": {"M": 32, "march_steps": 50, "lambda_train": [1e-2], "seed": 11,
                "validation": {"count": 8, "seed": 12, "budget": 50},
                "thresholds": {"median_final": {"max": 1e-10}}},
    "darcy": {"M": 32, "n_warm": 6, "lambda_train": [1e-3], "seed": 22,
              "validation": {"count": 16, "seed": 23, "budget": 1000, "checkpoints": [10, 100]},
              "thresholds": {"median_at_10": {"max": 1e-3}, "median_at_100": {"max": 1e-6}}},
    "calderon": {"M": 64, "n_warm": 0, "lambda_flow": 1e-10, "lambda_train": [1e-10], "seed": 31,
                 "validation": {"count": 16, "seed": 32, "budget": 1000},
                 "thresholds": {"fraction_le_1e-08": {"min": 0.75}}},
    "fonknoris": {"M": 64, "lambda_flow": 1e-2, "lambda_train": [1e-2], "seed": 41,
                  "validation": {"count": 2, "seed": 45, "budget": 1000},
                  "thresholds": {"median_per_step_sine": {"max": 1e-8},
                                 "median_per_step_klein": {"max": 1e-8}}},
}

_PAPER = {
    "elliptic": {"M": 896, "validation": {"count": 128, "budget": 20}},
    "burgers": {"M": 448, "march_steps": 150, "problem_params": {"nx": 127, "nt": 151},
                "validation": {"count": 64}},
    "darcy": {"M": 896, "validation": {"count": 128}},
    "calderon": {"M": 7500, "validation": {"count": 2500}},
    "fonknoris": {"M": 1000, "problem_params": {"expert_M": [1000, 1000, 2000]},
                  "validation": {"count": 100}},
}

_SECTION_KEYS = {k for k, v in _COMMON.items() if isinstance(v, dict) and k != "thresholds"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "thresholds":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_config(problem: str, profile: str = "desk") -> dict:
    """Fully populated config for ``problem`` under the named profile."""
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
    if profile not in ("desk", "paper"):
        raise ConfigError(f"unknown profile {profile!r}")
    cfg = _merge(_COMMON, {"problem": problem, "problem_params": _PROBLEM_PARAMS[problem],
                           "kernel": _KERNELS[problem]})
    cfg = _merge(cfg, _DESK[problem])
    if profile == "paper":
        cfg = _merge(cfg, _PAPER[problem])
        cfg["profile"] = "paper"
    return cfg


def _reject_unknown(given: dict, allowed: dict, where: str):
    for k, v in given.items():
        if k not in allowed:
            raise ConfigError(f"unknown key {where}{k!r}")
        if k in _SECTION_KEYS or k == "problem_params":
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be an object")
            _reject_unknown(v, allowed[k], f"{where}{k}.")


def _check_number(cfg, path, lo=None, strict=False, integer=False):
    v = cfg
    for p in path.split("."):
        v = v[p]
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if integer:
        ok = ok and float(v).is_integer()
    if ok and lo is not None:
        ok = v > lo if strict else v >= lo
    if not ok:
        bound = "" if lo is None else (f" > {lo}" if strict else f" >= {lo}")
        raise ConfigError(f"{path} must be a{'n integer' if integer else ' number'}{bound}, got {v!r}")


def validate(cfg: dict) -> dict:
    """Fill defaults for ``cfg['problem']`` and check every field.

    Raises :class:`ConfigError` on unknown keys or invalid values.
    """
    if not isinstance(cfg, dict) or "problem" not in cfg:
        raise ConfigError("config must be an object with a 'problem' key")
    problem = cfg["problem"]
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {problem!r}")
    base = default_config(problem, cfg.get("profile", "desk") if cfg.get("profile") in ("desk", "paper") else "desk")
    _reject_unknown(cfg, base, "")
    if cfg.get("profile", "desk") not in ("desk", "paper", "custom"):
        raise ConfigError("profile must be desk, paper or custom")
    full = _merge(base, cfg)

    for key in ("M", "n_warm", "march_steps", "seed", "workers", "validation.count",
                "validation.seed", "validation.budget", "theory.draws", "theory.k_max",
                "theory.order_draws", "theory.forcing_draws", "theory.seed"):
        _check_number(full, key, 0, integer=True)
    for key in ("M", "validation.count", "validation.budget", "workers"):
        _check_number(full, key, 0, strict=True, integer=True)
    _check_number(full, "lambda_flow", 0)
    for key in ("validation.tol_res", "validation.tol_step", "surrogate.lengthscale_factor",
                "schedule.alpha"):
        _check_number(full, key, 0, strict=(key != "validation.tol_res" and key != "validation.tol_step"))
    _check_number(full, "surrogate.sigma2", 0, strict=True)
    for key in ("schedule.kappa_lam", "schedule.kappa_alpha"):
        _check_number(full, key, 0, strict=True)
        if not full["schedule"][key.split(".")[1]] < 1:
            raise ConfigError(f"{key} must be below 1")
    for key in ("schedule.beta_lam", "schedule.beta_alpha"):
        _check_number(full, key, 1, strict=True)
    lt = full["lambda_train"]
    if not isinstance(lt, list) or not lt or any(not isinstance(x, (int, float)) or x < 0 for x in lt):
        raise ConfigError("lambda_train must be a non-empty list of non-negative numbers")
    if not isinstance(full["surrogate"]["standardize"], bool):
        raise ConfigError("surrogate.standardize must be true or false")
    cps = full["validation"]["checkpoints"]
    if not isinstance(cps, list) or any(not isinstance(c, int) or c < 0 for c in cps):
        raise ConfigError("validation.checkpoints must be a list of non-negative integers")

    k = full["kernel"]
    if k is not None:
        if not isinstance(k, dict) or set(k) - {"family", "lengthscale", "period", "scale", "shift"}:
            raise ConfigError("kernel must be an object with family/lengthscale/period/scale/shift")
        if k.get("family") not in FAMILIES:
            raise ConfigError(f"kernel.family must be one of {FAMILIES}")
    elif problem != "burgers":
        raise ConfigError(f"{problem} needs an input kernel")

    pp = full["problem_params"]
    if problem == "elliptic" and pp["topology"] not in ("dirichlet", "periodic"):
        raise ConfigError("problem_params.topology must be dirichlet or periodic")
    if problem == "calderon" and pp["jacobian"] not in ("fd", "analytic"):
        raise ConfigError("problem_params.jacobian must be fd or analytic")
    if problem == "fonknoris":
        if not set(pp["variants"]) <= {"sine", "klein"} or not pp["variants"]:
            raise ConfigError("problem_params.variants must name sine and/or klein")
        em = pp["expert_M"]
        if not (isinstance(em, list) and len(em) == 3 and all(isinstance(x, int) and x > 0 for x in em)):
            raise ConfigError("problem_params.expert_M must list three positive integers")
        if len(full["lambda_train"]) != 1:
            raise ConfigError("fonknoris experts use a single training lambda")
    for name, spec in full["thresholds"].items():
        if not isinstance(spec, dict) or not spec or set(spec) - {"max", "min"}:
            raise ConfigError(f"threshold {name!r} must be an object with 'max' and/or 'min'")
    th = full["theory"]
    for key in ("lambdas", "perturbations"):
        if not isinstance(th[key], list) or any(not isinstance(x, (int, float)) or x < 0 for x in th[key]):
            raise ConfigError(f"theory.{key} must be a list of non-negative numbers")
    return full


def config_hash(cfg: dict) -> str:
    """First 16 hex digits of SHA-256 over the canonical result-relevant config."""
    relevant = {k: v for k, v in cfg.items() if k not in ("output_dir", "workers")}
    blob = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(validate(d))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(d)

    @classmethod
    def profile(cls, problem: str, profile: str = "desk", **overrides) -> "RunConfig":
        return cls.from_dict(_merge(default_config(problem, profile), overrides))

    def __getitem__(self, key):
        return self.data[key]

    @property
    def problem(self) -> str:
        return self.data["problem"]

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    @property
    def workers(self) -> int:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                w = int(env)
            except ValueError as exc:
                raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc
            if w < 1:
                raise ConfigError(f"{WORKERS_ENV} must be positive")
            return w
        return int(self.data["workers"])

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    def with_overrides(self, **kw) -> "RunConfig":
        return RunConfig.from_dict(_merge(self.data, kw))

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"


def schema() -> dict:
    """The committed JSON schema for config files."""
    return json.loads(resources.files("nkemu").joinpath("schema/run_config.schema.json").read_text())
