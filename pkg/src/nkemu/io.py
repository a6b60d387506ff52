"""On-disk formats.

Arrays are ``.npy`` files of little-endian float64 (``<f8``); metadata lives
in sorted-key JSON next to them.  No timestamps are written, so identical
inputs give byte-identical files.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .linalg import cholesky_lower
from .nk import Dataset
from .sampling import KernelSpec, kernel_gram
from .surrogate import ExpertEnsemble, SurrogateModel

FORMAT_VERSION = 1


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def save_array(path, a) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, np.ascontiguousarray(a, dtype="<f8"), allow_pickle=False)
    return path


def load_array(path) -> np.ndarray:
    return np.load(path, allow_pickle=False).astype(float, copy=False)


def save_field(path, values, grid=None, **meta) -> Path:
    """A field as ``<path>.npy`` plus ``<path>.json`` (grid and metadata)."""
    path = Path(path)
    save_array(path.with_suffix(".npy"), values)
    write_json(path.with_suffix(".json"), {"grid": None if grid is None else grid.to_dict(), **meta})
    return path.with_suffix(".npy")


def load_field(path):
    path = Path(path)
    meta = read_json(path.with_suffix(".json"))
    return load_array(path.with_suffix(".npy")), meta


# -- datasets ---------------------------------------------------------------------

def save_dataset(directory, ds: Dataset, config_hash: str | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_array(d / "Z.npy", ds.Z)
    save_array(d / "lambdas.npy", ds.lambdas)
    save_array(d / "factors.npy", ds.factors)
    manifest = dict(ds.manifest, records=len(ds), format_version=FORMAT_VERSION)
    if config_hash is not None:
        manifest["config_hash"] = config_hash
    write_json(d / "manifest.json", manifest)
    return d


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    if not (d / "manifest.json").exists():
        raise ValidationError(f"{d} is not a dataset directory")
    m = read_json(d / "manifest.json")
    return Dataset(load_array(d / "Z.npy"), load_array(d / "lambdas.npy"),
                   load_array(d / "factors.npy"), m)


# -- models --------------------------------------------------------------------------

def save_model(directory, model: SurrogateModel, config_hash: str | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_array(d / "X.npy", model.X)
    save_array(d / "Y.npy", model.Y)
    save_array(d / "W.npy", model.W)
    if model.x_scale is not None:
        save_array(d / "x_scale.npy", model.x_scale)
    elif (d / "x_scale.npy").exists():
        os.remove(d / "x_scale.npy")
    meta = {
        "kernel": model.kernel.to_dict(), "sigma2": model.sigma2, "n": model.n,
        "lambda_aware": model.lambda_aware, "lambda_train": list(model.lambda_train),
        "mode": model.mode, "kind": model.kind,
        "perm": None if model.perm is None else [int(i) for i in model.perm],
        "meta": model.meta, "digest": model.digest(), "format_version": FORMAT_VERSION,
    }
    if config_hash is not None:
        meta["config_hash"] = config_hash
    write_json(d / "model.json", meta)
    return d


def load_model(directory) -> SurrogateModel:
    """Reload a model; the Gram factor is recomputed from the stored inputs."""
    d = Path(directory)
    m = read_json(d / "model.json")
    X = load_array(d / "X.npy")
    kernel = KernelSpec.from_dict(m["kernel"])
    K = kernel_gram(kernel, X)
    K[np.diag_indices_from(K)] += m["sigma2"]
    L = cholesky_lower(K)
    del K
    scale = load_array(d / "x_scale.npy") if (d / "x_scale.npy").exists() else None
    model = SurrogateModel(X, load_array(d / "Y.npy"), load_array(d / "W.npy"), L, kernel,
                           float(m["sigma2"]), int(m["n"]), bool(m["lambda_aware"]),
                           tuple(m["lambda_train"]), m["mode"], m["kind"],
                           None if m["perm"] is None else np.asarray(m["perm"], dtype=int),
                           scale, dict(m.get("meta", {})))
    if model.digest() != m["digest"]:
        raise ValidationError(f"model in {d} does not match its recorded digest")
    return model


def save_ensemble(directory, ens: ExpertEnsemble, config_hash: str | None = None) -> Path:
    d = Path(directory)
    for i, e in enumerate(ens.experts):
        save_model(d / f"expert{i}", e, config_hash)
    write_json(d / "ensemble.json", {"experts": len(ens), "lengthscale": ens.lengthscale,
                                     "source_lengthscales": ens.source_lengthscales,
                                     "config_hash": config_hash,
                                     "format_version": FORMAT_VERSION})
    return d


def load_ensemble(directory) -> ExpertEnsemble:
    d = Path(directory)
    m = read_json(d / "ensemble.json")
    experts = [load_model(d / f"expert{i}") for i in range(m["experts"])]
    ens = ExpertEnsemble(experts, lengthscale=m["lengthscale"])
    ens.source_lengthscales = m["source_lengthscales"]
    return ens


def load_any_model(directory):
    d = Path(directory)
    return load_ensemble(d) if (d / "ensemble.json").exists() else load_model(d)
