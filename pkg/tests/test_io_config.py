import json

import jsonschema
import numpy as np
import pytest

from nkemu import io as nkio
from nkemu.config import PROBLEMS, WORKERS_ENV, RunConfig, config_hash, default_config, schema
from nkemu.errors import ConfigError, ValidationError
from nkemu.grid import Grid
from nkemu.nk import generate_training_data
from nkemu.problems import elliptic_problem
from nkemu.sampling import periodic_kernel
from nkemu.surrogate import ExpertEnsemble, fit, fit_arrays


@pytest.mark.parametrize("problem", PROBLEMS)
@pytest.mark.parametrize("profile", ["desk", "paper"])
def test_profiles_validate_against_schema(problem, profile):
    cfg = default_config(problem, profile)
    jsonschema.validate(cfg, schema())
    RunConfig.from_dict(cfg)


def test_paper_profiles_carry_full_sizes():
    assert default_config("elliptic", "paper")["M"] == 896
    assert default_config("calderon", "paper")["M"] == 7500
    assert default_config("burgers", "paper")["problem_params"]["nx"] == 127
    assert default_config("fonknoris", "paper")["problem_params"]["expert_M"] == [1000, 1000, 2000]


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"problem": "elliptic", "bogus": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"problem": "elliptic", "validation": {"bogus": 1}})
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"problem": "elliptic", "bogus": 1}, schema())


@pytest.mark.parametrize("bad", [
    {"M": 0}, {"M": 2.5}, {"lambda_train": []}, {"lambda_train": [-1.0]},
    {"surrogate": {"sigma2": 0.0}}, {"schedule": {"kappa_lam": 1.5}},
    {"schedule": {"beta_alpha": 0.5}}, {"problem_params": {"topology": "torus"}},
    {"kernel": {"family": "cosine"}}, {"thresholds": {"median_final": {"below": 1}}},
    {"profile": "huge"},
])
def test_invalid_values_rejected(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(dict({"problem": "elliptic"}, **bad))


def test_unknown_problem():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"problem": "navier_stokes"})


def test_hash_ignores_output_dir_and_workers():
    a = RunConfig.profile("elliptic")
    b = a.with_overrides(output_dir="/elsewhere", workers=3)
    c = a.with_overrides(M=65)
    assert a.hash == b.hash != c.hash
    assert len(a.hash) == 16
    assert config_hash(a.data) == a.hash


def test_workers_env_override(monkeypatch):
    cfg = RunConfig.profile("elliptic")
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert cfg.workers == 3
    monkeypatch.setenv(WORKERS_ENV, "zero")
    with pytest.raises(ConfigError):
        cfg.workers
    monkeypatch.delenv(WORKERS_ENV)
    assert cfg.workers == 1


def test_config_file_roundtrip(tmp_path):
    cfg = RunConfig.profile("darcy", M=8)
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert RunConfig.from_file(p).hash == cfg.hash
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.from_file(p)


@pytest.fixture(scope="module")
def small_ds():
    return generate_training_data(elliptic_problem(15), "chonknoris", periodic_kernel(), 6, 2, 0.0,
                                  [1e-3, 1e-2], 3)


def test_dataset_roundtrip(tmp_path, small_ds):
    nkio.save_dataset(tmp_path / "d", small_ds, "abc")
    back = nkio.load_dataset(tmp_path / "d")
    assert back.digest() == small_ds.digest()
    assert back.manifest["config_hash"] == "abc"
    raw = np.load(tmp_path / "d" / "Z.npy")
    assert raw.dtype == np.dtype("<f8")
    with pytest.raises(ValidationError):
        nkio.load_dataset(tmp_path / "missing")


def test_model_roundtrip_and_digest(tmp_path, small_ds):
    m = fit(small_ds)
    nkio.save_model(tmp_path / "m", m, "abc")
    back = nkio.load_model(tmp_path / "m")
    assert back.digest() == m.digest()
    q = small_ds.Z[0] + 0.01
    np.testing.assert_array_equal(back.predict(q, 1e-2), m.predict(q, 1e-2))
    assert fit(small_ds).digest() == m.digest()

    meta = json.loads((tmp_path / "m" / "model.json").read_text())
    meta["sigma2"] *= 2
    (tmp_path / "m" / "model.json").write_text(json.dumps(meta))
    with pytest.raises(ValidationError):
        nkio.load_model(tmp_path / "m")


def test_ensemble_roundtrip(tmp_path, small_ds):
    half = len(small_ds) // 2
    experts = [fit_arrays(small_ds.Z[s], small_ds.lambdas[s], small_ds.factors[s], small_ds.n,
                          standardize=False) for s in (slice(0, half), slice(half, None))]
    ens = ExpertEnsemble(experts)
    nkio.save_ensemble(tmp_path / "e", ens)
    back = nkio.load_any_model(tmp_path / "e")
    assert isinstance(back, ExpertEnsemble) and len(back) == 2
    assert back.lengthscale == ens.lengthscale


def test_field_roundtrip(tmp_path):
    g = Grid((5, 5), "dirichlet")
    v = np.arange(g.n, dtype=float)
    nkio.save_field(tmp_path / "f", v, g, note="x")
    back, meta = nkio.load_field(tmp_path / "f")
    np.testing.assert_array_equal(back, v)
    assert meta["note"] == "x"
