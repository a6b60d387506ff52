import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from nkemu import bench
from nkemu import io as nkio
from nkemu.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, EXIT_THRESHOLD, main
from nkemu.config import RunConfig
from nkemu.errors import EmptyDataset, NotPositiveDefinite
from nkemu.inference import ExactFactorModel
from nkemu.nk import Dataset


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    args = ["--problem", "elliptic", "--output-dir", str(out)]
    codes = [main(["gen-data", *args]), main(["train", *args]), main(["eval", *args])]
    cfg = RunConfig.profile("elliptic", output_dir=str(out))
    return out, bench.run_dir(cfg), codes


def test_desk_pipeline_exit_codes(desk_run):
    _, _, codes = desk_run
    assert codes == [EXIT_OK, EXIT_OK, EXIT_OK]


def test_desk_dataset_size_and_hash(desk_run):
    _, d, _ = desk_run
    ds = nkio.load_dataset(d / "data")
    assert len(ds) == 64 * 6
    assert ds.manifest["config_hash"] == d.name.split("-")[1]
    assert json.loads((d / "model" / "training.json").read_text())["mean_frobenius_error"] <= 1e-8


def test_report_contents(desk_run):
    _, d, _ = desk_run
    rep = json.loads((d / "report.json").read_text())
    m = rep["metrics"]
    assert m["count"] == 32
    assert {"q10_final", "q90_final", "median_final"} <= set(m)
    assert rep["config_hash"] == d.name.split("-")[1]
    assert m["median_final"] <= 1e-12
    rows = list(csv.DictReader((d / "report.csv").open()))
    assert len(rows) == 32 and all(r["config_hash"] == rep["config_hash"] for r in rows)


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "seconds"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def test_rerun_is_byte_identical(desk_run, tmp_path):
    _, d, _ = desk_run
    args = ["--problem", "elliptic", "--output-dir", str(tmp_path)]
    for cmd in ("gen-data", "train", "eval"):
        assert main([cmd, *args]) == EXIT_OK
    d2 = tmp_path / d.name
    for rel in ("data/Z.npy", "data/factors.npy", "data/lambdas.npy", "data/manifest.json",
                "model/W.npy", "model/X.npy", "model/model.json", "curves.csv"):
        assert (d / rel).read_bytes() == (d2 / rel).read_bytes(), rel
    a = _strip_timing(json.loads((d / "report.json").read_text()))
    b = _strip_timing(json.loads((d2 / "report.json").read_text()))
    assert a == b


def test_workers_do_not_change_results(desk_run, tmp_path):
    _, d, _ = desk_run
    cfg = RunConfig.profile("elliptic", output_dir=str(d.parent), workers=2)
    model = nkio.load_model(d / "model")
    rep = bench.evaluate(cfg, model)
    base = json.loads((d / "report.json").read_text())
    assert [r.final_error for r in rep.realizations] == \
        [r["final_error"] for r in base["realizations"]]


def test_exact_stand_in_matches_reference():
    cfg = RunConfig.profile("elliptic", validation={"count": 8})
    rep = bench.evaluate(cfg, ExactFactorModel())
    assert rep.metrics["median_final"] <= 1e-12


def test_threshold_miss_exit_code(desk_run, tmp_path):
    out, d, _ = desk_run
    cfg = RunConfig.profile("elliptic", output_dir=str(out)).data
    cfg["thresholds"] = {"median_final": {"max": 1e-30}}
    path = _write(tmp_path / "c.json", cfg)
    code = main(["eval", "--config", path, "--model", str(d / "model")])
    assert code == EXIT_THRESHOLD


def test_invalid_config_exit_code(tmp_path, capsys):
    assert main(["gen-data", "--config", _write(tmp_path / "c.json", {"problem": "elliptic", "x": 1})]) \
        == EXIT_INVALID
    (tmp_path / "bad.json").write_text("{")
    assert main(["gen-data", "--config", str(tmp_path / "bad.json")]) == EXIT_INVALID
    assert main(["train", "--output-dir", str(tmp_path), "--data", str(tmp_path / "nothing")]) \
        == EXIT_INVALID
    assert "error" in capsys.readouterr().err


def test_numerical_failure_exit_code(monkeypatch, tmp_path):
    def boom(cfg, data=None):
        raise NotPositiveDefinite("forced")
    monkeypatch.setattr(bench, "cmd_train", boom)
    assert main(["train", "--output-dir", str(tmp_path)]) == EXIT_NUMERICAL


def test_empty_dataset(tmp_path):
    empty = Dataset(np.zeros((0, 126)), np.zeros(0), np.zeros((0, 63 * 64 // 2)), {"n": 63})
    with pytest.raises(EmptyDataset):
        bench.train(RunConfig.profile("elliptic"), [empty])
    nkio.save_dataset(tmp_path / "d", empty)
    assert main(["train", "--output-dir", str(tmp_path), "--data", str(tmp_path / "d")]) == EXIT_INVALID


def test_report_rows_keyed_by_hash(desk_run, tmp_path):
    _, d, _ = desk_run
    rep = json.loads((d / "report.json").read_text())
    other = dict(rep, config_hash="0" * 16)
    p2 = _write(tmp_path / "other.json", other)
    assert main(["report", str(d / "report.json"), "--out", str(tmp_path / "one")]) == EXIT_OK
    assert len(list(csv.DictReader((tmp_path / "one.csv").open()))) == 1
    assert main(["report", str(d / "report.json"), p2, "--out", str(tmp_path / "two")]) == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "two.csv").open()))
    assert len(rows) == 2 and {r["config_hash"] for r in rows} == {rep["config_hash"], "0" * 16}
    md = (tmp_path / "two.md").read_text()
    assert md.count("| elliptic |") == 2
    assert main(["report", _write(tmp_path / "junk.json", {"a": 1})]) == EXIT_INVALID


@pytest.fixture(scope="module")
def theory(tmp_path_factory):
    out = tmp_path_factory.mktemp("theory")
    cfg = RunConfig.profile("elliptic", output_dir=str(out))
    return cfg, bench.cmd_theory_check(cfg)


def test_theory_rows(theory):
    cfg, rep = theory
    rows = {r.name: r for r in rep.rows}
    assert rows["resolvent_identity"].value <= 1e-9 and rows["resolvent_identity"].passed
    assert rows["constants_L_M"].passed and rows["eta_sine"].passed
    assert rows["local_order"].passed and rows["linear_tail_ratio"].passed
    assert all(rows[k].passed for k in rows if k.startswith("forcing_"))
    d = bench.run_dir(cfg)
    assert json.loads((d / "theory.json").read_text())["config_hash"] == cfg.hash


def test_forced_design_error_is_a_failing_row(tmp_path):
    cfg = RunConfig.profile("elliptic", output_dir=str(tmp_path), theory={"eps_lambda": 10.0})
    rep = bench.theory_check(cfg)
    rows = {r.name: r for r in rep.rows}
    assert not rows["certificate_lam=0"].passed
    assert "ForcingExceedsOne" in rows["certificate_lam=0"].note
    assert not rep.passed


def test_show_config_and_console_script(capsys):
    assert main(["show-config", "--problem", "darcy"]) == EXIT_OK
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["problem"] == "darcy" and cfg["M"] == 32
    r = subprocess.run([sys.executable, "-m", "nkemu.cli", "show-config"], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["problem"] == "elliptic"
