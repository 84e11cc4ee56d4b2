import csv
import io
import json
import os

import numpy as np
import pytest

from visland.config import builtin_config
from visland.network import RELU, Layer, LayeredReluNetwork, save_weights
from visland.pipeline import (REGION_COLUMNS, emit_report, exit_code, regions_csv, run_pipeline,
                              strip_timing)


def _cfg(**over):
    cfg = builtin_config("trivial")
    cfg["simulation"]["trajectories"] = 20
    for k, v in over.items():
        cfg[k] = v
    return cfg


def _pixel_sum_controller(path, w):
    net = LayeredReluNetwork((Layer(np.full((1, 64), w), [0.0], RELU),
                              Layer(np.ones((1, 1)), [0.0], "identity")))
    save_weights(net, path)
    return {"source": "weights", "path": str(path)}


@pytest.fixture(scope="module")
def trivial_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("trivial")
    rep = run_pipeline(_cfg(), str(out))
    emit_report(rep, str(out))
    return rep, out


def test_trivial_scenario_is_safe(trivial_run):
    rep, out = trivial_run
    assert rep["status"] == "SAFE" and exit_code(rep) == 0
    assert rep["mu_max"] == 1.1
    verdicts = {r["verdict"] for r in rep["regions"]}
    assert verdicts <= {"PROVED", "SKIPPED"} and "PROVED" in verdicts
    assert rep["summary"]["proved_fraction"] == 1.0


def test_report_files(trivial_run):
    rep, out = trivial_run
    for name in ("report.json", "summary.txt", "regions.csv", "mu.csv", "simulation.csv"):
        assert os.path.exists(out / name)
    rows = list(csv.reader(open(out / "regions.csv")))
    assert rows[0] == REGION_COLUMNS
    assert len(rows) - 1 == len(rep["regions"]) == 512
    doc = json.loads((out / "report.json").read_text())
    assert doc["status"] == "SAFE" and doc["config"]["name"] == "trivial"
    assert "numpy" in doc["versions"]
    assert all(r["millis"] >= 0 for r in doc["regions"])


def test_csv_row_counts():
    assert regions_csv([]) == ",".join(REGION_COLUMNS) + "\n"
    rows = [{"region_id": i, "center": [0.5, 1.5, 2.5], "verdict": "PROVED", "splits": 0,
             "millis": 1.0} for i in range(100)]
    assert len(list(csv.reader(io.StringIO(regions_csv(rows))))) == 101


def test_region_timings_sum_to_stage_time(trivial_run):
    rep, _ = trivial_run
    total = sum(r["millis"] for r in rep["regions"]) / 1e3
    stage = rep["timing"]["verification"]
    assert total <= stage
    assert total == pytest.approx(stage, rel=0.1)


def test_rerun_is_identical_and_uses_cache(trivial_run, tmp_path):
    rep, out = trivial_run
    again = run_pipeline(_cfg(), str(out))
    assert "abstraction" not in again["timing"]  # FSMs came from the cache
    a = json.dumps(strip_timing(json.loads(json.dumps(rep, default=str))), sort_keys=True, default=str)
    b = json.dumps(strip_timing(json.loads(json.dumps(again, default=str))), sort_keys=True, default=str)
    assert a == b
    fresh = run_pipeline(_cfg(), str(tmp_path), use_cache=False)
    assert fresh["regions"][0]["verdict"] == rep["regions"][0]["verdict"]


def test_corrupted_weights_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "visland-relu-net", "version": 1,\n"layers": [oops]}\n')
    rep = run_pipeline(_cfg(controller={"source": "weights", "path": str(p)}), str(tmp_path))
    assert rep["status"] == "ERROR" and exit_code(rep) == 1
    assert rep["error"]["stage"] == "controller"
    assert rep["error"]["type"] == "WeightFileError"
    assert "line 2" in rep["error"]["message"]


def test_no_feasible_mu(tmp_path):
    cfg = _cfg()
    cfg["spec"]["sink_is_unsafe"] = True
    rep = run_pipeline(cfg, str(tmp_path))
    assert rep["status"] == "NO-FEASIBLE-MU" and exit_code(rep) == 4
    assert rep["mu_max"] is None and rep["regions"] == []
    assert rep["mu_search"][0]["status"] == "FAILS"


def test_violated_envelope(tmp_path):
    cfg = _cfg(controller=_pixel_sum_controller(tmp_path / "c.json", 0.5), mu_values=[0.01])
    rep = run_pipeline(cfg, str(tmp_path))
    assert rep["status"] == "UNSAFE-ENVELOPE" and exit_code(rep) == 2
    bad = rep["first_violated_region"]
    row = next(r for r in rep["regions"] if r["region_id"] == bad)
    assert row["verdict"] == "VIOLATED" and row["witness"]["excess"] > 0
    assert any("not that the closed loop is unsafe" in n for n in rep["notes"])


def test_unknown_when_bounds_are_too_loose(tmp_path):
    cfg = _cfg(controller=_pixel_sum_controller(tmp_path / "c.json", 0.005), mu_values=[0.2])
    rep = run_pipeline(cfg, str(tmp_path))
    assert rep["status"] == "UNKNOWN" and exit_code(rep) == 3
