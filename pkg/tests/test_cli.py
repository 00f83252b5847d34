import copy
import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from dobkit.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
WORKED = json.loads((CONFIGS / "worked.json").read_text())


def _run(tmp_path, cfg, command, *extra, out="out"):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg) if not isinstance(cfg, str) else cfg)
    out = tmp_path / out
    return main([command, "--config", str(path), "--out", str(out), *extra]), out


def _fast(cfg=None, **over):
    cfg = copy.deepcopy(cfg or WORKED)
    cfg["horizon"] = 3.0
    cfg["solver"] = {"method": "rk45", "rtol": 1e-7, "atol": 1e-9, "samples": 300}
    cfg.update(over)
    return cfg


def test_normalize_worked(tmp_path):
    code, out = _run(tmp_path, WORKED, "normalize")
    assert code == 0
    rep = json.loads((out / "normal_form.json").read_text())
    assert rep["nu"] == 2 and rep["m"] == 1
    assert rep["is_minimum_phase"] is True
    assert rep["g"] == pytest.approx(1.5)
    assert rep["zeros"] == [[pytest.approx(-0.8), 0.0]]


def test_normalize_non_minimum_phase(tmp_path):
    cfg = {"plant": {"tf": {"num": [-1.0, 1.0], "den": [1.0, 2.0, 3.0, 1.0]}}}
    code, out = _run(tmp_path, cfg, "normalize")
    assert code == 0
    assert json.loads((out / "normal_form.json").read_text())["is_minimum_phase"] is False


def test_malformed_json(tmp_path):
    code, _ = _run(tmp_path, "{not json", "normalize")
    assert code == 2


def test_schema_error_reports_path(tmp_path, capsys):
    cfg = {"plant": {"tf": {"num": [1.0], "den": "oops"}}}
    code, _ = _run(tmp_path, cfg, "normalize")
    assert code == 2
    assert "$.plant.tf.den" in capsys.readouterr().err


def test_unknown_field_rejected(tmp_path):
    code, _ = _run(tmp_path, {**WORKED, "colour": "red"}, "normalize")
    assert code == 2


def test_missing_block_for_command(tmp_path, capsys):
    code, _ = _run(tmp_path, {"plant": WORKED["plant"]}, "simulate")
    assert code == 2
    assert "$.nominal" in capsys.readouterr().err


def test_model_error(tmp_path):
    # common factor (s + 1): not coprime
    cfg = {"plant": {"tf": {"num": [1.0, 1.0], "den": [2.0, 3.0, 1.0]}}}
    code, _ = _run(tmp_path, cfg, "normalize")
    assert code == 3


def test_bad_command_line():
    assert main(["bogus", "--config", "x.json"]) == 2
    assert main(["normalize"]) == 2


def test_design_third_order(tmp_path):
    cfg = {"qfilter": {"design": {"nu": 3, "rho": [2, 2, 1], "g_min": 1, "g_max": 3, "g_n": 1}}}
    code, out = _run(tmp_path, cfg, "design-q")
    assert code == 0
    rep = json.loads((out / "qfilter.json").read_text())
    assert rep["a"][0] == pytest.approx(1.2, abs=1e-6)
    assert rep["kbar"] == pytest.approx(3.6, abs=1e-6)
    assert rep["condition_C"]["ok"] is True


def test_design_second_order_capped(tmp_path):
    cfg = {"qfilter": {"design": {"nu": 2, "rho": [2, 1], "g_min": 0.2, "g_max": 5, "g_n": 1}}}
    code, out = _run(tmp_path, cfg, "design-q")
    assert code == 0
    assert json.loads((out / "qfilter.json").read_text())["k_sup_capped"] is True


def test_design_uses_nominal_gain(tmp_path):
    cfg = {"nominal": {"tf": {"num": [1], "den": [1, 3, 3, 1]}},
           "qfilter": {"design": {"rho": [2, 2, 1], "g_min": 0.2, "g_max": 5}}}
    code, out = _run(tmp_path, cfg, "design-q")
    assert code == 0
    rep = json.loads((out / "qfilter.json").read_text())
    assert rep["a"][0] == pytest.approx(0.9 * 4.0 / 5.0, abs=1e-6)


def test_design_infeasible(tmp_path):
    cfg = {"qfilter": {"design": {"nu": 3, "rho": [-1, 1, 1], "g_min": 1, "g_max": 3, "g_n": 1}}}
    code, _ = _run(tmp_path, cfg, "design-q")
    assert code == 4


def test_check_stability_robust(tmp_path):
    code, out = _run(tmp_path, WORKED, "check-stability", "--tau", "0.1", "0.01", "0.001")
    assert code == 0
    reps = json.loads((out / "stability.json").read_text())
    assert isinstance(reps, list) and len(reps) == 3
    assert {r["verdict"] for r in reps} == {"robustly-stable-for-small-tau"}


def test_check_stability_unstable(tmp_path):
    cfg = copy.deepcopy(WORKED)
    cfg["plant"]["tf"]["num"] = [-1.2, 1.2]
    code, out = _run(tmp_path, cfg, "check-stability")
    assert code == 5
    summary = json.loads((out / "stability_summary.json").read_text())
    assert summary["conditions"]["cond_A"]["ok"] is False


def test_simulate_outputs(tmp_path):
    code, out = _run(tmp_path, _fast(), "simulate", "--tau", "0.02")
    assert code == 0
    assert (out / "trace_tau=0.02.csv").exists()
    m = json.loads((out / "metrics.json").read_text())
    assert m["tau"] == 0.02 and m["diverged"] is False
    ctrl = json.loads((out / "controller.json").read_text())
    assert ctrl["sat_level"] is None


def test_simulate_rk4_and_auto_saturation(tmp_path):
    code, out = _run(tmp_path, _fast(sat_level="auto"), "simulate", "--tau", "0.05", "--solver", "rk4")
    assert code == 0
    m = json.loads((out / "metrics.json").read_text())
    assert m["solver"]["method"] == "rk4"
    assert json.loads((out / "controller.json").read_text())["sat_level"] > 0


def test_sweep_outputs_and_determinism(tmp_path):
    cfg = _fast(taus=[0.05, 0.02])
    code, out = _run(tmp_path, cfg, "sweep")
    assert code == 0
    with open(out / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["tau", "sup_dev", "sup_dev_post", "u_tracking", "steady_state_err"]
    assert float(rows[1][2]) > float(rows[2][2])
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert "trace_tau=0.05.csv" in first and "trace_tau=0.02.csv" in first
    code, out2 = _run(tmp_path, cfg, "sweep", out="again")
    assert code == 0
    assert {p.name: p.read_bytes() for p in out2.iterdir()} == first


def test_sweep_exact_model_near_zero(tmp_path):
    cfg = _fast(taus=[0.05])
    cfg["plant"] = {"tf": {**cfg["nominal"]["tf"], "E": "none"}}
    cfg.pop("disturbance")
    code, out = _run(tmp_path, cfg, "sweep")
    assert code == 0
    row = json.loads((out / "metrics.json").read_text())["runs"][0]
    assert row["sup_dev"] < 1e-6


def test_sweep_unstable_flags(tmp_path):
    cfg = _fast(taus=[0.05, 0.01], horizon=60.0)
    cfg["plant"]["tf"]["num"] = [-1.2, 1.2]
    cfg["solver"] = {"method": "rk45", "rtol": 1e-6, "atol": 1e-8}
    code, out = _run(tmp_path, cfg, "sweep")
    assert code == 5
    runs = json.loads((out / "metrics.json").read_text())["runs"]
    assert all(r["diverged"] for r in runs)
    assert all(r["sup_dev"] == "inf" for r in runs)


def test_family_seed_changes_plant(tmp_path):
    cfg = {"plant": {"family": {"spread": 0.3}}}
    _, out = _run(tmp_path, cfg, "normalize", "--seed", "1")
    a = (out / "normal_form.json").read_text()
    _, out = _run(tmp_path, cfg, "normalize", "--seed", "2")
    b = (out / "normal_form.json").read_text()
    _, out = _run(tmp_path, cfg, "normalize", "--seed", "1")
    c = (out / "normal_form.json").read_text()
    assert a != b and a == c


def test_shipped_design_config(tmp_path):
    code, out = main(["design-q", "--config", str(CONFIGS / "nu3_design.json"), "--out", str(tmp_path)]), tmp_path
    assert code == 0
    assert (out / "qfilter.json").exists()


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"plant": WORKED["plant"]}))
    res = subprocess.run([sys.executable, "-m", "dobkit", "normalize", "--config", str(cfg), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "normal_form.json").exists()
