from __future__ import annotations

import csv
import json
import math

import pytest

from bricklayers.cli import DEFAULTS, dump_config, load_config, main
from bricklayers.errors import ConfigError


def _write(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def _run(tmp_path, *args):
    out = tmp_path / "out"
    out.mkdir(exist_ok=True)
    return main([*args, "--out", str(out), "--quiet"]), out


def test_verify_default_battery_passes(tmp_path):
    code, out = _run(tmp_path, "verify")
    assert code == 0
    report = json.loads((out / "verify.json").read_text())
    assert report["pass"]
    assert report["batteries"]["counterexample"]["min_residual"] > 0.01
    rows = list(csv.DictReader(open(out / "verify.csv")))
    assert {r["battery"] for r in rows} == {"closure", "counterexample"}


def test_verify_counterexample_must_fail_closure(tmp_path):
    # demanding a residual that large turns the inverted check into a failure
    cfg = _write(tmp_path / "c.json", {"counterexample": {**DEFAULTS["verify"]["counterexample"], "min_residual": 10.0}})
    code, out = _run(tmp_path, "verify", "--config", cfg)
    assert code == 1
    assert not json.loads((out / "verify.json").read_text())["batteries"]["counterexample"]["pass"]


def test_verify_explicit_profiles(tmp_path):
    cfg = _write(tmp_path / "c.json", {"profiles": [{"theta_left": 0.4, "breakpoints": [[1, -0.2]]}], "betas": [1.0]})
    code, _ = _run(tmp_path, "verify", "--config", cfg)
    assert code == 0


def test_verify_empty_profile_list_is_usage_error(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", {"profiles": []})
    code, _ = _run(tmp_path, "verify", "--config", cfg)
    assert code == 2
    assert "empty" in capsys.readouterr().err


def test_config_syntax_error_has_line_number(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "seed": 1,\n  "L" 5\n}')
    code, _ = _run(tmp_path, "simulate", "--config", str(bad))
    assert code == 2
    assert "bad.json:3:" in capsys.readouterr().err


def test_config_unknown_key_is_reported(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "seed": 1,\n  "replicaz": 5\n}')
    with pytest.raises(ConfigError, match=r"bad.json:3: unknown key"):
        load_config(bad, "simulate")


@pytest.mark.parametrize("command", sorted(DEFAULTS))
def test_config_round_trip(tmp_path, command):
    cfg = load_config(None, command)
    path = tmp_path / "cfg.json"
    path.write_text(dump_config(cfg))
    again = load_config(path, command)
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


def test_simulate_outputs_and_determinism(tmp_path):
    cfg = _write(tmp_path / "c.json", {"L": 30, "t_end": 0.5, "window": [-10, 10], "record_events": True})
    code, out = _run(tmp_path, "simulate", "--config", cfg, "--seed", "17", "--replicas", "150")
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 17 and manifest["replicas"] == 150
    assert manifest["event_count"] > 0 and "wall_time" in manifest
    first = (out / "profile.csv").read_bytes()
    events = (out / "events.csv").read_bytes()
    code, out = _run(tmp_path, "simulate", "--config", cfg, "--seed", "17", "--replicas", "150")
    assert (out / "profile.csv").read_bytes() == first
    assert (out / "events.csv").read_bytes() == events
    code, out = _run(tmp_path, "simulate", "--config", cfg, "--seed", "18", "--replicas", "150")
    assert (out / "profile.csv").read_bytes() != first


def test_simulate_missing_output_directory(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "nope"), "--quiet"]) == 3


def test_simulate_bad_window(tmp_path):
    cfg = _write(tmp_path / "c.json", {"L": 10, "window": [-20, 0]})
    code, _ = _run(tmp_path, "simulate", "--config", cfg)
    assert code == 2


def test_compare_at_time_zero_passes(tmp_path):
    cfg = _write(tmp_path / "c.json", {"L": 40, "t_end": 0.0, "window": [-10, 10]})
    code, out = _run(tmp_path, "compare", "--config", cfg, "--replicas", "400")
    assert code == 0
    assert json.loads((out / "compare.json").read_text())["pass"]


def test_compare_shifted_prediction_fails(tmp_path):
    cfg = _write(tmp_path / "c.json", {"L": 60, "t_end": 1.0, "window": [-10, 10], "prediction_shift": 3})
    code, out = _run(tmp_path, "compare", "--config", cfg, "--replicas", "1000")
    assert code == 1
    report = json.loads((out / "compare.json").read_text())
    assert report["max_abs_z"] > report["threshold"]


def test_compare_rejects_profile_without_walkers(tmp_path):
    cfg = _write(tmp_path / "c.json", {"profile": {"theta_left": 0.5, "breakpoints": [[0, -0.2]], "beta": 1.0}})
    code, _ = _run(tmp_path, "compare", "--config", cfg)
    assert code == 2


def test_hydro_merge_csv_matches_hand_example(tmp_path):
    code, out = _run(tmp_path, "hydro")
    assert code == 0
    rows = list(csv.DictReader(open(out / "events.csv")))
    assert len(rows) == 1
    s1 = 2 * math.cosh(2) - 2 * math.cosh(1)
    s2 = 2 * math.cosh(1) - 2
    assert float(rows[0]["t"]) == pytest.approx(1 / (s1 - s2), abs=1e-12)
    assert rows[0]["merged_ids"] == "0 1"
    report = json.loads((out / "hydro.json").read_text())
    assert report["final_shocks"][0]["speed"] == pytest.approx(math.cosh(2) - 1, abs=1e-12)


def test_hydro_rejects_increasing_profile(tmp_path):
    cfg = _write(tmp_path / "c.json", {"profile": {"u_left": 0.0, "breakpoints": [[0.0, 1.0]]}})
    code, _ = _run(tmp_path, "hydro", "--config", cfg)
    assert code == 2


def test_walkers_single_walker(tmp_path):
    cfg = _write(tmp_path / "c.json", {
        "positions": [0.5], "theta_left": 0.5, "times": [1.0, 5.0], "law_time": 1.0, "trajectory_time": 5.0,
    })
    code, out = _run(tmp_path, "walkers", "--config", cfg, "--replicas", "100000")
    assert code == 0
    rows = list(csv.DictReader(open(out / "walkers.csv")))
    assert [float(r["t"]) for r in rows] == [1.0, 5.0]
    assert all(float(r["width_median"]) == 0.0 for r in rows)
    assert (out / "trajectory.csv").read_text().startswith("t,x1")
    assert (out / "law.csv").exists()


def test_walkers_bad_positions(tmp_path):
    cfg = _write(tmp_path / "c.json", {"positions": [0.0]})
    code, _ = _run(tmp_path, "walkers", "--config", cfg)
    assert code == 2


def test_print_config(capsys):
    assert main(["hydro", "--print-config"]) == 0
    assert json.loads(capsys.readouterr().out) == DEFAULTS["hydro"]


def test_seed_override_rejected_where_meaningless(tmp_path):
    code, _ = _run(tmp_path, "hydro", "--seed", "3")
    assert code == 2
