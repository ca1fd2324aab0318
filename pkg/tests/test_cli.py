import csv
import json

import pytest

from pipefl.cli import main
from pipefl.config import load_config, parse_config
from pipefl.errors import ConfigError
from pipefl.experiment import Cell, format_table

BASE_CONFIG = {
    "dataset": {"kind": "synthetic", "clients": 30, "feature_dim": 4, "test_samples": 300},
    "model": {"kind": "logistic"},
    "timing": {"sigma": 0.1, "tau_com": "auto"},
    "clusters": [1, 2],
    "subchannels": [1],
    "seeds": [0, 1],
    "eta_grid": [0.5, 2.0],
    "rounds": 40,
    "target": {"metric": "accuracy", "value": 0.75},
}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_cluster_from_thresholds(capsys):
    assert main(["cluster", "--pi", "10,46,80", "--clients", "100", "--clusters", "4"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["sizes"] == [10, 30, 30, 30]
    assert doc["delta"] == [10, 30, 30, 30]
    assert doc["certificate"]["active"] == [True, False, False, True]


def test_cluster_homogeneous_profiles(tmp_path, capsys):
    path = tmp_path / "p.csv"
    path.write_text("client_id,n_m,tau_m\n" + "".join(f"{i},10,2.5\n" for i in range(6)))
    assert main(["cluster", "--profiles", str(path), "--tau-com", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["K"] == 1 and doc["sizes"] == [6]
    assert sorted(doc["members"][0]) == list(range(6))


def test_cluster_malformed_csv(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("client_id,n_m,tau_m\n0,10,1.0\n1,abc,2.0\n")
    assert main(["cluster", "--profiles", str(path), "--tau-com", "1"]) == 2
    assert "bad.csv:3" in capsys.readouterr().err


def test_cluster_validation_exit(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("client_id,n_m\n0,10\n1,20\n2,30\n")
    assert main(["cluster", "--profiles", str(path), "--sigma", "1", "--tau-com", "5", "--clusters", "9"]) == 1
    assert main(["cluster", "--pi", "10,46", "--clients", "100", "--clusters", "4"]) == 1


def test_cluster_then_schedule(tmp_path, capsys):
    prof = tmp_path / "p.csv"
    prof.write_text("client_id,n_m\n" + "".join(f"{i},{10 + 6 * i}\n" for i in range(11)))
    plan = tmp_path / "plan.json"
    assert main(["cluster", "--profiles", str(prof), "--sigma", "1", "--tau-com", "20", "--tau-server", "1", "--out", str(plan)]) == 0
    doc = json.loads(plan.read_text())
    assert doc["K"] == 3 and sum(doc["sizes"]) == 11
    assert doc["efficiency"]["gain_ratio"] == pytest.approx(3)

    timeline = tmp_path / "timeline.csv"
    summary = tmp_path / "summary.json"
    assert main(["schedule", str(plan), "--out", str(timeline), "--summary", str(summary)]) == 0
    rows = list(csv.reader(timeline.open()))
    assert rows[0] == ["cluster", "start", "end"]
    windows = [(int(k), float(s), float(e)) for k, s, e in rows[1:]]
    assert windows == [(1, 31.0, 51.0), (2, 51.0, 71.0), (3, 71.0, 91.0)]
    assert json.loads(summary.read_text())["round_duration"] == 91
    assert "round_duration" in capsys.readouterr().out


def test_schedule_missing_plan(tmp_path):
    assert main(["schedule", str(tmp_path / "nope.json")]) == 2


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="colour"):
        parse_config({**BASE_CONFIG, "colour": "blue"})
    with pytest.raises(ConfigError):
        parse_config({**BASE_CONFIG, "seeds": []})
    with pytest.raises(ConfigError, match="not found"):
        parse_config({**BASE_CONFIG, "dataset": {"kind": "idx", "train_images": "x", "train_labels": "y"}}, tmp_path)
    assert main(["simulate", write(tmp_path / "c.json", {**BASE_CONFIG, "rounds": 0})]) == 2


def test_config_load_reports_json_line(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{\n  "dataset": ,\n}')
    with pytest.raises(ConfigError, match="c.json:2"):
        load_config(path)


def test_simulate_writes_runs(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {**BASE_CONFIG, "clusters": 2, "eta_grid": [1.0], "seeds": [3]})
    assert main(["simulate", cfg, "--out-dir", str(tmp_path / "out")]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    (run,) = summary["runs"]
    assert run["K"] == 2 and run["seed"] == 3
    rows = list(csv.DictReader((tmp_path / "out" / run["metrics"]).open()))
    assert rows and float(rows[0]["sim_seconds"]) > 0


def test_compare_table(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {**BASE_CONFIG, "baseline_budget": "equal_total"})
    assert main(["compare", cfg, "--out-dir", str(tmp_path / "out")]) == 0
    rows = list(csv.DictReader((tmp_path / "out" / "compare.csv").open()))
    assert [r["K"] for r in rows] == ["1", "2"]
    assert rows[0]["gain_pct"] in ("0.00", "-")
    assert rows[1]["baseline_equal_total_rounds"] != ""
    assert (tmp_path / "out" / "compare.txt").read_text().startswith("K\\N")


def test_gain_and_table_format():
    cells = [
        Cell(K=1, N=1, eta=1.0, rounds=[10], seconds=[1.0], median_rounds=10, median_seconds=1.0, gain=0.0),
        Cell(K=2, N=1, eta=1.0, rounds=[6], seconds=[1.0], median_rounds=6, median_seconds=1.0, gain=0.4),
        Cell(K=3, N=1, eta=1.0, rounds=[None], seconds=[None], median_rounds=None, median_seconds=None),
    ]
    lines = format_table(cells).splitlines()
    assert "10 (0%)" in lines[1] and "6 (40%)" in lines[2] and "not reached" in lines[3]
