import csv
import subprocess
import sys

import pytest
import yaml

from deepsched.cli import main


@pytest.fixture
def config_file(tmp_path):
    raw = {
        "name": "cli",
        "scenario": {
            "K": 3, "W": 2.0e5, "n_slots": 10,
            "classes": [{"data_size": 2000, "latency": 2, "importance": 1, "arrival_prob": 0.4}],
            "channel": {"rho": 0.5},
        },
        "experiment": {"schedulers": [{"type": "knapsack"}, {"type": "random"}],
                       "episodes": 1, "seeds": [0, 1]},
    }
    p = tmp_path / "cli.yaml"
    p.write_text(yaml.safe_dump(raw))
    return p


def test_run_then_summarize(tmp_path, config_file, capsys):
    out = tmp_path / "res"
    assert main(["run", "-c", str(config_file), "-o", str(out)]) == 0
    with open(out / "metrics.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 4
    capsys.readouterr()
    assert main(["summarize", str(out), "--reference", "knapsack", "--csv", str(tmp_path / "s.csv")]) == 0
    text = capsys.readouterr().out
    assert "random" in text and "knapsack" in text
    assert (tmp_path / "s.csv").exists()


def test_run_subset_of_schedulers(tmp_path, config_file):
    out = tmp_path / "res"
    assert main(["run", "-c", str(config_file), "-o", str(out), "--schedulers", "random",
                 "--seeds", "3"]) == 0
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["scheduler"], r["seed"]) for r in rows] == [("random", "3")]


def test_summarize_exit_codes(tmp_path, capsys):
    assert main(["summarize", str(tmp_path)]) == 1
    assert "no metrics" in capsys.readouterr().err
    assert main(["summarize", str(tmp_path / "missing")]) == 2


def test_bad_config_exit_code(tmp_path, capsys):
    assert main(["run", "-c", "not_a_scenario", "-o", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_trace_gen(tmp_path):
    assert main(["trace-gen", "-o", str(tmp_path), "--files", "1", "--seconds", "5",
                 "--modes", "bus", "car"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["bus_00.csv", "car_00.csv"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "deepsched.cli", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "summarize" in r.stdout
