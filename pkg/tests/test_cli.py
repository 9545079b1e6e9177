import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from policyfuzz import cli
from policyfuzz.harness import read_curve, read_sweep
from policyfuzz.policies import load_policy

SNAPSHOTS = Path(__file__).parent / "snapshots"
VERBS = ("train", "fuzz", "sweep", "scan", "report")


def subparsers(parser):
    return next(a for a in parser._actions if isinstance(a, cli.argparse._SubParsersAction)).choices


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def taxi_config(tmp_path, **kw):
    doc = {"env": "taxi", "method": "mdpfuzz", "budget": 150, "init_samples": 40, "seed": 0, **kw}
    return write_json(tmp_path / "c.json", doc)


class TestHelp:
    def test_root_help_snapshot(self):
        assert cli.build_parser().format_help() == (SNAPSHOTS / "help_policyfuzz.txt").read_text()

    @pytest.mark.parametrize("verb", VERBS)
    def test_verb_help_snapshot(self, verb):
        sub = subparsers(cli.build_parser())[verb]
        assert sub.format_help() == (SNAPSHOTS / f"help_{verb}.txt").read_text()

    @pytest.mark.parametrize("verb", VERBS)
    def test_every_flag_is_required_or_has_default(self, verb):
        sub = subparsers(cli.build_parser())[verb]
        for action in sub._actions:
            if action.dest == "help":
                continue
            assert action.help
            assert action.required or "default" in action.help, action.dest

    def test_help_exits_zero(self, capsys):
        assert cli.main(["--help"]) == 0
        assert "train" in capsys.readouterr().out
        assert cli.main(["fuzz", "--help"]) == 0


class TestExitCodes:
    @pytest.mark.parametrize("argv", [
        [], ["explode"], ["fuzz"], ["fuzz", "--config", "x", "--colour", "red"],
        ["train", "--env", "landerlite", "--episodes", "1", "--out", "p.json"],
        ["train", "--env", "taxi", "--episodes", "many", "--out", "p.json"],
    ])
    def test_usage_errors(self, argv, capsys):
        assert cli.main(argv) == 2
        assert "usage:" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["fuzz", "--config", str(tmp_path / "none.json")]) == 2

    def test_invalid_config(self, tmp_path, capsys):
        assert cli.main(["fuzz", "--config", str(taxi_config(tmp_path, budget=100))]) == 2
        assert "sampling cost" in capsys.readouterr().err

    def test_wrong_policy_environment(self, tmp_path):
        policy = tmp_path / "cp.json"
        assert cli.main(["train", "--env", "cartpole", "--episodes", "5", "--out", str(policy)]) == 0
        assert cli.main(["scan", "--env", "taxi", "--policy", str(policy), "--out", str(tmp_path / "s.json")]) == 2

    def test_runtime_failure(self, tmp_path, monkeypatch, capsys):
        def boom(*args, **kwargs):
            raise RuntimeError("simulator crashed")

        monkeypatch.setattr(cli, "run_campaign", boom)
        assert cli.main(["fuzz", "--config", str(taxi_config(tmp_path)), "--out", str(tmp_path / "r")]) == 1
        assert "simulator crashed" in capsys.readouterr().err

    def test_exit_code_reaches_the_shell(self, tmp_path):
        cmd = [sys.executable, "-m", "policyfuzz.cli", "fuzz", "--config", str(tmp_path / "none.json")]
        assert subprocess.run(cmd, capture_output=True).returncode == 2


class TestVerbs:
    def test_train(self, tmp_path):
        out = tmp_path / "taxi.json.gz"
        assert cli.main(["train", "--env", "taxi", "--episodes", "300", "--seed", "2", "--out", str(out)]) == 0
        table = load_policy(out, "taxi")
        assert table.metadata["episodes"] == 300 and table.metadata["seed"] == 2

    def test_fuzz_writes_run_directory(self, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["fuzz", "--config", str(taxi_config(tmp_path)), "--out", str(out)]) == 0
        assert {p.name for p in out.iterdir()} == {"config.json", "faults.jsonl", "curve.csv", "timings.json"}
        assert len(read_curve(out / "curve.csv")) == 150

    def test_fuzz_default_directory(self, tmp_path, monkeypatch):
        cfg = taxi_config(tmp_path, method="random", seed=3)
        monkeypatch.chdir(tmp_path)
        assert cli.main(["fuzz", "--config", str(cfg)]) == 0
        assert (tmp_path / "runs" / "taxi-random-seed3" / "curve.csv").is_file()

    def test_sweep_with_twenty_configurations(self, tmp_path):
        spec = {"base": {"env": "taxi", "method": "mdpfuzz", "budget": 90, "init_samples": 30},
                "k_grid": [6, 8, 10, 12, 14], "gamma_grid": [0.05, 0.1, 0.015, 0.2], "seeds": [0]}
        path = write_json(tmp_path / "rq.json", spec)
        assert cli.main(["sweep", "--spec", str(path), "--out", str(tmp_path / "sw")]) == 0
        rows = read_sweep(tmp_path / "sw" / "sweep.csv")
        assert len(rows) == 20 and {r["status"] for r in rows} == {"ok"}
        assert len(list((tmp_path / "sw" / "runs").iterdir())) == 20

    def test_sweep_rejects_zero_jobs(self, tmp_path):
        path = write_json(tmp_path / "s.json", {"base": {"env": "taxi", "method": "random", "budget": 5}})
        assert cli.main(["sweep", "--spec", str(path), "--out", str(tmp_path / "o"), "--jobs", "0"]) == 2

    def test_scan_landerlite(self, tmp_path):
        out = tmp_path / "scan.json"
        assert cli.main(["scan", "--env", "landerlite", "--resolution", "6", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["n_inputs"] == 36 and doc["n_faults"] == len(doc["faults"])
        assert all(len(f) == 2 for f in doc["faults"])

    def test_report_groups_methods(self, tmp_path):
        for method in ("mdpfuzz", "fuzzer", "random"):
            for seed in range(5):
                cfg = write_json(tmp_path / f"{method}{seed}.json", {
                    "env": "taxi", "method": method, "budget": 90, "init_samples": 30, "seed": seed})
                assert cli.main(["fuzz", "--config", str(cfg), "--out", str(tmp_path / "runs" / cfg.stem)]) == 0
        out = tmp_path / "agg.csv"
        assert cli.main(["report", "--runs", str(tmp_path / "runs"), "--out", str(out)]) == 0
        with open(out) as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        assert {r["method"] for r in rows} == {"mdpfuzz", "fuzzer", "random"}
        assert {r["n_runs"] for r in rows} == {"5"}
        assert len(rows) == 3 * 90

    def test_report_without_runs(self, tmp_path):
        assert cli.main(["report", "--runs", str(tmp_path), "--out", str(tmp_path / "a.csv")]) == 2
