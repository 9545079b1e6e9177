import csv
import json

import numpy as np
import pytest

from policyfuzz.config import CampaignConfig, ConfigError, load_config
from policyfuzz.fuzzing import FaultLog
from policyfuzz.harness import (
    SWEEP_HEADER,
    SweepSpec,
    aggregate,
    fault_curve,
    load_sweep,
    read_curve,
    read_sweep,
    run_campaign,
    run_sweep,
    sweep_jobs,
)

RUN_FILES = {"config.json", "faults.jsonl", "curve.csv", "timings.json"}


class NoopPolicy:
    def act(self, state):
        return 0


def small(method="mdpfuzz", env="taxi", budget=120, seed=0, **kw):
    return CampaignConfig(env=env, method=method, budget=budget, init_samples=30, seed=seed, **kw)


def fake_run(root, name, method, curve):
    d = root / name
    d.mkdir(parents=True)
    cfg = CampaignConfig(env="taxi", method=method, budget=len(curve), init_samples=1)
    (d / "config.json").write_text(json.dumps(cfg.to_json()))
    rows = ["budget_index,cumulative_faults"] + [f"{i},{c}" for i, c in enumerate(curve, start=1)]
    (d / "curve.csv").write_text("\n".join(rows) + "\n")
    return d


class TestConfig:
    def test_canonical_defaults(self):
        cfg = CampaignConfig(env="taxi", method="mdpfuzz")
        assert (cfg.budget, cfg.init_samples, cfg.k, cfg.tau, cfg.gamma) == (5000, 1000, 10, 0.01, 0.01)
        assert cfg.policy_ref == "builtin:taxi"

    @pytest.mark.parametrize("kw", [
        {"budget": 2999}, {"k": 0}, {"tau": 0.0}, {"gamma": 1.5}, {"variant": "loose"},
        {"update_policy": "every_other"}, {"update_fraction": 0.0}, {"budget": 10.5},
    ])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ConfigError):
            CampaignConfig(env="taxi", method="mdpfuzz", **kw)

    def test_random_has_no_sampling_cost(self):
        assert CampaignConfig(env="taxi", method="random", budget=10).budget == 10

    def test_unknown_and_missing_fields(self):
        with pytest.raises(ConfigError):
            CampaignConfig.from_json({"env": "taxi", "method": "random", "colour": 1})
        with pytest.raises(ConfigError):
            CampaignConfig.from_json({"env": "taxi"})

    def test_relative_policy_resolved_against_file(self, tmp_path):
        (tmp_path / "cfg").mkdir()
        path = tmp_path / "cfg" / "c.json"
        path.write_text(json.dumps({"env": "taxi", "method": "random", "budget": 5, "policy": "p.json"}))
        assert load_config(path).policy == str(tmp_path / "cfg" / "p.json")

    def test_bad_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.json")


class TestCurve:
    def test_curve_by_hand(self):
        log = FaultLog("mdpfuzz", 0)
        log.add(2, (0,), "sampling")
        log.add(5, (1,), "fuzzing")
        assert fault_curve(log, 6).tolist() == [0, 1, 1, 1, 2, 2]
        assert fault_curve(log, 6, include_sampling=False).tolist() == [0, 0, 0, 0, 1, 1]


class TestRunCampaign:
    def test_writes_four_files(self, tmp_path):
        summary = run_campaign(small(), tmp_path / "run")
        assert {p.name for p in (tmp_path / "run").iterdir()} == RUN_FILES
        assert summary["faults"] == len((tmp_path / "run" / "faults.jsonl").read_text().splitlines())

    def test_curve_consistent_with_log(self, tmp_path):
        run_campaign(small(method="fuzzer"), tmp_path)
        curve = read_curve(tmp_path / "curve.csv")
        assert len(curve) == 120
        assert np.all(np.diff(curve) >= 0)
        log = FaultLog.from_jsonl((tmp_path / "faults.jsonl").read_text())
        assert curve[-1] == len(log)
        assert (tmp_path / "curve.csv").read_text().startswith("budget_index,cumulative_faults\n1,")

    def test_config_echo_reruns_identically(self, tmp_path):
        run_campaign(small(seed=5), tmp_path / "a")
        run_campaign(load_config(tmp_path / "a" / "config.json"), tmp_path / "b")
        for name in ("curve.csv", "faults.jsonl", "config.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_never_failing_stub_gives_flat_curve(self, tmp_path, stub_env):
        run_campaign(small(method="random", budget=40), tmp_path, env=stub_env(), policy=NoopPolicy())
        assert read_curve(tmp_path / "curve.csv").tolist() == [0] * 40
        assert (tmp_path / "faults.jsonl").read_text() == ""

    def test_timings_sidecar(self, tmp_path):
        run_campaign(small(method="random"), tmp_path / "r")
        run_campaign(small(), tmp_path / "m")
        rt = json.loads((tmp_path / "r" / "timings.json").read_text())
        md = json.loads((tmp_path / "m" / "timings.json").read_text())
        assert rt["coverage"] == 0.0 and rt["pool"] is None
        assert md["coverage"] > 0 and md["pool"]["size"] >= 30
        for t in (rt, md):
            assert t["total"] >= t["testing"] + t["coverage"]

    def test_missing_policy_artifact(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            run_campaign(small(policy=str(tmp_path / "none.json")), tmp_path / "run")


class TestSweep:
    def test_grid_sizes(self):
        base = small()
        kg = SweepSpec(base, k_grid=(6, 8, 10, 12, 14), gamma_grid=(0.05, 0.1, 0.015, 0.2), seeds=(0, 1))
        assert len(kg.grid()) == 20 and kg.n_runs == 40
        assert len(SweepSpec(base, tau_grid=(0.01, 0.1, 1.0)).grid()) == 3

    def test_empty_grids_rejected(self):
        with pytest.raises(ConfigError):
            SweepSpec(small(), seeds=())
        with pytest.raises(ConfigError):
            SweepSpec(small(), k_grid=[])

    def test_config_ids_span_specs(self, tmp_path):
        specs = [SweepSpec(small(), k_grid=(6, 8)), SweepSpec(small(), tau_grid=(0.1, 1.0), seeds=(0, 1))]
        jobs = sweep_jobs(specs, tmp_path)
        assert [j[0] for j in jobs] == ["c000", "c001", "c002", "c002", "c003", "c003"]
        assert jobs[3][1].seed == 1 and jobs[3][1].tau == 0.1

    def test_index_and_failures(self, tmp_path):
        good = SweepSpec(small(), k_grid=(2, 4), seeds=(0, 1))
        # an unreadable policy fails every run of this spec without stopping the sweep
        bad = SweepSpec(small(policy=str(tmp_path / "gone.json")), seeds=(0,))
        index = run_sweep([good, bad], tmp_path / "sw")
        rows = read_sweep(index)
        with open(index) as fh:
            assert tuple(next(csv.reader(fh))) == SWEEP_HEADER
        assert len(rows) == 5
        assert [r["status"] for r in rows[:4]] == ["ok"] * 4
        assert rows[4]["status"].startswith("error: FileNotFoundError")
        run = tmp_path / "sw" / "runs" / "c000_s1"
        assert int(rows[1]["final_faults"]) == read_curve(run / "curve.csv")[-1]

    def test_parallel_matches_serial(self, tmp_path):
        spec = SweepSpec(small(method="fuzzer"), seeds=(0, 1, 2))
        a = read_sweep(run_sweep(spec, tmp_path / "a", jobs=1))
        b = read_sweep(run_sweep(spec, tmp_path / "b", jobs=2))
        assert a == b

    def test_sweep_file_formats(self, tmp_path):
        one = {"base": {"env": "taxi", "method": "mdpfuzz", "budget": 90, "init_samples": 30}, "k_grid": [2, 3]}
        (tmp_path / "one.json").write_text(json.dumps(one))
        (tmp_path / "two.json").write_text(json.dumps({"sweeps": [one, {**one, "tau_grid": [0.1, 1.0]}]}))
        assert len(load_sweep(tmp_path / "one.json")) == 1
        assert [len(s.grid()) for s in load_sweep(tmp_path / "two.json")] == [2, 4]
        (tmp_path / "bad.json").write_text(json.dumps({**one, "seeds": []}))
        with pytest.raises(ConfigError):
            load_sweep(tmp_path / "bad.json")


class TestAggregate:
    def test_single_run_has_zero_width(self, tmp_path):
        run = fake_run(tmp_path, "r", "random", [0, 1, 1, 3])
        s = aggregate([run], "method")["random"]
        assert s["median"].tolist() == [0, 1, 1, 3]
        assert np.array_equal(s["q25"], s["q75"])

    def test_identical_runs_have_zero_width(self, tmp_path):
        runs = [fake_run(tmp_path, f"r{i}", "fuzzer", [0, 2, 2, 5]) for i in range(5)]
        s = aggregate(runs)["fuzzer"]
        assert np.array_equal(s["q25"], s["q75"])

    def test_linear_interpolation_percentiles(self, tmp_path):
        finals = [1, 2, 4, 7]
        runs = [fake_run(tmp_path, f"r{i}", "mdpfuzz", [0, 0, f]) for i, f in enumerate(finals)]
        s = aggregate(runs)["mdpfuzz"]
        # ranks (n-1)p: 0.75 -> 1.75, 1.5 -> 3.0, 2.25 -> 4.75
        assert (s["q25"][-1], s["median"][-1], s["q75"][-1]) == (1.75, 3.0, 4.75)

    def test_order_invariant_and_grouped(self, tmp_path):
        runs = [fake_run(tmp_path, f"m{i}", "mdpfuzz", [0, i, i + 1]) for i in range(3)]
        runs += [fake_run(tmp_path, f"r{i}", "random", [0, 0, i]) for i in range(2)]
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        aggregate(runs, "method", out_a)
        aggregate(runs[::-1], "method", out_b)
        assert out_a.read_text() == out_b.read_text()
        lines = out_a.read_text().splitlines()
        assert lines[0].startswith("# percentiles: linear interpolation")
        assert lines[1] == "method,n_runs,budget_index,median,q25,q75"
        final = (tmp_path / "a_final.csv").read_text().splitlines()
        assert final[2:] == ["mdpfuzz,3,2,1.5,2.5,1,3", "random,2,0.5,0.25,0.75,0,1"]

    def test_mismatched_budgets(self, tmp_path):
        runs = [fake_run(tmp_path, "a", "random", [0, 1]), fake_run(tmp_path, "b", "random", [0, 1, 1])]
        with pytest.raises(ValueError):
            aggregate(runs)

    def test_unknown_group_key(self, tmp_path):
        with pytest.raises(ConfigError):
            aggregate([fake_run(tmp_path, "a", "random", [0])], "colour")

    def test_medians_monotone_on_real_runs(self, tmp_path):
        runs = []
        for method in ("random", "fuzzer"):
            for seed in range(3):
                run_campaign(small(method=method, seed=seed), tmp_path / f"{method}{seed}")
                runs.append(tmp_path / f"{method}{seed}")
        stats = aggregate(runs)
        assert set(stats) == {"random", "fuzzer"}
        for s in stats.values():
            assert np.all(np.diff(s["median"]) >= 0)
