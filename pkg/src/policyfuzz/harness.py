"""Campaign orchestration: run directories, parameter sweeps and aggregation.

A run directory holds four files:

``config.json``
    the campaign configuration, loadable with :func:`policyfuzz.config.load_config`
``faults.jsonl``
    one JSON object per fault, in budget order
``curve.csv``
    cumulative faults after every execution, ``budget_index`` 1..B
``timings.json``
    wall-clock breakdown plus fault counts and a pool summary

``faults.jsonl`` and ``curve.csv`` depend only on the configuration, so a
rerun reproduces them byte for byte. Timings naturally do not.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import CampaignConfig, ConfigError, load_config, read_json
from .envs import make_env
from .fuzzing import METHOD_RUNNERS, SAMPLING, FaultLog
from .policies import load_policy

CURVE_HEADER = ("budget_index", "cumulative_faults")
SWEEP_HEADER = ("config_id", "K", "tau", "gamma", "seed", "final_faults", "status")
PERCENTILE_RULE = "linear interpolation between closest ranks (numpy method='linear')"


def _dump_json(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def fault_curve(log: FaultLog, budget: int, include_sampling: bool = True) -> np.ndarray:
    """Cumulative fault count after each of the ``budget`` executions."""
    hits = np.zeros(budget, dtype=np.int64)
    for rec in log.records:
        if include_sampling or rec.phase != SAMPLING:
            hits[rec.budget_index - 1] += 1
    return np.cumsum(hits)


def curve_csv(curve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    writer.writerows((i, int(c)) for i, c in enumerate(curve, start=1))
    return buf.getvalue()


def read_curve(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CURVE_HEADER:
        raise ValueError(f"{path}: not a fault curve")
    idx = np.array([int(r[0]) for r in rows[1:]], dtype=np.int64)
    if not np.array_equal(idx, np.arange(1, len(idx) + 1)):
        raise ValueError(f"{path}: budget indices must run 1..B")
    return np.array([int(r[1]) for r in rows[1:]], dtype=np.int64)


def run_campaign(config: CampaignConfig, out_dir, env=None, policy=None) -> dict:
    """Run one campaign and write its run directory.

    ``env`` and ``policy`` override the registry lookup and the policy
    artifact named by the config (used for test doubles).
    """
    if env is None:
        env = make_env(config.env)
    if policy is None:
        policy = load_policy(config.policy_ref, config.env)
    result = METHOD_RUNNERS[config.method](env, policy, config)
    log, timings = result.fault_log, result.timings

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve = fault_curve(log, config.budget, config.include_sampling)
    _dump_json(config.to_json(), out / "config.json")
    (out / "faults.jsonl").write_text(log.to_jsonl())
    (out / "curve.csv").write_text(curve_csv(curve))
    pool = getattr(result, "pool", None)
    summary = {
        **timings.to_json(),
        "faults": len(log),
        "final_faults": int(curve[-1]),
        "pool": pool.summary() if pool is not None else None,
    }
    _dump_json(summary, out / "timings.json")
    return summary


@dataclass(frozen=True)
class SweepSpec:
    base: CampaignConfig
    tau_grid: tuple = (0.01,)
    k_grid: tuple = (10,)
    gamma_grid: tuple = (0.01,)
    seeds: tuple = (0,)

    def __post_init__(self):
        for name in ("tau_grid", "k_grid", "gamma_grid", "seeds"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigError(f"sweep {name} must not be empty")
            object.__setattr__(self, name, values)

    def grid(self) -> list[tuple[int, float, float]]:
        """(K, tau, gamma) combinations in a fixed order."""
        return list(itertools.product(self.k_grid, self.tau_grid, self.gamma_grid))

    @property
    def n_runs(self) -> int:
        return len(self.grid()) * len(self.seeds)

    @classmethod
    def from_json(cls, doc: dict, base_dir=None) -> "SweepSpec":
        doc = dict(doc)
        unknown = set(doc) - {"base", "tau_grid", "k_grid", "gamma_grid", "seeds"}
        if unknown:
            raise ConfigError(f"unknown sweep fields: {sorted(unknown)}")
        if "base" not in doc:
            raise ConfigError("sweep needs a base config")
        base = dict(doc.pop("base"))
        policy = base.get("policy", "")
        if base_dir is not None and policy and ":" not in policy and not Path(policy).is_absolute():
            base["policy"] = str((Path(base_dir) / policy).resolve())
        return cls(CampaignConfig.from_json(base), **{k: tuple(v) for k, v in doc.items()})


def load_sweep(path) -> list[SweepSpec]:
    """A sweep file holds one grid object or ``{"sweeps": [grid, ...]}``."""
    path = Path(path)
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    docs = doc["sweeps"] if set(doc) == {"sweeps"} else [doc]
    if not docs:
        raise ConfigError(f"{path}: no sweeps listed")
    return [SweepSpec.from_json(d, path.parent) for d in docs]


def _sweep_job(job):
    config_id, config, run_dir = job
    try:
        summary = run_campaign(config, run_dir)
        return config_id, config, summary["final_faults"], "ok"
    except Exception as exc:  # keep going, the index records the failure
        traceback.print_exc()
        return config_id, config, "", f"error: {type(exc).__name__}: {exc}".replace("\n", " ")


def sweep_jobs(specs, out_dir) -> list[tuple[str, CampaignConfig, Path]]:
    if isinstance(specs, SweepSpec):
        specs = [specs]
    jobs = []
    n = 0
    for spec in specs:
        for k, tau, gamma in spec.grid():
            config_id = f"c{n:03d}"
            n += 1
            for seed in spec.seeds:
                cfg = replace(spec.base, k=int(k), tau=float(tau), gamma=float(gamma), seed=int(seed))
                jobs.append((config_id, cfg, Path(out_dir) / "runs" / f"{config_id}_s{seed}"))
    return jobs


def run_sweep(specs, out_dir, jobs: int = 1) -> Path:
    """Run every (configuration, seed) pair and write ``sweep.csv``.

    A failing campaign does not stop the sweep; its row carries the error.
    Configurations are numbered across all ``specs`` in order.
    """
    # configs are validated up front, so grid errors surface before any run
    work = sweep_jobs(specs, out_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, work))
    else:
        results = [_sweep_job(job) for job in work]

    index = out / "sweep.csv"
    with open(index, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for config_id, cfg, final, status in results:
            writer.writerow((config_id, cfg.k, cfg.tau, cfg.gamma, cfg.seed, final, status))
    return index


def read_sweep(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _percentiles(curves: np.ndarray):
    q25, med, q75 = np.percentile(curves, [25, 50, 75], axis=0, method="linear")
    return med, q25, q75


def aggregate(run_dirs, group_key: str = "method", out=None) -> dict[str, dict]:
    """Median and interquartile curves of cumulative faults per group.

    Runs are grouped by the ``group_key`` field of their ``config.json``.
    With ``out`` set, writes the per-budget CSV there and the final-count
    table next to it as ``<stem>_final.csv``.
    """
    groups: dict[str, list[np.ndarray]] = {}
    for run in sorted(str(d) for d in run_dirs):
        cfg = load_config(Path(run) / "config.json")
        if not hasattr(cfg, group_key):
            raise ConfigError(f"unknown group key {group_key!r}")
        groups.setdefault(str(getattr(cfg, group_key)), []).append(read_curve(Path(run) / "curve.csv"))
    if not groups:
        raise ValueError("no runs to aggregate")

    stats = {}
    for name in sorted(groups):
        curves = groups[name]
        if len({len(c) for c in curves}) != 1:
            raise ValueError(f"group {name!r} mixes budgets {sorted({len(c) for c in curves})}")
        arr = np.vstack(curves)
        med, q25, q75 = _percentiles(arr)
        fmed, fq25, fq75 = _percentiles(arr[:, -1:])
        stats[name] = {
            "n_runs": len(curves), "median": med, "q25": q25, "q75": q75,
            "final": {"median": float(fmed[0]), "q25": float(fq25[0]), "q75": float(fq75[0]),
                      "min": int(arr[:, -1].min()), "max": int(arr[:, -1].max())},
        }

    if out is not None:
        _write_aggregate(stats, group_key, Path(out))
    return stats


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def _write_aggregate(stats, group_key, out: Path) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    header = f"# percentiles: {PERCENTILE_RULE}\n"
    with open(out, "w", newline="") as fh:
        fh.write(header)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow((group_key, "n_runs", "budget_index", "median", "q25", "q75"))
        for name, s in stats.items():
            for i, (m, lo, hi) in enumerate(zip(s["median"], s["q25"], s["q75"]), start=1):
                writer.writerow((name, s["n_runs"], i, _fmt(m), _fmt(lo), _fmt(hi)))
    with open(out.with_name(out.stem + "_final.csv"), "w", newline="") as fh:
        fh.write(header)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow((group_key, "n_runs", "median", "q25", "q75", "min", "max"))
        for name, s in stats.items():
            f = s["final"]
            writer.writerow((name, s["n_runs"], _fmt(f["median"]), _fmt(f["q25"]), _fmt(f["q75"]),
                             f["min"], f["max"]))
