"""MDPFuzz, its coverage-free ablation and random testing.

Every call into an environment's episode runner costs one unit of test
budget, including both sensitivity rollouts and the sampling-phase rollouts.
A campaign stops exactly when the budget is spent.
"""
from __future__ import annotations

import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .config import CampaignConfig
from .coverage import CoverageModel, coverage, init_coverage_model, is_low_coverage, update_model
from .envs import Environment, NullMutationError, Trajectory, freeze_input, run_episode
from .envs.base import MAX_MUTATION_ATTEMPTS

STREAMS = ("sampling", "mutation", "selection", "perturbation", "gmm_init")
SAMPLING, FUZZING = "sampling", "fuzzing"


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators split from one master seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


class BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class PoolEntry:
    input: tuple
    reward: float
    sensitivity: float
    coverage: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "input", freeze_input(self.input))
        if not self.sensitivity >= 0:
            raise ValueError(f"sensitivity must be non-negative, got {self.sensitivity}")


class Pool:
    """Append-only store of tested inputs; selection is sensitivity-weighted."""

    def __init__(self):
        self._entries: list[PoolEntry] = []
        self._sens: list[float] = []

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, i) -> PoolEntry:
        return self._entries[i]

    @property
    def entries(self) -> tuple[PoolEntry, ...]:
        return tuple(self._entries)

    @property
    def sensitivities(self) -> np.ndarray:
        return np.array(self._sens, dtype=np.float64)

    def add(self, entry: PoolEntry) -> None:
        self._entries.append(entry)
        self._sens.append(float(entry.sensitivity))

    def select(self, rng: np.random.Generator) -> PoolEntry:
        return self._entries[select_index(self._sens, rng)]

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self._entries:
            h.update(repr((e.input, e.reward)).encode())
        return h.hexdigest()

    def summary(self) -> dict:
        sens = self.sensitivities
        return {
            "size": len(self),
            "zero_sensitivity": int(np.sum(sens == 0.0)) if len(sens) else 0,
            "mean_sensitivity": float(sens.mean()) if len(sens) else 0.0,
            "digest": self.digest(),
        }


def select_index(sensitivities, rng: np.random.Generator) -> int:
    """Index i drawn with probability e_i / sum(e); uniform when all e are zero."""
    n = len(sensitivities)
    if n == 0:
        raise ValueError("cannot select from an empty pool")
    cum = np.cumsum(sensitivities, dtype=np.float64)
    total = cum[-1]
    if not total > 0:
        return int(rng.integers(n))
    return int(np.searchsorted(cum, rng.random() * total, side="right"))


def select(pool: Pool, rng: np.random.Generator) -> PoolEntry:
    return pool.select(rng)


class FaultRecord(NamedTuple):
    budget_index: int
    input: tuple
    phase: str


@dataclass
class FaultLog:
    method: str
    seed: int
    records: list[FaultRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def add(self, budget_index: int, inp, phase: str) -> None:
        if self.records and budget_index <= self.records[-1].budget_index:
            raise ValueError("fault budget indices must be strictly increasing")
        self.records.append(FaultRecord(budget_index, freeze_input(inp), phase))

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"budget_index": r.budget_index, "phase": r.phase, "input": list(r.input)}) + "\n"
            for r in self.records
        )

    @classmethod
    def from_jsonl(cls, text: str, method: str = "", seed: int = 0) -> "FaultLog":
        log = cls(method, seed)
        for line in text.splitlines():
            if line.strip():
                doc = json.loads(line)
                log.add(doc["budget_index"], tuple(doc["input"]), doc["phase"])
        return log


@dataclass
class Timings:
    total: float = 0.0
    testing: float = 0.0
    coverage: float = 0.0

    @property
    def other(self) -> float:
        return max(0.0, self.total - self.testing - self.coverage)

    def to_json(self) -> dict:
        return {"total": self.total, "testing": self.testing, "coverage": self.coverage, "other": self.other}


class Runner:
    """Executes inputs against the budget, records crashes and testing time."""

    def __init__(self, env: Environment, policy, budget: int, log: FaultLog, timings: Timings):
        self.env = env
        self.policy = policy
        self.budget = budget
        self.log = log
        self.timings = timings
        self.executions = 0

    @property
    def remaining(self) -> int:
        return self.budget - self.executions

    def execute(self, inp, phase: str, record: bool = True) -> Trajectory:
        if self.executions >= self.budget:
            raise BudgetExhausted
        self.executions += 1
        start = time.perf_counter()
        traj = run_episode(self.env, self.policy, inp)
        self.timings.testing += time.perf_counter() - start
        if record and traj.crashed:
            self.log.add(self.executions, inp, phase)
        return traj


def nonnull(op, inp, rng):
    """Apply a mutation-like ``op`` until it changes ``inp``."""
    inp = freeze_input(inp)
    for _ in range(MAX_MUTATION_ATTEMPTS):
        out = freeze_input(op(inp, rng))
        if out != inp:
            return out
    raise NullMutationError(f"operation returned its input {MAX_MUTATION_ATTEMPTS} times")


def sensitivity(runner: Runner, inp, rng: np.random.Generator) -> float:
    """|r - r'| between ``inp`` and a perturbed copy; costs two executions."""
    perturbed = nonnull(runner.env.perturb_input, inp, rng)
    r = runner.execute(inp, SAMPLING).cumulative_reward
    r_perturbed = runner.execute(perturbed, SAMPLING).cumulative_reward
    return abs(r - r_perturbed)


class MDPFuzzResult(NamedTuple):
    fault_log: FaultLog
    pool: Pool
    model: CoverageModel
    timings: Timings


class FuzzerResult(NamedTuple):
    fault_log: FaultLog
    pool: Pool
    timings: Timings


class RandomResult(NamedTuple):
    fault_log: FaultLog
    timings: Timings


@contextmanager
def _clock(timings: Timings, attr: str):
    start = time.perf_counter()
    try:
        yield
    finally:
        setattr(timings, attr, getattr(timings, attr) + time.perf_counter() - start)


def _setup(env, policy, config: CampaignConfig, method: str):
    if config.budget < config.init_cost:
        raise ValueError(f"budget {config.budget} below the sampling cost {config.init_cost}")
    streams = make_streams(config.seed)
    log = FaultLog(method, config.seed)
    timings = Timings()
    return streams, log, timings, Runner(env, policy, config.budget, log, timings)


def run_mdpfuzz(env: Environment, policy, config: CampaignConfig) -> MDPFuzzResult:
    start = time.perf_counter()
    streams, log, timings, runner = _setup(env, policy, config, "mdpfuzz")
    inputs = [env.sample_input(streams["sampling"]) for _ in range(config.init_samples)]
    with _clock(timings, "coverage"):
        seed_states = [env.reset(inp) for inp in inputs]
        model = init_coverage_model(
            env.spec.state_dim, config.k, config.tau, config.gamma, seed_states,
            int(streams["gmm_init"].integers(2**63)), config.variant,
            config.update_policy, config.update_fraction)
    pool = Pool()
    for inp in inputs:
        e = sensitivity(runner, inp, streams["perturbation"])
        # same input as the first sensitivity rollout, so no second fault record
        traj = runner.execute(inp, SAMPLING, record=False)
        with _clock(timings, "coverage"):
            d = coverage(model, traj.states)
            if is_low_coverage(model, d):
                model = update_model(model, traj.states)
        pool.add(PoolEntry(inp, traj.cumulative_reward, e, d))
    try:
        while runner.remaining > 0:
            parent = pool.select(streams["selection"])
            child = env.mutate_input(parent.input, streams["mutation"])
            traj = runner.execute(child, FUZZING, record=False)
            with _clock(timings, "coverage"):
                d = coverage(model, traj.states)
            if traj.crashed:
                log.add(runner.executions, child, FUZZING)
            elif traj.cumulative_reward < parent.reward or is_low_coverage(model, d):
                e = sensitivity(runner, child, streams["perturbation"])
                pool.add(PoolEntry(child, traj.cumulative_reward, e, d))
                with _clock(timings, "coverage"):
                    model = update_model(model, traj.states)
    except BudgetExhausted:
        pass
    timings.total = time.perf_counter() - start
    return MDPFuzzResult(log, pool, model, timings)


def run_fuzzer(env: Environment, policy, config: CampaignConfig) -> FuzzerResult:
    start = time.perf_counter()
    streams, log, timings, runner = _setup(env, policy, config, "fuzzer")
    inputs = [env.sample_input(streams["sampling"]) for _ in range(config.init_samples)]
    pool = Pool()
    for inp in inputs:
        e = sensitivity(runner, inp, streams["perturbation"])
        traj = runner.execute(inp, SAMPLING, record=False)
        pool.add(PoolEntry(inp, traj.cumulative_reward, e))
    try:
        while runner.remaining > 0:
            parent = pool.select(streams["selection"])
            child = env.mutate_input(parent.input, streams["mutation"])
            traj = runner.execute(child, FUZZING, record=False)
            if traj.crashed:
                log.add(runner.executions, child, FUZZING)
            elif traj.cumulative_reward < parent.reward:
                e = sensitivity(runner, child, streams["perturbation"])
                pool.add(PoolEntry(child, traj.cumulative_reward, e))
    except BudgetExhausted:
        pass
    timings.total = time.perf_counter() - start
    return FuzzerResult(log, pool, timings)


def run_random(env: Environment, policy, config: CampaignConfig) -> RandomResult:
    start = time.perf_counter()
    streams = make_streams(config.seed)
    log = FaultLog("random", config.seed)
    timings = Timings()
    runner = Runner(env, policy, config.budget, log, timings)
    while runner.remaining > 0:
        runner.execute(env.sample_input(streams["sampling"]), FUZZING)
    timings.total = time.perf_counter() - start
    return RandomResult(log, timings)


METHOD_RUNNERS = {"mdpfuzz": run_mdpfuzz, "fuzzer": run_fuzzer, "random": run_random}
