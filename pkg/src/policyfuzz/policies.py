"""Deterministic policies under test and their training.

Q-tables act greedily with ties broken towards the lowest action index; the
lander uses a hand-written PD controller. Policies hold no per-episode state.
"""
from __future__ import annotations

import bisect
import gzip
import json
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .config import ConfigError
from .envs import CartPole, Taxi, make_env, run_episode
from .envs import cartpole as cp
from .envs import lander
from .envs.taxi import TaxiMap, default_map, load_map, taxi_state_index, taxi_transition

CARTPOLE_BINS = 12
BUILTIN_PREFIX = "builtin:"
BUILTIN_POLICIES = {
    "taxi": "taxi_qtable.json.gz",
    "cartpole": "cartpole_qtable.json.gz",
    "landerlite": "landerlite_pd.json",
}


class BinDiscretizer:
    """Per-dimension bins; the outermost bins are open-ended."""

    kind = "bins"

    def __init__(self, edges):
        self.edges = [list(map(float, e)) for e in edges]
        self.sizes = [len(e) + 1 for e in self.edges]
        self.n_states = int(np.prod(self.sizes))

    @classmethod
    def uniform(cls, low, high, bins=CARTPOLE_BINS):
        return cls([np.linspace(lo, hi, bins + 1)[1:-1] for lo, hi in zip(low, high)])

    @property
    def dim(self) -> int:
        return len(self.edges)

    def __call__(self, state) -> int:
        idx = 0
        for value, edges, size in zip(state, self.edges, self.sizes):
            idx = idx * size + bisect.bisect_right(edges, value)
        return idx

    def to_json(self) -> dict:
        return {"kind": self.kind, "edges": self.edges}


class TaxiEncoder:
    """Table row of a taxi observation; see ``taxi_state_index``."""

    kind = "taxi"

    def __init__(self, taxi_map: TaxiMap | None = None):
        self.map = taxi_map or default_map()
        self.n_states = self.map.n_states
        self.dim = 6

    def __call__(self, state) -> int:
        return self.map.state_index(state)

    def to_json(self) -> dict:
        return {"kind": self.kind, "layout": list(self.map.layout)}


def discretizer_from_json(doc: dict):
    if doc["kind"] == BinDiscretizer.kind:
        return BinDiscretizer(doc["edges"])
    if doc["kind"] == TaxiEncoder.kind:
        layout = tuple(doc.get("layout") or load_map())
        return TaxiEncoder(default_map() if layout == default_map().layout else TaxiMap(layout))
    raise ValueError(f"unknown discretizer kind {doc['kind']!r}")


class QTable:
    kind = "q_table"

    def __init__(self, q, encoder, env_name: str, metadata: dict | None = None):
        q = np.array(q, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != encoder.n_states:
            raise ValueError(f"table shape {q.shape} does not match {encoder.n_states} states")
        q.setflags(write=False)
        self.q = q
        self.encoder = encoder
        self.env_name = env_name
        self.metadata = dict(metadata or {})

    @property
    def n_actions(self) -> int:
        return self.q.shape[1]

    def act(self, state) -> int:
        return int(np.argmax(self.q[self.encoder(state)]))

    def to_json(self) -> dict:
        rows = np.flatnonzero(np.any(self.q != 0.0, axis=1))
        return {
            "kind": self.kind,
            "env": self.env_name,
            "n_actions": self.n_actions,
            "discretizer": self.encoder.to_json(),
            "entries": [{"state_index": int(i), "q": self.q[i].tolist()} for i in rows],
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "QTable":
        encoder = discretizer_from_json(doc["discretizer"])
        q = np.zeros((encoder.n_states, doc["n_actions"]))
        for entry in doc["entries"]:
            q[entry["state_index"]] = entry["q"]
        return cls(q, encoder, doc["env"], doc.get("metadata"))


class PDController:
    """Lander thrust from the signs of PD error terms.

    The vertical loop tracks a descent speed that shrinks with altitude and
    takes priority; the horizontal loop steers towards the pad at x = 0.
    """

    kind = "pd_controller"
    env_name = "landerlite"

    def __init__(self, descent_gain=0.3, min_descent=0.6, vertical_margin=0.3,
                 horizontal_gain=1.2, deadband=0.3):
        self.descent_gain = descent_gain
        self.min_descent = min_descent
        self.vertical_margin = vertical_margin
        self.horizontal_gain = horizontal_gain
        self.deadband = deadband

    @property
    def params(self) -> dict:
        return {
            "descent_gain": self.descent_gain,
            "min_descent": self.min_descent,
            "vertical_margin": self.vertical_margin,
            "horizontal_gain": self.horizontal_gain,
            "deadband": self.deadband,
        }

    def act(self, state) -> int:
        x, y, vx, vy = state
        target_vy = -(self.min_descent + self.descent_gain * max(y, 0.0))
        if vy < target_vy - self.vertical_margin:
            return lander.UP
        steer = x + self.horizontal_gain * vx
        if steer > self.deadband:
            return lander.LEFT
        if steer < -self.deadband:
            return lander.RIGHT
        return lander.NONE

    def to_json(self) -> dict:
        return {"kind": self.kind, "env": self.env_name, "params": self.params}


def act(policy, state) -> int:
    return policy.act(state)


@njit(cache=True)
def _train_taxi(walls, depots, cell_index, free_rows, free_cols, episodes, alpha, gamma,
                eps_start, eps_end, seed, horizon):
    np.random.seed(seed)
    n_free = free_rows.shape[0]
    q = np.zeros((n_free * (n_free + 4), 6))
    for ep in range(episodes):
        eps = eps_start
        if episodes > 1:
            eps = eps_start + (eps_end - eps_start) * ep / (episodes - 1)
        ti = np.random.randint(n_free)
        pi = np.random.randint(n_free)
        dest = np.random.randint(4)
        tr, tc = free_rows[ti], free_cols[ti]
        pr, pc = free_rows[pi], free_cols[pi]
        in_taxi = 0
        s = taxi_state_index(cell_index, n_free, tr, tc, pr, pc, dest, in_taxi)
        for _ in range(horizon - 1):
            if np.random.random() < eps:
                a = np.random.randint(6)
            else:
                a = np.argmax(q[s])
            tr, tc, pr, pc, in_taxi, r, done, _f = taxi_transition(
                walls, depots, tr, tc, pr, pc, dest, in_taxi, a)
            s2 = taxi_state_index(cell_index, n_free, tr, tc, pr, pc, dest, in_taxi)
            target = r
            if not done:
                target += gamma * np.max(q[s2])
            q[s, a] += alpha * (target - q[s, a])
            s = s2
            if done:
                break
    return q


@njit(cache=True)
def _cartpole_index(edges, state):
    idx = 0
    for i in range(4):
        idx = idx * (edges.shape[1] + 1) + np.searchsorted(edges[i], state[i], side="right")
    return idx


@njit(cache=True)
def _train_cartpole(edges, low, high, episodes, alpha, gamma, eps_start, eps_end, seed, horizon):
    np.random.seed(seed)
    n_bins = edges.shape[1] + 1
    q = np.zeros((n_bins ** 4, 2))
    state = np.empty(4)
    for ep in range(episodes):
        eps = eps_start
        if episodes > 1:
            eps = eps_start + (eps_end - eps_start) * ep / (episodes - 1)
        for i in range(4):
            state[i] = low[i] + (high[i] - low[i]) * np.random.random()
        s = _cartpole_index(edges, state)
        for _ in range(horizon - 1):
            if np.random.random() < eps:
                a = np.random.randint(2)
            else:
                a = np.argmax(q[s])
            force = cp.FORCE_MAG if a == 1 else -cp.FORCE_MAG
            x, xd, th, thd = cp.cartpole_dynamics(state[0], state[1], state[2], state[3], force)
            state[0], state[1], state[2], state[3] = x, xd, th, thd
            done = cp.out_of_bounds(x, th)
            s2 = _cartpole_index(edges, state)
            target = 1.0
            if not done:
                target += gamma * np.max(q[s2])
            q[s, a] += alpha * (target - q[s, a])
            s = s2
            if done:
                break
    return q


def evaluate(env, policy, episodes: int = 100, seed: int = 0) -> float:
    """Mean greedy return over inputs sampled from ``env``."""
    rng = np.random.default_rng(seed)
    returns = [run_episode(env, policy, env.sample_input(rng)).cumulative_reward for _ in range(episodes)]
    return float(np.mean(returns)) if returns else 0.0


def train_q_learning(env, episodes: int, alpha: float = 0.1, gamma_rl: float | None = None,
                     epsilon_schedule=(1.0, 0.05), seed: int = 0) -> QTable:
    """Tabular Q-learning with epsilon decaying linearly across episodes.

    ``gamma_rl`` defaults to 0.95 on Taxi and 0.99 on CartPole.
    """
    if episodes < 0:
        raise ValueError("episodes must be non-negative")
    eps_start, eps_end = epsilon_schedule
    horizon = env.spec.horizon
    if isinstance(env, Taxi):
        gamma_rl = 0.95 if gamma_rl is None else gamma_rl
        encoder = TaxiEncoder(env.map)
        m = env.map
        cells = np.array(m.free_cells, dtype=np.int64)
        q = _train_taxi(m.walls, m.depots, m.cell_index, cells[:, 0].copy(), cells[:, 1].copy(),
                        episodes, alpha, gamma_rl, eps_start, eps_end, seed, horizon)
    elif isinstance(env, CartPole):
        gamma_rl = 0.99 if gamma_rl is None else gamma_rl
        encoder = BinDiscretizer.uniform(cp.INPUT_LOW, cp.INPUT_HIGH)
        q = _train_cartpole(np.array(encoder.edges), np.array(cp.INPUT_LOW), np.array(cp.INPUT_HIGH),
                            episodes, alpha, gamma_rl, eps_start, eps_end, seed, horizon)
    else:
        raise ValueError(f"no discretizer for environment {env.spec.name!r}")
    if not 0.0 <= gamma_rl < 1.0:
        raise ValueError("gamma_rl must lie in [0, 1)")
    table = QTable(q, encoder, env.spec.name, {
        "episodes": episodes, "alpha": alpha, "gamma_rl": gamma_rl,
        "epsilon": [eps_start, eps_end], "seed": seed,
    })
    table.metadata["eval_mean_return"] = evaluate(env, table, 100, seed)
    return table


def policy_from_json(doc: dict):
    if doc["kind"] == QTable.kind:
        return QTable.from_json(doc)
    if doc["kind"] == PDController.kind:
        return PDController(**doc.get("params", {}))
    raise ValueError(f"unknown policy kind {doc['kind']!r}")


def save_policy(policy, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(policy.to_json())
    if path.suffix == ".gz":
        # fixed mtime keeps the archive byte-identical across runs
        path.write_bytes(gzip.compress(text.encode("utf-8"), mtime=0))
    else:
        path.write_text(text)
    return path


def _read_policy_text(path: str | Path) -> str:
    spec = str(path)
    if spec.startswith(BUILTIN_PREFIX):
        name = spec[len(BUILTIN_PREFIX):]
        if name not in BUILTIN_POLICIES:
            raise FileNotFoundError(f"no builtin policy {name!r}; choose from {sorted(BUILTIN_POLICIES)}")
        res = resources.files("policyfuzz.data").joinpath(BUILTIN_POLICIES[name])
        raw = res.read_bytes()
        return (gzip.decompress(raw) if res.name.endswith(".gz") else raw).decode("utf-8")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"policy artifact {path} does not exist")
    if path.suffix == ".gz":
        with gzip.open(path, "rt", encoding="utf-8") as fh:
            return fh.read()
    return path.read_text()


def load_policy(path, env_name: str | None = None):
    """Load a policy artifact (a path or ``builtin:<env>``), checking it fits ``env_name``."""
    policy = policy_from_json(json.loads(_read_policy_text(path)))
    if env_name is not None:
        if policy.env_name != env_name:
            raise ConfigError(f"policy was built for {policy.env_name!r}, not {env_name!r}")
        if isinstance(policy, QTable):
            env = make_env(env_name)
            if policy.n_actions != env.spec.n_actions or policy.encoder.dim != env.spec.state_dim:
                raise ConfigError("policy dimensions do not match the environment")
    return policy


def default_policy(env_name: str):
    if env_name == "landerlite":
        return PDController()
    return load_policy(BUILTIN_PREFIX + env_name, env_name)


__all__ = [
    "BinDiscretizer", "PDController", "QTable", "TaxiEncoder", "act", "default_policy",
    "evaluate", "load_policy", "save_policy", "train_q_learning",
]

