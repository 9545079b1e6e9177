from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np

MAX_MUTATION_ATTEMPTS = 100


class NullMutationError(RuntimeError):
    """A mutation or perturbation kept returning its own input."""


class InvalidInputError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    horizon: int
    n_actions: int
    input_low: tuple = ()
    input_high: tuple = ()
    discrete_input: bool = False


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Result of one deterministic execution.

    ``states`` is an (M', d) read-only array with M' <= horizon; ``actions``
    holds the M' - 1 actions taken between consecutive states.
    """

    states: np.ndarray
    actions: tuple
    cumulative_reward: float
    crashed: bool = False

    @property
    def steps(self) -> int:
        return len(self.states) - 1


def freeze_input(inp) -> tuple:
    """Immutable copy of an input as a tuple of plain Python scalars."""
    return tuple(np.asarray(inp).tolist())


class Environment(abc.ABC):
    spec: EnvSpec

    @abc.abstractmethod
    def reset(self, inp) -> tuple:
        """Set the internal state from ``inp`` and return the first observation."""

    @abc.abstractmethod
    def step(self, action) -> tuple[tuple, float, bool]:
        ...

    @abc.abstractmethod
    def oracle(self, trajectory: Trajectory) -> bool:
        """True iff the trajectory reveals a fault. Depends on the trajectory only."""

    @abc.abstractmethod
    def sample_input(self, rng: np.random.Generator) -> tuple:
        ...

    @abc.abstractmethod
    def _mutate(self, inp: tuple, rng: np.random.Generator) -> tuple:
        ...

    def mutate_input(self, inp, rng: np.random.Generator) -> tuple:
        """A valid input different from ``inp``."""
        inp = freeze_input(inp)
        for _ in range(MAX_MUTATION_ATTEMPTS):
            out = freeze_input(self._mutate(inp, rng))
            if out != inp:
                return out
        raise NullMutationError(f"{self.spec.name}: mutation returned its input {MAX_MUTATION_ATTEMPTS} times")

    def perturb_input(self, inp, rng: np.random.Generator) -> tuple:
        """Small perturbation used for sensitivity; defaults to mutation."""
        return self.mutate_input(inp, rng)


@dataclass
class BoxInputs:
    """Uniform sampling and bounded mutation over an axis-aligned box."""

    low: np.ndarray
    high: np.ndarray
    mutation_scale: float = 0.05
    span: np.ndarray = field(init=False)

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)
        self.span = self.high - self.low

    def sample(self, rng):
        return freeze_input(rng.uniform(self.low, self.high))

    def mutate(self, inp, rng):
        noise = rng.uniform(-1.0, 1.0, size=len(self.low)) * self.mutation_scale * self.span
        return freeze_input(np.clip(np.asarray(inp) + noise, self.low, self.high))

    def check(self, inp, name):
        arr = np.asarray(inp, dtype=np.float64)
        if arr.shape != self.low.shape or not np.all(np.isfinite(arr)):
            raise InvalidInputError(f"{name}: input must be {len(self.low)} finite reals, got {inp!r}")
        if np.any(arr < self.low) or np.any(arr > self.high):
            raise InvalidInputError(f"{name}: input {inp!r} outside bounds")
        return arr


def run_episode(env: Environment, policy, inp) -> Trajectory:
    """Execute ``policy`` from input ``inp`` for at most ``env.spec.horizon`` states."""
    state = env.reset(inp)
    states = [state]
    actions = []
    total = 0.0
    done = False
    limit = env.spec.horizon - 1
    while not done and len(actions) < limit:
        action = policy.act(state)
        state, reward, done = env.step(action)
        states.append(state)
        actions.append(action)
        total += reward
    arr = np.array(states, dtype=np.float64)
    arr.setflags(write=False)
    traj = Trajectory(arr, tuple(actions), float(total))
    return Trajectory(arr, traj.actions, traj.cumulative_reward, env.oracle(traj))
