"""Deterministic decision environments and the environment registry."""
from __future__ import annotations

import numpy as np

from .base import (
    EnvSpec,
    Environment,
    InvalidInputError,
    NullMutationError,
    Trajectory,
    freeze_input,
    run_episode,
)
from .cartpole import CartPole
from .lander import LanderLite
from .taxi import Taxi

ENVIRONMENTS = {
    "cartpole": CartPole,
    "taxi": Taxi,
    "landerlite": LanderLite,
}


def make_env(name: str) -> Environment:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def scan_inputs(env: Environment, resolution: int = 200) -> list[tuple]:
    """Every Taxi input, or a resolution x resolution grid over the lander's force box."""
    if isinstance(env, Taxi):
        return list(env.all_inputs())
    if isinstance(env, LanderLite):
        if resolution < 1:
            raise ValueError("resolution must be positive")
        lo, hi = env.spec.input_low, env.spec.input_high
        xs = np.linspace(lo[0], hi[0], resolution)
        ys = np.linspace(lo[1], hi[1], resolution)
        return [(float(fx), float(fy)) for fx in xs for fy in ys]
    raise ValueError(f"exhaustive scan is not supported for {env.spec.name!r}")


def exhaustive_scan(env: Environment, policy, resolution: int = 200) -> set[tuple]:
    """Ground-truth fault set: execute every input of the enumeration."""
    return {inp for inp in scan_inputs(env, resolution) if run_episode(env, policy, inp).crashed}


__all__ = [
    "CartPole", "ENVIRONMENTS", "EnvSpec", "Environment", "InvalidInputError", "LanderLite",
    "NullMutationError", "Taxi", "Trajectory", "exhaustive_scan", "freeze_input", "make_env",
    "run_episode", "scan_inputs",
]
