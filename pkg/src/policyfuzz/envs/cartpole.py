"""Inverted pendulum on a cart, Euler-integrated at 50 Hz."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .base import BoxInputs, Environment, EnvSpec, Trajectory

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE_MAG = 10.0
DT = 0.02

THETA_LIMIT = 12 * 2 * math.pi / 360
X_LIMIT = 2.4

INPUT_LOW = (-1.0, -1.0, -0.15, -1.0)
INPUT_HIGH = (1.0, 1.0, 0.15, 1.0)


@njit(cache=True)
def cartpole_dynamics(x, x_dot, theta, theta_dot, force):
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos_t * cos_t / TOTAL_MASS)
    )
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS
    return (
        x + DT * x_dot,
        x_dot + DT * x_acc,
        theta + DT * theta_dot,
        theta_dot + DT * theta_acc,
    )


@njit(cache=True)
def out_of_bounds(x, theta):
    return x < -X_LIMIT or x > X_LIMIT or theta < -THETA_LIMIT or theta > THETA_LIMIT


class CartPole(Environment):
    """Actions: 0 pushes left, 1 pushes right. Reward +1 per step."""

    spec = EnvSpec("cartpole", state_dim=4, horizon=400, n_actions=2,
                   input_low=INPUT_LOW, input_high=INPUT_HIGH)

    def __init__(self):
        self._box = BoxInputs(INPUT_LOW, INPUT_HIGH)
        self._state = None
        self._done = True

    def reset(self, inp):
        arr = self._box.check(inp, self.spec.name)
        self._state = tuple(float(v) for v in arr)
        self._done = False
        return self._state

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode")
        force = FORCE_MAG if action == 1 else -FORCE_MAG
        self._state = cartpole_dynamics(*self._state, force)
        self._done = bool(out_of_bounds(self._state[0], self._state[2]))
        return self._state, 1.0, self._done

    def oracle(self, trajectory: Trajectory) -> bool:
        s = trajectory.states
        return bool(np.any(np.abs(s[:, 0]) > X_LIMIT) or np.any(np.abs(s[:, 2]) > THETA_LIMIT))

    def sample_input(self, rng):
        return self._box.sample(rng)

    def _mutate(self, inp, rng):
        return self._box.mutate(inp, rng)
