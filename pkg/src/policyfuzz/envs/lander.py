"""Point-mass lander: a 2-D craft under gravity with discrete thrusters.

The input is the initial force (f_x, f_y) applied to the craft, turned into
its starting velocity f / MASS. The craft spawns above the pad at the origin.
"""
from __future__ import annotations

import math

import numpy as np

from .base import BoxInputs, Environment, EnvSpec, Trajectory

NONE, UP, LEFT, RIGHT = range(4)
ACTION_NAMES = ("none", "up", "left", "right")

MASS = 100.0
GRAVITY = -9.8
MAIN_THRUST = 22.0  # accelerations while an engine fires
SIDE_THRUST = 14.0
DT = 0.05

SPAWN = (0.0, 6.0)
VIEW_X = 10.0
VIEW_TOP = 12.0
PAD_HALF_WIDTH = 1.0
SOFT_SPEED = 1.5

LANDING_REWARD = 100.0
CRASH_REWARD = -100.0

INPUT_LOW = (-1000.0, -1000.0)
INPUT_HIGH = (1000.0, 1000.0)


def outside_viewport(x: float, y: float) -> bool:
    return x < -VIEW_X or x > VIEW_X or y > VIEW_TOP


class LanderLite(Environment):
    """State (x, y, vx, vy). Actions: 0 none, 1 main engine, 2 push left, 3 push right."""

    spec = EnvSpec("landerlite", state_dim=4, horizon=1000, n_actions=4,
                   input_low=INPUT_LOW, input_high=INPUT_HIGH)

    def __init__(self):
        self._box = BoxInputs(INPUT_LOW, INPUT_HIGH)
        self._state = None
        self._done = True

    def reset(self, inp):
        fx, fy = self._box.check(inp, self.spec.name)
        self._state = (SPAWN[0], SPAWN[1], float(fx) / MASS, float(fy) / MASS)
        self._done = False
        return self._state

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode")
        x, y, vx, vy = self._state
        ax, ay = 0.0, GRAVITY
        if action == UP:
            ay += MAIN_THRUST
        elif action == LEFT:
            ax -= SIDE_THRUST
        elif action == RIGHT:
            ax += SIDE_THRUST
        vx += ax * DT
        vy += ay * DT
        nx = x + vx * DT
        ny = y + vy * DT
        reward = math.hypot(x, y) - math.hypot(nx, ny)
        done = False
        if outside_viewport(nx, ny):
            reward += CRASH_REWARD
            done = True
        elif ny <= 0.0:
            soft = math.hypot(vx, vy) <= SOFT_SPEED
            reward += LANDING_REWARD if soft and abs(nx) <= PAD_HALF_WIDTH else 0.0
            reward += 0.0 if soft else CRASH_REWARD
            done = True
        self._state = (nx, ny, vx, vy)
        self._done = done
        return self._state, reward, done

    def oracle(self, trajectory: Trajectory) -> bool:
        s = trajectory.states
        if np.any((np.abs(s[:, 0]) > VIEW_X) | (s[:, 1] > VIEW_TOP)):
            return True
        x, y, vx, vy = s[-1]
        return bool(y <= 0.0 and math.hypot(vx, vy) > SOFT_SPEED)

    def sample_input(self, rng):
        return self._box.sample(rng)

    def _mutate(self, inp, rng):
        return self._box.mutate(inp, rng)
