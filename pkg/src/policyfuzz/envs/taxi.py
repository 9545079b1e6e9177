"""Taxi on an 18x13 grid with interior walls.

Inputs are (taxi_row, taxi_col, passenger_row, passenger_col, destination)
with the destination indexing the four depot cells A-D. Observations append
an in-taxi flag; while carried, the passenger shares the taxi's position.
"""
from __future__ import annotations

from collections import deque
from functools import lru_cache
from importlib import resources

import numpy as np
from numba import njit

from .base import Environment, EnvSpec, InvalidInputError, Trajectory, freeze_input

SOUTH, NORTH, EAST, WEST, PICKUP, DROPOFF = range(6)
ACTION_NAMES = ("south", "north", "east", "west", "pickup", "dropoff")

STEP_REWARD = -1.0
INVALID_REWARD = -10.0
SUCCESS_REWARD = 20.0

_MOVES = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=np.int64)


@njit(cache=True)
def taxi_transition(walls, depots, tr, tc, pr, pc, dest, in_taxi, action):
    """Returns (tr, tc, pr, pc, in_taxi, reward, done, fault)."""
    rows, cols = walls.shape
    if action < 4:
        if action == 0:
            nr, nc = tr + 1, tc
        elif action == 1:
            nr, nc = tr - 1, tc
        elif action == 2:
            nr, nc = tr, tc + 1
        else:
            nr, nc = tr, tc - 1
        if nr < 0 or nr >= rows or nc < 0 or nc >= cols or walls[nr, nc]:
            return tr, tc, pr, pc, in_taxi, -1.0, False, True
        if in_taxi:
            return nr, nc, nr, nc, in_taxi, -1.0, False, False
        return nr, nc, pr, pc, in_taxi, -1.0, False, False
    if action == 4:
        if in_taxi == 0 and pr == tr and pc == tc:
            return tr, tc, pr, pc, 1, -1.0, False, False
        return tr, tc, pr, pc, in_taxi, -10.0, False, True
    if in_taxi == 1 and tr == depots[dest, 0] and tc == depots[dest, 1]:
        return tr, tc, tr, tc, 0, 20.0, True, False
    return tr, tc, pr, pc, in_taxi, -10.0, False, True


@njit(cache=True)
def taxi_state_index(cell_index, n_free, tr, tc, pr, pc, dest, in_taxi):
    # the destination only matters once the passenger is aboard
    taxi = cell_index[tr, tc]
    if in_taxi:
        return n_free * n_free + taxi * 4 + dest
    return taxi * n_free + cell_index[pr, pc]


@lru_cache(maxsize=None)
def load_map(name: str = "taxi_map.txt") -> tuple[str, ...]:
    text = resources.files("policyfuzz.envs").joinpath(name).read_text()
    return tuple(line for line in text.splitlines() if line.strip())


class TaxiMap:
    """Parsed grid: '#' wall, '.' free, 'A'-'D' depots (free cells)."""

    def __init__(self, rows):
        rows = tuple(rows)
        if len({len(r) for r in rows}) != 1:
            raise ValueError("taxi map rows must have equal length")
        self.layout = rows
        self.shape = (len(rows), len(rows[0]))
        self.walls = np.array([[c == "#" for c in r] for r in rows], dtype=np.bool_)
        depots = {}
        for i, r in enumerate(rows):
            for j, c in enumerate(r):
                if c in "ABCD":
                    depots[c] = (i, j)
                elif c not in "#.":
                    raise ValueError(f"unexpected map character {c!r}")
        if sorted(depots) != list("ABCD"):
            raise ValueError("taxi map needs depots A, B, C and D")
        self.depots = np.array([depots[k] for k in "ABCD"], dtype=np.int64)
        self.free_cells = [(i, j) for i in range(self.shape[0]) for j in range(self.shape[1]) if not self.walls[i, j]]
        self.cell_index = np.full(self.shape, -1, dtype=np.int64)
        for k, (i, j) in enumerate(self.free_cells):
            self.cell_index[i, j] = k
        if not self.is_connected():
            raise ValueError("taxi map free cells are not connected")

    @property
    def n_free(self) -> int:
        return len(self.free_cells)

    @property
    def n_states(self) -> int:
        return self.n_free * (self.n_free + 4)

    def is_connected(self) -> bool:
        free = set(self.free_cells)
        seen = {self.free_cells[0]}
        queue = deque(seen)
        while queue:
            i, j = queue.popleft()
            for di, dj in _MOVES.tolist():
                nxt = (i + di, j + dj)
                if nxt in free and nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return len(seen) == len(free)

    def state_index(self, state) -> int:
        tr, tc, pr, pc, dest, in_taxi = (int(v) for v in state)
        return int(taxi_state_index(self.cell_index, self.n_free, tr, tc, pr, pc, dest, in_taxi))


@lru_cache(maxsize=None)
def default_map() -> TaxiMap:
    return TaxiMap(load_map())


class Taxi(Environment):
    spec = EnvSpec("taxi", state_dim=6, horizon=200, n_actions=6, discrete_input=True)

    def __init__(self, taxi_map: TaxiMap | None = None):
        self.map = taxi_map or default_map()
        self._state = None
        self._done = True

    def validate_input(self, inp) -> tuple:
        inp = freeze_input(inp)
        if len(inp) != 5 or not all(isinstance(v, int) for v in inp):
            raise InvalidInputError(f"taxi input must be 5 integers, got {inp!r}")
        tr, tc, pr, pc, dest = inp
        rows, cols = self.map.shape
        for r, c in ((tr, tc), (pr, pc)):
            if not (0 <= r < rows and 0 <= c < cols) or self.map.walls[r, c]:
                raise InvalidInputError(f"taxi input {inp!r} places an entity off the free cells")
        if not 0 <= dest < 4:
            raise InvalidInputError(f"destination must be in 0..3, got {dest}")
        return inp

    def reset(self, inp):
        tr, tc, pr, pc, dest = self.validate_input(inp)
        self._state = (tr, tc, pr, pc, dest, 0)
        self._done = False
        return self._state

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode")
        tr, tc, pr, pc, dest, in_taxi = self._state
        tr, tc, pr, pc, in_taxi, reward, done, _ = taxi_transition(
            self.map.walls, self.map.depots, tr, tc, pr, pc, dest, in_taxi, int(action))
        self._state = (tr, tc, pr, pc, dest, in_taxi)
        self._done = bool(done)
        return self._state, reward, self._done

    def oracle(self, trajectory: Trajectory) -> bool:
        return bool(self.fault_steps(trajectory))

    def fault_steps(self, trajectory: Trajectory) -> list[int]:
        """Steps with a wall collision or an invalid pickup/dropoff."""
        s = trajectory.states.astype(np.int64)
        faults = []
        for t, action in enumerate(trajectory.actions):
            before, after = s[t], s[t + 1]
            if action < PICKUP:
                bad = before[0] == after[0] and before[1] == after[1]
            elif action == PICKUP:
                bad = not (before[5] == 0 and after[5] == 1)
            else:
                bad = not (before[5] == 1 and after[5] == 0)
            if bad:
                faults.append(t)
        return faults

    def sample_input(self, rng):
        cells = self.map.free_cells
        t = cells[rng.integers(len(cells))]
        p = cells[rng.integers(len(cells))]
        return (t[0], t[1], p[0], p[1], int(rng.integers(4)))

    def _mutate(self, inp, rng):
        tr, tc, pr, pc, dest = inp
        cells = self.map.free_cells
        which = int(rng.integers(3))
        if which == 2:
            other = int(rng.integers(3))
            return (tr, tc, pr, pc, other + (other >= dest))
        current = (tr, tc) if which == 0 else (pr, pc)
        k = int(rng.integers(len(cells) - 1))
        if k >= self.map.cell_index[current]:
            k += 1
        r, c = cells[k]
        return (r, c, pr, pc, dest) if which == 0 else (tr, tc, r, c, dest)

    def all_inputs(self):
        cells = self.map.free_cells
        for t in cells:
            for p in cells:
                for dest in range(4):
                    yield (t[0], t[1], p[0], p[1], dest)
