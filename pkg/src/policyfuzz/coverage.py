"""Sequence-likelihood coverage from a single-state and a state-pair mixture.

The coverage of a state sequence s_0..s_{M-1} is

    p(s_0) * prod_t p(s_t, s_{t+1}) / p(s_t)

evaluated entirely in log space. The ``clamped`` variant caps every ratio at 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .gmm import (
    EPS_COV,
    GmmParams,
    SufficientStats,
    dynem_update_many,
    gmm_init,
    log_density,
    stats_from_params,
)

# log-coverage values below this are stored as COVERAGE_FLOOR
COVERAGE_UNDERFLOW = -745.0
COVERAGE_FLOOR = -746.0

VARIANTS = ("faithful", "clamped")
UPDATE_POLICIES = ("full_sequence", "first_plus_fraction")


@dataclass(frozen=True, eq=False)
class CoverageModel:
    single_gmm: GmmParams
    pair_gmm: GmmParams
    single_stats: SufficientStats
    pair_stats: SufficientStats
    tau: float
    gamma: float
    variant: str = "faithful"
    update_policy: str = "full_sequence"
    update_fraction: float = 0.1

    def __post_init__(self):
        if self.pair_gmm.dim != 2 * self.single_gmm.dim:
            raise ValueError("pair mixture must have twice the single-state dimension")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown coverage variant {self.variant!r}")
        if self.update_policy not in UPDATE_POLICIES:
            raise ValueError(f"unknown update policy {self.update_policy!r}")
        if not 0.0 < self.update_fraction <= 1.0:
            raise ValueError("update_fraction must lie in (0, 1]")

    @property
    def dim(self) -> int:
        return self.single_gmm.dim

    def to_json(self) -> dict:
        return {
            "tau": self.tau,
            "gamma": self.gamma,
            "variant": self.variant,
            "update_policy": self.update_policy,
            "update_fraction": self.update_fraction,
            "single_gmm": self.single_gmm.to_json(),
            "pair_gmm": self.pair_gmm.to_json(),
            "single_stats": self.single_stats.to_json(),
            "pair_stats": self.pair_stats.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CoverageModel":
        single = GmmParams.from_json(doc["single_gmm"])
        pair = GmmParams.from_json(doc["pair_gmm"])
        return cls(
            single,
            pair,
            SufficientStats.from_json(doc["single_stats"]) if "single_stats" in doc else stats_from_params(single),
            SufficientStats.from_json(doc["pair_stats"]) if "pair_stats" in doc else stats_from_params(pair),
            tau=doc["tau"],
            gamma=doc["gamma"],
            variant=doc.get("variant", "faithful"),
            update_policy=doc.get("update_policy", "full_sequence"),
            update_fraction=doc.get("update_fraction", 0.1),
        )


def init_coverage_model(dim: int, K: int, tau: float, gamma: float, seed_states=(), rng_seed: int = 0,
                        variant: str = "faithful", update_policy: str = "full_sequence",
                        update_fraction: float = 0.1) -> CoverageModel:
    """Fresh model; the pair mixture is seeded with each state repeated, [s; s]."""
    states = np.asarray(seed_states, dtype=np.float64).reshape(-1, dim)
    pairs = np.concatenate([states, states], axis=1)
    seeds = np.random.SeedSequence(rng_seed).generate_state(2)
    single = gmm_init(dim, K, states, int(seeds[0]))
    pair = gmm_init(2 * dim, K, pairs, int(seeds[1]))
    return CoverageModel(
        single, pair, stats_from_params(single), stats_from_params(pair),
        tau=tau, gamma=gamma, variant=variant,
        update_policy=update_policy, update_fraction=update_fraction,
    )


def _as_sequence(model: CoverageModel, sequence) -> np.ndarray:
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim == 1:
        seq = seq[None, :]
    if seq.ndim != 2 or seq.shape[1] != model.dim:
        raise ValueError(f"expected a sequence of {model.dim}-vectors, got shape {np.shape(sequence)}")
    if len(seq) == 0:
        raise ValueError("empty state sequence")
    return seq


def pair_vectors(sequence: np.ndarray) -> np.ndarray:
    return np.concatenate([sequence[:-1], sequence[1:]], axis=1)


def coverage(model: CoverageModel, sequence) -> float:
    """Log coverage of ``sequence``; never NaN, floored at COVERAGE_FLOOR."""
    seq = _as_sequence(model, sequence)
    head = seq if len(seq) == 1 else seq[:-1]
    log_single = np.atleast_1d(log_density(model.single_gmm, head))
    log_d = float(log_single[0])
    if len(seq) > 1:
        ratios = log_density(model.pair_gmm, pair_vectors(seq)) - log_single
        if model.variant == "clamped":
            ratios = np.minimum(ratios, 0.0)
        log_d += float(ratios.sum())
    if not log_d >= COVERAGE_UNDERFLOW:
        return COVERAGE_FLOOR
    return log_d


def is_low_coverage(model: CoverageModel, log_d: float) -> bool:
    return log_d < math.log(model.tau)


def update_selection(n_states: int, update_policy: str, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices of states and of pairs (s_t, s_{t+1}) fed to the mixtures."""
    n_pairs = n_states - 1
    if update_policy == "full_sequence":
        return np.arange(n_states), np.arange(n_pairs)
    if n_pairs == 0:
        return np.arange(1), np.arange(0)
    count = min(n_pairs, max(1, int(fraction * n_states)))
    return np.arange(1), (np.arange(count) * n_pairs) // count


def update_model(model: CoverageModel, sequence, eps_cov: float = EPS_COV) -> CoverageModel:
    """Stepwise-EM update of both mixtures with the states of ``sequence``."""
    seq = _as_sequence(model, sequence)
    if model.gamma == 0.0:
        return model
    state_idx, pair_idx = update_selection(len(seq), model.update_policy, model.update_fraction)
    single, single_stats = dynem_update_many(
        model.single_gmm, model.single_stats, seq[state_idx], model.gamma, eps_cov)
    pair, pair_stats = model.pair_gmm, model.pair_stats
    if len(pair_idx):
        pair, pair_stats = dynem_update_many(
            pair, pair_stats, pair_vectors(seq)[pair_idx], model.gamma, eps_cov)
    return replace(model, single_gmm=single, pair_gmm=pair, single_stats=single_stats, pair_stats=pair_stats)
