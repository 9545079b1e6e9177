"""Gaussian mixtures: log-space densities, stepwise online EM and a batch EM oracle.

Parameters are immutable values. Updates return fresh objects; nothing is
mutated in place, so a :class:`GmmParams` may be shared freely.

Components use full covariances up to :data:`FULL_COV_MAX_DIM` dimensions and
diagonal covariances above that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import logsumexp

EPS_COV = 1e-6
FULL_COV_MAX_DIM = 8
# below this mass a component keeps its previous mean/covariance
_MIN_MASS = 1e-250
_MIN_WEIGHT = 1e-300
_LOG_2PI = math.log(2.0 * math.pi)


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray
    weight: float


@dataclass(frozen=True, eq=False)
class GmmParams:
    """K-component Gaussian mixture over d-vectors.

    ``weights`` has shape (K,), ``means`` (K, d) and ``covs`` (K, d, d).
    Cholesky factors are computed once at construction.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        mu = _frozen(self.means)
        cov = _frozen(self.covs)
        if mu.ndim != 2 or mu.shape[0] < 1 or mu.shape[1] < 1:
            raise ValueError(f"means must have shape (K, d), got {mu.shape}")
        K, d = mu.shape
        if w.shape != (K,):
            raise ValueError(f"weights must have shape ({K},), got {w.shape}")
        if cov.shape != (K, d, d):
            raise ValueError(f"covs must have shape ({K}, {d}, {d}), got {cov.shape}")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariances must be positive definite") from exc
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)
        inv_chol = np.linalg.inv(chol)
        inv_chol.setflags(write=False)
        object.__setattr__(self, "_inv_chol", inv_chol)
        log_det = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        object.__setattr__(self, "_log_norm", np.log(w) - 0.5 * (d * _LOG_2PI + log_det))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def diagonal(self) -> bool:
        return self.dim > FULL_COV_MAX_DIM

    @property
    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(self.means[k], self.covs[k], float(self.weights[k]))
            for k in range(self.n_components)
        ]

    def permuted(self, order) -> "GmmParams":
        order = np.asarray(order)
        return GmmParams(self.weights[order], self.means[order], self.covs[order])

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "K": self.n_components,
            "components": [
                {"weight": float(c.weight), "mean": c.mean.tolist(), "cov": c.cov.tolist()}
                for c in self.components
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GmmParams":
        comps = doc["components"]
        if len(comps) != doc["K"]:
            raise ValueError("component count does not match K")
        params = cls(
            [c["weight"] for c in comps],
            [c["mean"] for c in comps],
            [c["cov"] for c in comps],
        )
        if params.dim != doc["dim"]:
            raise ValueError("component dimension does not match dim")
        return params


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Exponentially forgotten per-component moments.

    ``mass`` (K,), ``first`` (K, d) = sum r*x, ``second`` (K, d, d) = sum r*x*x^T.
    """

    mass: np.ndarray
    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", _frozen(self.mass))
        object.__setattr__(self, "first", _frozen(self.first))
        object.__setattr__(self, "second", _frozen(self.second))

    def to_json(self) -> dict:
        return {
            "mass": self.mass.tolist(),
            "first": self.first.tolist(),
            "second": self.second.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SufficientStats":
        return cls(doc["mass"], doc["first"], doc["second"])


def stats_from_params(params: GmmParams, eps_cov: float = EPS_COV) -> SufficientStats:
    """Statistics that re-derive exactly to ``params`` (regularization excluded)."""
    w = params.weights
    mu = params.means
    d = params.dim
    centred = params.covs - eps_cov * np.eye(d)
    second = w[:, None, None] * (centred + mu[:, :, None] * mu[:, None, :])
    return SufficientStats(w.copy(), w[:, None] * mu, second)


def _as_points(params: GmmParams, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    pts = arr[None, :] if single else arr
    if pts.ndim != 2 or pts.shape[1] != params.dim:
        raise ValueError(f"expected points of dimension {params.dim}, got shape {arr.shape}")
    return pts, single


def _component_log_densities(params: GmmParams, pts: np.ndarray) -> np.ndarray:
    # (n, K): log w_k + log N(x_n; mu_k, Sigma_k)
    diff = pts[:, None, :] - params.means[None, :, :]
    z = np.einsum("kij,nkj->nki", params._inv_chol, diff)
    return params._log_norm[None, :] - 0.5 * np.einsum("nki,nki->nk", z, z)


def log_density(params: GmmParams, x):
    """Natural log of the mixture density at ``x`` ((d,) or (n, d))."""
    pts, single = _as_points(params, x)
    out = logsumexp(_component_log_densities(params, pts), axis=1)
    return float(out[0]) if single else out


def responsibilities(params: GmmParams, x) -> np.ndarray:
    """Posterior component probabilities; shape (K,) or (n, K)."""
    pts, single = _as_points(params, x)
    comp = _component_log_densities(params, pts)
    resp = np.exp(comp - logsumexp(comp, axis=1, keepdims=True))
    return resp[0] if single else resp


def gmm_init(dim: int, K: int, seed_samples=(), rng_seed: int = 0, eps_cov: float = EPS_COV) -> GmmParams:
    """Uniform-weight mixture seeded from observed samples.

    Means are distinct samples when at least K are available, standard-normal
    draws otherwise. Covariances are diagonal with the per-dimension sample
    variance; dimensions without spread fall back to unit variance.
    """
    if dim < 1 or K < 1:
        raise ValueError("dim and K must be positive")
    samples = np.asarray(seed_samples, dtype=np.float64).reshape(-1, dim) if len(seed_samples) else np.empty((0, dim))
    rng = np.random.default_rng(rng_seed)
    if len(samples) >= K:
        means = samples[rng.choice(len(samples), size=K, replace=False)]
    else:
        means = rng.standard_normal((K, dim))
    var = np.ones(dim)
    if len(samples) >= 2:
        var = samples.var(axis=0)
        var[var == 0.0] = 1.0
        var = np.maximum(var, eps_cov)
    covs = np.broadcast_to(np.diag(var), (K, dim, dim))
    return GmmParams(np.full(K, 1.0 / K), means, covs)


@njit(cache=True)
def _stepwise_em(weights, means, covs, mass, first, second, X, gamma, eps_cov, diagonal):
    K, d = means.shape
    w = weights.copy()
    mu = means.copy()
    cov = covs.copy()
    m = mass.copy()
    s1 = first.copy()
    s2 = second.copy()
    log_norm = np.empty(K)
    inv_l = np.empty((K, d, d))
    eye = np.eye(d)
    log2pi = np.log(2.0 * np.pi)
    for k in range(K):
        L = np.linalg.cholesky(cov[k])
        inv_l[k] = np.linalg.solve(L, eye)
        ld = 0.0
        for i in range(d):
            ld += np.log(L[i, i])
        log_norm[k] = np.log(w[k]) - 0.5 * (d * log2pi + 2.0 * ld)
    comp = np.empty(K)
    for n in range(X.shape[0]):
        x = X[n]
        top = -np.inf
        for k in range(K):
            diff = x - mu[k]
            z = inv_l[k] @ diff
            comp[k] = log_norm[k] - 0.5 * np.dot(z, z)
            if comp[k] > top:
                top = comp[k]
        acc = 0.0
        for k in range(K):
            acc += np.exp(comp[k] - top)
        lse = top + np.log(acc)
        total = 0.0
        for k in range(K):
            r = np.exp(comp[k] - lse)
            m[k] = (1.0 - gamma) * m[k] + gamma * r
            for i in range(d):
                s1[k, i] = (1.0 - gamma) * s1[k, i] + gamma * r * x[i]
                for j in range(d):
                    s2[k, i, j] = (1.0 - gamma) * s2[k, i, j] + gamma * r * x[i] * x[j]
            total += max(m[k], 1e-300)
        for k in range(K):
            w[k] = max(m[k], 1e-300) / total
            if m[k] >= 1e-250:
                for i in range(d):
                    mu[k, i] = s1[k, i] / m[k]
                for i in range(d):
                    for j in range(i, d):
                        c = 0.5 * (s2[k, i, j] + s2[k, j, i]) / m[k] - mu[k, i] * mu[k, j]
                        if i == j:
                            cov[k, i, i] = max(c, 0.0) + eps_cov
                        elif diagonal:
                            cov[k, i, j] = 0.0
                            cov[k, j, i] = 0.0
                        else:
                            cov[k, i, j] = c
                            cov[k, j, i] = c
            L = np.linalg.cholesky(cov[k])
            inv_l[k] = np.linalg.solve(L, eye)
            ld = 0.0
            for i in range(d):
                ld += np.log(L[i, i])
            log_norm[k] = np.log(w[k]) - 0.5 * (d * log2pi + 2.0 * ld)
    return w, mu, cov, m, s1, s2


def dynem_update_many(params: GmmParams, stats: SufficientStats, X, gamma: float,
                      eps_cov: float = EPS_COV) -> tuple[GmmParams, SufficientStats]:
    """Apply :func:`dynem_update` to each row of ``X`` in order."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    pts, _ = _as_points(params, X)
    if gamma == 0.0 or len(pts) == 0:
        return params, stats
    w, mu, cov, m, s1, s2 = _stepwise_em(
        params.weights, params.means, params.covs, stats.mass, stats.first, stats.second,
        np.ascontiguousarray(pts), float(gamma), float(eps_cov), params.diagonal,
    )
    # masses drift from 1 only through rounding; renormalise the carried stats
    scale = 1.0 / m.sum()
    return GmmParams(w, mu, cov), SufficientStats(m * scale, s1 * scale, s2 * scale)


def dynem_update(params: GmmParams, stats: SufficientStats, x, gamma: float,
                 eps_cov: float = EPS_COV) -> tuple[GmmParams, SufficientStats]:
    """One stepwise-EM step with forgetting weight ``gamma``.

    Costs O(K d^2) regardless of how many samples came before.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("dynem_update takes a single d-vector")
    return dynem_update_many(params, stats, x[None, :], gamma, eps_cov)


def mean_log_likelihood(params: GmmParams, data) -> float:
    return float(np.mean(log_density(params, np.asarray(data, dtype=np.float64))))


def batch_em(data, K: int, max_iters: int = 1000, tol: float = 1e-8, rng_seed: int = 0,
             eps_cov: float = EPS_COV, trace: list | None = None, n_init: int = 1) -> GmmParams:
    """Plain batch EM, used as a reference oracle.

    Iterates until the mean log-likelihood improves by less than ``tol``.
    With ``n_init`` > 1, restarts from seeds ``rng_seed + r`` and keeps the
    fit with the highest log-likelihood; a single start can sit on a saddle
    between clusters for hundreds of iterations. When ``trace`` is a list,
    the log-likelihood of every iterate of the kept fit is appended.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("data must be a 2-D array of samples")
    n, d = X.shape
    if n < K:
        raise ValueError(f"batch_em needs at least K={K} samples, got {n}")
    if n_init < 1:
        raise ValueError("n_init must be at least 1")
    best, best_ll, best_trace = None, -np.inf, []
    for r in range(n_init):
        fit_trace: list = []
        params = _batch_em_once(X, K, max_iters, tol, rng_seed + r, eps_cov, fit_trace)
        if fit_trace[-1] > best_ll:
            best, best_ll, best_trace = params, fit_trace[-1], fit_trace
    if trace is not None:
        trace.extend(best_trace)
    return best


def _batch_em_once(X, K, max_iters, tol, rng_seed, eps_cov, trace) -> GmmParams:
    n, d = X.shape
    params = gmm_init(d, K, X, rng_seed, eps_cov)
    diagonal = d > FULL_COV_MAX_DIM
    # one density pass per iteration serves both the log-likelihood and the next E-step
    comp = _component_log_densities(params, X)
    norm = logsumexp(comp, axis=1, keepdims=True)
    prev = float(np.mean(norm))
    trace.append(prev)
    for _ in range(max_iters):
        resp = np.exp(comp - norm)
        nk = resp.sum(axis=0)
        keep = nk < _MIN_MASS * n
        nk_safe = np.where(keep, 1.0, nk)
        weights = np.maximum(nk / n, _MIN_WEIGHT)
        weights /= weights.sum()
        means = (resp.T @ X) / nk_safe[:, None]
        diff = X[None, :, :] - means[:, None, :]
        covs = np.einsum("nk,kni,knj->kij", resp, diff, diff) / nk_safe[:, None, None]
        if diagonal:
            covs = np.einsum("kii->ki", covs)[:, :, None] * np.eye(d)[None]
        covs = 0.5 * (covs + covs.transpose(0, 2, 1)) + eps_cov * np.eye(d)
        means[keep] = params.means[keep]
        covs[keep] = params.covs[keep]
        params = GmmParams(weights, means, covs)
        comp = _component_log_densities(params, X)
        norm = logsumexp(comp, axis=1, keepdims=True)
        cur = float(np.mean(norm))
        trace.append(cur)
        if cur - prev < tol:
            break
        prev = cur
    return params
