"""Gaussian-process search over decomposition policies.

Policies are encoded as 4N vectors in [0, 1]: per device, (layer count,
embedding width, mean head count, mean MLP width), each divided by the base
model's range.  A Matern-3/2 GP with observation noise models the objective
surface; candidates are scored by expected improvement (minimization form)
over a random feasible pool plus local perturbations of the incumbent.

Matern nu=3/2, unit lengthscale by default, with r = ||x1 - x2||_2 / l:

    K(x1, x2) = (1 + sqrt(3) r) * exp(-sqrt(3) r)

Expected improvement at posterior (mu, sigma) against best observation f*:

    z  = (f* - mu) / sigma
    EI = (f* - mu) * Phi(z) + sigma * phi(z)      (EI = max(f* - mu, 0) at sigma = 0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyState, NumericalFailure
from .model import (DecompositionPolicy, DeviceFleet, SubModelConfig,
                    TransformerConfig, repair_policy, sample_policy)
from .objective import ObjectiveValue, objective

DEFAULT_NOISE_VAR = 1e-4
DEFAULT_LENGTHSCALE = 1.0
DEFAULT_POOL_SIZE = 256
DEFAULT_N_PERTURB = 32
PERTURB_SIGMA = 0.08

_SQRT3 = math.sqrt(3.0)
_JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def encode_policy(policy: DecompositionPolicy,
                  base: TransformerConfig) -> np.ndarray:
    """Map a policy to a 4N vector in (0, 1]^4N."""
    vec = np.empty(4 * len(policy))
    for i, c in enumerate(policy.sub_models):
        vec[4 * i:4 * i + 4] = (
            c.layers / base.layers,
            c.embed_dim / base.embed_dim,
            float(np.mean(c.heads_per_layer)) / base.heads,
            float(np.mean(c.mlp_dims)) / base.mlp_dim,
        )
    return vec


def decode_policy(vec: np.ndarray, base: TransformerConfig) -> DecompositionPolicy:
    """Inverse of the encoding, with per-layer budgets held constant."""
    vec = np.asarray(vec, dtype=float)
    if vec.size % 4 != 0:
        raise ValueError("encoded policy length must be a multiple of 4")
    subs = []
    for i in range(vec.size // 4):
        x = vec[4 * i:4 * i + 4]
        l = int(np.clip(round(x[0] * base.layers), 1, base.layers))
        d = int(np.clip(round(x[1] * base.embed_dim), 1, base.embed_dim))
        h = int(np.clip(round(x[2] * base.heads), 1, base.heads))
        m = int(np.clip(round(x[3] * base.mlp_dim), 1, base.mlp_dim))
        subs.append(SubModelConfig(l, d, (h,) * l, (m,) * l))
    return DecompositionPolicy(tuple(subs))


def matern_kernel(x1: np.ndarray, x2: np.ndarray,
                  lengthscale: float = DEFAULT_LENGTHSCALE) -> float:
    """Matern-3/2 covariance between two points."""
    r = float(np.linalg.norm(np.asarray(x1, dtype=float)
                             - np.asarray(x2, dtype=float))) / lengthscale
    return (1.0 + _SQRT3 * r) * math.exp(-_SQRT3 * r)


def _kernel_matrix(xa: np.ndarray, xb: np.ndarray,
                   lengthscale: float) -> np.ndarray:
    diff = xa[:, None, :] - xb[None, :, :]
    r = np.sqrt((diff ** 2).sum(axis=-1)) / lengthscale
    return (1.0 + _SQRT3 * r) * np.exp(-_SQRT3 * r)


@dataclass(frozen=True)
class GPState:
    """Immutable GP posterior over encoded policies.

    Observations are standardized internally (mean/std stored); the Gram
    factor is cached.  ``gp_update`` returns a fresh state.
    """

    x: np.ndarray          # (n, dim)
    y: np.ndarray          # (n,) raw observations
    noise_var: float
    lengthscale: float
    y_mean: float
    y_std: float
    chol: np.ndarray       # lower Cholesky of K + (noise + jitter) I
    alpha: np.ndarray      # (K + noise I)^-1 y_standardized

    @property
    def n_obs(self) -> int:
        return self.x.shape[0]

    @property
    def best_y(self) -> float:
        return float(self.y.min())


def _cholesky_with_jitter(gram: np.ndarray) -> np.ndarray:
    for jitter in _JITTERS:
        try:
            return np.linalg.cholesky(
                gram + jitter * np.eye(gram.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise NumericalFailure(
        "Gram matrix not positive definite even with jitter up to "
        f"{_JITTERS[-1]:g}")


def gp_fit(x: np.ndarray, y: np.ndarray,
           noise_var: float = DEFAULT_NOISE_VAR,
           lengthscale: float = DEFAULT_LENGTHSCALE) -> GPState:
    """Condition a zero-mean Matern-3/2 GP on (x, y)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] == 0:
        raise EmptyState("cannot fit a GP on zero observations")
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y disagree on the number of observations")
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std < 1e-12:
        y_std = 1.0
    ys = (y - y_mean) / y_std
    gram = _kernel_matrix(x, x, lengthscale) + noise_var * np.eye(x.shape[0])
    chol = _cholesky_with_jitter(gram)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, ys))
    return GPState(x, y, noise_var, lengthscale, y_mean, y_std, chol, alpha)


def gp_update(state: GPState, x_new: np.ndarray, y_new: float) -> GPState:
    """Fold one observation into the posterior; the old state is untouched."""
    x = np.vstack([state.x, np.asarray(x_new, dtype=float)[None, :]])
    y = np.append(state.y, y_new)
    return gp_fit(x, y, state.noise_var, state.lengthscale)


def _predict_many(state: GPState, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xq = np.atleast_2d(np.asarray(xq, dtype=float))
    k = _kernel_matrix(xq, state.x, state.lengthscale)  # (m, n)
    mu = state.y_mean + state.y_std * (k @ state.alpha)
    v = np.linalg.solve(state.chol, k.T)                # (n, m)
    var = 1.0 - (v ** 2).sum(axis=0)
    var = np.maximum(var, 0.0) * state.y_std ** 2
    return mu, var


def gp_predict(state: GPState, x: np.ndarray) -> tuple[float, float]:
    """Posterior mean and variance at one point."""
    if state.n_obs == 0:
        raise EmptyState("GP has no observations")
    mu, var = _predict_many(state, np.asarray(x, dtype=float)[None, :])
    return float(mu[0]), float(var[0])


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _norm_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def expected_improvement(mu: float, sigma: float, best: float) -> float:
    """EI for minimization; exact limit max(best - mu, 0) at sigma = 0."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    gap = best - mu
    if sigma == 0.0:
        return max(gap, 0.0)
    z = gap / sigma
    return max(0.0, gap * _norm_cdf(z) + sigma * _norm_pdf(z))


def propose_next(state: GPState, base: TransformerConfig, fleet: DeviceFleet,
                 pool_size: int = DEFAULT_POOL_SIZE, *, rng,
                 n_perturb: int = DEFAULT_N_PERTURB,
                 perturb_sigma: float = PERTURB_SIGMA) -> DecompositionPolicy:
    """Pick the pool candidate with maximal expected improvement.

    The pool mixes fresh feasible samples with Gaussian perturbations of the
    incumbent best (decoded and repaired back to feasibility).  Exact EI
    ties break toward the lexicographically smallest encoding.
    """
    if state.n_obs == 0:
        raise EmptyState("cannot propose from an empty GP")
    pool = [sample_policy(base, fleet, rng) for _ in range(pool_size)]
    incumbent = state.x[int(np.argmin(state.y))]
    for _ in range(n_perturb):
        enc = np.clip(incumbent + rng.normal(0.0, perturb_sigma,
                                             size=incumbent.shape),
                      1e-9, 1.0)
        pool.append(repair_policy(decode_policy(enc, base), base, fleet))

    encodings = np.stack([encode_policy(p, base) for p in pool])
    mus, variances = _predict_many(state, encodings)
    best = state.best_y
    best_key = None
    best_policy = None
    for policy, enc, mu, var in zip(pool, encodings, mus, variances):
        ei = expected_improvement(float(mu), math.sqrt(float(var)), best)
        key = (-ei, tuple(enc))
        if best_key is None or key < best_key:
            best_key = key
            best_policy = policy
    return best_policy


@dataclass(frozen=True)
class SearchRecord:
    iteration: int
    encoding: tuple[float, ...]
    degradation: float
    latency_ms: float
    psi: float
    best_psi: float


@dataclass(frozen=True)
class SearchResult:
    best_policy: DecompositionPolicy
    best_value: ObjectiveValue
    records: tuple[SearchRecord, ...]


def _record(records, i, enc, value, best_psi):
    records.append(SearchRecord(i, tuple(float(v) for v in enc),
                                value.degradation, value.latency_ms,
                                value.psi, best_psi))


def bayes_search(base: TransformerConfig, fleet: DeviceFleet,
                 predictors, oracle, *, n_init: int = 10, n_iter: int = 40,
                 delta: float = 0.005, seed=0,
                 pool_size: int = DEFAULT_POOL_SIZE,
                 n_perturb: int = DEFAULT_N_PERTURB,
                 noise_var: float = DEFAULT_NOISE_VAR) -> SearchResult:
    """GP-guided policy search; returns the best of all evaluations.

    ``n_init`` random feasible policies seed the posterior, then ``n_iter``
    rounds of propose / evaluate / update.  Fully deterministic per seed.
    """
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    rng = np.random.default_rng(seed)
    evaluated: list[tuple[DecompositionPolicy, ObjectiveValue]] = []
    records: list[SearchRecord] = []
    best_psi = math.inf

    encodings = []
    psis = []
    for i in range(n_init):
        policy = sample_policy(base, fleet, rng)
        value = objective(policy, fleet, predictors, oracle, base, delta)
        evaluated.append((policy, value))
        best_psi = min(best_psi, value.psi)
        enc = encode_policy(policy, base)
        encodings.append(enc)
        psis.append(value.psi)
        _record(records, i, enc, value, best_psi)

    state = gp_fit(np.stack(encodings), np.array(psis), noise_var)
    for i in range(n_init, n_init + n_iter):
        policy = propose_next(state, base, fleet, pool_size, rng=rng,
                              n_perturb=n_perturb)
        value = objective(policy, fleet, predictors, oracle, base, delta)
        evaluated.append((policy, value))
        best_psi = min(best_psi, value.psi)
        enc = encode_policy(policy, base)
        state = gp_update(state, enc, value.psi)
        _record(records, i, enc, value, best_psi)

    best_policy, best_value = min(evaluated, key=lambda pv: pv[1].psi)
    return SearchResult(best_policy, best_value, tuple(records))


def random_search(base: TransformerConfig, fleet: DeviceFleet,
                  predictors, oracle, *, n_draws: int = 50,
                  delta: float = 0.005, seed=0) -> SearchResult:
    """Baseline: best of ``n_draws`` feasible policies from the sampler."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rng = np.random.default_rng(seed)
    evaluated = []
    records: list[SearchRecord] = []
    best_psi = math.inf
    for i in range(n_draws):
        policy = sample_policy(base, fleet, rng)
        value = objective(policy, fleet, predictors, oracle, base, delta)
        evaluated.append((policy, value))
        best_psi = min(best_psi, value.psi)
        _record(records, i, encode_policy(policy, base), value, best_psi)
    best_policy, best_value = min(evaluated, key=lambda pv: pv[1].psi)
    return SearchResult(best_policy, best_value, tuple(records))
