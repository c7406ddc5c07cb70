#!/usr/bin/env python3
"""
Baum-Welch estimation for trawlwatch
EM fitting of Gaussian HMMs over several sequences with seeded restarts
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from ..errors import ConfigError
from .gaussian_hmm import (
    HmmParams, ObservationSequence, SequenceBatch, forward_backward_batch, stationary_distribution,
)

logger = logging.getLogger(__name__)

SEQUENCE_TOO_SHORT = "sequence too short"
ALL_RESTARTS_DEGENERATE = "all restarts degenerate"
DEGENERATE_PATIENCE = 10
MIN_COMPONENT_WEIGHT = 1e-10


@dataclass
class EmConfig:
    """EM settings"""
    max_iter: int = 500
    tol: float = 1e-6
    n_restarts: int = 5
    min_variance: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.n_restarts < 1:
            raise ConfigError(f"n_restarts must be >= 1, got {self.n_restarts}")
        if self.min_variance <= 0:
            raise ConfigError(f"min_variance must be positive, got {self.min_variance}")

    @classmethod
    def from_mapping(cls, values: Dict[str, Any]) -> "EmConfig":
        known = {k: values[k] for k in ("max_iter", "tol", "n_restarts", "min_variance", "seed") if k in values}
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigError(f"Unknown EM settings: {', '.join(sorted(unknown))}")
        return cls(
            max_iter=int(known.get("max_iter", cls.max_iter)),
            tol=float(known.get("tol", cls.tol)),
            n_restarts=int(known.get("n_restarts", cls.n_restarts)),
            min_variance=float(known.get("min_variance", cls.min_variance)),
            seed=int(known.get("seed", cls.seed)),
        )


@dataclass
class FittedModel:
    """Result of an EM fit; params is None when the fit failed"""
    params: Optional[Any]
    log_likelihood: float
    iterations: int
    converged: bool
    posteriors: List[np.ndarray] = field(default_factory=list)
    failure: Optional[str] = None
    history: List[float] = field(default_factory=list)
    n_observations: int = 0
    restart: int = 0
    kind: str = "dmkmg"
    nonstationary: bool = False

    @property
    def ok(self) -> bool:
        return self.failure is None and self.params is not None

    @property
    def n_states(self) -> int:
        return self.params.n_states if self.params is not None else 0

    def bic(self) -> float:
        """Bayesian information criterion -2 logL + p ln n"""
        if not self.ok or self.n_observations == 0:
            return math.nan
        return -2.0 * self.log_likelihood + self.params.n_free_parameters() * math.log(self.n_observations)

    def stationary_distribution(self) -> Optional[np.ndarray]:
        if not self.ok:
            return None
        return stationary_distribution(self.params.transmat)

    @classmethod
    def failed(cls, reason: str, kind: str = "dmkmg", n_observations: int = 0,
               history: Optional[List[float]] = None, iterations: int = 0) -> "FittedModel":
        return cls(params=None, log_likelihood=math.nan, iterations=iterations, converged=False,
                   failure=reason, n_observations=n_observations, kind=kind, history=list(history or []))


def identifiability_floor(n_states: int, n_dims: int) -> int:
    """Minimum number of valid observations for a K-state fit in d dimensions"""
    return n_states * (n_dims + n_dims * (n_dims + 1) // 2 + 1)


def pooled_observations(sequences: Sequence[ObservationSequence]) -> np.ndarray:
    return np.concatenate([s.values[s.valid] for s in sequences], axis=0)


def floor_covariance(cov: np.ndarray, min_variance: float):
    """Clamp eigenvalues at min_variance; returns (covariance, floor_hit)"""
    cov = 0.5 * (cov + cov.T)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    hit = bool(np.any(eigenvalues < min_variance))
    if not hit:
        return cov, False
    clipped = np.maximum(eigenvalues, min_variance)
    floored = (eigenvectors * clipped) @ eigenvectors.T
    return 0.5 * (floored + floored.T), True


def restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(restart)]))


def initialize(sequences: Sequence[ObservationSequence], n_states: int, seed: int,
               restart: int = 0, min_variance: float = EmConfig.min_variance) -> HmmParams:
    """
    Quantile-based starting point
    Speed means at the (k-0.5)/K quantiles, pooled covariance, sticky transitions;
    restarts after the first jitter the means by up to half a pooled standard deviation
    """
    x = pooled_observations(sequences)
    n_dims = x.shape[1]

    means = np.empty((n_states, n_dims))
    if n_states == 1:
        means[0] = x.mean(axis=0)
    else:
        levels = (np.arange(n_states) + 0.5) / n_states
        means[:, 0] = np.quantile(x[:, 0], levels)
        if n_dims > 1:
            means[:, 1:] = x[:, 1:].mean(axis=0)

    pooled_cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    pooled_cov, _ = floor_covariance(pooled_cov, min_variance)
    covs = np.repeat(pooled_cov[None], n_states, axis=0)

    if restart > 0:
        rng = restart_rng(seed, restart)
        pooled_sd = np.sqrt(np.diag(pooled_cov))
        means = means + rng.uniform(-0.5, 0.5, size=means.shape) * pooled_sd

    if n_states == 1:
        transmat = np.ones((1, 1))
    else:
        transmat = np.full((n_states, n_states), 0.2 / (n_states - 1))
        np.fill_diagonal(transmat, 0.8)
    pi = np.full(n_states, 1.0 / n_states)

    return HmmParams(pi=pi, transmat=transmat, means=means, covs=covs)


def reestimate_chain(gamma: np.ndarray, xi_sum: np.ndarray, previous_transmat: np.ndarray):
    """Initial distribution from per-sequence first posteriors, rows of the transition matrix from xi"""
    pi = gamma[:, 0].sum(axis=0)
    pi = pi / pi.sum()

    transmat = previous_transmat.copy()
    row_sums = xi_sum.sum(axis=1)
    for i, total in enumerate(row_sums):
        if total > MIN_COMPONENT_WEIGHT:
            transmat[i] = xi_sum[i] / total
    transmat = transmat / transmat.sum(axis=1, keepdims=True)
    return pi, transmat


def gaussian_m_step(batch: SequenceBatch, gamma: np.ndarray, xi_sum: np.ndarray,
                    params: HmmParams, min_variance: float):
    """Weighted means and floored covariances per state; returns (params, floor_hit)"""
    weights = gamma * batch.valid[..., None]
    flat_w = weights.reshape(-1, params.n_states)
    flat_x = batch.values.reshape(-1, batch.n_dims)
    totals = flat_w.sum(axis=0)

    means = params.means.copy()
    covs = params.covs.copy()
    degenerate = False
    for k in range(params.n_states):
        if totals[k] <= MIN_COMPONENT_WEIGHT:
            degenerate = True
            continue
        means[k] = flat_w[:, k] @ flat_x / totals[k]
        centred = flat_x - means[k]
        scatter = (centred * flat_w[:, k, None]).T @ centred / totals[k]
        covs[k], hit = floor_covariance(scatter, min_variance)
        degenerate = degenerate or hit

    pi, transmat = reestimate_chain(gamma, xi_sum, params.transmat)
    return HmmParams(pi=pi, transmat=transmat, means=means, covs=covs), degenerate


@dataclass
class _RunResult:
    params: Optional[Any]
    log_likelihood: float
    iterations: int
    converged: bool
    history: List[float]
    degenerate: bool
    gamma: Optional[np.ndarray] = None


def _e_step(batch: SequenceBatch, params):
    return forward_backward_batch(params.log_emissions(batch), batch.lengths, params.pi, params.transmat)


def _run_em(batch: SequenceBatch, params, config: EmConfig, m_step: Callable) -> _RunResult:
    history: List[float] = []
    floor_streak = 0
    iterations = 0
    converged = False

    posteriors = _e_step(batch, params)
    for _ in range(config.max_iter):
        log_lik = posteriors.log_likelihood
        if not np.isfinite(log_lik):
            return _RunResult(None, math.nan, iterations, False, history, True)
        history.append(log_lik)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= config.tol * abs(history[-2]):
            converged = True
            break

        params, floor_hit = m_step(batch, posteriors, params)
        iterations += 1
        floor_streak = floor_streak + 1 if floor_hit else 0
        if floor_streak > DEGENERATE_PATIENCE:
            return _RunResult(None, math.nan, iterations, False, history, True)

        posteriors = _e_step(batch, params)
    else:
        log_lik = posteriors.log_likelihood
        if not np.isfinite(log_lik):
            return _RunResult(None, math.nan, iterations, False, history, True)
        history.append(log_lik)

    return _RunResult(params, history[-1], iterations, converged, history, False, posteriors.gamma)


def _partial_score(run: _RunResult) -> float:
    """Last recorded log-likelihood of a run that stopped early"""
    return run.history[-1] if run.history else -math.inf


def fit_with_restarts(sequences: Sequence[ObservationSequence], n_states: int, config: EmConfig,
                      make_start: Callable[[int], Any], m_step: Callable, min_observations: int,
                      kind: str = "dmkmg") -> FittedModel:
    """
    Shared EM driver: runs config.n_restarts fits from make_start(restart)
    and keeps the best non-degenerate run by final log-likelihood
    """
    if not sequences:
        return FittedModel.failed(SEQUENCE_TOO_SHORT, kind=kind)

    batch = SequenceBatch(sequences)
    n_obs = int(batch.valid.sum())
    if n_obs < min_observations:
        logger.debug(f"{kind} fit skipped: {n_obs} observations below floor {min_observations} (K={n_states})")
        return FittedModel.failed(SEQUENCE_TOO_SHORT, kind=kind, n_observations=n_obs)

    best: Optional[_RunResult] = None
    best_restart = 0
    best_degenerate: Optional[_RunResult] = None
    for restart in range(config.n_restarts):
        run = _run_em(batch, make_start(restart), config, m_step)
        if run.degenerate:
            logger.debug(f"{kind} restart {restart}: degenerate after {run.iterations} iterations")
            if best_degenerate is None or _partial_score(run) > _partial_score(best_degenerate):
                best_degenerate = run
            continue
        logger.debug(f"{kind} restart {restart}: logL={run.log_likelihood:.6f} after {run.iterations} iterations")
        if best is None or run.log_likelihood > best.log_likelihood:
            best = run
            best_restart = restart

    if best is None:
        logger.warning(f"{kind} fit failed: all {config.n_restarts} restarts degenerate (K={n_states})")
        return FittedModel.failed(ALL_RESTARTS_DEGENERATE, kind=kind, n_observations=n_obs,
                                  history=best_degenerate.history, iterations=best_degenerate.iterations)

    return FittedModel(
        params=best.params,
        log_likelihood=best.log_likelihood,
        iterations=best.iterations,
        converged=best.converged,
        posteriors=batch.unpad(best.gamma),
        history=best.history,
        n_observations=n_obs,
        restart=best_restart,
        kind=kind,
    )


def em_fit(sequences: Sequence[ObservationSequence], n_states: int,
           config: Optional[EmConfig] = None, seed: Optional[int] = None) -> FittedModel:
    """
    Baum-Welch over one or more sequences sharing a parameter set
    Returns the best of n_restarts runs by final log-likelihood
    """
    config = config or EmConfig()
    seed = config.seed if seed is None else seed
    if n_states < 1:
        raise ValueError(f"number of states must be >= 1, got {n_states}")
    n_dims = sequences[0].n_dims if sequences else 1

    def make_start(restart: int) -> HmmParams:
        return initialize(sequences, n_states, seed, restart, config.min_variance)

    def m_step(batch: SequenceBatch, posteriors, params: HmmParams):
        return gaussian_m_step(batch, posteriors.gamma, posteriors.xi_sum, params, config.min_variance)

    return fit_with_restarts(sequences, n_states, config, make_start, m_step,
                             identifiability_floor(n_states, n_dims), kind="dmkmg")
