#!/usr/bin/env python3
"""
Dependent mixture of autoregressive processes for trawlwatch
Two-state HMM whose emissions follow a state-specific AR(1) Gaussian process
on the persistence and rotational speed components of the velocity.

State k emits x_t given x_{t-1} from N(m_k + rho_k (x_{t-1} - m_k), Sigma_k).
The first step of a sequence, and any step whose predecessor is invalid, use
the stationary law N(m_k, Sigma_k / (1 - rho_i rho_j)).
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from ..errors import DegenerateCovarianceError, ModelParameterError, TripError
from ..tracking.kinematics import KinematicSeries, wrap_angle
from .em import EmConfig, FittedModel, fit_with_restarts, floor_covariance, initialize, reestimate_chain
from .gaussian_hmm import (
    HmmParams, ObservationSequence, SequenceBatch, _cholesky, _gaussian_logpdf_rows, validate_chain,
)

logger = logging.getLogger(__name__)

DMARP_DIMS = 2
RHO_BOUND = 1.0 - 1e-6
NONSTATIONARY_MARGIN = 1e-4
OBSERVATIONS_PER_PARAMETER = 2


@dataclass(frozen=True)
class PolarSpeed:
    """Persistence (vp) and rotational (vr) speed per step, knots"""
    vessel_id: str
    trip_id: str
    vp: np.ndarray
    vr: np.ndarray
    valid: np.ndarray

    @property
    def n_steps(self) -> int:
        return int(self.vp.shape[0])

    def to_observations(self) -> ObservationSequence:
        return ObservationSequence(values=np.column_stack([self.vp, self.vr]), valid=self.valid)


def polar_speeds(kin: KinematicSeries) -> PolarSpeed:
    """
    Project each step's speed on the current heading and on its normal toward the next heading
    The last step has no next heading and is flagged invalid
    """
    if kin.n_steps < 2:
        raise TripError(f"polar speeds need at least 2 steps, {kin.vessel_id}/{kin.trip_id} has {kin.n_steps}")

    phi = np.zeros(kin.n_steps)
    phi[:-1] = np.radians(wrap_angle(kin.heading[1:] - kin.heading[:-1]))
    vp = kin.speed * np.cos(phi)
    vr = kin.speed * np.sin(phi)
    valid = kin.omega_valid.copy()
    valid[-1] = False
    return PolarSpeed(vessel_id=kin.vessel_id, trip_id=kin.trip_id, vp=vp, vr=vr, valid=valid)


def dmarp_free_parameters(n_states: int, per_coordinate_rho: bool = False, fix_rho: bool = False) -> int:
    d = DMARP_DIMS
    n_rho = 0 if fix_rho else (d if per_coordinate_rho else 1)
    return n_states * (d + d * (d + 1) // 2 + n_rho) + n_states * (n_states - 1) + (n_states - 1)


def stationary_covariance(cov: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Covariance of the stationary AR(1) law: Sigma_ij / (1 - rho_i rho_j)"""
    return cov / (1.0 - np.outer(rho, rho))


@dataclass(frozen=True)
class DmarpParams:
    """Chain parameters plus per-state mean, AR coefficients and innovation covariance"""
    pi: np.ndarray
    transmat: np.ndarray
    means: np.ndarray
    rhos: np.ndarray
    covs: np.ndarray
    per_coordinate_rho: bool = False
    rho_fixed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        object.__setattr__(self, "transmat", np.atleast_2d(np.asarray(self.transmat, dtype=float)))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        rhos = np.asarray(self.rhos, dtype=float)
        if rhos.ndim == 1:
            rhos = np.repeat(rhos[:, None], DMARP_DIMS, axis=1)
        object.__setattr__(self, "rhos", rhos)
        object.__setattr__(self, "covs", np.asarray(self.covs, dtype=float))

    @classmethod
    def from_hmm(cls, params: HmmParams, rho=0.0, per_coordinate_rho: bool = False,
                 rho_fixed: bool = False) -> "DmarpParams":
        rhos = np.broadcast_to(np.asarray(rho, dtype=float), (params.n_states, DMARP_DIMS)).copy()
        return cls(pi=params.pi, transmat=params.transmat, means=params.means, rhos=rhos, covs=params.covs,
                   per_coordinate_rho=per_coordinate_rho, rho_fixed=rho_fixed)

    @property
    def n_states(self) -> int:
        return int(self.pi.shape[0])

    @property
    def n_dims(self) -> int:
        return int(self.means.shape[1])

    def validate(self):
        validate_chain(self.pi, self.transmat)
        k = self.n_states
        if self.means.shape != (k, DMARP_DIMS) or self.covs.shape != (k, DMARP_DIMS, DMARP_DIMS):
            raise ModelParameterError(
                f"component shapes {self.means.shape}/{self.covs.shape} do not match K={k}, d={DMARP_DIMS}")
        if self.rhos.shape != (k, DMARP_DIMS):
            raise ModelParameterError(f"AR coefficient shape {self.rhos.shape} does not match K={k}")
        if np.any(np.abs(self.rhos) >= 1.0):
            raise ModelParameterError(f"AR coefficients must satisfy |rho| < 1, got {self.rhos.tolist()}")
        for cov in self.covs:
            _cholesky(cov)

    def n_free_parameters(self) -> int:
        return dmarp_free_parameters(self.n_states, self.per_coordinate_rho, self.rho_fixed)

    def speed_means(self) -> np.ndarray:
        return self.means[:, 0].copy()

    def log_emissions(self, batch: SequenceBatch) -> np.ndarray:
        """log density of each step under each state, 0 where the step is invalid"""
        if batch.n_dims != self.n_dims:
            raise ModelParameterError(
                f"observation dimension {batch.n_dims} does not match model dimension {self.n_dims}")
        lagged = LaggedObservations(batch)
        log_b = np.empty((lagged.x.shape[0], self.n_states))
        for k in range(self.n_states):
            log_b[:, k] = _state_logpdf(lagged.x, lagged.prev, lagged.conditional,
                                        self.means[k], self.covs[k], self.rhos[k])
        log_b = log_b.reshape(batch.n_sequences, batch.max_length, self.n_states)
        log_b[~batch.valid] = 0.0
        return log_b


class LaggedObservations:
    """Flattened steps of a batch with their predecessors and which steps condition on them"""

    def __init__(self, batch: SequenceBatch):
        prev_valid = np.zeros_like(batch.valid)
        prev_valid[:, 1:] = batch.valid[:, :-1]
        prev = np.zeros_like(batch.values)
        prev[:, 1:] = batch.values[:, :-1]

        self.x = batch.values.reshape(-1, batch.n_dims)
        self.prev = prev.reshape(-1, batch.n_dims)
        self.valid = batch.valid.reshape(-1)
        self.conditional = (batch.valid & prev_valid).reshape(-1)
        self.stationary = self.valid & ~self.conditional


def _state_logpdf(x: np.ndarray, prev: np.ndarray, conditional: np.ndarray,
                  mean: np.ndarray, cov: np.ndarray, rho: np.ndarray) -> np.ndarray:
    zero = np.zeros(mean.shape[0])
    resid_cond = x - mean - rho * (prev - mean)
    resid_stat = x - mean
    log_cond = _gaussian_logpdf_rows(resid_cond, zero, _cholesky(cov))
    log_stat = _gaussian_logpdf_rows(resid_stat, zero, _cholesky(stationary_covariance(cov, rho)))
    return np.where(conditional, log_cond, log_stat)


class _StateObjective:
    """Expected complete-data log-likelihood of one state's emissions"""

    def __init__(self, lagged: LaggedObservations, weights: np.ndarray):
        cond = lagged.conditional & (weights > 0)
        stat = lagged.stationary & (weights > 0)
        self.xc = lagged.x[cond]
        self.pc = lagged.prev[cond]
        self.wc = weights[cond]
        self.xs = lagged.x[stat]
        self.ws = weights[stat]

    @property
    def total_weight(self) -> float:
        return float(self.wc.sum() + self.ws.sum())

    def value(self, mean: np.ndarray, cov: np.ndarray, rho: np.ndarray) -> float:
        zero = np.zeros(mean.shape[0])
        try:
            chol = _cholesky(cov)
            chol_stat = _cholesky(stationary_covariance(cov, rho))
        except DegenerateCovarianceError:
            return -np.inf
        total = 0.0
        if self.wc.size:
            resid = self.xc - mean - rho * (self.pc - mean)
            total += float(self.wc @ _gaussian_logpdf_rows(resid, zero, chol))
        if self.ws.size:
            total += float(self.ws @ _gaussian_logpdf_rows(self.xs - mean, zero, chol_stat))
        return total

    def best_mean(self, cov: np.ndarray, rho: np.ndarray) -> np.ndarray:
        """Exact maximiser over the mean for fixed covariance and AR coefficients"""
        precision = np.linalg.inv(cov)
        precision_stat = np.linalg.inv(stationary_covariance(cov, rho))
        shrink = np.diag(1.0 - rho)
        lhs = self.wc.sum() * shrink @ precision @ shrink + self.ws.sum() * precision_stat
        rhs = shrink @ precision @ (self.wc @ (self.xc - rho * self.pc)) + precision_stat @ (self.ws @ self.xs)
        return np.linalg.solve(lhs, rhs)

    def candidate_covariance(self, mean: np.ndarray, rho: np.ndarray) -> np.ndarray:
        """Weighted residual scatter with stationary steps rescaled by (1 - rho_i rho_j)"""
        resid = self.xc - mean - rho * (self.pc - mean)
        scatter = (resid * self.wc[:, None]).T @ resid
        centred = self.xs - mean
        scatter += ((centred * self.ws[:, None]).T @ centred) * (1.0 - np.outer(rho, rho))
        return scatter / self.total_weight


def _optimise_rho(objective: _StateObjective, mean: np.ndarray, cov: np.ndarray, rho: np.ndarray,
                  per_coordinate: bool) -> np.ndarray:
    if not per_coordinate:
        result = optimize.minimize_scalar(
            lambda r: -objective.value(mean, cov, np.full(DMARP_DIMS, r)),
            bounds=(-RHO_BOUND, RHO_BOUND), method="bounded", options={"xatol": 1e-8})
        return np.full(DMARP_DIMS, float(result.x))

    rho = rho.copy()
    for i in range(DMARP_DIMS):
        def negative(r, i=i):
            trial = rho.copy()
            trial[i] = r
            return -objective.value(mean, cov, trial)
        result = optimize.minimize_scalar(negative, bounds=(-RHO_BOUND, RHO_BOUND), method="bounded",
                                          options={"xatol": 1e-8})
        if -result.fun >= objective.value(mean, cov, rho):
            rho[i] = float(result.x)
    return rho


def dmarp_m_step(batch: SequenceBatch, gamma: np.ndarray, xi_sum: np.ndarray, params: DmarpParams,
                 min_variance: float, lagged: Optional[LaggedObservations] = None) -> Tuple[DmarpParams, bool]:
    """
    Block-wise M-step: mean, covariance and AR coefficients of each state in turn,
    keeping an update only when it does not lower the state's objective
    """
    lagged = lagged or LaggedObservations(batch)
    flat_gamma = (gamma * batch.valid[..., None]).reshape(-1, params.n_states)

    means = params.means.copy()
    covs = params.covs.copy()
    rhos = params.rhos.copy()
    floor_hit = False
    for k in range(params.n_states):
        objective = _StateObjective(lagged, flat_gamma[:, k])
        if objective.total_weight <= 1e-10:
            floor_hit = True
            continue
        mean, cov, rho = means[k], covs[k], rhos[k]
        current = objective.value(mean, cov, rho)

        trial = objective.best_mean(cov, rho)
        score = objective.value(trial, cov, rho)
        if score >= current:
            mean, current = trial, score

        trial, hit = floor_covariance(objective.candidate_covariance(mean, rho), min_variance)
        floor_hit = floor_hit or hit
        score = objective.value(mean, trial, rho)
        if score >= current:
            cov, current = trial, score

        if not params.rho_fixed:
            trial = _optimise_rho(objective, mean, cov, rho, params.per_coordinate_rho)
            score = objective.value(mean, cov, trial)
            if score >= current:
                rho, current = trial, score

        means[k], covs[k], rhos[k] = mean, cov, rho

    pi, transmat = reestimate_chain(gamma, xi_sum, params.transmat)
    return dataclasses.replace(params, pi=pi, transmat=transmat, means=means, covs=covs, rhos=rhos), floor_hit


def dmarp_fit(sequences: Sequence[ObservationSequence], config: Optional[EmConfig] = None,
              seed: Optional[int] = None, n_states: int = 2, per_coordinate_rho: bool = False,
              fix_rho: Optional[float] = None) -> FittedModel:
    """
    EM fit of the autoregressive mixture on (vp, vr) sequences
    fix_rho pins every AR coefficient; at 0 the fit coincides with a Gaussian HMM fit
    """
    config = config or EmConfig()
    seed = config.seed if seed is None else seed
    if n_states < 1:
        raise ValueError(f"number of states must be >= 1, got {n_states}")
    if fix_rho is not None and not abs(fix_rho) < 1:
        raise ValueError(f"fixed AR coefficient must satisfy |rho| < 1, got {fix_rho}")
    if sequences and sequences[0].n_dims != DMARP_DIMS:
        raise ModelParameterError(f"autoregressive mixture needs {DMARP_DIMS}-d (vp, vr) observations")

    start_rho = 0.0 if fix_rho is None else float(fix_rho)
    lagged_cache = {}

    def make_start(restart: int) -> DmarpParams:
        hmm = initialize(sequences, n_states, seed, restart, config.min_variance)
        return DmarpParams.from_hmm(hmm, start_rho, per_coordinate_rho, rho_fixed=fix_rho is not None)

    def m_step(batch: SequenceBatch, posteriors, params: DmarpParams):
        if id(batch) not in lagged_cache:
            lagged_cache.clear()
            lagged_cache[id(batch)] = LaggedObservations(batch)
        return dmarp_m_step(batch, posteriors.gamma, posteriors.xi_sum, params, config.min_variance,
                            lagged_cache[id(batch)])

    floor = OBSERVATIONS_PER_PARAMETER * dmarp_free_parameters(n_states, per_coordinate_rho, fix_rho is not None)
    fit = fit_with_restarts(sequences, n_states, config, make_start, m_step, floor, kind="dmarp")
    if not fit.ok:
        return fit

    nonstationary = bool(np.any(np.abs(fit.params.rhos) >= RHO_BOUND - NONSTATIONARY_MARGIN))
    if nonstationary:
        logger.warning(f"AR coefficient reached the stationarity bound: {fit.params.rhos[:, 0].tolist()}")
    logger.debug(f"dmarp fit: logL={fit.log_likelihood:.6f}, rho={fit.params.rhos.tolist()}")
    return dataclasses.replace(fit, nonstationary=nonstationary)
