#!/usr/bin/env python3
"""
Gaussian Hidden Markov Model for trawlwatch
Dependent mixture of K multivariate Gaussians: emission densities,
log-space forward-backward and Viterbi decoding over batches of sequences
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from ..errors import DegenerateCovarianceError, ModelParameterError
from ..tracking.kinematics import KinematicSeries

logger = logging.getLogger(__name__)

UNESTIMATED_STATE = -1
SPEED = "speed"
SPEED_ANGULAR = "speed+angular"
DIMENSIONS = {SPEED: 1, SPEED_ANGULAR: 2}
STOCHASTIC_TOLERANCE = 1e-10

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ObservationSequence:
    """Observation vectors x_1..x_T of constant dimension with validity flags"""
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValueError("observation sequence needs at least one step")
        if valid.shape != (values.shape[0],):
            raise ValueError("validity flags must match the number of steps")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def n_steps(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_dims(self) -> int:
        return int(self.values.shape[1])

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @classmethod
    def from_values(cls, values, valid=None) -> "ObservationSequence":
        values = np.asarray(values, dtype=float)
        if valid is None:
            valid = np.ones(values.shape[0], dtype=bool)
        return cls(values=values, valid=valid)

    @classmethod
    def from_kinematics(cls, kin: KinematicSeries, dimension: str = SPEED) -> "ObservationSequence":
        if dimension == SPEED:
            return cls(values=kin.speed[:, None], valid=kin.valid)
        if dimension == SPEED_ANGULAR:
            return cls(values=np.column_stack([kin.speed, kin.omega]), valid=kin.omega_valid)
        raise ValueError(f"Unknown dimension variant: {dimension}")


class SequenceBatch:
    """Sequences padded to a common length; padding is flagged invalid"""

    def __init__(self, sequences: Sequence[ObservationSequence]):
        if not sequences:
            raise ValueError("no observation sequences")
        dims = {s.n_dims for s in sequences}
        if len(dims) != 1:
            raise ValueError(f"sequences mix dimensions {sorted(dims)}")

        self.n_dims = dims.pop()
        self.lengths = np.array([s.n_steps for s in sequences], dtype=int)
        n_seq = len(sequences)
        t_max = int(self.lengths.max())

        self.values = np.zeros((n_seq, t_max, self.n_dims))
        self.valid = np.zeros((n_seq, t_max), dtype=bool)
        self.in_sequence = np.zeros((n_seq, t_max), dtype=bool)
        for n, seq in enumerate(sequences):
            self.values[n, :seq.n_steps] = seq.values
            self.valid[n, :seq.n_steps] = seq.valid
            self.in_sequence[n, :seq.n_steps] = True

    @property
    def n_sequences(self) -> int:
        return int(self.lengths.shape[0])

    @property
    def max_length(self) -> int:
        return int(self.values.shape[1])

    def unpad(self, array: np.ndarray) -> List[np.ndarray]:
        return [array[n, :length].copy() for n, length in enumerate(self.lengths)]


def _cholesky(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DegenerateCovarianceError("degenerate covariance: not a square matrix")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise DegenerateCovarianceError("degenerate covariance: not symmetric")
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        raise DegenerateCovarianceError()
    if np.any(np.diag(chol) <= 0) or not np.all(np.isfinite(chol)):
        raise DegenerateCovarianceError()
    return chol


def gaussian_logpdf(x, mean, cov) -> float:
    """Exact log density of the multivariate normal N(mean, cov) at x"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    return float(_gaussian_logpdf_rows(x[None, :], mean, _cholesky(cov))[0])


def _gaussian_logpdf_rows(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    d = mean.shape[0]
    z = linalg.solve_triangular(chol, (x - mean).T, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * LOG_2PI + log_det + np.sum(z ** 2, axis=0))


@dataclass(frozen=True)
class HmmParams:
    """Initial distribution, transition matrix and per-state Gaussian components"""
    pi: np.ndarray
    transmat: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        object.__setattr__(self, "transmat", np.atleast_2d(np.asarray(self.transmat, dtype=float)))
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 1:
            covs = covs[:, None, None]
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    @property
    def n_states(self) -> int:
        return int(self.pi.shape[0])

    @property
    def n_dims(self) -> int:
        return int(self.means.shape[1])

    def validate(self):
        """Raise ModelParameterError or DegenerateCovarianceError on invalid parameters"""
        validate_chain(self.pi, self.transmat)
        k, d = self.n_states, self.n_dims
        if self.means.shape != (k, d) or self.covs.shape != (k, d, d):
            raise ModelParameterError(
                f"component shapes {self.means.shape}/{self.covs.shape} do not match K={k}, d={d}")
        for cov in self.covs:
            _cholesky(cov)

    def n_free_parameters(self) -> int:
        k, d = self.n_states, self.n_dims
        return k * (d + d * (d + 1) // 2) + k * (k - 1) + (k - 1)

    def speed_means(self) -> np.ndarray:
        return self.means[:, 0].copy()

    def log_emissions(self, batch: SequenceBatch) -> np.ndarray:
        """log b_k(x_t) for every step, 0 where the step is invalid"""
        if batch.n_dims != self.n_dims:
            raise ModelParameterError(
                f"observation dimension {batch.n_dims} does not match model dimension {self.n_dims}")
        flat = batch.values.reshape(-1, batch.n_dims)
        log_b = np.empty((flat.shape[0], self.n_states))
        for k in range(self.n_states):
            log_b[:, k] = _gaussian_logpdf_rows(flat, self.means[k], _cholesky(self.covs[k]))
        log_b = log_b.reshape(batch.n_sequences, batch.max_length, self.n_states)
        log_b[~batch.valid] = 0.0
        return log_b


def validate_chain(pi: np.ndarray, transmat: np.ndarray):
    """Check that pi and the rows of transmat are probability vectors"""
    k = pi.shape[0]
    if k < 1 or transmat.shape != (k, k):
        raise ModelParameterError(f"transition matrix shape {transmat.shape} does not match K={k}")
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > STOCHASTIC_TOLERANCE:
        raise ModelParameterError(f"initial distribution is not a probability vector: {pi}")
    if np.any(transmat < 0) or np.any(np.abs(transmat.sum(axis=1) - 1.0) > STOCHASTIC_TOLERANCE):
        raise ModelParameterError("transition matrix rows must be probability vectors")


def stationary_distribution(transmat: np.ndarray) -> np.ndarray:
    """Left eigenvector of the transition matrix for eigenvalue 1"""
    eigenvalues, eigenvectors = np.linalg.eig(np.asarray(transmat, dtype=float).T)
    idx = np.argmin(np.abs(eigenvalues - 1.0))
    stationary = np.abs(np.real(eigenvectors[:, idx]))
    return stationary / stationary.sum()


@dataclass
class BatchPosteriors:
    """E-step quantities for a batch of sequences"""
    gamma: np.ndarray              # (N, Tmax, K), zero on padding
    xi_sum: np.ndarray             # (K, K) summed over steps and sequences
    log_likelihoods: np.ndarray    # (N,)
    xi_steps: Optional[np.ndarray] = None

    @property
    def log_likelihood(self) -> float:
        return float(self.log_likelihoods.sum())


def _safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def forward_backward_batch(log_b: np.ndarray, lengths: np.ndarray, pi: np.ndarray,
                           transmat: np.ndarray, keep_xi_steps: bool = False) -> BatchPosteriors:
    """Log-space forward-backward over padded log emissions (N, Tmax, K)"""
    n_seq, t_max, k = log_b.shape
    log_pi = _safe_log(pi)
    log_a = _safe_log(transmat)
    last = np.asarray(lengths) - 1
    rows = np.arange(n_seq)

    with np.errstate(divide="ignore", invalid="ignore"):
        log_alpha = np.empty_like(log_b)
        log_alpha[:, 0] = log_pi + log_b[:, 0]
        for t in range(1, t_max):
            log_alpha[:, t] = logsumexp(log_alpha[:, t - 1, :, None] + log_a[None], axis=1) + log_b[:, t]

        log_lik = logsumexp(log_alpha[rows, last], axis=1)

        log_beta = np.zeros_like(log_b)
        for t in range(t_max - 2, -1, -1):
            following = log_b[:, t + 1] + log_beta[:, t + 1]
            log_beta[:, t] = logsumexp(log_a[None] + following[:, None, :], axis=2)
            log_beta[t >= last, t] = 0.0

        gamma = np.exp(log_alpha + log_beta - log_lik[:, None, None])
        gamma[np.arange(t_max)[None, :] > last[:, None]] = 0.0

        xi_sum = np.zeros((k, k))
        xi_steps = np.zeros((max(t_max - 1, 0), k, k)) if keep_xi_steps else None
        for t in range(t_max - 1):
            active = t < last
            if not active.any():
                break
            following = log_b[active, t + 1] + log_beta[active, t + 1]
            log_xi = (log_alpha[active, t, :, None] + log_a[None] + following[:, None, :]
                      - log_lik[active, None, None])
            xi = np.exp(log_xi)
            xi_sum += xi.sum(axis=0)
            if keep_xi_steps:
                xi_steps[t] = xi[0]

    return BatchPosteriors(gamma=gamma, xi_sum=xi_sum, log_likelihoods=log_lik, xi_steps=xi_steps)


def viterbi_batch(log_b: np.ndarray, lengths: np.ndarray, pi: np.ndarray,
                  transmat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Joint MAP paths over padded log emissions
    Returns states (N, Tmax) with -1 on padding, and each path's log-probability
    """
    n_seq, t_max, k = log_b.shape
    log_pi = _safe_log(pi)
    log_a = _safe_log(transmat)
    last = np.asarray(lengths) - 1
    rows = np.arange(n_seq)

    deltas = np.empty_like(log_b)
    backpointers = np.zeros((n_seq, t_max, k), dtype=int)
    deltas[:, 0] = log_pi + log_b[:, 0]
    for t in range(1, t_max):
        scores = deltas[:, t - 1, :, None] + log_a[None]
        backpointers[:, t] = np.argmax(scores, axis=1)
        deltas[:, t] = np.max(scores, axis=1) + log_b[:, t]

    final = deltas[rows, last]
    best_last = np.argmax(final, axis=1)
    path_log_prob = final[rows, best_last]

    states = np.full((n_seq, t_max), UNESTIMATED_STATE, dtype=int)
    current = best_last.copy()
    for t in range(t_max - 1, -1, -1):
        started = last == t
        current[started] = best_last[started]
        inside = t <= last
        states[inside, t] = current[inside]
        if t > 0:
            current = np.where(inside, backpointers[rows, t, current], current)

    return states, path_log_prob


@dataclass
class Posterior:
    """Posteriors of a single sequence"""
    gamma: np.ndarray
    xi: np.ndarray
    log_likelihood: float


@dataclass(frozen=True)
class StateSequence:
    """Decoded component index per step (UNESTIMATED_STATE where not estimated)"""
    states: np.ndarray
    decoder: str = "viterbi"
    log_probability: Optional[float] = None

    def __len__(self) -> int:
        return int(len(self.states))


def _single_batch(obs: ObservationSequence, params) -> Tuple[SequenceBatch, np.ndarray]:
    params.validate()
    if obs.n_valid == 0:
        raise ModelParameterError("all observations are invalid")
    batch = SequenceBatch([obs])
    return batch, params.log_emissions(batch)


def forward_backward(obs: ObservationSequence, params) -> Posterior:
    """Posteriors gamma, pairwise posteriors xi and log p(x_1:T) of one sequence"""
    batch, log_b = _single_batch(obs, params)
    result = forward_backward_batch(log_b, batch.lengths, params.pi, params.transmat, keep_xi_steps=True)
    return Posterior(
        gamma=result.gamma[0, :obs.n_steps],
        xi=result.xi_steps,
        log_likelihood=float(result.log_likelihoods[0]),
    )


def viterbi(obs: ObservationSequence, params) -> StateSequence:
    """Maximum a posteriori joint state path, ties toward the lower state index"""
    batch, log_b = _single_batch(obs, params)
    states, log_prob = viterbi_batch(log_b, batch.lengths, params.pi, params.transmat)
    return StateSequence(states=states[0, :obs.n_steps], decoder="viterbi",
                         log_probability=float(log_prob[0]))


def decode(params, sequences: Sequence[ObservationSequence], decoder: str = "viterbi") -> List[StateSequence]:
    """Decode several sequences with one parameter set"""
    batch = SequenceBatch(sequences)
    log_b = params.log_emissions(batch)
    if decoder == "viterbi":
        states, log_prob = viterbi_batch(log_b, batch.lengths, params.pi, params.transmat)
        return [
            StateSequence(states=states[n, :length].copy(), decoder="viterbi", log_probability=float(log_prob[n]))
            for n, length in enumerate(batch.lengths)
        ]
    if decoder == "posterior":
        result = forward_backward_batch(log_b, batch.lengths, params.pi, params.transmat)
        return [
            StateSequence(states=np.argmax(gamma, axis=1), decoder="posterior")
            for gamma in batch.unpad(result.gamma)
        ]
    raise ValueError(f"Unknown decoder: {decoder}")
