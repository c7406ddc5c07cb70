#!/usr/bin/env python3
"""
Shared builders and brute-force oracles for the trawlwatch tests
The oracles enumerate every state path, so keep K**T small.
"""

import itertools
from datetime import datetime, timedelta, timezone
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from trawlwatch.models.gaussian_hmm import HmmParams
from trawlwatch.tracking.vms_reader import Ping, Trip

START = datetime(2009, 3, 1, 6, 0, 0, tzinfo=timezone.utc)


def make_trip(positions: Sequence[Tuple[float, float]], hours: Optional[Sequence[float]] = None,
              vessel_id: str = "V1", trip_id: str = "T1", start: datetime = START) -> Trip:
    """Trip through positions; hours are the intervals between pings (1 h each by default)"""
    if hours is None:
        hours = [1.0] * (len(positions) - 1)
    offsets = np.concatenate([[0.0], np.cumsum(hours)])
    pings = tuple(
        Ping(vessel_id=vessel_id, trip_id=trip_id, timestamp=start + timedelta(hours=float(h)), lat=lat, lon=lon)
        for (lat, lon), h in zip(positions, offsets)
    )
    return Trip(vessel_id=vessel_id, trip_id=trip_id, pings=pings)


def equator_track(n_pings: int, step_deg: float = 0.1, **kwargs) -> Trip:
    """Eastward track along the equator"""
    return make_trip([(0.0, i * step_deg) for i in range(n_pings)], **kwargs)


def random_params(rng: np.random.Generator, n_states: int, n_dims: int) -> HmmParams:
    pi = rng.dirichlet(np.ones(n_states))
    transmat = rng.dirichlet(np.ones(n_states), size=n_states)
    means = rng.normal(0.0, 2.0, size=(n_states, n_dims))
    covs = []
    for _ in range(n_states):
        a = rng.normal(size=(n_dims, n_dims))
        covs.append(a @ a.T + 0.5 * np.eye(n_dims))
    return HmmParams(pi=pi, transmat=transmat, means=means, covs=np.array(covs))


def emission_table(values: np.ndarray, valid: np.ndarray, params: HmmParams) -> np.ndarray:
    """log b_k(x_t) from scipy's multivariate normal, 0 on invalid steps"""
    values = np.atleast_2d(np.asarray(values, dtype=float).reshape(len(valid), -1))
    table = np.zeros((len(valid), params.n_states))
    for t in range(len(valid)):
        if not valid[t]:
            continue
        for k in range(params.n_states):
            table[t, k] = stats.multivariate_normal.logpdf(values[t], mean=params.means[k], cov=params.covs[k])
    return table


def path_log_probabilities(log_b: np.ndarray, params: HmmParams):
    """Joint log p(x, s) of every state path, with the paths in lexicographic order"""
    n_steps, n_states = log_b.shape
    log_pi = np.log(params.pi)
    log_a = np.log(params.transmat)
    paths = list(itertools.product(range(n_states), repeat=n_steps))
    scores = np.empty(len(paths))
    for i, path in enumerate(paths):
        score = log_pi[path[0]] + log_b[0, path[0]]
        for t in range(1, n_steps):
            score += log_a[path[t - 1], path[t]] + log_b[t, path[t]]
        scores[i] = score
    return paths, scores


def brute_force(values, valid, params: HmmParams):
    """Exhaustive log-likelihood, posteriors, best path and its joint log-probability"""
    valid = np.asarray(valid, dtype=bool)
    log_b = emission_table(values, valid, params)
    paths, scores = path_log_probabilities(log_b, params)
    log_lik = logsumexp(scores)

    n_steps, n_states = log_b.shape
    gamma = np.zeros((n_steps, n_states))
    weights = np.exp(scores - log_lik)
    for path, w in zip(paths, weights):
        gamma[np.arange(n_steps), list(path)] += w

    best = int(np.argmax(scores))
    return log_lik, gamma, np.array(paths[best]), float(scores[best])


def best_subset_by_enumeration(states: np.ndarray, speeds: np.ndarray, n_components: int,
                               ref_mean: float, ref_variance: float) -> Optional[Tuple[int, ...]]:
    """Every non-empty proper subset scored directly; None when no subset reduces the variance"""
    candidates: List[Tuple[float, int, Tuple[int, ...]]] = []
    for size in range(1, n_components):
        for subset in itertools.combinations(range(n_components), size):
            selected = speeds[np.isin(states, subset)]
            if selected.size and selected.var() < ref_variance:
                candidates.append((abs(selected.mean() - ref_mean), size, subset))
    if not candidates:
        return None
    return min(candidates)[2]
