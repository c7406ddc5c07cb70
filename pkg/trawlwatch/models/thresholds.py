#!/usr/bin/env python3
"""
Speed-threshold classifier for trawlwatch
A step is Fishing when its speed lies within [lo, hi]; the band can be
calibrated from a 3-component Gaussian mixture of the speed histogram.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from ..errors import ThresholdEstimationError
from ..tracking.activity import Activity, ActivitySequence

logger = logging.getLogger(__name__)

MIN_SPEEDS_FOR_CALIBRATION = 100
MIXTURE_COMPONENTS = 3
BAND_WIDTH_SD = 2.0
MIN_MIXTURE_SD = 1e-3


@dataclass(frozen=True)
class ThresholdConfig:
    """Closed speed band in knots labelled Fishing"""
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo < 0:
            raise ValueError(f"lower threshold must be >= 0, got {self.lo}")
        if not self.hi > self.lo:
            raise ValueError(f"upper threshold {self.hi} must exceed lower threshold {self.lo}")


def threshold_classify(speeds, cfg: ThresholdConfig, valid=None) -> ActivitySequence:
    """Fishing iff lo <= v <= hi, Steaming otherwise, Unestimated on invalid steps"""
    speeds = np.asarray(speeds, dtype=float)
    fishing = (speeds >= cfg.lo) & (speeds <= cfg.hi)
    activity = np.where(fishing, int(Activity.FISHING), int(Activity.STEAMING)).astype(np.int8)
    if valid is not None:
        activity[~np.asarray(valid, dtype=bool)] = int(Activity.UNESTIMATED)
    return activity


def estimate_thresholds(speeds, max_iter: int = 500, tol: float = 1e-8) -> ThresholdConfig:
    """
    Fit an independent 3-component Gaussian mixture to speeds by EM
    and return the +/- 2 sd band of the middle component
    """
    speeds = np.asarray(speeds, dtype=float)
    speeds = speeds[np.isfinite(speeds)]
    if speeds.size < MIN_SPEEDS_FOR_CALIBRATION:
        raise ThresholdEstimationError(
            f"threshold calibration needs at least {MIN_SPEEDS_FOR_CALIBRATION} speeds, got {speeds.size}; "
            "set --lo and --hi manually")
    if np.ptp(speeds) == 0:
        raise ThresholdEstimationError("all speeds are identical; set --lo and --hi manually")

    levels = (np.arange(MIXTURE_COMPONENTS) + 0.5) / MIXTURE_COMPONENTS
    mu = np.quantile(speeds, levels)
    sigma = np.full(MIXTURE_COMPONENTS, speeds.std())
    weights = np.full(MIXTURE_COMPONENTS, 1.0 / MIXTURE_COMPONENTS)

    previous = -np.inf
    for iteration in range(max_iter):
        log_joint = np.log(weights) + stats.norm.logpdf(speeds[:, None], loc=mu, scale=sigma)
        log_lik = logsumexp(log_joint, axis=1)
        total = float(log_lik.sum())
        responsibilities = np.exp(log_joint - log_lik[:, None])

        totals = responsibilities.sum(axis=0)
        if np.any(totals <= 1e-10):
            raise ThresholdEstimationError("speed mixture collapsed to an empty component; "
                                           "set --lo and --hi manually")
        weights = totals / speeds.size
        mu = responsibilities.T @ speeds / totals
        sigma = np.sqrt((responsibilities * (speeds[:, None] - mu) ** 2).sum(axis=0) / totals)
        if np.any(sigma < MIN_MIXTURE_SD):
            raise ThresholdEstimationError("speed mixture degenerated to a zero-variance component; "
                                           "set --lo and --hi manually")

        if abs(total - previous) <= tol * abs(total):
            break
        previous = total

    middle = int(np.argsort(mu)[1])
    lo = max(0.0, float(mu[middle] - BAND_WIDTH_SD * sigma[middle]))
    hi = float(mu[middle] + BAND_WIDTH_SD * sigma[middle])
    logger.info(f"Calibrated speed thresholds [{lo:.2f}, {hi:.2f}] knots after {iteration + 1} iterations")
    return ThresholdConfig(lo=lo, hi=hi)
