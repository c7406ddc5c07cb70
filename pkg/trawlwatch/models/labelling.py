#!/usr/bin/env python3
"""
Component labelling for trawlwatch
Maps fitted Gaussian components to Fishing/Steaming after estimation.
The Fishing set is the component combination whose assigned speeds have a
variance below the low-speed component of a 2-component reference fit,
closest in mean to that reference.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ..errors import LabellingError
from ..tracking.activity import Activity, ActivitySequence
from .em import FittedModel
from .gaussian_hmm import UNESTIMATED_STATE, ObservationSequence, StateSequence, decode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpeedReference:
    """Mean and population variance of the speeds assigned to the low-speed reference component"""
    mean: float
    variance: float
    component: int


@dataclass(frozen=True)
class LabelMap:
    """Activity per component index"""
    activities: Dict[int, Activity]
    reference: Optional[SpeedReference]
    chosen_subset: Tuple[int, ...]
    fallback: bool = False

    @property
    def n_components(self) -> int:
        return len(self.activities)

    def fishing_components(self) -> Tuple[int, ...]:
        return tuple(k for k, a in sorted(self.activities.items()) if a == Activity.FISHING)


def _assigned_speeds(states: Sequence[StateSequence], sequences: Sequence[ObservationSequence]):
    """Flatten decoded states and speeds over the valid steps of all sequences"""
    all_states = []
    all_speeds = []
    for decoded, obs in zip(states, sequences):
        mask = obs.valid & (decoded.states != UNESTIMATED_STATE)
        all_states.append(decoded.states[mask])
        all_speeds.append(obs.values[mask, 0])
    if not all_states:
        return np.array([], dtype=int), np.array([])
    return np.concatenate(all_states), np.concatenate(all_speeds)


def subset_statistics(states: np.ndarray, speeds: np.ndarray, subset: Sequence[int]):
    """Empirical mean and population variance of speeds at steps assigned to subset; None if empty"""
    selected = speeds[np.isin(states, list(subset))]
    if selected.size == 0:
        return None
    return float(selected.mean()), float(selected.var())


def reference_from_assignment(states: np.ndarray, speeds: np.ndarray, speed_means: np.ndarray) -> SpeedReference:
    low = int(np.argmin(speed_means))
    stats = subset_statistics(states, speeds, [low])
    if stats is None:
        raise LabellingError("empty reference component")
    return SpeedReference(mean=stats[0], variance=stats[1], component=low)


def low_speed_reference(model2: FittedModel, sequences: Sequence[ObservationSequence],
                        states: Optional[Sequence[StateSequence]] = None) -> SpeedReference:
    """Mean and variance of the speeds Viterbi-assigned to the slower component of a 2-state fit"""
    if not model2.ok or model2.n_states != 2:
        raise LabellingError("reference model must be a successful 2-component fit")
    if states is None:
        states = decode(model2.params, sequences, "viterbi")
    flat_states, flat_speeds = _assigned_speeds(states, sequences)
    return reference_from_assignment(flat_states, flat_speeds, model2.params.speed_means())


def choose_fishing_subset(states: np.ndarray, speeds: np.ndarray, n_components: int,
                          reference: SpeedReference, speed_means: np.ndarray) -> Tuple[Tuple[int, ...], bool]:
    """
    Enumerate non-empty proper component subsets, smaller subsets first and
    lexicographically within a size; keep the first with the smallest mean gap
    among those reducing the reference variance
    Returns (subset, fallback_used)
    """
    best_subset = None
    best_gap = np.inf
    for size in range(1, n_components):
        for subset in itertools.combinations(range(n_components), size):
            stats = subset_statistics(states, speeds, subset)
            if stats is None:
                continue
            mean, variance = stats
            if variance >= reference.variance:
                continue
            gap = abs(mean - reference.mean)
            if gap < best_gap:
                best_gap = gap
                best_subset = subset

    if best_subset is None:
        return (int(np.argmin(speed_means)),), True
    return best_subset, False


def label_components(model_k: FittedModel, model2: FittedModel, sequences: Sequence[ObservationSequence],
                     states_k: Optional[Sequence[StateSequence]] = None,
                     reference: Optional[SpeedReference] = None) -> LabelMap:
    """Label the components of a K-state fit as Fishing or Steaming"""
    if not model_k.ok:
        raise LabellingError(f"cannot label a failed fit: {model_k.failure}")
    n_components = model_k.n_states
    if n_components == 1:
        raise LabellingError("cannot label a single-component model")

    if reference is None:
        reference = low_speed_reference(model2, sequences)
    if states_k is None:
        states_k = decode(model_k.params, sequences, "viterbi")

    flat_states, flat_speeds = _assigned_speeds(states_k, sequences)
    speed_means = model_k.params.speed_means()
    if n_components == 2:
        # the reference is the low-speed component of this very fit
        subset, fallback = (int(np.argmin(speed_means)),), False
    else:
        subset, fallback = choose_fishing_subset(flat_states, flat_speeds, n_components, reference, speed_means)

    if fallback:
        logger.info(f"No component subset reduces the reference variance {reference.variance:.4f}; "
                    f"labelling component {subset[0] + 1} as Fishing")

    activities = {
        k: Activity.FISHING if k in subset else Activity.STEAMING
        for k in range(n_components)
    }
    return LabelMap(activities=activities, reference=reference, chosen_subset=tuple(subset), fallback=fallback)


def lowest_mean_labels(speed_means: np.ndarray) -> LabelMap:
    """Fishing is the single component with the lowest speed mean"""
    low = int(np.argmin(speed_means))
    activities = {k: Activity.FISHING if k == low else Activity.STEAMING for k in range(len(speed_means))}
    return LabelMap(activities=activities, reference=None, chosen_subset=(low,))


def apply_labels(states: StateSequence, labels: LabelMap) -> ActivitySequence:
    """Substitute activities for component indices; unestimated steps pass through"""
    codes = np.asarray(states.states if isinstance(states, StateSequence) else states, dtype=int)
    activity = np.full(codes.shape, int(Activity.UNESTIMATED), dtype=np.int8)
    for index in np.unique(codes):
        if index == UNESTIMATED_STATE:
            continue
        if int(index) not in labels.activities:
            raise LabellingError(f"unknown component index {int(index) + 1}")
        activity[codes == index] = int(labels.activities[int(index)])
    return activity

