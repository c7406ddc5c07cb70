#!/usr/bin/env python3
"""Tests for variance-reduction component labelling"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trawlwatch.errors import LabellingError
from trawlwatch.models.em import EmConfig, FittedModel, em_fit
from trawlwatch.models.gaussian_hmm import ObservationSequence, StateSequence
from trawlwatch.models.labelling import (
    SpeedReference,
    apply_labels,
    choose_fishing_subset,
    label_components,
    low_speed_reference,
    lowest_mean_labels,
    subset_statistics,
)
from trawlwatch.tracking.activity import Activity

from ..helpers import best_subset_by_enumeration


def constructed_three_component_fit():
    """
    Component 0: mean 2.9, variance 0.5
    Components 0 and 2 together: mean 3.1, variance 0.8
    Component 1: fast steaming
    """
    a = math.sqrt(0.5)
    b = math.sqrt(1.02)
    speeds = np.array([2.9 - a, 2.9 + a, 9.0, 10.0, 3.3 - b, 3.3 + b])
    states = np.array([0, 0, 1, 1, 2, 2])
    return states, speeds


class TestChooseFishingSubset:
    def test_closer_mean_wins_among_variance_reducing_subsets(self):
        states, speeds = constructed_three_component_fit()
        assert subset_statistics(states, speeds, [0]) == pytest.approx((2.9, 0.5))
        assert subset_statistics(states, speeds, [0, 2]) == pytest.approx((3.1, 0.8))

        reference = SpeedReference(mean=3.05, variance=1.0, component=0)
        subset, fallback = choose_fishing_subset(states, speeds, 3, reference, np.array([2.9, 9.5, 3.3]))
        assert subset == (0, 2)
        assert not fallback
        assert best_subset_by_enumeration(states, speeds, 3, 3.05, 1.0) == (0, 2)

    def test_fallback_to_lowest_mean_component(self):
        states = np.array([0, 0, 1, 1])
        speeds = np.array([5.0, 8.0, 1.0, 4.0])
        reference = SpeedReference(mean=3.0, variance=1.0, component=1)
        assert best_subset_by_enumeration(states, speeds, 2, 3.0, 1.0) is None
        subset, fallback = choose_fishing_subset(states, speeds, 2, reference, np.array([6.5, 2.5]))
        assert subset == (1,)
        assert fallback

    def test_ties_go_to_the_smaller_then_lexicographically_first_subset(self):
        states = np.array([0, 0, 1, 1, 2, 2])
        speeds = np.array([3.0, 3.0, 3.0, 3.0, 9.0, 9.0])
        reference = SpeedReference(mean=3.0, variance=1.0, component=0)
        subset, _ = choose_fishing_subset(states, speeds, 3, reference, np.array([3.0, 3.0, 9.0]))
        assert subset == (0,)

    def test_empty_components_are_skipped(self):
        states = np.array([0, 0, 2, 2])
        speeds = np.array([2.5, 3.5, 9.0, 9.2])
        reference = SpeedReference(mean=3.0, variance=1.0, component=0)
        subset, _ = choose_fishing_subset(states, speeds, 3, reference, np.array([3.0, 6.0, 9.1]))
        assert subset == (0,)

    @pytest.mark.property_based
    @given(seed=st.integers(min_value=0, max_value=2 ** 32 - 1), n_components=st.integers(min_value=2, max_value=5))
    @settings(max_examples=100)
    def test_matches_direct_enumeration(self, seed, n_components):
        """The chosen subset is the one a direct scan of all proper subsets finds"""
        rng = np.random.default_rng(seed)
        states = rng.integers(0, n_components, size=40)
        speeds = rng.normal(2.0 + 2.0 * states, 0.3 + rng.random(n_components)[states])
        ref_mean, ref_variance = float(rng.uniform(1, 6)), float(rng.uniform(0.2, 3))
        reference = SpeedReference(mean=ref_mean, variance=ref_variance, component=0)
        means = np.array([speeds[states == k].mean() if np.any(states == k) else np.inf
                          for k in range(n_components)])

        subset, fallback = choose_fishing_subset(states, speeds, n_components, reference, means)
        expected = best_subset_by_enumeration(states, speeds, n_components, ref_mean, ref_variance)
        if expected is None:
            assert fallback and subset == (int(np.argmin(means)),)
        else:
            assert not fallback and subset == expected

    @pytest.mark.property_based
    @given(seed=st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=50)
    def test_fishing_steps_do_not_depend_on_component_order(self, seed):
        """Relabelling the components selects the same steps"""
        rng = np.random.default_rng(seed)
        states = rng.integers(0, 4, size=60)
        speeds = rng.normal(1.5 + 2.0 * states, 0.4 + 0.3 * states)
        reference = SpeedReference(mean=2.5, variance=1.5, component=0)
        means = np.array([speeds[states == k].mean() if np.any(states == k) else np.inf for k in range(4)])
        permutation = rng.permutation(4)

        subset, _ = choose_fishing_subset(states, speeds, 4, reference, means)
        permuted_states = permutation[states]
        permuted_means = np.empty(4)
        permuted_means[permutation] = means
        permuted_subset, _ = choose_fishing_subset(permuted_states, speeds, 4, reference, permuted_means)

        assert np.array_equal(np.isin(states, subset), np.isin(permuted_states, permuted_subset))


class TestLabelComponents:
    @pytest.fixture
    def sequences(self, rng):
        states = (np.arange(200) // 20) % 3
        speeds = np.choose(states, [rng.normal(3.0, 0.6, 200), rng.normal(5.5, 0.7, 200), rng.normal(10.0, 1.0, 200)])
        return [ObservationSequence.from_values(speeds)]

    def test_two_components_label_the_slow_one(self, sequences, fast_em):
        fit = em_fit(sequences, 2, fast_em)
        labels = label_components(fit, fit, sequences)
        assert labels.fishing_components() == (int(np.argmin(fit.params.speed_means())),)
        assert not labels.fallback

    def test_three_components(self, sequences, fast_em):
        fit3 = em_fit(sequences, 3, fast_em)
        fit2 = em_fit(sequences, 2, fast_em)
        labels = label_components(fit3, fit2, sequences)
        slowest = int(np.argmin(fit3.params.speed_means()))
        fastest = int(np.argmax(fit3.params.speed_means()))
        assert slowest in labels.fishing_components()
        assert labels.activities[fastest] == Activity.STEAMING
        assert labels.reference.component == int(np.argmin(fit2.params.speed_means()))

    def test_failed_fit(self, sequences):
        failed = FittedModel.failed("sequence too short")
        with pytest.raises(LabellingError):
            label_components(failed, failed, sequences)

    def test_single_component_cannot_be_labelled(self, sequences, fast_em):
        fit1 = em_fit(sequences, 1, fast_em)
        fit2 = em_fit(sequences, 2, fast_em)
        assert fit1.ok
        with pytest.raises(LabellingError, match="single-component"):
            label_components(fit1, fit2, sequences)

    def test_reference_must_have_two_components(self, sequences, fast_em):
        fit3 = em_fit(sequences, 3, fast_em)
        with pytest.raises(LabellingError):
            low_speed_reference(fit3, sequences)


def test_lowest_mean_tie_goes_to_lower_index():
    assert lowest_mean_labels(np.array([3.0, 3.0])).fishing_components() == (0,)


def test_apply_labels_passes_unestimated_through():
    labels = lowest_mean_labels(np.array([9.0, 3.0]))
    activity = apply_labels(StateSequence(states=np.array([0, 1, -1, 1])), labels)
    assert list(activity) == [0, 1, -1, 1]


def test_apply_labels_rejects_unknown_component():
    with pytest.raises(LabellingError):
        apply_labels(np.array([0, 2]), lowest_mean_labels(np.array([9.0, 3.0])))


def test_apply_labels_on_fully_unestimated_codes():
    labels = lowest_mean_labels(np.array([9.0, 3.0]))
    activity = apply_labels(np.full(5, -1), labels)
    assert activity.dtype == np.int8
    assert list(activity) == [int(Activity.UNESTIMATED)] * 5
