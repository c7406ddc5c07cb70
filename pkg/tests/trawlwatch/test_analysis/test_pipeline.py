#!/usr/bin/env python3
"""Tests for grouping units, per-unit fitting and classification with saved models"""

from dataclasses import replace

import numpy as np
import pytest

from trawlwatch.analysis.evaluation import run_comparison
import trawlwatch.analysis.pipeline as pipeline
from trawlwatch.analysis.pipeline import (
    LABELLING_FALLBACK,
    LABELLING_LOWEST,
    LABELLING_VARIANCE,
    GroupingMode,
    MethodSpec,
    classify_unit,
    fit_all,
    group_trips,
    prepare_trip,
    run_units,
)
from trawlwatch.config.run_config import TrajectoryConfig
from trawlwatch.errors import ModelFileError
from trawlwatch.models.em import ALL_RESTARTS_DEGENERATE, FittedModel, em_fit
from trawlwatch.models.model_io import load_model, save_model
from trawlwatch.models.thresholds import ThresholdConfig
from trawlwatch.simulation.scenarios import DMKMG2, DMKMG3
from trawlwatch.simulation.simulator import simulate_fleet

from ..helpers import equator_track


def prepared(trips):
    return [prepare_trip(trip, TrajectoryConfig()) for trip in trips]


def _square(x):
    return x * x


class TestGrouping:
    def test_modes(self, small_fleet):
        trips = small_fleet.trips
        assert list(group_trips(trips, GroupingMode.ALL)) == [(None, None)]
        assert list(group_trips(trips, GroupingMode.VESSEL)) == [("V001", None), ("V002", None)]
        assert len(group_trips(trips, GroupingMode.TRIP)) == 4

    @pytest.mark.parametrize("name,mode", [
        ("AllData", GroupingMode.ALL), ("per-vessel", GroupingMode.VESSEL), ("PerTrip", GroupingMode.TRIP),
    ])
    def test_mode_names(self, name, mode):
        assert GroupingMode.from_name(name) is mode

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            GroupingMode.from_name("fleet")


class TestMethodSpec:
    def test_labels(self):
        assert MethodSpec(k=3, dimension="speed+angular").label == "dmkmg:speed+angular"
        assert MethodSpec(name="dmarp").k_column == "2"
        assert MethodSpec(name="threshold").k_column == ""

    @pytest.mark.parametrize("kwargs", [{"name": "kmeans"}, {"k": 1}, {"dimension": "heading"}])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            MethodSpec(**kwargs)


def test_short_trip_is_left_unestimated():
    prep = prepare_trip(equator_track(2), TrajectoryConfig())
    assert prep.kinematics is None
    assert "too short" in prep.failure


def test_trip_grouping_on_one_trip_equals_all_data(small_fleet, fast_em):
    one = prepared(small_fleet.trips[:1])
    spec = MethodSpec(k=2)
    per_trip = fit_all(one, spec, GroupingMode.TRIP, fast_em, seed=5)
    all_data = fit_all(one, spec, GroupingMode.ALL, fast_em, seed=5)
    key = small_fleet.trips[0].key
    np.testing.assert_array_equal(per_trip[0].activities[key], all_data[0].activities[key])
    assert per_trip[0].artifact.diagnostics["log_likelihood"] == all_data[0].artifact.diagnostics["log_likelihood"]


def test_results_do_not_depend_on_job_count(small_fleet, fast_em):
    prep = prepared(small_fleet.trips)
    serial = fit_all(prep, MethodSpec(k=2), GroupingMode.TRIP, fast_em, seed=1, jobs=1)
    pooled = fit_all(prep, MethodSpec(k=2), GroupingMode.TRIP, fast_em, seed=1, jobs=2)
    for a, b in zip(serial, pooled):
        assert a.key == b.key
        for key in a.activities:
            np.testing.assert_array_equal(a.activities[key], b.activities[key])


def test_run_units_keeps_order():
    assert run_units([1, 2, 3, 4], jobs=2, worker=_square) == [1, 4, 9, 16]


def test_shortened_trips_account_for_the_unestimated_share(fast_em):
    fleet = simulate_fleet(DMKMG2.with_trip_steps(60, 80), n_vessels=4, trips_per_vessel=5, seed=21)
    trips, truth = list(fleet.trips), dict(fleet.truth)
    shortened = 0
    for i in range(0, 20, 4):
        trip = trips[i]
        trips[i] = replace(trip, pings=trip.pings[:6])
        truth[trip.key] = truth[trip.key][:5]
        shortened += 5

    table = run_comparison(trips, truth, [MethodSpec(k=2)], GroupingMode.TRIP, fast_em)
    report = table.rows[0].report
    total = sum(t.n_intervals for t in trips)
    assert report.n_unestimated == shortened
    assert report.unestimated == pytest.approx(100.0 * shortened / total)


def test_threshold_method(small_fleet, fast_em):
    prep = prepared(small_fleet.trips)
    manual = fit_all(prep, MethodSpec(name="threshold", thresholds=ThresholdConfig(1.0, 5.5)),
                     GroupingMode.ALL, fast_em, seed=0)
    assert manual[0].ok
    assert manual[0].artifact.params == ThresholdConfig(1.0, 5.5)

    calibrated = fit_all(prep, MethodSpec(name="threshold"), GroupingMode.TRIP, fast_em, seed=0)
    assert all(not unit.ok for unit in calibrated)
    assert all(np.all(a == -1) for unit in calibrated for a in unit.activities.values())


def test_classify_with_fitted_model_reproduces_fit(small_fleet, fast_em):
    prep = prepared(small_fleet.trips)
    unit = fit_all(prep, MethodSpec(k=2), GroupingMode.ALL, fast_em, seed=0)[0]
    activities, components = classify_unit(unit.artifact, prep)
    for key, expected in unit.activities.items():
        np.testing.assert_array_equal(activities[key], expected)
        assert components[key].shape == expected.shape


def test_classify_without_model_is_unestimated(small_fleet):
    prep = prepared(small_fleet.trips[:1])
    activities, _ = classify_unit(None, prep)
    assert np.all(activities[prep[0].key] == -1)


def test_classify_dimension_mismatch(small_fleet, fast_em):
    prep = prepared(small_fleet.trips)
    unit = fit_all(prep, MethodSpec(k=2), GroupingMode.ALL, fast_em, seed=0)[0]
    with pytest.raises(ModelFileError, match="dimension"):
        classify_unit(unit.artifact, prep, dimension="speed+angular")


def test_dmarp_method(small_fleet, fast_em):
    prep = prepared(small_fleet.trips)
    unit = fit_all(prep, MethodSpec(name="dmarp"), GroupingMode.ALL, fast_em, seed=0)[0]
    assert unit.ok
    assert unit.artifact.labels.n_components == 2
    assert "nonstationary" in unit.artifact.diagnostics
    assert unit.artifact.diagnostics["labelling"] == LABELLING_LOWEST


class TestLabellingRoute:
    @pytest.fixture
    def three_state_trips(self):
        fleet = simulate_fleet(DMKMG3.with_trip_steps(150, 150), n_vessels=1, trips_per_vessel=2, seed=21)
        return prepared(fleet.trips)

    def test_variance_reduction_is_recorded(self, three_state_trips, fast_em):
        unit = fit_all(three_state_trips, MethodSpec(k=3), GroupingMode.ALL, fast_em, seed=0)[0]
        assert unit.ok
        assert unit.artifact.diagnostics["labelling"] == LABELLING_VARIANCE
        assert "labelling_reason" not in unit.artifact.diagnostics

    def test_failed_reference_fit_is_recorded_in_the_model_file(self, three_state_trips, fast_em,
                                                                 monkeypatch, tmp_path):
        def without_reference(sequences, n_states, config=None, seed=None):
            if n_states == 2:
                return FittedModel.failed(ALL_RESTARTS_DEGENERATE)
            return em_fit(sequences, n_states, config, seed)

        monkeypatch.setattr(pipeline, "em_fit", without_reference)
        unit = fit_all(three_state_trips, MethodSpec(k=3), GroupingMode.ALL, fast_em, seed=0)[0]
        assert unit.ok
        diagnostics = unit.artifact.diagnostics
        assert diagnostics["labelling"] == LABELLING_FALLBACK
        assert ALL_RESTARTS_DEGENERATE in diagnostics["labelling_reason"]
        assert unit.artifact.labels.fishing_components() == (int(np.argmin(unit.artifact.params.speed_means())),)

        path = tmp_path / "all.model.yaml"
        save_model(unit.artifact, path)
        assert load_model(path).diagnostics["labelling"] == LABELLING_FALLBACK
