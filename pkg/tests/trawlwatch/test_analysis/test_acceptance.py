#!/usr/bin/env python3
"""Long-running checks of method ordering, K selection and pipeline throughput"""

import importlib.util
from pathlib import Path

import pytest

from trawlwatch.analysis.evaluation import run_comparison, sweep_k
from trawlwatch.analysis.pipeline import GroupingMode, MethodSpec
from trawlwatch.models.em import EmConfig
from trawlwatch.simulation.scenarios import DMKMG3
from trawlwatch.simulation.simulator import simulate_fleet

pytestmark = pytest.mark.slow

PROJECT_ROOT = Path(__file__).resolve().parents[3]


def test_three_component_model_dominates_other_methods():
    fleet = simulate_fleet(DMKMG3, n_vessels=20, trips_per_vessel=10, seed=2009)
    specs = [MethodSpec(k=3), MethodSpec(name="threshold"), MethodSpec(name="dmarp")]
    rows = {}
    for grouping in GroupingMode:
        table = run_comparison(fleet.trips, fleet.truth, specs, grouping, EmConfig(), jobs=4)
        for row in table.rows:
            rows[(row.method, grouping)] = row.report

    for grouping in GroupingMode:
        gaussian = rows[("dmkmg", grouping)]
        assert gaussian.global_match >= rows[("threshold", grouping)].global_match
        assert gaussian.global_match >= rows[("dmarp", grouping)].global_match

    per_trip = rows[("dmkmg", GroupingMode.TRIP)].adjusted_global_match
    assert per_trip >= rows[("threshold", GroupingMode.TRIP)].adjusted_global_match + 5.0


def test_k_sweep_prefers_three_components():
    hits = 0
    for seed in range(10):
        fleet = simulate_fleet(DMKMG3, n_vessels=5, trips_per_vessel=4, seed=100 + seed)
        result = sweep_k(fleet.trips, fleet.truth, range(2, 7), GroupingMode.ALL, EmConfig(), seed=seed, jobs=4)
        hits += result.best_k == 3
    assert hits >= 8


def test_full_scale_pipeline_within_budget(tmp_path):
    spec = importlib.util.spec_from_file_location("run_scale_check", PROJECT_ROOT / "scripts" / "run_scale_check.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    results = module.run_scale_check(workdir=str(tmp_path))
    assert results["n_trips"] == 131 * 49
    assert results["total_s"] <= module.TIME_BUDGET_S
