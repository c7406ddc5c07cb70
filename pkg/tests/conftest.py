#!/usr/bin/env python3
"""Shared fixtures for the trawlwatch tests"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from trawlwatch.models.em import EmConfig
from trawlwatch.simulation.scenarios import DMKMG2
from trawlwatch.simulation.simulator import simulate_fleet


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch):
    """Keep TRAWLWATCH_* variables of the calling shell out of the tests"""
    for name in list(os.environ):
        if name.startswith("TRAWLWATCH_"):
            monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20090301)


@pytest.fixture
def fast_em():
    return EmConfig(max_iter=200, tol=1e-6, n_restarts=2, min_variance=1e-4, seed=0)


@pytest.fixture(scope="session")
def small_fleet():
    """Four short dmkmg2 trips with their true activities"""
    scn = DMKMG2.with_trip_steps(60, 80)
    return simulate_fleet(scn, n_vessels=2, trips_per_vessel=2, seed=11)
