#!/usr/bin/env python3
"""
Fleet simulator for trawlwatch
Generates synthetic VMS trips with known activities from a scenario.
Every trip is driven by its own generator spawned from the master seed.
"""

import logging
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Dict, IO, List, Optional, Tuple, Union

import numpy as np

from ..errors import ScenarioError
from ..tracking.activity import ActivitySequence, write_truth_csv
from ..tracking.kinematics import KM_PER_NAUTICAL_MILE, destination_point, wrap_angle
from ..tracking.vms_reader import Ping, Trip, write_vms_csv
from .scenarios import AR1, Scenario

logger = logging.getLogger(__name__)


@dataclass
class SimulatedTrack:
    """Sampled per-step quantities of one trip, before positions are integrated"""
    states: np.ndarray          # state index per step
    speed: np.ndarray           # knots
    heading: np.ndarray         # degrees [0, 360), heading of each step
    turn: np.ndarray            # degrees, heading change after each step
    dt_seconds: np.ndarray      # whole seconds


@dataclass
class SimulatedFleet:
    trips: List[Trip]
    truth: Dict[Tuple[str, str], ActivitySequence]

    @property
    def n_steps(self) -> int:
        return sum(t.n_intervals for t in self.trips)

    def write(self, pings_dest: Union[str, IO], truth_dest: Union[str, IO]):
        write_vms_csv(self.trips, pings_dest)
        write_truth_csv(self.truth, truth_dest)


def sample_states(scn: Scenario, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """State path of the scenario's Markov chain"""
    cumulative_initial = np.cumsum(scn.initial_array)
    cumulative_rows = np.cumsum(scn.transition_array, axis=1)
    last = scn.n_states - 1
    uniforms = rng.random(n_steps)

    states = np.empty(n_steps, dtype=int)
    states[0] = min(int(np.searchsorted(cumulative_initial, uniforms[0], side="right")), last)
    for t in range(1, n_steps):
        row = cumulative_rows[states[t - 1]]
        states[t] = min(int(np.searchsorted(row, uniforms[t], side="right")), last)
    return states


def _gaussian_kinematics(scn: Scenario, states: np.ndarray, rng: np.random.Generator):
    means = np.array([s.speed_mean for s in scn.states])[states]
    sds = np.sqrt(np.array([s.speed_variance for s in scn.states]))[states]
    turn_sds = np.array([s.turn_sd for s in scn.states])[states]
    speed = np.abs(means + sds * rng.standard_normal(states.size))
    turn = wrap_angle(turn_sds * rng.standard_normal(states.size))
    return speed, np.atleast_1d(turn)


def _ar1_kinematics(scn: Scenario, states: np.ndarray, rng: np.random.Generator):
    """Persistence and rotational speed as state-switching AR(1); the first step is stationary"""
    means = np.array([[s.speed_mean, s.rotational_mean] for s in scn.states])
    sds = np.sqrt(np.array([[s.speed_variance, s.rotational_variance] for s in scn.states]))
    rhos = np.array([s.rho for s in scn.states])
    noise = rng.standard_normal((states.size, 2))

    x = np.empty((states.size, 2))
    k = states[0]
    x[0] = means[k] + sds[k] / math.sqrt(1.0 - rhos[k] ** 2) * noise[0]
    for t in range(1, states.size):
        k = states[t]
        x[t] = means[k] + rhos[k] * (x[t - 1] - means[k]) + sds[k] * noise[t]

    speed = np.hypot(x[:, 0], x[:, 1])
    turn = np.degrees(np.arctan2(x[:, 1], x[:, 0]))
    return speed, np.atleast_1d(wrap_angle(turn))


def sample_track(scn: Scenario, rng: np.random.Generator, n_steps: Optional[int] = None) -> SimulatedTrack:
    if n_steps is None:
        lo, hi = scn.trip_steps
        n_steps = int(rng.integers(lo, hi + 1))
    states = sample_states(scn, n_steps, rng)
    if scn.emission == AR1:
        speed, turn = _ar1_kinematics(scn, states, rng)
    else:
        speed, turn = _gaussian_kinematics(scn, states, rng)

    heading = np.empty(n_steps)
    heading[0] = rng.uniform(0.0, 360.0)
    for t in range(1, n_steps):
        heading[t] = (heading[t - 1] + turn[t - 1]) % 360.0

    interval = scn.ping_interval_hours * 3600.0
    jitter = scn.ping_jitter_minutes * 60.0
    dt = interval + (rng.uniform(-jitter, jitter, n_steps) if jitter > 0 else np.zeros(n_steps))
    dt_seconds = np.maximum(np.round(dt), 1.0)
    return SimulatedTrack(states=states, speed=speed, heading=heading, turn=turn, dt_seconds=dt_seconds)


def _parse_start(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


def track_to_trip(track: SimulatedTrack, harbour: Tuple[float, float], start: datetime,
                  vessel_id: str, trip_id: str) -> Trip:
    """Integrate positions on the sphere from the harbour"""
    lat, lon = harbour
    timestamp = start
    pings = []
    for t in range(track.speed.size):
        pings.append(Ping(
            vessel_id=vessel_id,
            trip_id=trip_id,
            timestamp=timestamp,
            lat=lat,
            lon=lon,
            reported_speed=round(float(track.speed[t]), 1),
            reported_heading=round(float(track.heading[t]), 1) % 360.0,
        ))
        hours = track.dt_seconds[t] / 3600.0
        lat, lon = destination_point(lat, lon, track.heading[t], track.speed[t] * KM_PER_NAUTICAL_MILE * hours)
        timestamp = timestamp + timedelta(seconds=float(track.dt_seconds[t]))
    pings.append(Ping(vessel_id=vessel_id, trip_id=trip_id, timestamp=timestamp, lat=lat, lon=lon))
    return Trip(vessel_id=vessel_id, trip_id=trip_id, pings=tuple(pings))


def simulate_trip(scn: Scenario, seed, vessel_id: str = "V001", trip_id: str = "V001-T001",
                  start: Optional[datetime] = None, n_steps: Optional[int] = None) -> Tuple[Trip, ActivitySequence]:
    """One trip and its true activity per interval; identical for identical seeds"""
    scn.validate()
    rng = np.random.default_rng(seed)
    track = sample_track(scn, rng, n_steps)
    trip = track_to_trip(track, scn.harbour, start or _parse_start(scn.start_time), vessel_id, trip_id)
    truth = scn.activities()[track.states]
    return trip, truth


def simulate_fleet(scn: Scenario, n_vessels: int, trips_per_vessel: int, seed: int) -> SimulatedFleet:
    """n_vessels x trips_per_vessel independent trips, consecutive trips of a vessel separated in time"""
    if n_vessels < 1 or trips_per_vessel < 1:
        raise ScenarioError(f"vessel and trip counts must be >= 1, got {n_vessels} and {trips_per_vessel}")
    scn.validate()
    children = np.random.SeedSequence(int(seed)).spawn(n_vessels * trips_per_vessel)
    first_start = _parse_start(scn.start_time)

    trips: List[Trip] = []
    truth: Dict[Tuple[str, str], ActivitySequence] = {}
    for v in range(n_vessels):
        vessel_id = f"V{v + 1:03d}"
        start = first_start
        for j in range(trips_per_vessel):
            trip_id = f"{vessel_id}-T{j + 1:03d}"
            trip, states = simulate_trip(scn, children[v * trips_per_vessel + j], vessel_id, trip_id, start)
            trips.append(trip)
            truth[trip.key] = states
            start = trip.pings[-1].timestamp + timedelta(hours=scn.trip_gap_hours)

    fleet = SimulatedFleet(trips=trips, truth=truth)
    logger.info(f"Simulated {len(trips)} trips ({fleet.n_steps} steps) from scenario '{scn.name}'")
    return fleet


def transition_frequencies(states: np.ndarray, n_states: int) -> np.ndarray:
    """Empirical transition matrix of a state path"""
    counts = np.zeros((n_states, n_states))
    np.add.at(counts, (states[:-1], states[1:]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros(counts.shape), where=totals > 0)
