#!/usr/bin/env python3
"""
Simulation scenarios for trawlwatch
Generative settings for synthetic fleets: a Markov chain over behavioural
states, each with its speed and turning law, plus ping timing and trip lengths.
Scenarios are read from YAML; three are built in.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import yaml

from ..errors import ScenarioError
from ..tracking.activity import Activity

logger = logging.getLogger(__name__)

GAUSSIAN = "gaussian"
AR1 = "ar1"
EMISSION_KINDS = (GAUSSIAN, AR1)
STOCHASTIC_TOLERANCE = 1e-10


@dataclass(frozen=True)
class StateLaw:
    """
    Kinematics of one behavioural state
    gaussian: speed ~ |N(speed_mean, speed_variance)|, turn ~ wrapped N(0, turn_sd)
    ar1: persistence and rotational speed follow AR(1) around (speed_mean, rotational_mean)
    with innovation variances speed_variance and rotational_variance
    """
    activity: Activity
    speed_mean: float
    speed_variance: float
    turn_sd: float = 30.0
    rho: float = 0.0
    rotational_mean: float = 0.0
    rotational_variance: float = 1.0

    def validate(self, index: int):
        if self.activity == Activity.UNESTIMATED:
            raise ScenarioError(f"state {index + 1}: activity must be fishing or steaming")
        if self.speed_variance <= 0 or self.rotational_variance <= 0:
            raise ScenarioError(f"state {index + 1}: variances must be positive")
        if self.turn_sd < 0:
            raise ScenarioError(f"state {index + 1}: turn_sd must be >= 0")
        if not abs(self.rho) < 1:
            raise ScenarioError(f"state {index + 1}: AR coefficient must satisfy |rho| < 1, got {self.rho}")


@dataclass(frozen=True)
class Scenario:
    name: str
    emission: str
    initial: Tuple[float, ...]
    transitions: Tuple[Tuple[float, ...], ...]
    states: Tuple[StateLaw, ...]
    ping_interval_hours: float = 1.0
    ping_jitter_minutes: float = 0.0
    trip_steps: Tuple[int, int] = (48, 120)
    harbour: Tuple[float, float] = (57.7, 11.9)
    trip_gap_hours: float = 48.0
    start_time: str = "2009-01-01T00:00:00Z"

    def __post_init__(self):
        self.validate()

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def initial_array(self) -> np.ndarray:
        return np.asarray(self.initial, dtype=float)

    @property
    def transition_array(self) -> np.ndarray:
        return np.asarray(self.transitions, dtype=float)

    def activities(self) -> np.ndarray:
        return np.array([int(s.activity) for s in self.states], dtype=np.int8)

    def validate(self):
        k = len(self.states)
        if k < 1:
            raise ScenarioError(f"scenario '{self.name}' has no states")
        if self.emission not in EMISSION_KINDS:
            raise ScenarioError(f"unknown emission kind '{self.emission}' (expected {' or '.join(EMISSION_KINDS)})")
        initial = np.asarray(self.initial, dtype=float)
        transitions = np.asarray(self.transitions, dtype=float)
        if initial.shape != (k,) or np.any(initial < 0) or abs(initial.sum() - 1) > STOCHASTIC_TOLERANCE:
            raise ScenarioError(f"initial distribution must be a probability vector over {k} states")
        if (transitions.shape != (k, k) or np.any(transitions < 0)
                or np.any(np.abs(transitions.sum(axis=1) - 1) > STOCHASTIC_TOLERANCE)):
            raise ScenarioError(f"transition matrix must be a {k}x{k} stochastic matrix")
        for i, state in enumerate(self.states):
            state.validate(i)
        if self.ping_interval_hours <= 0:
            raise ScenarioError("ping interval must be positive")
        if self.ping_jitter_minutes < 0 or self.ping_jitter_minutes / 60.0 >= self.ping_interval_hours:
            raise ScenarioError("ping jitter must be >= 0 and shorter than the ping interval")
        lo, hi = self.trip_steps
        if not (2 <= lo <= hi):
            raise ScenarioError(f"trip length range must satisfy 2 <= min <= max, got {self.trip_steps}")
        lat, lon = self.harbour
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            raise ScenarioError(f"harbour position out of range: {self.harbour}")

    def with_harbour(self, lat: float, lon: float) -> "Scenario":
        return replace(self, harbour=(float(lat), float(lon)))

    def with_trip_steps(self, lo: int, hi: int) -> "Scenario":
        return replace(self, trip_steps=(int(lo), int(hi)))


def scenario_from_dict(data: Dict[str, Any], name: Optional[str] = None) -> Scenario:
    """Build a scenario from its YAML mapping"""
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must hold a mapping")
    try:
        states = tuple(
            StateLaw(
                activity=Activity.from_label(str(s["activity"])),
                speed_mean=float(s["speed_mean"]),
                speed_variance=float(s["speed_variance"]),
                turn_sd=float(s.get("turn_sd", 30.0)),
                rho=float(s.get("rho", 0.0)),
                rotational_mean=float(s.get("rotational_mean", 0.0)),
                rotational_variance=float(s.get("rotational_variance", 1.0)),
            )
            for s in data["states"]
        )
        ping = data.get("ping_interval", {}) or {}
        harbour = data.get("harbour", {}) or {}
        trip_steps = data.get("trip_steps", [48, 120])
        return Scenario(
            name=str(name or data.get("name", "custom")),
            emission=str(data.get("emission", GAUSSIAN)),
            initial=tuple(float(p) for p in data["initial"]),
            transitions=tuple(tuple(float(p) for p in row) for row in data["transitions"]),
            states=states,
            ping_interval_hours=float(ping.get("hours", 1.0)),
            ping_jitter_minutes=float(ping.get("jitter_minutes", 0.0)),
            trip_steps=(int(trip_steps[0]), int(trip_steps[1])),
            harbour=(float(harbour.get("lat", 57.7)), float(harbour.get("lon", 11.9))),
            trip_gap_hours=float(data.get("trip_gap_hours", 48.0)),
            start_time=str(data.get("start_time", "2009-01-01T00:00:00Z")),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ScenarioError(f"invalid scenario: {e}")


def scenario_to_dict(scn: Scenario) -> Dict[str, Any]:
    return {
        "name": scn.name,
        "emission": scn.emission,
        "initial": list(scn.initial),
        "transitions": [list(row) for row in scn.transitions],
        "states": [
            {
                "activity": s.activity.label,
                "speed_mean": s.speed_mean,
                "speed_variance": s.speed_variance,
                "turn_sd": s.turn_sd,
                "rho": s.rho,
                "rotational_mean": s.rotational_mean,
                "rotational_variance": s.rotational_variance,
            }
            for s in scn.states
        ],
        "ping_interval": {"hours": scn.ping_interval_hours, "jitter_minutes": scn.ping_jitter_minutes},
        "trip_steps": list(scn.trip_steps),
        "harbour": {"lat": scn.harbour[0], "lon": scn.harbour[1]},
        "trip_gap_hours": scn.trip_gap_hours,
        "start_time": scn.start_time,
    }


# Two well-separated states: slow erratic fishing, fast directed steaming
DMKMG2 = Scenario(
    name="dmkmg2",
    emission=GAUSSIAN,
    initial=(0.5, 0.5),
    transitions=((0.9, 0.1), (0.2, 0.8)),
    states=(
        StateLaw(Activity.FISHING, speed_mean=3.0, speed_variance=1.0, turn_sd=60.0),
        StateLaw(Activity.STEAMING, speed_mean=9.0, speed_variance=1.0, turn_sd=10.0),
    ),
)

# Fishing plus two steaming regimes, one of them slow
DMKMG3 = Scenario(
    name="dmkmg3",
    emission=GAUSSIAN,
    initial=(0.2, 0.2, 0.6),
    transitions=(
        (0.90, 0.06, 0.04),
        (0.15, 0.75, 0.10),
        (0.08, 0.07, 0.85),
    ),
    states=(
        StateLaw(Activity.FISHING, speed_mean=3.0, speed_variance=0.36, turn_sd=60.0),
        StateLaw(Activity.STEAMING, speed_mean=5.5, speed_variance=0.49, turn_sd=25.0),
        StateLaw(Activity.STEAMING, speed_mean=10.0, speed_variance=1.0, turn_sd=8.0),
    ),
)

# Autoregressive persistence/rotational speed; fishing is the strongly correlated state
DMARP2 = Scenario(
    name="dmarp2",
    emission=AR1,
    initial=(0.5, 0.5),
    transitions=((0.9, 0.1), (0.2, 0.8)),
    states=(
        StateLaw(Activity.FISHING, speed_mean=2.5, speed_variance=0.5, rho=0.6,
                 rotational_mean=0.0, rotational_variance=0.5),
        StateLaw(Activity.STEAMING, speed_mean=9.0, speed_variance=1.0, rho=0.2,
                 rotational_mean=0.0, rotational_variance=0.3),
    ),
)

BUILTIN_SCENARIOS: Dict[str, Scenario] = {s.name: s for s in (DMKMG2, DMKMG3, DMARP2)}


def load_scenario(source: Union[str, Path]) -> Scenario:
    """A built-in scenario by name, or a scenario YAML file"""
    if str(source) in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[str(source)]
    path = Path(source)
    if not path.exists():
        raise ScenarioError(
            f"unknown scenario '{source}' (built-in: {', '.join(sorted(BUILTIN_SCENARIOS))}; or a YAML file)")
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ScenarioError(f"cannot read scenario file {path}: {e}")
    scn = scenario_from_dict(data, name=data.get("name", path.stem) if isinstance(data, dict) else None)
    logger.info(f"Loaded scenario '{scn.name}' from {path}")
    return scn
