#!/usr/bin/env python3
"""
Fit-and-label pipeline for trawlwatch
Groups trips into fitting units, fits one sub-model per unit and turns the
decoded states into per-step activities. Shared by the fit, classify and
evaluate commands.
"""

import enum
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config.run_config import TrajectoryConfig
from ..errors import LabellingError, ModelFileError, ThresholdEstimationError, TripError
from ..models.dmarp import dmarp_fit, polar_speeds
from ..models.em import SEQUENCE_TOO_SHORT, EmConfig, FittedModel, em_fit
from ..models.gaussian_hmm import DIMENSIONS, SPEED, ObservationSequence, StateSequence, decode
from ..models.labelling import apply_labels, label_components, low_speed_reference, lowest_mean_labels
from ..models.model_io import ModelArtifact
from ..models.thresholds import ThresholdConfig, estimate_thresholds, threshold_classify
from ..tracking.activity import ActivitySequence, unestimated
from ..tracking.kinematics import KinematicSeries, derive_kinematics
from ..tracking.vms_reader import Trip

logger = logging.getLogger(__name__)

METHODS = ("dmkmg", "threshold", "dmarp")
LABELLING_VARIANCE = "variance-reduction"
LABELLING_FALLBACK = "lowest-mean fallback"
LABELLING_LOWEST = "lowest-mean"
TripKey = Tuple[str, str]
UnitKey = Tuple[Optional[str], Optional[str]]


class GroupingMode(str, enum.Enum):
    """One parameter set for all data, per vessel, or per trip"""
    ALL = "all"
    VESSEL = "vessel"
    TRIP = "trip"

    @classmethod
    def from_name(cls, name: str) -> "GroupingMode":
        aliases = {"all": cls.ALL, "alldata": cls.ALL, "vessel": cls.VESSEL, "pervessel": cls.VESSEL,
                   "trip": cls.TRIP, "pertrip": cls.TRIP}
        try:
            return aliases[str(name).strip().lower().replace("_", "").replace("-", "")]
        except KeyError:
            raise ValueError(f"Unknown grouping mode: '{name}'")

    def unit_key(self, vessel_id: str, trip_id: str) -> UnitKey:
        if self is GroupingMode.ALL:
            return (None, None)
        if self is GroupingMode.VESSEL:
            return (vessel_id, None)
        return (vessel_id, trip_id)


def group_trips(trips: Sequence, mode: GroupingMode) -> Dict[UnitKey, List]:
    """Partition trips (anything with a (vessel_id, trip_id) key) into fitting units, in order of first appearance"""
    units: Dict[UnitKey, List] = {}
    for trip in trips:
        units.setdefault(mode.unit_key(*trip.key), []).append(trip)
    return units


@dataclass(frozen=True)
class MethodSpec:
    """A sub-model: method, number of components, observation dimension and decoder"""
    name: str = "dmkmg"
    k: int = 3
    dimension: str = SPEED
    decoder: str = "viterbi"
    per_coordinate_rho: bool = False
    thresholds: Optional[ThresholdConfig] = None

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"Unknown method: '{self.name}' (expected one of {', '.join(METHODS)})")
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"Unknown dimension variant: {self.dimension}")
        if self.name == "dmkmg" and self.k < 2:
            raise ValueError(f"K must be >= 2 to label components, got {self.k}")

    @property
    def n_states(self) -> int:
        return 2 if self.name == "dmarp" else self.k

    @property
    def label(self) -> str:
        if self.name == "dmkmg" and self.dimension != SPEED:
            return f"{self.name}:{self.dimension}"
        return self.name

    @property
    def k_column(self) -> str:
        return str(self.k) if self.name == "dmkmg" else ("2" if self.name == "dmarp" else "")


@dataclass
class PreparedTrip:
    """A trip with its kinematics, or the reason they could not be derived"""
    trip: Trip
    kinematics: Optional[KinematicSeries]
    failure: Optional[str] = None

    @property
    def key(self) -> TripKey:
        return self.trip.key

    @property
    def n_steps(self) -> int:
        return self.trip.n_intervals

    def observations(self, spec: MethodSpec) -> Optional[ObservationSequence]:
        if self.kinematics is None:
            return None
        if spec.name == "dmarp":
            obs = polar_speeds(self.kinematics).to_observations()
        elif spec.name == "threshold":
            obs = ObservationSequence.from_kinematics(self.kinematics, SPEED)
        else:
            obs = ObservationSequence.from_kinematics(self.kinematics, spec.dimension)
        return obs if obs.n_valid > 0 else None


def prepare_trip(trip: Trip, trajectory: TrajectoryConfig) -> PreparedTrip:
    try:
        kin = derive_kinematics(trip, trajectory.max_gap_hours, trajectory.use_reported_speed)
    except TripError as e:
        logger.debug(f"Trip {trip.vessel_id}/{trip.trip_id} left unestimated: {e}")
        return PreparedTrip(trip=trip, kinematics=None, failure=str(e))
    return PreparedTrip(trip=trip, kinematics=kin)


@dataclass
class UnitResult:
    """Model, per-trip activities and component indices of one fitting unit"""
    key: UnitKey
    artifact: ModelArtifact
    activities: Dict[TripKey, ActivitySequence]
    components: Dict[TripKey, np.ndarray]
    wall_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.artifact.ok


def _unestimated_outputs(prepared: Sequence[PreparedTrip]):
    activities = {p.key: unestimated(p.n_steps) for p in prepared}
    components = {p.key: np.full(p.n_steps, -1, dtype=int) for p in prepared}
    return activities, components


def _decode_unit(artifact: ModelArtifact, usable: List[Tuple[PreparedTrip, ObservationSequence]],
                 prepared: Sequence[PreparedTrip], decoder: str):
    activities, components = _unestimated_outputs(prepared)
    if not usable:
        return activities, components
    states = decode(artifact.params, [obs for _, obs in usable], decoder)
    for (p, _), decoded in zip(usable, states):
        activities[p.key] = apply_labels(decoded, artifact.labels)
        components[p.key] = decoded.states.copy()
    return activities, components


def _diagnostics(fit: FittedModel) -> Dict:
    diagnostics = {
        "log_likelihood": float(fit.log_likelihood),
        "iterations": int(fit.iterations),
        "converged": bool(fit.converged),
        "n_observations": int(fit.n_observations),
        "restart": int(fit.restart),
    }
    if fit.ok:
        diagnostics["n_free_parameters"] = int(fit.params.n_free_parameters())
        diagnostics["bic"] = float(fit.bic())
        diagnostics["stationary_distribution"] = [float(p) for p in fit.stationary_distribution()]
    if fit.kind == "dmarp":
        diagnostics["nonstationary"] = bool(fit.nonstationary)
    return diagnostics


def _label_dmkmg(fit: FittedModel, seqs: List[ObservationSequence], em_config: EmConfig, seed: int,
                 states_k: List[StateSequence], diagnostics: Dict):
    """Variance-reduction labels; the route taken is recorded in diagnostics"""
    try:
        if fit.n_states == 2:
            reference = low_speed_reference(fit, seqs, states_k)
        else:
            reference_fit = em_fit(seqs, 2, em_config, seed)
            if not reference_fit.ok:
                raise LabellingError(f"2-component reference fit failed: {reference_fit.failure}")
            reference = low_speed_reference(reference_fit, seqs)
        labels = label_components(fit, None, seqs, states_k=states_k, reference=reference)
        diagnostics["labelling"] = LABELLING_VARIANCE
        return labels
    except LabellingError as e:
        logger.warning(f"Variance-reduction labelling unavailable ({e}); lowest-mean component labelled Fishing")
        diagnostics["labelling"] = LABELLING_FALLBACK
        diagnostics["labelling_reason"] = str(e)
        return lowest_mean_labels(fit.params.speed_means())


def fit_unit(key: UnitKey, prepared: Sequence[PreparedTrip], spec: MethodSpec, grouping: GroupingMode,
             em_config: EmConfig, seed: int) -> UnitResult:
    """Fit one sub-model on a grouping unit and label every step of its trips"""
    start = time.perf_counter()
    usable = [(p, obs) for p in prepared if (obs := p.observations(spec)) is not None]
    seqs = [obs for _, obs in usable]
    artifact = ModelArtifact(kind=spec.name, grouping=grouping.value, dimension=spec.dimension,
                             vessel_id=key[0], trip_id=key[1])
    fit: Optional[FittedModel] = None

    if spec.name == "threshold":
        activities, components = _unestimated_outputs(prepared)
        cfg = spec.thresholds
        if cfg is None:
            speeds = np.concatenate([obs.values[obs.valid, 0] for obs in seqs]) if seqs else np.array([])
            try:
                cfg = estimate_thresholds(speeds)
            except ThresholdEstimationError as e:
                artifact.failure = str(e)
        if cfg is not None:
            artifact.params = cfg
            for p, obs in usable:
                activities[p.key] = threshold_classify(obs.values[:, 0], cfg, obs.valid)
        return UnitResult(key, artifact, activities, components, time.perf_counter() - start)

    if not seqs:
        fit = FittedModel.failed(SEQUENCE_TOO_SHORT, kind=spec.name)
    elif spec.name == "dmarp":
        fit = dmarp_fit(seqs, em_config, seed, per_coordinate_rho=spec.per_coordinate_rho)
    else:
        fit = em_fit(seqs, spec.k, em_config, seed)

    artifact.diagnostics = _diagnostics(fit)
    if not fit.ok:
        artifact.failure = fit.failure
        logger.warning(f"Unit {_unit_name(key)}: {spec.label} fit failed ({fit.failure}); steps left unestimated")
        activities, components = _unestimated_outputs(prepared)
        return UnitResult(key, artifact, activities, components, time.perf_counter() - start)

    artifact.params = fit.params
    if spec.name == "dmarp":
        artifact.labels = lowest_mean_labels(fit.params.speed_means())
        artifact.diagnostics["labelling"] = LABELLING_LOWEST
    else:
        states_k = decode(fit.params, seqs, "viterbi")
        artifact.labels = _label_dmkmg(fit, seqs, em_config, seed, states_k, artifact.diagnostics)

    activities, components = _decode_unit(artifact, usable, prepared, spec.decoder)
    logger.info(f"Unit {_unit_name(key)}: {spec.label} logL={fit.log_likelihood:.3f} "
                f"after {fit.iterations} iterations, Fishing components "
                f"{[k + 1 for k in artifact.labels.fishing_components()]}")
    return UnitResult(key, artifact, activities, components, time.perf_counter() - start)


def classify_unit(artifact: Optional[ModelArtifact], prepared: Sequence[PreparedTrip],
                  decoder: str = "viterbi", dimension: Optional[str] = None
                  ) -> Tuple[Dict[TripKey, ActivitySequence], Dict[TripKey, np.ndarray]]:
    """Label trips with a previously fitted unit model; a missing or failed model leaves them unestimated"""
    if artifact is None or not artifact.ok:
        return _unestimated_outputs(prepared)

    if dimension is not None and artifact.kind == "dmkmg" and artifact.dimension != dimension:
        raise ModelFileError(
            f"model dimension '{artifact.dimension}' does not match requested dimension '{dimension}'")
    model_spec = MethodSpec(name=artifact.kind, k=max(2, getattr(artifact.params, "n_states", 2)),
                            dimension=artifact.dimension, decoder=decoder)
    usable = [(p, obs) for p in prepared if (obs := p.observations(model_spec)) is not None]

    if artifact.kind == "threshold":
        activities, components = _unestimated_outputs(prepared)
        for p, obs in usable:
            activities[p.key] = threshold_classify(obs.values[:, 0], artifact.params, obs.valid)
        return activities, components

    if artifact.labels is None:
        raise ModelFileError(f"model for unit {_unit_name(artifact.unit_key)} has no label section")
    return _decode_unit(artifact, usable, prepared, decoder)


def _unit_name(key: UnitKey) -> str:
    parts = [p for p in key if p is not None]
    return "/".join(parts) if parts else "all"


def _fit_unit_task(args) -> UnitResult:
    return fit_unit(*args)


def run_units(tasks: List[tuple], jobs: int = 1, worker: Callable = _fit_unit_task) -> List:
    """Run worker over tasks, in a process pool when jobs > 1; results keep task order"""
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(worker, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def fit_all(prepared: Sequence[PreparedTrip], spec: MethodSpec, grouping: GroupingMode,
            em_config: EmConfig, seed: int, jobs: int = 1) -> List[UnitResult]:
    """Fit every grouping unit of the dataset"""
    units = group_trips(prepared, grouping)
    tasks = [(key, members, spec, grouping, em_config, seed) for key, members in units.items()]
    logger.info(f"Fitting {spec.label} on {len(tasks)} unit(s) ({grouping.value}) with {jobs} job(s)")
    return run_units(tasks, jobs)
