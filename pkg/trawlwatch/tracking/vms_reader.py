#!/usr/bin/env python3
"""
VMS Reader for trawlwatch
Parses VMS ping CSV files and groups pings into trips
"""

import io
import logging
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Dict, IO, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import TripError, VmsFormatError

logger = logging.getLogger(__name__)

VMS_COLUMNS = ["vessel_id", "trip_id", "timestamp", "lat", "lon", "speed", "heading"]
REQUIRED_COLUMNS = ["vessel_id", "timestamp", "lat", "lon"]
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
DEFAULT_GAP_THRESHOLD_HOURS = 24.0


@dataclass(frozen=True)
class Ping:
    """A single VMS position report"""
    vessel_id: str
    trip_id: Optional[str]
    timestamp: datetime
    lat: float
    lon: float
    reported_speed: Optional[float] = None
    reported_heading: Optional[float] = None

    def __post_init__(self):
        if not (-90 <= self.lat <= 90):
            raise VmsFormatError(f"latitude out of range: {self.lat}", field="lat")
        if not (-180 <= self.lon <= 180):
            raise VmsFormatError(f"longitude out of range: {self.lon}", field="lon")

    @property
    def epoch_seconds(self) -> float:
        return self.timestamp.timestamp()


@dataclass(frozen=True)
class Trip:
    """Time-ordered pings of one vessel between leaving and returning to harbour"""
    vessel_id: str
    trip_id: str
    pings: Tuple[Ping, ...]

    def __post_init__(self):
        if not self.pings:
            raise TripError(f"Trip {self.vessel_id}/{self.trip_id} has no pings")
        for ping in self.pings:
            if ping.vessel_id != self.vessel_id:
                raise TripError(f"Trip {self.vessel_id}/{self.trip_id} contains ping of vessel {ping.vessel_id}")
        times = self.epoch_seconds()
        if np.any(np.diff(times) <= 0):
            raise TripError(f"Trip {self.vessel_id}/{self.trip_id} timestamps are not strictly increasing")

    @property
    def key(self) -> Tuple[str, str]:
        return (self.vessel_id, self.trip_id)

    @property
    def n_intervals(self) -> int:
        return len(self.pings) - 1

    def epoch_seconds(self) -> np.ndarray:
        return np.array([p.epoch_seconds for p in self.pings], dtype=float)

    def latitudes(self) -> np.ndarray:
        return np.array([p.lat for p in self.pings], dtype=float)

    def longitudes(self) -> np.ndarray:
        return np.array([p.lon for p in self.pings], dtype=float)

    def interval_hours(self) -> np.ndarray:
        return np.diff(self.epoch_seconds()) / 3600.0


def _optional_float(value: str, row: int, field: str) -> Optional[float]:
    if value == "":
        return None
    try:
        return float(value)
    except ValueError:
        raise VmsFormatError(f"not a number: '{value}'", row=row, field=field)


def parse_vms_csv(source: Union[str, bytes, IO]) -> List[Ping]:
    """
    Parse VMS pings from a CSV file path, bytes or stream
    Row numbers in errors count data rows from 1
    """
    if isinstance(source, bytes):
        source = io.BytesIO(source)

    try:
        df = pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise VmsFormatError("missing header row")
    except UnicodeDecodeError as e:
        raise VmsFormatError(f"input is not UTF-8 text: {e}")

    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise VmsFormatError(f"missing required columns: {', '.join(missing)}")

    if df.empty:
        return []

    for column in ("trip_id", "speed", "heading"):
        if column not in df.columns:
            df[column] = ""

    timestamps = pd.to_datetime(df["timestamp"], utc=True, format="ISO8601", errors="coerce")
    lats = pd.to_numeric(df["lat"], errors="coerce")
    lons = pd.to_numeric(df["lon"], errors="coerce")

    pings = []
    for i, record in enumerate(df.itertuples(index=False)):
        row = i + 1
        if record.vessel_id == "":
            raise VmsFormatError("empty vessel_id", row=row, field="vessel_id")

        timestamp = timestamps.iat[i]
        if pd.isna(timestamp):
            raise VmsFormatError(f"unparseable timestamp: '{record.timestamp}'", row=row, field="timestamp")

        lat = lats.iat[i]
        lon = lons.iat[i]
        if pd.isna(lat):
            raise VmsFormatError(f"not a number: '{record.lat}'", row=row, field="lat")
        if pd.isna(lon):
            raise VmsFormatError(f"not a number: '{record.lon}'", row=row, field="lon")
        if not (-90 <= lat <= 90):
            raise VmsFormatError(f"latitude out of range: {lat}", row=row, field="lat")
        if not (-180 <= lon <= 180):
            raise VmsFormatError(f"longitude out of range: {lon}", row=row, field="lon")

        speed = _optional_float(record.speed, row, "speed")
        if speed is not None and speed < 0:
            raise VmsFormatError(f"negative speed: {speed}", row=row, field="speed")
        heading = _optional_float(record.heading, row, "heading")
        if heading is not None and not (0 <= heading < 360):
            raise VmsFormatError(f"heading out of range: {heading}", row=row, field="heading")

        pings.append(Ping(
            vessel_id=record.vessel_id,
            trip_id=record.trip_id or None,
            timestamp=timestamp.floor("s").to_pydatetime(),
            lat=float(lat),
            lon=float(lon),
            reported_speed=speed,
            reported_heading=heading,
        ))

    logger.info(f"Parsed {len(pings)} pings")
    return pings


def _split_on_gaps(vessel_id: str, pings: List[Ping], gap_seconds: float) -> List[Trip]:
    trips = []
    current = [pings[0]]
    for previous, ping in zip(pings, pings[1:]):
        if ping.epoch_seconds - previous.epoch_seconds > gap_seconds:
            trips.append(current)
            current = []
        current.append(ping)
    trips.append(current)

    return [
        Trip(vessel_id=vessel_id, trip_id=f"{vessel_id}-{n + 1:04d}", pings=tuple(group))
        for n, group in enumerate(trips)
    ]


def segment_trips(pings: List[Ping], gap_threshold: float = DEFAULT_GAP_THRESHOLD_HOURS) -> List[Trip]:
    """
    Group pings into trips
    Uses trip_id when every ping of a vessel carries one, otherwise splits on time gaps
    """
    if gap_threshold <= 0:
        raise ValueError(f"gap_threshold must be positive, got {gap_threshold}")

    by_vessel: Dict[str, List[Ping]] = defaultdict(list)
    for ping in pings:
        by_vessel[ping.vessel_id].append(ping)

    trips: List[Trip] = []
    for vessel_id in sorted(by_vessel):
        vessel_pings = sorted(by_vessel[vessel_id], key=lambda p: p.epoch_seconds)

        seen = set()
        for ping in vessel_pings:
            if ping.timestamp in seen:
                raise TripError(f"duplicate timestamp {ping.timestamp.isoformat()} for vessel {vessel_id}")
            seen.add(ping.timestamp)

        with_id = sum(1 for p in vessel_pings if p.trip_id is not None)
        if 0 < with_id < len(vessel_pings):
            raise TripError(f"vessel {vessel_id} mixes pings with and without trip_id")

        if with_id:
            groups: Dict[str, List[Ping]] = defaultdict(list)
            for ping in vessel_pings:
                groups[ping.trip_id].append(ping)
            vessel_trips = [
                Trip(vessel_id=vessel_id, trip_id=trip_id, pings=tuple(group))
                for trip_id, group in groups.items()
            ]
            vessel_trips.sort(key=lambda t: (t.pings[0].epoch_seconds, t.trip_id))
        else:
            vessel_trips = _split_on_gaps(vessel_id, vessel_pings, gap_threshold * 3600.0)

        trips.extend(vessel_trips)

    logger.info(f"Segmented {len(pings)} pings into {len(trips)} trips over {len(by_vessel)} vessels")
    return trips


def load_trips(path: str, gap_threshold: float = DEFAULT_GAP_THRESHOLD_HOURS) -> List[Trip]:
    """Parse a VMS CSV file and segment it into trips"""
    return segment_trips(parse_vms_csv(path), gap_threshold)


def _format_optional(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_vms_csv(trips: List[Trip], destination: Union[str, IO]):
    """Write trips in the VMS CSV format read by parse_vms_csv"""
    records = []
    for trip in trips:
        for ping in trip.pings:
            records.append({
                "vessel_id": ping.vessel_id,
                "trip_id": ping.trip_id or "",
                "timestamp": ping.timestamp.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT),
                "lat": f"{ping.lat:.7f}",
                "lon": f"{ping.lon:.7f}",
                "speed": _format_optional(ping.reported_speed),
                "heading": _format_optional(ping.reported_heading),
            })
    df = pd.DataFrame.from_records(records, columns=VMS_COLUMNS)
    df.to_csv(destination, index=False, lineterminator="\n")
