#!/usr/bin/env python3
"""
Fishing effort for trawlwatch
Trawling events from labelled trips and their gridded effort in hours.
Each Fishing interval is credited to the cell holding its start ping;
cells are half-open [low, high) in latitude and longitude.
"""

import logging
from dataclasses import dataclass
from datetime import datetime
from typing import Dict, IO, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..tracking.activity import Activity, ActivitySequence
from ..tracking.vms_reader import Trip

logger = logging.getLogger(__name__)

CELL_DECIMALS = 9

GRID_COLUMNS = ["cell_lat_index", "cell_lon_index", "cell_center_lat", "cell_center_lon", "hours"]


def cell_floor(offset, cell: float) -> np.ndarray:
    """Whole cells in offset; a quotient within 1e-9 of an integer counts as that integer"""
    return np.floor(np.round(np.asarray(offset, dtype=float) / cell, CELL_DECIMALS)).astype(int)


@dataclass(frozen=True)
class TrawlEvent:
    """Maximal run of Fishing steps; end_index is inclusive"""
    vessel_id: str
    trip_id: str
    start_index: int
    end_index: int
    start_time: datetime
    end_time: datetime
    duration_hours: float
    latitudes: np.ndarray       # start ping of every covered interval
    longitudes: np.ndarray
    interval_hours: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.end_index - self.start_index + 1


def _fishing_runs(activity: np.ndarray) -> List[Tuple[int, int]]:
    fishing = np.concatenate([[False], activity == int(Activity.FISHING), [False]])
    edges = np.flatnonzero(np.diff(fishing.astype(np.int8)))
    return [(int(start), int(stop) - 1) for start, stop in zip(edges[::2], edges[1::2])]


def extract_trawl_events(activity: ActivitySequence, trip: Trip) -> List[TrawlEvent]:
    """Maximal runs of consecutive Fishing steps; Unestimated and Steaming both end a run"""
    activity = np.asarray(activity, dtype=int)
    if len(activity) != trip.n_intervals:
        raise ValueError(
            f"activity length {len(activity)} does not match {trip.n_intervals} intervals "
            f"of trip {trip.vessel_id}/{trip.trip_id}")

    lats = trip.latitudes()
    lons = trip.longitudes()
    dt = trip.interval_hours()

    events = []
    for start, end in _fishing_runs(activity):
        hours = dt[start:end + 1]
        events.append(TrawlEvent(
            vessel_id=trip.vessel_id,
            trip_id=trip.trip_id,
            start_index=start,
            end_index=end,
            start_time=trip.pings[start].timestamp,
            end_time=trip.pings[end + 1].timestamp,
            duration_hours=float(hours.sum()),
            latitudes=lats[start:end + 1].copy(),
            longitudes=lons[start:end + 1].copy(),
            interval_hours=hours.copy(),
        ))
    return events


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise ValueError(f"degenerate bounding box: {self}")

    @classmethod
    def from_sequence(cls, values: Iterable[float]) -> "BoundingBox":
        """From (lat_min, lat_max, lon_min, lon_max)"""
        values = [float(v) for v in values]
        if len(values) != 4:
            raise ValueError(f"bounding box needs 4 values (lat_min, lat_max, lon_min, lon_max), got {len(values)}")
        return cls(*values)

    @classmethod
    def covering(cls, trips: Iterable[Trip], cell_lat: float, cell_lon: float) -> "BoundingBox":
        """Smallest cell-aligned box holding every ping of trips"""
        lats = np.concatenate([t.latitudes() for t in trips])
        lons = np.concatenate([t.longitudes() for t in trips])
        return cls(
            lat_min=int(cell_floor(lats.min(), cell_lat)) * cell_lat,
            lat_max=(int(cell_floor(lats.max(), cell_lat)) + 1) * cell_lat,
            lon_min=int(cell_floor(lons.min(), cell_lon)) * cell_lon,
            lon_max=(int(cell_floor(lons.max(), cell_lon)) + 1) * cell_lon,
        )


class EffortGrid:
    """Dense effort hours per cell plus the hours falling outside the box"""

    def __init__(self, bbox: BoundingBox, cell_lat: float, cell_lon: Optional[float] = None):
        cell_lon = cell_lat if cell_lon is None else cell_lon
        if cell_lat <= 0 or cell_lon <= 0:
            raise ValueError(f"cell size must be positive, got ({cell_lat}, {cell_lon})")
        self.bbox = bbox
        self.cell_lat = float(cell_lat)
        self.cell_lon = float(cell_lon)
        self.n_lat = int(np.ceil(np.round((bbox.lat_max - bbox.lat_min) / self.cell_lat, CELL_DECIMALS)))
        self.n_lon = int(np.ceil(np.round((bbox.lon_max - bbox.lon_min) / self.cell_lon, CELL_DECIMALS)))
        self.hours = np.zeros((self.n_lat, self.n_lon))
        self.outside_hours = 0.0
        self.n_events = 0
        self.event_hours = 0.0

    @property
    def total_hours(self) -> float:
        return float(self.hours.sum())

    @property
    def mean_event_hours(self) -> float:
        return self.event_hours / self.n_events if self.n_events else 0.0

    def cell_index(self, lats, lons) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row and column of each position and whether it lies inside the grid"""
        lats = np.asarray(lats, dtype=float)
        lons = np.asarray(lons, dtype=float)
        rows = cell_floor(lats - self.bbox.lat_min, self.cell_lat)
        cols = cell_floor(lons - self.bbox.lon_min, self.cell_lon)
        inside = ((rows >= 0) & (rows < self.n_lat) & (cols >= 0) & (cols < self.n_lon))
        return rows, cols, inside

    def add_event(self, event: TrawlEvent):
        rows, cols, inside = self.cell_index(event.latitudes, event.longitudes)
        np.add.at(self.hours, (rows[inside], cols[inside]), event.interval_hours[inside])
        self.outside_hours += float(event.interval_hours[~inside].sum())
        self.n_events += 1
        self.event_hours += event.duration_hours

    def same_geometry(self, other: "EffortGrid") -> bool:
        return (self.bbox == other.bbox and self.cell_lat == other.cell_lat and self.cell_lon == other.cell_lon)

    def merge(self, other: "EffortGrid") -> "EffortGrid":
        """Cell-wise sum of two grids over the same geometry"""
        if not self.same_geometry(other):
            raise ValueError("cannot merge effort grids with different geometry")
        merged = EffortGrid(self.bbox, self.cell_lat, self.cell_lon)
        merged.hours = self.hours + other.hours
        merged.outside_hours = self.outside_hours + other.outside_hours
        merged.n_events = self.n_events + other.n_events
        merged.event_hours = self.event_hours + other.event_hours
        return merged

    def coarsen(self, factor: int = 2) -> np.ndarray:
        """Sum factor x factor blocks of cells, zero-padding the trailing edge"""
        pad_lat = (-self.n_lat) % factor
        pad_lon = (-self.n_lon) % factor
        padded = np.pad(self.hours, ((0, pad_lat), (0, pad_lon)))
        n_lat, n_lon = padded.shape
        return padded.reshape(n_lat // factor, factor, n_lon // factor, factor).sum(axis=(1, 3))

    def to_frame(self, include_empty: bool = False) -> pd.DataFrame:
        if include_empty:
            rows, cols = np.indices(self.hours.shape)
            rows, cols = rows.ravel(), cols.ravel()
        else:
            rows, cols = np.nonzero(self.hours)
        return pd.DataFrame({
            "cell_lat_index": rows,
            "cell_lon_index": cols,
            "cell_center_lat": self.bbox.lat_min + (rows + 0.5) * self.cell_lat,
            "cell_center_lon": self.bbox.lon_min + (cols + 0.5) * self.cell_lon,
            "hours": self.hours[rows, cols],
        }, columns=GRID_COLUMNS)

    def metadata(self) -> Dict:
        return {
            "bbox": {
                "lat_min": self.bbox.lat_min,
                "lat_max": self.bbox.lat_max,
                "lon_min": self.bbox.lon_min,
                "lon_max": self.bbox.lon_max,
            },
            "cell_degrees": {"lat": self.cell_lat, "lon": self.cell_lon},
            "shape": {"n_lat": self.n_lat, "n_lon": self.n_lon},
            "total_hours": self.total_hours,
            "outside_hours": float(self.outside_hours),
            "n_events": int(self.n_events),
            "mean_event_hours": float(self.mean_event_hours),
        }


def grid_effort(events: Iterable[TrawlEvent], cell_lat: float, bbox: BoundingBox,
                cell_lon: Optional[float] = None) -> EffortGrid:
    """Accumulate the hours of every Fishing interval into its start-ping cell"""
    grid = EffortGrid(bbox, cell_lat, cell_lon)
    for event in events:
        grid.add_event(event)
    logger.info(f"Gridded {grid.n_events} trawling events: {grid.total_hours:.2f} h inside, "
                f"{grid.outside_hours:.2f} h outside the box")
    return grid


def write_effort_csv(grid: EffortGrid, destination: Union[str, IO], include_empty: bool = False):
    grid.to_frame(include_empty).to_csv(destination, index=False, lineterminator="\n")
