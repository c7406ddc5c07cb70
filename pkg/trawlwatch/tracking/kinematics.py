#!/usr/bin/env python3
"""
Kinematics for trawlwatch
Great-circle geometry and finite-difference speeds derived from VMS pings
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import TripError
from .vms_reader import Trip

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
KM_PER_NAUTICAL_MILE = 1.852
DEFAULT_MAX_GAP_HOURS = 4.0


def haversine_km(lat1, lon1, lat2, lon2):
    """
    Calculate distance between coordinates using the Haversine formula
    Accepts scalars or numpy arrays, returns kilometers
    """
    lat1_rad = np.radians(lat1)
    lat2_rad = np.radians(lat2)
    dlat = lat2_rad - lat1_rad
    dlon = np.radians(lon2) - np.radians(lon1)

    a = np.sin(dlat / 2) ** 2 + np.cos(lat1_rad) * np.cos(lat2_rad) * np.sin(dlon / 2) ** 2
    c = 2 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))

    return EARTH_RADIUS_KM * c


def haversine_distance(p1: Tuple[float, float], p2: Tuple[float, float]) -> float:
    """Great-circle distance in km between two (lat, lon) points in degrees"""
    for lat, lon in (p1, p2):
        if not (-90 <= lat <= 90) or not (-180 <= lon <= 180):
            raise ValueError(f"Coordinate out of range: ({lat}, {lon})")
    return float(haversine_km(p1[0], p1[1], p2[0], p2[1]))


def initial_bearing(lat1, lon1, lat2, lon2):
    """
    Calculate initial great-circle bearing from point 1 to point 2
    Returns bearing in degrees [0, 360)
    """
    lat1_rad = np.radians(lat1)
    lat2_rad = np.radians(lat2)
    dlon = np.radians(lon2) - np.radians(lon1)

    y = np.sin(dlon) * np.cos(lat2_rad)
    x = np.cos(lat1_rad) * np.sin(lat2_rad) - np.sin(lat1_rad) * np.cos(lat2_rad) * np.cos(dlon)

    bearing = np.degrees(np.arctan2(y, x))
    return np.mod(bearing + 360.0, 360.0)


def destination_point(lat: float, lon: float, bearing_deg: float, distance_km: float) -> Tuple[float, float]:
    """Point reached from (lat, lon) after distance_km along the initial bearing"""
    lat_rad = np.radians(lat)
    lon_rad = np.radians(lon)
    theta = np.radians(bearing_deg)
    delta = distance_km / EARTH_RADIUS_KM

    lat2 = np.arcsin(np.sin(lat_rad) * np.cos(delta) + np.cos(lat_rad) * np.sin(delta) * np.cos(theta))
    lon2 = lon_rad + np.arctan2(
        np.sin(theta) * np.sin(delta) * np.cos(lat_rad),
        np.cos(delta) - np.sin(lat_rad) * np.sin(lat2),
    )

    lon2_deg = (np.degrees(lon2) + 540.0) % 360.0 - 180.0
    return float(np.degrees(lat2)), float(lon2_deg)


def wrap_angle(angle):
    """Normalize angle(s) in degrees to (-180, 180]"""
    wrapped = np.mod(np.asarray(angle, dtype=float) + 180.0, 360.0) - 180.0
    wrapped = np.where(wrapped == -180.0, 180.0, wrapped)
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class KinematicSeries:
    """
    Per-interval observations of a trip
    Step t covers the interval from ping t to ping t+1
    """
    vessel_id: str
    trip_id: str
    speed: np.ndarray          # knots
    heading: np.ndarray        # degrees [0, 360)
    omega: np.ndarray          # degrees per hour
    dt: np.ndarray             # hours
    valid: np.ndarray          # interval usable for speed
    omega_valid: np.ndarray    # both intervals of the heading pair usable

    @property
    def n_steps(self) -> int:
        return int(self.speed.shape[0])


def derive_kinematics(trip: Trip, max_gap_hours: float = DEFAULT_MAX_GAP_HOURS,
                      use_reported_speed: bool = False) -> KinematicSeries:
    """Derive linear speed, heading and angular speed by finite differences"""
    n_pings = len(trip.pings)
    if n_pings < 3:
        raise TripError(f"trip too short: {trip.vessel_id}/{trip.trip_id} has {n_pings} pings")

    times = trip.epoch_seconds()
    lats = trip.latitudes()
    lons = trip.longitudes()

    dt = np.diff(times) / 3600.0
    valid = (dt > 0) & (dt <= max_gap_hours)

    distance_km = haversine_km(lats[:-1], lons[:-1], lats[1:], lons[1:])
    safe_dt = np.where(dt > 0, dt, 1.0)
    speed = np.where(dt > 0, distance_km / safe_dt / KM_PER_NAUTICAL_MILE, 0.0)

    if use_reported_speed:
        reported = np.array(
            [p.reported_speed if p.reported_speed is not None else np.nan for p in trip.pings[:-1]]
        )
        has_reported = ~np.isnan(reported)
        speed = np.where(has_reported, reported, speed)

    heading = initial_bearing(lats[:-1], lons[:-1], lats[1:], lons[1:])

    n_steps = n_pings - 1
    omega = np.zeros(n_steps)
    omega_valid = np.zeros(n_steps, dtype=bool)
    turn = wrap_angle(heading[1:] - heading[:-1])
    omega[:-1] = turn / safe_dt[:-1]
    omega_valid[:-1] = valid[:-1] & valid[1:]

    if not valid.any():
        raise TripError(f"no usable observations: {trip.vessel_id}/{trip.trip_id}")

    if not valid.all():
        logger.debug(f"Trip {trip.vessel_id}/{trip.trip_id}: {int((~valid).sum())} invalid intervals")

    return KinematicSeries(
        vessel_id=trip.vessel_id,
        trip_id=trip.trip_id,
        speed=speed,
        heading=heading,
        omega=omega,
        dt=dt,
        valid=valid,
        omega_valid=omega_valid,
    )
