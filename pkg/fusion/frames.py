"""WGS-84 geodetic, ECEF and local ENU conversions."""
import math
from dataclasses import dataclass

import numpy as np

from fusion.errors import DegenerateInputError


WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

_LAT_TOLERANCE = 1e-12
_MAX_ITERATIONS = 10


@dataclass(frozen=True)
class GeodeticCoord:
    """Latitude/longitude in radians, height in meters above the ellipsoid."""

    latitude: float
    longitude: float
    height: float

    def to_dict(self):
        return {
            'latitude_deg': math.degrees(self.latitude),
            'longitude_deg': math.degrees(self.longitude),
            'height_m': self.height,
        }

    @classmethod
    def from_degrees(cls, latitude_deg, longitude_deg, height=0.0):
        return cls(math.radians(latitude_deg), math.radians(longitude_deg), float(height))


@dataclass(frozen=True)
class EnuAnchor:
    """Local east-north-up frame attached to a reference ECEF point.

    Columns of `rotation_ecef_from_enu` are the east, north and up axes
    expressed in ECEF. At the poles east/north follow the longitude = 0
    convention.
    """

    rotation_ecef_from_enu: np.ndarray
    origin_ecef: np.ndarray
    origin_geodetic: GeodeticCoord


def _normalize_longitude(lon):
    if lon <= -math.pi:
        lon += 2.0 * math.pi
    elif lon > math.pi:
        lon -= 2.0 * math.pi
    return lon


def geodetic_to_ecef(g):
    sin_lat, cos_lat = math.sin(g.latitude), math.cos(g.latitude)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return np.array([
        (n + g.height) * cos_lat * math.cos(g.longitude),
        (n + g.height) * cos_lat * math.sin(g.longitude),
        (n * (1.0 - WGS84_E2) + g.height) * sin_lat,
    ])


def ecef_to_geodetic(p):
    x, y, z = (float(c) for c in p)
    rho = math.hypot(x, y)
    if rho == 0.0 and z == 0.0:
        raise DegenerateInputError("ECEF point at Earth center has no geodetic coordinates")

    lon = _normalize_longitude(math.atan2(y, x)) if rho > 0.0 else 0.0
    lat = math.atan2(z, rho * (1.0 - WGS84_E2))
    for _ in range(_MAX_ITERATIONS):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        h = rho * math.cos(lat) + z * sin_lat - WGS84_A * WGS84_A / n
        new_lat = math.atan2(z, rho * (1.0 - WGS84_E2 * n / (n + h)))
        converged = abs(new_lat - lat) < _LAT_TOLERANCE
        lat = new_lat
        if converged:
            break

    sin_lat = math.sin(lat)
    height = rho * math.cos(lat) + z * sin_lat - WGS84_A * math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    return GeodeticCoord(lat, lon, height)


def enu_rotation(g):
    """ECEF-from-ENU rotation at a geodetic location."""
    sin_lat, cos_lat = math.sin(g.latitude), math.cos(g.latitude)
    sin_lon, cos_lon = math.sin(g.longitude), math.cos(g.longitude)
    east = np.array([-sin_lon, cos_lon, 0.0])
    north = np.array([-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat])
    up = np.array([cos_lat * cos_lon, cos_lat * sin_lon, sin_lat])
    return np.column_stack([east, north, up])


def make_enu_anchor(ref):
    ref = np.asarray(ref, dtype=float)
    origin_geodetic = ecef_to_geodetic(ref)
    return EnuAnchor(
        rotation_ecef_from_enu=enu_rotation(origin_geodetic),
        origin_ecef=ref.copy(),
        origin_geodetic=origin_geodetic,
    )


def anchor_from_geodetic(g):
    return EnuAnchor(
        rotation_ecef_from_enu=enu_rotation(g),
        origin_ecef=geodetic_to_ecef(g),
        origin_geodetic=g,
    )


def ecef_to_enu(anchor, p):
    return anchor.rotation_ecef_from_enu.T @ (np.asarray(p, dtype=float) - anchor.origin_ecef)


def enu_to_ecef(anchor, v):
    return anchor.rotation_ecef_from_enu @ np.asarray(v, dtype=float) + anchor.origin_ecef
