"""Local/geodetic conversions and angle helpers.

The local frame is a station/lateral-offset frame aligned to the ramp lane:
x grows along the road axis, y is the signed lateral offset (positive toward
the mainline). Geodetic points are tied to it through an equirectangular
projection around a shared origin, which is accurate to well under a
millimeter over the ~2 km areas handled here.
"""

import math

import numpy as np

from ..errors import DomainError

EARTH_RADIUS_M = 6_371_000.0

# Small-area limit for the equirectangular projection [deg].
_MAX_OFFSET_DEG = 1.0


def wrap_angle(a):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    return -(np.mod(-np.asarray(a) + math.pi, 2.0 * math.pi) - math.pi)


def to_local(p, origin):
    """Project a GeoPoint onto the local tangent plane at `origin`.

    Returns (x_east, y_north) in meters. Only valid near the origin; offsets
    beyond 1 degree raise DomainError.
    """
    dlat = p.lat - origin.lat
    dlon = p.lon - origin.lon
    if abs(dlat) >= _MAX_OFFSET_DEG or abs(dlon) >= _MAX_OFFSET_DEG:
        raise DomainError(
            f"point ({p.lat}, {p.lon}) too far from origin "
            f"({origin.lat}, {origin.lon}) for the small-area projection"
        )
    x = math.radians(dlon) * EARTH_RADIUS_M * math.cos(math.radians(origin.lat))
    y = math.radians(dlat) * EARTH_RADIUS_M
    return x, y


def from_local(x, y, origin):
    """Inverse of to_local: meters east/north of `origin` back to (lat, lon)."""
    from .types import GeoPoint

    lat = origin.lat + math.degrees(y / EARTH_RADIUS_M)
    lon = origin.lon + math.degrees(
        x / (EARTH_RADIUS_M * math.cos(math.radians(origin.lat)))
    )
    return GeoPoint(lat, lon)


def great_circle(a, b):
    """Haversine distance in meters between two GeoPoints (sphere radius 6371 km)."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    s = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(s)))


def interp_angle(a0, a1, frac):
    """Interpolate between two angles along the shorter arc; result in (-pi, pi]."""
    delta = wrap_angle(a1 - a0)
    return float(wrap_angle(a0 + frac * delta))
