from .geometry import EARTH_RADIUS_M, from_local, great_circle, interp_angle, to_local, wrap_angle
from .types import (
    GeoPoint,
    Lane,
    ManeuverLabel,
    RoadNetwork,
    RoadSegment,
    Trajectory,
    VehicleState,
    resample,
)
from . import io

__all__ = [
    "EARTH_RADIUS_M",
    "GeoPoint",
    "Lane",
    "ManeuverLabel",
    "RoadNetwork",
    "RoadSegment",
    "Trajectory",
    "VehicleState",
    "from_local",
    "great_circle",
    "interp_angle",
    "io",
    "resample",
    "to_local",
    "wrap_angle",
]
