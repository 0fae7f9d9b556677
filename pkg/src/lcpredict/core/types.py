"""Domain value types: vehicle states, trajectories, geodetic points, road network.

Everything here is immutable after construction and validates its invariants in
__post_init__, so instances can be shared freely across threads.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from ..errors import DomainError
from . import geometry

_TIME_TOL = 1e-9


class ManeuverLabel(Enum):
    CHANGE = "change"
    KEEP = "keep"


@dataclass(frozen=True)
class VehicleState:
    """One timestamped kinematic sample in the local road frame.

    t         time since trip start [s]
    x         longitudinal station along the road axis [m]
    y         signed lateral offset from the ramp-lane centerline [m],
              positive toward the mainline
    v_lon     longitudinal speed [m/s], >= 0
    v_lat     lateral speed [m/s]
    a_lon     longitudinal acceleration [m/s^2]
    yaw       heading relative to the road axis [rad], in (-pi, pi]
    yaw_rate  [rad/s]
    d_remain  distance to the end of the mandatory lane-change zone [m], >= 0
    """

    t: float
    x: float
    y: float
    v_lon: float
    v_lat: float
    a_lon: float
    yaw: float
    yaw_rate: float
    d_remain: float

    def __post_init__(self):
        vals = (self.t, self.x, self.y, self.v_lon, self.v_lat,
                self.a_lon, self.yaw, self.yaw_rate, self.d_remain)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite field in VehicleState: {vals}")
        if self.v_lon < 0.0:
            raise DomainError(f"v_lon must be >= 0, got {self.v_lon}")
        if self.d_remain < 0.0:
            raise DomainError(f"d_remain must be >= 0, got {self.d_remain}")
        if self.yaw == -math.pi:
            object.__setattr__(self, "yaw", math.pi)
        elif not (-math.pi < self.yaw <= math.pi):
            raise DomainError(f"yaw must lie in (-pi, pi], got {self.yaw}")

    FIELDS = ("t", "x", "y", "v_lon", "v_lat", "a_lon", "yaw", "yaw_rate", "d_remain")

    def as_tuple(self):
        return (self.t, self.x, self.y, self.v_lon, self.v_lat,
                self.a_lon, self.yaw, self.yaw_rate, self.d_remain)


@dataclass(frozen=True)
class Trajectory:
    """Fixed-rate sequence of VehicleState samples (default 5 Hz)."""

    states: tuple
    dt: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if not self.states:
            raise DomainError("trajectory must contain at least one state")
        if self.dt <= 0.0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        times = [s.t for s in self.states]
        for i in range(1, len(times)):
            gap = times[i] - times[i - 1]
            if gap <= 0.0:
                raise DomainError(f"timestamps not strictly increasing at index {i}")
            if abs(gap - self.dt) > _TIME_TOL:
                raise DomainError(
                    f"sample spacing {gap} deviates from dt={self.dt} at index {i}"
                )

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __getitem__(self, idx):
        return self.states[idx]

    @property
    def t0(self):
        return self.states[0].t

    @property
    def duration(self):
        return self.states[-1].t - self.states[0].t

    @cached_property
    def arrays(self):
        """Column arrays keyed by field name (read-only views)."""
        mat = np.array([s.as_tuple() for s in self.states], dtype=float)
        mat.setflags(write=False)
        return {name: mat[:, i] for i, name in enumerate(VehicleState.FIELDS)}

    def window(self, start, stop):
        """Sub-trajectory states[start:stop]; same dt."""
        sub = self.states[start:stop]
        if not sub:
            raise DomainError(f"empty window [{start}:{stop}]")
        return Trajectory(sub, self.dt)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise DomainError(f"non-finite coordinates ({self.lat}, {self.lon})")
        if not (-90.0 <= self.lat <= 90.0):
            raise DomainError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise DomainError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class RoadSegment:
    """Directed road segment: geodetic polyline plus graph successors."""

    segment_id: str
    polyline: tuple
    successors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "polyline", tuple(self.polyline))
        object.__setattr__(self, "successors", tuple(self.successors))
        if len(self.polyline) < 2:
            raise DomainError(f"segment {self.segment_id} needs >= 2 vertices")


@dataclass(frozen=True)
class Lane:
    """Lane centerline in the local frame, parameterized by station."""

    lane_id: str
    centerline: tuple  # ((x, y), ...) ordered by x
    width: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "centerline", tuple(map(tuple, self.centerline)))
        if len(self.centerline) < 2:
            raise DomainError(f"lane {self.lane_id} needs >= 2 centerline points")
        if self.width <= 0.0:
            raise DomainError(f"lane width must be positive, got {self.width}")

    def center_y(self, x):
        """Lateral position of the centerline at station x (clamped ends)."""
        xs = np.array([p[0] for p in self.centerline])
        ys = np.array([p[1] for p in self.centerline])
        return np.interp(x, xs, ys)


@dataclass(frozen=True)
class RoadNetwork:
    """Road substrate: geodetic segment graph, local-frame lanes, merge zone."""

    segments: tuple
    lanes: tuple
    merge_zone: tuple  # (start_station, end_station) [m]
    origin: GeoPoint = field(default_factory=lambda: GeoPoint(33.9737, -117.3281))

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "lanes", tuple(self.lanes))
        object.__setattr__(self, "merge_zone", tuple(self.merge_zone))
        ids = {s.segment_id for s in self.segments}
        for seg in self.segments:
            for succ in seg.successors:
                if succ not in ids:
                    raise DomainError(
                        f"segment {seg.segment_id} references unknown successor {succ}"
                    )
        if len(self.merge_zone) != 2 or not self.merge_zone[0] < self.merge_zone[1]:
            raise DomainError(f"invalid merge zone {self.merge_zone}")

    @property
    def lane_width(self):
        return self.lanes[0].width if self.lanes else 4.0

    def segment_by_id(self, segment_id):
        for seg in self.segments:
            if seg.segment_id == segment_id:
                return seg
        raise DomainError(f"unknown segment {segment_id}")

    def lane_center_offsets(self, x):
        """Centerline lateral positions of every lane at station x."""
        return np.array([lane.center_y(x) for lane in self.lanes])

    def nearest_lane(self, x, y):
        """Lane whose centerline is laterally closest to (x, y)."""
        if not self.lanes:
            raise DomainError("network has no lanes")
        offs = self.lane_center_offsets(x)
        return self.lanes[int(np.argmin(np.abs(offs - y)))]


def resample(traj, dt_new):
    """Resample a trajectory onto a uniform dt_new grid by linear interpolation.

    Yaw is interpolated along the shorter arc of the circle; all other fields
    linearly. Grid points are t0 + k*dt_new up to the original end time, so
    endpoints are preserved whenever the duration is a multiple of dt_new.
    """
    if len(traj) < 2:
        raise DomainError("resample needs at least two states")
    if dt_new <= 0.0:
        raise DomainError(f"dt_new must be positive, got {dt_new}")
    if dt_new == traj.dt:
        return traj

    old_t = np.array([s.t for s in traj.states])
    t0, t_end = old_t[0], old_t[-1]
    n_steps = int(math.floor((t_end - t0) / dt_new + 1e-9))
    new_t = t0 + dt_new * np.arange(n_steps + 1)

    cols = {name: np.array([getattr(s, name) for s in traj.states])
            for name in VehicleState.FIELDS if name not in ("t", "yaw")}
    yaws = np.array([s.yaw for s in traj.states])

    states = []
    for tk in new_t:
        j = int(np.searchsorted(old_t, tk, side="right")) - 1
        j = min(max(j, 0), len(old_t) - 2)
        frac = (tk - old_t[j]) / (old_t[j + 1] - old_t[j])
        frac = min(max(frac, 0.0), 1.0)
        kwargs = {name: float(col[j] + frac * (col[j + 1] - col[j]))
                  for name, col in cols.items()}
        kwargs["yaw"] = geometry.interp_angle(yaws[j], yaws[j + 1], frac)
        kwargs["t"] = float(tk)
        kwargs["v_lon"] = max(kwargs["v_lon"], 0.0)
        kwargs["d_remain"] = max(kwargs["d_remain"], 0.0)
        states.append(VehicleState(**kwargs))
    return Trajectory(tuple(states), dt_new)
