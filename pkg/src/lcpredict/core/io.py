"""File formats: trajectory CSV, road-network JSON, GPS trace CSV.

Floats are written with %.17g so values round-trip exactly through text.
"""

import csv
import json

from ..errors import DomainError
from .types import GeoPoint, Lane, RoadNetwork, RoadSegment, Trajectory, VehicleState

TRAJECTORY_HEADER = list(VehicleState.FIELDS)


def _fmt(v):
    return "%.17g" % float(v)


def write_trajectory_csv(traj, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for s in traj.states:
            w.writerow([_fmt(v) for v in s.as_tuple()])


def read_trajectory_csv(path, dt=None):
    """Load a trajectory CSV; dt is inferred from the first two rows if omitted."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRAJECTORY_HEADER:
        raise DomainError(f"{path}: expected header {','.join(TRAJECTORY_HEADER)}")
    states = [VehicleState(*map(float, row)) for row in rows[1:] if row]
    if not states:
        raise DomainError(f"{path}: no samples")
    if dt is None:
        dt = states[1].t - states[0].t if len(states) > 1 else 0.2
    return Trajectory(tuple(states), dt)


def write_gps_trace_csv(rows, path):
    """rows: iterable of (t, GeoPoint)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "lat", "lon"])
        for t, p in rows:
            w.writerow([_fmt(t), _fmt(p.lat), _fmt(p.lon)])


def read_gps_trace_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["t", "lat", "lon"]:
        raise DomainError(f"{path}: expected header t,lat,lon")
    return [(float(r[0]), GeoPoint(float(r[1]), float(r[2]))) for r in rows[1:] if r]


def network_to_dict(net):
    return {
        "origin": {"lat": net.origin.lat, "lon": net.origin.lon},
        "segments": [
            {
                "segment_id": seg.segment_id,
                "polyline": [{"lat": p.lat, "lon": p.lon} for p in seg.polyline],
                "successors": list(seg.successors),
            }
            for seg in net.segments
        ],
        "lanes": [
            {
                "lane_id": lane.lane_id,
                "centerline": [list(p) for p in lane.centerline],
                "lane_width": lane.width,
            }
            for lane in net.lanes
        ],
        "merge_zone": {
            "start_station": net.merge_zone[0],
            "end_station": net.merge_zone[1],
        },
    }


def network_from_dict(doc):
    try:
        origin = GeoPoint(**doc.get("origin", {"lat": 33.9737, "lon": -117.3281}))
        segments = tuple(
            RoadSegment(
                segment_id=s["segment_id"],
                polyline=tuple(GeoPoint(p["lat"], p["lon"]) for p in s["polyline"]),
                successors=tuple(s.get("successors", ())),
            )
            for s in doc["segments"]
        )
        lanes = tuple(
            Lane(
                lane_id=l["lane_id"],
                centerline=tuple(map(tuple, l["centerline"])),
                width=float(l.get("lane_width", 4.0)),
            )
            for l in doc["lanes"]
        )
        mz = (doc["merge_zone"]["start_station"], doc["merge_zone"]["end_station"])
    except (KeyError, TypeError) as exc:
        raise DomainError(f"malformed road network document: {exc}") from exc
    return RoadNetwork(segments=segments, lanes=lanes, merge_zone=mz, origin=origin)


def write_network_json(net, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net), fh, indent=2)
        fh.write("\n")


def read_network_json(path):
    with open(path, encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))


def state_to_dict(s):
    return {name: getattr(s, name) for name in VehicleState.FIELDS}


def state_from_dict(doc):
    try:
        return VehicleState(**{name: float(doc[name]) for name in VehicleState.FIELDS})
    except KeyError as exc:
        raise DomainError(f"vehicle state document missing field {exc}") from exc
