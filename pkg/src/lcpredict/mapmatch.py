"""Per-step HMM map matching of noisy GPS fixes onto the road-segment graph.

Each step scores candidate segments by the product of a Gaussian measurement
probability (distance fix-to-projection, scale sigma_z) and an exponential
transition probability (|great-circle step - route step| on scale beta), and
keeps the argmax. Only the previous match is carried, so this is a greedy
per-step matcher, not a whole-trace Viterbi smoother.
"""

import math
from collections import deque
from dataclasses import dataclass

from .core import geometry
from .core.types import GeoPoint
from .errors import DomainError, NoCandidate

great_circle = geometry.great_circle


@dataclass(frozen=True)
class MatcherConfig:
    sigma_z: float = 4.07  # GPS noise scale [m]
    beta: float = 3.0  # transition scale [m]
    candidate_radius: float = 50.0  # [m]
    max_route_hops: int = 3

    def __post_init__(self):
        if self.sigma_z <= 0 or self.beta <= 0 or self.candidate_radius <= 0:
            raise DomainError("sigma_z, beta and candidate_radius must be positive")


@dataclass(frozen=True)
class MatchResult:
    segment_id: str
    projection: GeoPoint
    distance_to_road: float  # [m]
    measurement_prob: float
    transition_prob: float
    station: float  # arc length from segment start to the projection [m]

    def __post_init__(self):
        if self.distance_to_road < 0:
            raise DomainError("distance_to_road must be >= 0")
        if self.measurement_prob < 0 or self.transition_prob < 0:
            raise DomainError("probabilities must be >= 0")


def _segment_local(seg, origin):
    return [geometry.to_local(p, origin) for p in seg.polyline]


def _polyline_length(pts):
    return sum(
        math.hypot(pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1])
        for i in range(len(pts) - 1)
    )


def project_to_segment(z, seg, origin=None):
    """Closest point of `z` on a segment polyline.

    Returns (projection GeoPoint, distance [m], station [m] from the polyline
    start). Work happens in the local frame around `origin` (defaults to the
    first polyline vertex).
    """
    if origin is None:
        origin = seg.polyline[0]
    pts = _segment_local(seg, origin)
    zx, zy = geometry.to_local(z, origin)

    best = None  # (distance, station, px, py)
    arc = 0.0
    for i in range(len(pts) - 1):
        ax, ay = pts[i]
        bx, by = pts[i + 1]
        dx, dy = bx - ax, by - ay
        seg_len = math.hypot(dx, dy)
        if seg_len == 0.0:
            if len(pts) == 2:
                raise DomainError(f"segment {seg.segment_id} has zero length")
            continue
        u = ((zx - ax) * dx + (zy - ay) * dy) / (seg_len * seg_len)
        u = min(max(u, 0.0), 1.0)
        px, py = ax + u * dx, ay + u * dy
        dist = math.hypot(zx - px, zy - py)
        station = arc + u * seg_len
        if best is None or dist < best[0]:
            best = (dist, station, px, py)
        arc += seg_len
    if best is None:
        raise DomainError(f"segment {seg.segment_id} has zero length")
    dist, station, px, py = best
    return geometry.from_local(px, py, origin), dist, station


def _route_distance(net, from_id, from_station, to_id, to_station, max_hops, lengths):
    """Arc length along the successor graph between two projections.

    Breadth-first over successors from the previous segment, capped at
    max_hops; returns None when the target is unreachable within the cap.
    """
    if from_id == to_id:
        return abs(to_station - from_station)
    start_remainder = lengths[from_id] - from_station
    queue = deque([(from_id, 0, 0.0)])
    seen = {from_id}
    while queue:
        seg_id, hops, acc = queue.popleft()
        if hops >= max_hops:
            continue
        for succ in net.segment_by_id(seg_id).successors:
            if succ == to_id:
                return start_remainder + acc + to_station
            if succ not in seen:
                seen.add(succ)
                queue.append((succ, hops + 1, acc + lengths[succ]))
    return None


def match_step(z_t, z_prev, prev_match, net, cfg):
    """Match one GPS fix against the network, carrying the previous match.

    On the first call pass prev_match=None (transition probability is 1 for
    every candidate). Raises NoCandidate when no segment projects within
    cfg.candidate_radius; the caller then falls back to the raw fix.
    """
    origin = net.origin
    candidates = []
    for seg in net.segments:
        proj, dist, station = project_to_segment(z_t, seg, origin)
        if dist <= cfg.candidate_radius:
            candidates.append((seg.segment_id, proj, dist, station))
    if not candidates:
        raise NoCandidate(
            f"no segment within {cfg.candidate_radius} m of ({z_t.lat}, {z_t.lon})"
        )

    norm = 1.0 / (math.sqrt(2.0 * math.pi) * cfg.sigma_z)
    lengths = {
        seg.segment_id: _polyline_length(_segment_local(seg, origin))
        for seg in net.segments
    }
    step_gc = great_circle(z_t, z_prev) if prev_match is not None else 0.0

    best = None
    for seg_id, proj, dist, station in sorted(candidates, key=lambda c: c[0]):
        meas = norm * math.exp(-0.5 * (dist / cfg.sigma_z) ** 2)
        if prev_match is None:
            trans = 1.0
        else:
            route = _route_distance(
                net, prev_match.segment_id, prev_match.station,
                seg_id, station, cfg.max_route_hops, lengths,
            )
            if route is None:
                trans = 0.0
            else:
                trans = (1.0 / cfg.beta) * math.exp(-abs(step_gc - route) / cfg.beta)
        score = meas * trans
        if best is None or score > best[0]:
            best = (score, MatchResult(seg_id, proj, dist, meas, trans, station))
    return best[1]


class Matcher:
    """Stateful per-vehicle wrapper: one instance per GPS stream."""

    def __init__(self, net, cfg=None):
        self.net = net
        self.cfg = cfg or MatcherConfig()
        self._prev_point = None
        self._prev_match = None

    def step(self, z_t):
        result = match_step(z_t, self._prev_point, self._prev_match, self.net, self.cfg)
        self._prev_point = z_t
        self._prev_match = result
        return result
