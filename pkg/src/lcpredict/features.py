"""The six cost-function features, per state and aggregated per trajectory.

Vector ordering is (f_a, f_thw, f_dev, f_w, f_m, f_urge):

    f_a     |longitudinal acceleration|                [m/s^2]
    f_thw   clamped time headway to the adjacent-lane leader plus the one
            from the follower; missing neighbor counts as THW_MAX  [s]
    f_dev   |lateral offset from the occupied lane's centerline|   [m]
    f_w     |yaw rate|                                  [rad/s]
    f_m     |speed - speed limit|                       [m/s]
    f_urge  inverse remaining time to the end of the mandatory
            lane-change zone, clamped                   [1/s]

A trajectory's aggregate feature is the per-feature L2 norm over time divided
by sqrt(n), so trajectories of different durations are comparable.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core.types import Trajectory, VehicleState
from .errors import DomainError

FEATURE_NAMES = ("f_a", "f_thw", "f_dev", "f_w", "f_m", "f_urge")
N_FEATURES = 6

THW_MAX = 10.0  # [s]
URGE_MAX = 2.0  # [1/s]
T_EPS = 0.5  # remaining-time floor for f_urge [s]
V_FLOOR = 0.1  # speed floor for time quotients [m/s]


@dataclass(frozen=True)
class SceneContext:
    """Mainline neighbors of the ego's adjacent-lane projection plus the limit."""

    leader: VehicleState | None
    follower: VehicleState | None
    v_lim: float

    def __post_init__(self):
        if self.v_lim <= 0:
            raise DomainError(f"v_lim must be positive, got {self.v_lim}")


@dataclass(frozen=True)
class FeatureVector:
    f_a: float
    f_thw: float
    f_dev: float
    f_w: float
    f_m: float
    f_urge: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise DomainError(f"feature values must be finite and >= 0: {vals}")

    def as_array(self):
        return np.array([self.f_a, self.f_thw, self.f_dev, self.f_w, self.f_m, self.f_urge])

    @staticmethod
    def from_array(arr):
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (N_FEATURES,):
            raise DomainError(f"expected {N_FEATURES} features, got shape {arr.shape}")
        return FeatureVector(*arr)


def _thw_terms(gap_lead, v_ego, lead_present, gap_lag, v_fol, fol_present):
    lead = np.where(
        lead_present,
        np.clip(gap_lead / np.maximum(v_ego, V_FLOOR), 0.0, THW_MAX),
        THW_MAX,
    )
    lag = np.where(
        fol_present,
        np.clip(gap_lag / np.maximum(v_fol, V_FLOOR), 0.0, THW_MAX),
        THW_MAX,
    )
    return lead + lag


# C1-rounded counterparts of min/max/clip, used only by the reparameterized
# feature map: hard corners would make finite-difference curvature blow up
# like 1/step whenever a sample sits on a clamp boundary.

def _smooth_floor(q, lo, w):
    """max(q, lo) with a quadratic blend of half-width w around the corner."""
    q = np.asarray(q, dtype=float)
    out = np.where(q >= lo + w, q, lo)
    mid = (np.abs(q - lo) < w)
    return np.where(mid, lo + (q - lo + w) ** 2 / (4.0 * w), out)


def _smooth_ceil(q, hi, w):
    """min(q, hi) with a quadratic blend of half-width w around the corner."""
    return -_smooth_floor(-np.asarray(q, dtype=float), -hi, w)


def _smooth_pairmin(a, b, w):
    """min(a, b) with a Huber-rounded |a-b| so the crossing is C1."""
    u = a - b
    absu = np.where(np.abs(u) >= w, np.abs(u), u * u / (2.0 * w) + 0.5 * w)
    return 0.5 * (a + b) - 0.5 * absu


def _smooth_thw_terms(gap_lead, v_ego, lead_present, gap_lag, v_fol, fol_present, w=0.1):
    lead = np.where(
        lead_present,
        _smooth_ceil(_smooth_floor(gap_lead / np.maximum(v_ego, V_FLOOR), 0.0, w), THW_MAX, w),
        THW_MAX,
    )
    lag = np.where(
        fol_present,
        _smooth_ceil(_smooth_floor(gap_lag / np.maximum(v_fol, V_FLOOR), 0.0, w), THW_MAX, w),
        THW_MAX,
    )
    return lead + lag


def _urgency(d_remain, v_ego):
    t_remain = np.maximum(d_remain / np.maximum(v_ego, V_FLOOR), T_EPS)
    return np.clip(1.0 / t_remain, 0.0, URGE_MAX)


def state_features(s, ctx, net):
    """FeatureVector of a single state in its scene context."""
    centers = net.lane_center_offsets(s.x)
    f_dev = float(np.min(np.abs(centers - s.y)))

    lead_gap = ctx.leader.x - s.x if ctx.leader is not None else 0.0
    fol_gap = s.x - ctx.follower.x if ctx.follower is not None else 0.0
    fol_v = ctx.follower.v_lon if ctx.follower is not None else 0.0
    f_thw = float(
        _thw_terms(
            np.asarray(lead_gap), np.asarray(s.v_lon), ctx.leader is not None,
            np.asarray(fol_gap), np.asarray(fol_v), ctx.follower is not None,
        )
    )
    return FeatureVector(
        f_a=abs(s.a_lon),
        f_thw=f_thw,
        f_dev=f_dev,
        f_w=abs(s.yaw_rate),
        f_m=abs(s.v_lon - ctx.v_lim),
        f_urge=float(_urgency(np.asarray(s.d_remain), np.asarray(s.v_lon))),
    )


def per_state_features(traj, ctx_seq, net):
    """(n, 6) matrix of per-state features, computed from the stored fields."""
    if len(ctx_seq) != len(traj):
        raise DomainError(
            f"context length {len(ctx_seq)} != trajectory length {len(traj)}"
        )
    cols = traj.arrays
    x, y, v = cols["x"], cols["y"], cols["v_lon"]
    n = len(traj)

    lead_x = np.array([c.leader.x if c.leader else 0.0 for c in ctx_seq])
    lead_present = np.array([c.leader is not None for c in ctx_seq])
    fol_x = np.array([c.follower.x if c.follower else 0.0 for c in ctx_seq])
    fol_v = np.array([c.follower.v_lon if c.follower else 0.0 for c in ctx_seq])
    fol_present = np.array([c.follower is not None for c in ctx_seq])
    v_lim = np.array([c.v_lim for c in ctx_seq])

    centers = np.stack([lane.center_y(x) for lane in net.lanes])  # (k, n)
    f_dev = np.min(np.abs(centers - y[None, :]), axis=0)

    out = np.empty((n, N_FEATURES))
    out[:, 0] = np.abs(cols["a_lon"])
    out[:, 1] = _thw_terms(lead_x - x, v, lead_present, x - fol_x, fol_v, fol_present)
    out[:, 2] = f_dev
    out[:, 3] = np.abs(cols["yaw_rate"])
    out[:, 4] = np.abs(v - v_lim)
    out[:, 5] = _urgency(cols["d_remain"], v)
    return out


def trajectory_features(traj, ctx_seq, net):
    """Per-feature L2 norm over time, normalized by sqrt(n)."""
    if len(traj) == 0:
        raise DomainError("empty trajectory")
    f = per_state_features(traj, ctx_seq, net)
    return FeatureVector.from_array(np.sqrt(np.mean(f * f, axis=0)))


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature z-scaling fitted on a training set of aggregate features."""

    mean: tuple
    std: tuple

    @staticmethod
    def fit(feature_rows):
        mat = np.array([np.asarray(r, dtype=float).ravel() for r in feature_rows])
        if mat.size == 0:
            raise DomainError("cannot fit a scaler on an empty feature set")
        mean = mat.mean(axis=0)
        std = np.maximum(mat.std(axis=0), 1e-6)
        return FeatureScaler(tuple(mean), tuple(std))

    @staticmethod
    def identity():
        return FeatureScaler((0.0,) * N_FEATURES, (1.0,) * N_FEATURES)

    def transform(self, feats):
        return (np.asarray(feats, dtype=float) - np.asarray(self.mean)) / np.asarray(self.std)

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}

    @staticmethod
    def from_dict(doc):
        return FeatureScaler(tuple(map(float, doc["mean"])), tuple(map(float, doc["std"])))


# ---------------------------------------------------------------------------
# Reparameterized evaluation: features as a function of per-step lateral
# offsets y and longitudinal speeds v, with the derived state fields rebuilt
# from those variables. This is the feature map the IRL gradients/Hessians
# differentiate and the demo generator optimizes.
# ---------------------------------------------------------------------------


class TrajectoryTemplate:
    """Frozen per-step context for reparameterized feature evaluation."""

    def __init__(self, traj, ctx_seq, net):
        if len(ctx_seq) != len(traj):
            raise DomainError("context/trajectory length mismatch")
        cols = traj.arrays
        self.n = len(traj)
        self.dt = traj.dt
        self.x0 = float(cols["x"][0])
        self.d_end = self.x0 + float(cols["d_remain"][0])
        self.y = cols["y"].copy()
        self.v = cols["v_lon"].copy()
        self.lead_x = np.array([c.leader.x if c.leader else 0.0 for c in ctx_seq])
        self.lead_present = np.array([c.leader is not None for c in ctx_seq])
        self.fol_x = np.array([c.follower.x if c.follower else 0.0 for c in ctx_seq])
        self.fol_v = np.array([c.follower.v_lon if c.follower else 0.0 for c in ctx_seq])
        self.fol_present = np.array([c.follower is not None for c in ctx_seq])
        self.v_lim = np.array([c.v_lim for c in ctx_seq])
        # Lane centers sampled at the recorded stations; station perturbations
        # are far too small to move the (near-parallel) centerlines.
        self.lane_centers = np.stack([lane.center_y(cols["x"]) for lane in net.lanes])


def _gradient_last_axis(arr, dt):
    """np.gradient along the last axis (central interior, one-sided ends)."""
    out = np.empty_like(arr)
    out[..., 1:-1] = (arr[..., 2:] - arr[..., :-2]) / (2.0 * dt)
    out[..., 0] = (arr[..., 1] - arr[..., 0]) / dt
    out[..., -1] = (arr[..., -1] - arr[..., -2]) / dt
    return out


def _forward_diff_last_axis(arr, dt):
    """Forward differences (last entry repeated).

    Used in the reparameterized map instead of central differences: central
    differencing is blind to alternating-sign modes, which an optimizer of
    the rebuilt cost would exploit with sawtooth speed profiles.
    """
    out = np.empty_like(arr)
    out[..., :-1] = (arr[..., 1:] - arr[..., :-1]) / dt
    out[..., -1] = out[..., -2]
    return out


def rebuild_feature_matrix(y, v, tpl, corner_width=0.05):
    """Per-step feature matrix (..., n, 6) rebuilt from offsets y and speeds v.

    x comes from trapezoidal integration of v, a_lon and yaw rate from central
    differences, yaw from atan2(v_lat, v_lon) and d_remain from the rebuilt
    station, so every feature responds to the (y, v) variables. Clamp corners
    and the nearest-lane crossover are C1-rounded (width `corner_width`).
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    dt = tpl.dt

    inc = 0.5 * dt * (v[..., 1:] + v[..., :-1])
    zero = np.zeros(v.shape[:-1] + (1,))
    x = tpl.x0 + np.concatenate([zero, np.cumsum(inc, axis=-1)], axis=-1)

    a_lon = _forward_diff_last_axis(v, dt)
    v_lat = _forward_diff_last_axis(y, dt)
    yaw = np.arctan2(v_lat, np.maximum(v, V_FLOOR))
    yaw_rate = _forward_diff_last_axis(yaw, dt)
    d_remain = _smooth_floor(tpl.d_end - x, 0.0, 10.0 * corner_width)

    w = corner_width
    # the nearest-lane crossover ridge is genuinely concave; a wide blend
    # keeps its finite-difference curvature small enough for ridging
    dists = np.abs(y[..., None, :] - tpl.lane_centers)
    f_dev = dists[..., 0, :]
    for k in range(1, dists.shape[-2]):
        f_dev = _smooth_pairmin(f_dev, dists[..., k, :], 8.0 * w)
    f_thw = _smooth_thw_terms(
        tpl.lead_x - x, v, tpl.lead_present, x - tpl.fol_x, tpl.fol_v,
        tpl.fol_present, w,
    )
    t_remain = _smooth_floor(d_remain / np.maximum(v, V_FLOOR), T_EPS, w)
    f_urge = _smooth_ceil(1.0 / t_remain, URGE_MAX, w)
    return np.stack(
        [
            np.abs(a_lon),
            f_thw,
            f_dev,
            np.abs(yaw_rate),
            np.abs(v - tpl.v_lim),
            f_urge,
        ],
        axis=-1,
    )


# Aggregation floors (per feature) for the reparameterized map: the plain L2
# norm has a cone at zero whose finite-difference curvature is unbounded, so
# the differentiable aggregate is sqrt(mean f^2 + floor^2). Floors sit well
# below typical active-feature levels.
AGGREGATE_FLOOR = np.array([0.06, 0.6, 0.07, 0.004, 0.25, 0.03])


def rebuild_trajectory_features(y, v, tpl):
    """Aggregate (..., 6) features from (..., n) offsets and speeds."""
    f = rebuild_feature_matrix(y, v, tpl)
    return np.sqrt(np.mean(f * f, axis=-2) + AGGREGATE_FLOOR**2)


def rebuild_states(y, v, tpl, t0=0.0):
    """Materialize a Trajectory from per-step (y, v) with consistent derived fields."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    if y.ndim != 1 or v.ndim != 1:
        raise DomainError("rebuild_states expects 1-d variables")
    dt = tpl.dt
    x = tpl.x0 + np.concatenate(([0.0], np.cumsum(0.5 * dt * (v[1:] + v[:-1]))))
    a_lon = _forward_diff_last_axis(v, dt)
    v_lat = _forward_diff_last_axis(y, dt)
    yaw = np.arctan2(v_lat, np.maximum(v, V_FLOOR))
    yaw_rate = _forward_diff_last_axis(yaw, dt)
    d_remain = np.maximum(tpl.d_end - x, 0.0)
    states = [
        VehicleState(
            t=t0 + i * dt,
            x=float(x[i]),
            y=float(y[i]),
            v_lon=float(max(v[i], 0.0)),
            v_lat=float(v_lat[i]),
            a_lon=float(a_lon[i]),
            yaw=float(yaw[i]),
            yaw_rate=float(yaw_rate[i]),
            d_remain=float(d_remain[i]),
        )
        for i in range(len(v))
    ]
    return Trajectory(tuple(states), dt)


# ---------------------------------------------------------------------------
# Scene-context CSV (leader/follower states alongside a trajectory file).
# ---------------------------------------------------------------------------

_CTX_HEADER = (
    ["t", "v_lim"]
    + [f"lead_{f}" for f in VehicleState.FIELDS]
    + [f"fol_{f}" for f in VehicleState.FIELDS]
)


def write_context_csv(ctx_seq, times, path):
    if len(ctx_seq) != len(times):
        raise DomainError("context/time length mismatch")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_CTX_HEADER)
        for t, ctx in zip(times, ctx_seq):
            row = ["%.17g" % t, "%.17g" % ctx.v_lim]
            for veh in (ctx.leader, ctx.follower):
                if veh is None:
                    row.extend([""] * len(VehicleState.FIELDS))
                else:
                    row.extend("%.17g" % v for v in veh.as_tuple())
            w.writerow(row)


def read_context_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != _CTX_HEADER:
        raise DomainError(f"{path}: unexpected context header")
    n_f = len(VehicleState.FIELDS)
    out = []
    for row in rows[1:]:
        if not row:
            continue
        v_lim = float(row[1])
        lead_vals = row[2:2 + n_f]
        fol_vals = row[2 + n_f:2 + 2 * n_f]
        leader = VehicleState(*map(float, lead_vals)) if lead_vals[0] != "" else None
        follower = VehicleState(*map(float, fol_vals)) if fol_vals[0] != "" else None
        out.append(SceneContext(leader=leader, follower=follower, v_lim=v_lim))
    return out


def no_traffic_context(v_lim, n):
    """Context stream with no mainline neighbors (free-flow)."""
    return [SceneContext(leader=None, follower=None, v_lim=v_lim)] * n
