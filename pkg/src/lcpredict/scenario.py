"""Synthetic on-ramp merge scenarios and per-driver datasets.

Each trip simulates a ramp vehicle (RV) against two mainline vehicles: MV1 is
speed-guided to meet the RV at the observable point (following the RV's
virtual projection on the mainline with zero desired gap), MV2 trails MV1 as
the observer. The RV's maneuver plan is cost-guided: a nominal conflict is
simulated, a family of plan variants (change onset, duration, pause, speed
plan) is scored under the profile's true simplex weights, and the winning
window is locally refined by projected gradient descent on that cost. The
demonstrations this produces are therefore (near) locally optimal under the
generating weights, which is exactly what the IRL trainer assumes.

Recorded traces carry a smooth, slowly varying positioning drift (RTK-grade,
0.1 m RMS) so differentiated positions stay consistent with recorded speeds.
"""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import geometry
from .core.types import (
    GeoPoint,
    Lane,
    ManeuverLabel,
    RoadNetwork,
    RoadSegment,
    Trajectory,
    VehicleState,
)
from .core import io as core_io
from .errors import DomainError
from .features import (
    FeatureScaler,
    SceneContext,
    TrajectoryTemplate,
    rebuild_trajectory_features,
    write_context_csv,
)
from .irl import Demonstration

# Feature spreads used to scale costs at generation time (std of a z-scaler
# with zero mean). Training fits its own scaler from data; the recovery
# acceptance test passes this one in so both sides share the scaling.
REFERENCE_SCALES = (0.35, 4.0, 0.45, 0.02, 1.6, 0.18)


def reference_scaler():
    return FeatureScaler(mean=(0.0,) * 6, std=REFERENCE_SCALES)


class Response:
    YIELD_BEHIND = "YieldBehind"
    ACCELERATE_AHEAD = "AccelerateAhead"


@dataclass(frozen=True)
class DriverProfile:
    name: str
    theta_change_true: tuple
    theta_keep_true: tuple
    gap_acceptance: float  # min projected headway to start the change [s]
    response: str  # Response.*
    desired_speed: float  # [m/s]
    lane_change_duration: float  # [s]
    noise_seed: int = 0

    def __post_init__(self):
        for th in (self.theta_change_true, self.theta_keep_true):
            arr = np.asarray(th, float)
            if arr.shape != (6,) or np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-9:
                raise DomainError(f"profile weights must lie on the simplex: {th}")
        if self.gap_acceptance <= 0:
            raise DomainError("gap_acceptance must be positive")


def cautious_profile():
    """Yields to the conflicting vehicle; gentle accelerations, slower speeds."""
    return DriverProfile(
        name="cautious",
        theta_change_true=(0.58, 0.12, 0.05, 0.08, 0.04, 0.13),
        theta_keep_true=(0.40, 0.0, 0.22, 0.30, 0.08, 0.0),
        gap_acceptance=1.4,
        response=Response.YIELD_BEHIND,
        desired_speed=14.5,
        lane_change_duration=6.0,
        noise_seed=11,
    )


def aggressive_profile():
    """Accelerates to cut in ahead; fast changes, speed-seeking."""
    return DriverProfile(
        name="aggressive",
        theta_change_true=(0.33, 0.27, 0.05, 0.03, 0.18, 0.14),
        theta_keep_true=(0.26, 0.0, 0.18, 0.06, 0.50, 0.0),
        gap_acceptance=0.7,
        response=Response.ACCELERATE_AHEAD,
        desired_speed=17.2,
        lane_change_duration=4.0,
        noise_seed=23,
    )


BUILTIN_PROFILES = {"cautious": cautious_profile, "aggressive": aggressive_profile}


@dataclass(frozen=True)
class ScenarioConfig:
    ramp_length: float = 560.0
    merge_zone: tuple = (420.0, 540.0)
    observable_point: float = 320.0
    v_lim: float = 17.9
    mainline_flow: tuple = ((0.0, 16.0), (1.6, 15.5))  # (entry time, speed) MV1, MV2
    dt: float = 0.2
    trip_count: int = 20
    lane_width: float = 4.0
    noise_rms: float = 0.1  # RTK drift amplitude [m]

    def __post_init__(self):
        if not (0 < self.merge_zone[0] < self.merge_zone[1] <= self.ramp_length):
            raise DomainError("merge zone must sit inside the ramp extent")
        d_change = self.merge_zone[1] - self.merge_zone[0]
        if d_change < 8.0 * self.dt * 20:
            raise DomainError("merge zone shorter than one lane change")


def default_network(cfg=None):
    """Two-lane merge geometry: ramp lane at y=0 feeding the mainline at y=4."""
    cfg = cfg or ScenarioConfig()
    origin = GeoPoint(33.9737, -117.3281)
    w = cfg.lane_width

    def geo(x, y):
        return geometry.from_local(x, y, origin)

    ramp = RoadSegment(
        "ramp",
        (geo(0.0, 0.0), geo(cfg.ramp_length, 0.0)),
        successors=("mainline",),
    )
    mainline = RoadSegment(
        "mainline",
        (geo(-200.0, w), geo(1200.0, w)),
        successors=(),
    )
    lanes = (
        Lane("ramp", ((-50.0, 0.0), (cfg.ramp_length, 0.0)), w),
        Lane("mainline", ((-200.0, w), (1200.0, w)), w),
    )
    return RoadNetwork(
        segments=(ramp, mainline),
        lanes=lanes,
        merge_zone=cfg.merge_zone,
        origin=origin,
    )


# ---------------------------------------------------------------------------
# Car following.
# ---------------------------------------------------------------------------

IDM_A_MAX = 2.0  # [m/s^2]
IDM_B = 2.5
IDM_S0 = 2.0  # jam spacing [m]
IDM_T = 1.2  # desired headway [s]
GUIDANCE_KP = 0.25  # virtual-projection gap gain [1/s]
JERK_LIMIT = 3.0  # [m/s^3]; keeps integrated positions consistent with speeds


def idm_accel(v, v_des, gap=None, dv=None, t_head=IDM_T):
    """Intelligent-driver-style acceleration toward v_des, optionally
    constrained by a leader at distance gap closing at rate dv."""
    free = 1.0 - (max(v, 0.0) / max(v_des, 0.1)) ** 4
    if gap is None:
        return IDM_A_MAX * free
    s_star = IDM_S0 + max(0.0, v * t_head + v * dv / (2.0 * math.sqrt(IDM_A_MAX * IDM_B)))
    return IDM_A_MAX * (free - (s_star / max(gap, 0.5)) ** 2)


def speed_guidance(rv, mv1, net, v_lim=17.9):
    """Advised MV1 speed: zero-gap car following of the RV's virtual
    projection on the mainline, clamped to [0, 1.2 v_lim]."""
    advised = rv.v_lon + GUIDANCE_KP * (rv.x - mv1.x)
    return float(min(max(advised, 0.0), 1.2 * v_lim))


# ---------------------------------------------------------------------------
# Trip simulation.
# ---------------------------------------------------------------------------


@dataclass
class TripData:
    trajectory: Trajectory
    ctx_seq: list
    crossing_time: float | None
    label: ManeuverLabel
    kind: str  # "merge" | "offramp"
    window: tuple  # demonstration slice [start, stop) into the trajectory
    seed: int
    mv1: Trajectory | None = None
    mv2: Trajectory | None = None


def _two_phase_lateral(ts, onset, duration, pause_frac, target, cross_y=2.3):
    """Lateral profile: quintic to just past the separation line, optional
    pause, then a slower quintic to the target centerline."""
    from .trajgen import polyval, quintic

    y = np.zeros_like(ts)
    if pause_frac <= 0.0:
        c = quintic(0.0, 0.0, 0.0, target, 0.0, 0.0, duration)
        tt = np.clip(ts - onset, 0.0, duration)
        y = np.where(ts >= onset, polyval(c, tt), 0.0)
        return np.where(ts >= onset + duration, target, y)
    d1 = 0.45 * duration
    hold = pause_frac * duration
    d2 = duration - d1 - hold
    c1 = quintic(0.0, 0.0, 0.0, cross_y, 0.0, 0.0, d1)
    c2 = quintic(cross_y, 0.0, 0.0, target, 0.0, 0.0, d2)
    rel = ts - onset
    y = np.zeros_like(ts)
    m1 = (rel >= 0) & (rel < d1)
    m2 = (rel >= d1) & (rel < d1 + hold)
    m3 = (rel >= d1 + hold) & (rel < duration)
    y[m1] = polyval(c1, rel[m1])
    y[m2] = cross_y
    y[m3] = polyval(c2, rel[m3] - d1 - hold)
    y[rel >= duration] = target
    return y


def _mainline_leader(x, vehicles):
    """Nearest (x, v) ahead of station x among mainline-occupants."""
    best = None
    for vx, vv in vehicles:
        if vx > x and (best is None or vx < best[0]):
            best = (vx, vv)
    return best


def _simulate_vehicles(profile, cfg, rng, kind):
    """Nominal forward simulation. Returns per-step arrays for the RV and the
    mainline vehicles, plus the feasible/forced change onset indices."""
    dt = cfg.dt
    n_max = int(60.0 / dt)
    has_flow = kind == "merge" and len(cfg.mainline_flow) > 0

    rv_x = np.zeros(n_max); rv_v = np.zeros(n_max)
    rv_x[0] = 0.0
    rv_v[0] = profile.desired_speed * (0.92 + 0.06 * rng.random())

    rv_acc_prev = 0.0
    mv = []  # per mainline vehicle: dict(entry_t, speed, x, v, guided)
    if has_flow:
        for k, (entry_t, speed) in enumerate(cfg.mainline_flow):
            jitter = rng.uniform(-18.0, 12.0) if k == 0 else 0.0
            mv.append({
                "entry_t": entry_t,
                "v_flow": speed,
                "x": np.full(n_max, np.nan),
                "v": np.full(n_max, np.nan),
                "guided": k == 0,
                "x0": rv_x[0] + jitter - 45.0 * k,
                "v0": speed,
                "acc_prev": 0.0,
            })

    v_des = profile.desired_speed
    boost = 1.15 if profile.response == Response.ACCELERATE_AHEAD else 1.0
    onset_feasible = None
    change_onset = None
    lateral_started = False
    y_now = 0.0

    n_end = n_max
    for i in range(n_max - 1):
        t = i * dt
        # mainline updates
        merged = lateral_started and y_now >= cfg.lane_width / 2.0
        occupants = []
        for m in mv:
            if t >= m["entry_t"] and math.isnan(m["x"][i]):
                m["x"][i] = m["x0"]
                m["v"][i] = m["v0"]
            if not math.isnan(m["x"][i]):
                occupants.append((m["x"][i], m["v"][i]))
        if merged:
            occupants.append((rv_x[i], rv_v[i]))

        for m in mv:
            if math.isnan(m["x"][i]):
                continue
            others = [o for o in occupants if abs(o[0] - m["x"][i]) > 1e-9]
            lead = _mainline_leader(m["x"][i], others)
            if m["guided"] and rv_x[i] < cfg.observable_point:
                advised = rv_v[i] + GUIDANCE_KP * (rv_x[i] - m["x"][i])
                advised = min(max(advised, 0.0), 1.2 * cfg.v_lim)
                acc = np.clip((advised - m["v"][i]) / dt, -2.5, 2.5)
            elif lead is not None:
                acc = idm_accel(m["v"][i], m["v_flow"], lead[0] - m["x"][i],
                                m["v"][i] - lead[1])
            else:
                acc = idm_accel(m["v"][i], m["v_flow"])
            acc = float(np.clip(acc, -4.0, 2.5))
            acc = float(np.clip(acc, m["acc_prev"] - JERK_LIMIT * dt,
                                m["acc_prev"] + JERK_LIMIT * dt))
            m["acc_prev"] = acc
            m["v"][i + 1] = max(m["v"][i] + acc * dt, 0.0)
            m["x"][i + 1] = m["x"][i] + 0.5 * dt * (m["v"][i] + m["v"][i + 1])

        # RV response & longitudinal
        target_speed = v_des
        leader = None
        if has_flow and rv_x[i] >= cfg.observable_point:
            mv1 = mv[0]
            if not math.isnan(mv1["x"][i]):
                if profile.response == Response.YIELD_BEHIND:
                    leader = (mv1["x"][i], mv1["v"][i])
                else:
                    target_speed = v_des * boost
        if merged:
            ahead = _mainline_leader(rv_x[i], [(m["x"][i], m["v"][i]) for m in mv
                                               if not math.isnan(m["x"][i])])
            if leader is None or (ahead is not None and ahead[0] < leader[0]):
                leader = ahead if ahead is not None else leader
        if leader is not None:
            acc = idm_accel(rv_v[i], target_speed, leader[0] - rv_x[i],
                            rv_v[i] - leader[1])
        else:
            acc = idm_accel(rv_v[i], target_speed)
        acc = float(np.clip(acc, -4.0, 2.5))
        acc = float(np.clip(acc, rv_acc_prev - JERK_LIMIT * dt,
                            rv_acc_prev + JERK_LIMIT * dt))
        rv_acc_prev = acc
        rv_v[i + 1] = max(rv_v[i] + acc * dt, 0.0)
        rv_x[i + 1] = rv_x[i] + 0.5 * dt * (rv_v[i] + rv_v[i + 1])

        # change feasibility inside the merge zone
        if kind == "merge" and change_onset is None and rv_x[i] >= cfg.merge_zone[0]:
            lead_thw, lag_thw = _projected_headways(rv_x[i], rv_v[i], mv, i)
            must_start = rv_x[i] >= (
                cfg.merge_zone[1] - 1.1 * profile.lane_change_duration * max(rv_v[i], 5.0)
            )
            if (lead_thw > profile.gap_acceptance and lag_thw > profile.gap_acceptance) or must_start:
                change_onset = i
                if onset_feasible is None:
                    onset_feasible = i
                lateral_started = True
        if lateral_started and change_onset is not None:
            rel = (i - change_onset) * dt
            y_now = min(cfg.lane_width, cfg.lane_width * rel / max(profile.lane_change_duration, 1e-6))

        done_merge = kind == "merge" and change_onset is not None and (
            (i - change_onset) * dt > 1.3 * profile.lane_change_duration + 6.0
        )
        done_off = kind == "offramp" and rv_x[i + 1] >= cfg.ramp_length
        if done_merge or done_off or rv_x[i + 1] >= cfg.ramp_length:
            n_end = i + 2
            break

    return {
        "n": n_end,
        "rv_x": rv_x[:n_end],
        "rv_v": rv_v[:n_end],
        "mv": [{k: (v[:n_end] if isinstance(v, np.ndarray) else v) for k, v in m.items()}
               for m in mv],
        "change_onset": change_onset,
    }


def _projected_headways(x, v, mv, i):
    lead_thw = math.inf
    lag_thw = math.inf
    for m in mv:
        mx, mvv = m["x"][i], m["v"][i]
        if math.isnan(mx):
            continue
        if mx >= x:
            lead_thw = min(lead_thw, (mx - x) / max(v, 0.1))
        else:
            lag_thw = min(lag_thw, (x - mx) / max(mvv, 0.1))
    return lead_thw, lag_thw


def _smooth_drift(n, dt, rms, rng):
    """Slowly varying positioning error; |d/dt| stays well under 0.05 m/s."""
    t = np.arange(n) * dt
    periods = (97.0, 127.0, 157.0)
    amp = rms * math.sqrt(2.0 / len(periods))
    out = np.zeros(n)
    for p in periods:
        out += amp * np.sin(2.0 * math.pi * t / p + rng.uniform(0, 2 * math.pi))
    return out


def _speed_variant(base_v, start, v_target_scale, v_des, dt):
    """Re-shape speeds from `start` toward a scaled desired speed with IDM-like
    relaxation; keeps the pre-onset profile untouched."""
    v = base_v.copy()
    tgt = v_des * v_target_scale
    acc_prev = (v[start] - v[start - 1]) / dt if start > 0 else 0.0
    for i in range(start, len(v) - 1):
        acc = idm_accel(v[i], tgt)
        acc = float(np.clip(acc, -3.0, 2.5))
        acc = float(np.clip(acc, acc_prev - JERK_LIMIT * dt, acc_prev + JERK_LIMIT * dt))
        acc_prev = acc
        v[i + 1] = max(v[i] + acc * dt, 0.0)
    return v


# ---------------------------------------------------------------------------
# Cost-guided plan selection and window refinement.
# ---------------------------------------------------------------------------


def _window_template(y, v, sim, cfg, net, i0, i1, offramp=False):
    """TrajectoryTemplate over trip slice [i0, i1) built from raw arrays."""
    dt = cfg.dt
    states = []
    x = _integrate_x(v, dt)
    d_end = x[i0] + 1000.0 if offramp else cfg.merge_zone[1]
    for i in range(i0, i1):
        states.append(
            VehicleState(
                t=i * dt, x=float(x[i]), y=float(y[i]), v_lon=float(max(v[i], 0.0)),
                v_lat=0.0, a_lon=0.0, yaw=0.0, yaw_rate=0.0,
                d_remain=float(max(d_end - x[i], 0.0)),
            )
        )
    traj = Trajectory(tuple(states), dt)
    ctx = _contexts_for(x[i0:i1], sim, cfg, i0)
    return TrajectoryTemplate(traj, ctx, net)


def _integrate_x(v, dt, x0=0.0):
    return x0 + np.concatenate(([0.0], np.cumsum(0.5 * dt * (v[1:] + v[:-1]))))


def _contexts_for(x_slice, sim, cfg, i0):
    """SceneContext per step: nearest mainline vehicle ahead/behind the RV."""
    out = []
    dt = cfg.dt
    for k, x in enumerate(x_slice):
        i = i0 + k
        leader = None
        follower = None
        for m in sim["mv"]:
            mx = m["x"][i] if i < len(m["x"]) else np.nan
            if math.isnan(mx):
                continue
            mvv = m["v"][i]
            st = VehicleState(
                t=i * dt, x=float(mx), y=cfg.lane_width, v_lon=float(max(mvv, 0.0)),
                v_lat=0.0, a_lon=0.0, yaw=0.0, yaw_rate=0.0, d_remain=0.0,
            )
            if mx >= x:
                if leader is None or mx < leader.x:
                    leader = st
            else:
                if follower is None or mx > follower.x:
                    follower = st
        out.append(SceneContext(leader=leader, follower=follower, v_lim=cfg.v_lim))
    return out


def _scaled_cost(theta):
    c = np.asarray(theta, float) / np.asarray(REFERENCE_SCALES)
    return c


def _window_cost(y_win, v_win, tpl, c):
    F = rebuild_trajectory_features(y_win, v_win, tpl)
    return F @ c


def _refine_window(y_win, v_win, tpl, c, free_mask_y, free_mask_v,
                   y_bounds, v_bounds, iters=25, h=1e-3, grad_tol=2e-4):
    """Projected Newton descent of the scaled cost over free (y, v) entries.

    The window is small (~100 variables), so full finite-difference Hessians
    are cheap and the stiff yaw-rate operator converges in a handful of
    steps; plain gradient descent stalls on it.
    """
    from .irl import feature_derivatives

    y = y_win.copy()
    v = v_win.copy()
    n = len(y)
    free = np.concatenate([free_mask_y, free_mask_v])
    idx = np.where(free)[0]
    if len(idx) == 0:
        return y, v
    lo = np.concatenate([y_bounds[0], v_bounds[0]])
    hi = np.concatenate([y_bounds[1], v_bounds[1]])
    cost = float(_window_cost(y, v, tpl, c))
    for _ in range(iters):
        dd = feature_derivatives(tpl, y, v, h)
        g = (dd.grad.T @ c)[idx]
        if np.max(np.abs(g)) < grad_tol:
            break
        Hc = np.tensordot(c, dd.hess, axes=1)[np.ix_(idx, idx)]
        Hc = 0.5 * (Hc + Hc.T)
        ridge = 1e-6
        while True:
            try:
                L = np.linalg.cholesky(Hc + ridge * np.eye(len(idx)))
                break
            except np.linalg.LinAlgError:
                ridge = max(ridge * 10.0, 1e-4)
                if ridge > 1e3:
                    return y, v
        step = np.linalg.solve(L.T, np.linalg.solve(L, -g))
        xi = np.concatenate([y, v])
        improved = False
        alpha = 1.0
        for _ in range(10):
            xi_new = xi.copy()
            xi_new[idx] = np.clip(xi[idx] + alpha * step, lo[idx], hi[idx])
            c_new = float(_window_cost(xi_new[:n], xi_new[n:], tpl, c))
            if c_new < cost - 1e-12:
                y, v = xi_new[:n].copy(), xi_new[n:].copy()
                cost = c_new
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    return y, v


def _select_merge_plan(profile, sim, cfg, net, rng):
    """Enumerate change-plan variants, score them under the true weights, and
    return (y array, v array, onset index, duration) of the winner."""
    dt = cfg.dt
    n = sim["n"]
    ts = np.arange(n) * dt
    onset0 = sim["change_onset"]
    if onset0 is None:
        onset0 = n - int(6.0 / dt)
    c = _scaled_cost(profile.theta_change_true)

    onset_delays = (0.0, 0.6, 1.2)
    dur_scales = (0.75, 1.0, 1.25)
    pauses = (0.0, 0.15) if profile.response == Response.YIELD_BEHIND else (0.0,)
    speed_scales = (0.94, 1.0, 1.06)

    best = None
    for d_on in onset_delays:
        onset_i = onset0 + int(round(d_on / dt))
        for ds in dur_scales:
            dur = profile.lane_change_duration * ds
            end_i = onset_i + int(math.ceil(dur / dt)) + int(2.0 / dt)
            if end_i + 2 >= n:
                continue
            onset_t = onset_i * dt
            # change must complete inside the zone
            for pause in pauses:
                y = _two_phase_lateral(ts, onset_t, dur, pause, cfg.lane_width)
                for vs in speed_scales:
                    v = _speed_variant(sim["rv_v"], onset_i, vs, profile.desired_speed, dt)
                    x_end = _integrate_x(v, dt)[min(end_i, n - 1)]
                    if x_end > cfg.merge_zone[1] + 30.0:
                        continue
                    i0 = max(onset_i - int(3.0 / dt), 0)
                    i1 = min(onset_i + int(math.ceil((dur + 2.0) / dt)), n)
                    tpl = _window_template(y, v, sim, cfg, net, i0, i1)
                    cost = float(_window_cost(y[i0:i1], v[i0:i1], tpl, c))
                    if best is None or cost < best[0]:
                        best = (cost, y, v, onset_i, dur, i0, i1)
    if best is None:
        # fall back to the nominal plan
        dur = profile.lane_change_duration
        y = _two_phase_lateral(ts, onset0 * dt, dur,
                               0.15 if profile.response == Response.YIELD_BEHIND else 0.0,
                               cfg.lane_width)
        v = sim["rv_v"].copy()
        i0 = max(onset0 - int(3.0 / dt), 0)
        i1 = min(onset0 + int(math.ceil((dur + 2.0) / dt)), n)
        best = (0.0, y, v, onset0, dur, i0, i1)
    return best[1:]


def _select_keep_plan(profile, sim, cfg, net, rng):
    """Lane-keeping plan: seeded lateral disturbances the driver must absorb
    plus a speed plan chosen under the true weights."""
    dt = cfg.dt
    n = sim["n"]
    c = _scaled_cost(profile.theta_keep_true)

    i0 = max(int(n / 3), 2)
    i1 = min(i0 + int(10.0 / dt), n - 2)

    # exogenous disturbance pins inside the window
    n_pins = 3
    pin_idx = np.sort(rng.choice(np.arange(i0 + 4, i1 - 4), size=n_pins, replace=False))
    pin_off = rng.uniform(0.18, 0.42, size=n_pins) * rng.choice((-1.0, 1.0), size=n_pins)

    best = None
    for vs in (0.92, 1.0, 1.08):
        v = _speed_variant(sim["rv_v"], i0, vs, profile.desired_speed, dt)
        y = np.zeros(n)
        # initial guess: linear hat around each pin
        for pi, off in zip(pin_idx, pin_off):
            half = int(1.2 / dt)
            for k in range(-half, half + 1):
                j = pi + k
                if i0 <= j < i1:
                    y[j] += off * max(0.0, 1.0 - abs(k) / half)
        tpl = _window_template(y, v, sim, cfg, net, i0, i1, offramp=True)
        cost = float(_window_cost(y[i0:i1], v[i0:i1], tpl, c))
        if best is None or cost < best[0]:
            best = (cost, y, v)
    _, y, v = best
    return y, v, pin_idx, pin_off, i0, i1


def simulate_trip(profile, cfg, trip_seed, kind="merge", net=None, refine_iters=120):
    """Simulate one trip; returns TripData with the recorded (noisy) trajectory,
    per-step contexts, crossing time and the demonstration window."""
    if kind not in ("merge", "offramp"):
        raise DomainError(f"unknown trip kind {kind}")
    cfg = cfg or ScenarioConfig()
    net = net or default_network(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([trip_seed, profile.noise_seed]))
    dt = cfg.dt

    sim = _simulate_vehicles(profile, cfg, rng, kind)
    n = sim["n"]

    if kind == "merge":
        y, v, onset_i, dur, i0, i1 = _select_merge_plan(profile, sim, cfg, net, rng)
        c = _scaled_cost(profile.theta_change_true)
        tpl = _window_template(y, v, sim, cfg, net, i0, i1)
        free_y = np.ones(i1 - i0, dtype=bool)
        free_y[:2] = False
        free_y[-2:] = False
        free_v = np.ones(i1 - i0, dtype=bool)
        free_v[:2] = False
        y_lo = np.full(i1 - i0, -0.5); y_hi = np.full(i1 - i0, cfg.lane_width + 0.5)
        v_win = v[i0:i1]
        v_lo = np.maximum(v_win - 3.0, 0.2); v_hi = np.minimum(v_win + 3.0, 1.25 * cfg.v_lim)
        y_ref, v_ref = _refine_window(
            y[i0:i1], v_win, tpl, c, free_y, free_v, (y_lo, y_hi), (v_lo, v_hi),
            iters=refine_iters,
        )
        y = y.copy(); v = v.copy()
        y[i0:i1] = y_ref
        v[i0:i1] = v_ref
        label = ManeuverLabel.CHANGE
    else:
        y, v, pin_idx, pin_off, i0, i1 = _select_keep_plan(profile, sim, cfg, net, rng)
        c = _scaled_cost(profile.theta_keep_true)
        tpl = _window_template(y, v, sim, cfg, net, i0, i1, offramp=True)
        m = i1 - i0
        free_y = np.ones(m, dtype=bool)
        free_y[:2] = False
        free_y[-2:] = False
        for pi in pin_idx:
            free_y[pi - i0] = False
        free_v = np.ones(m, dtype=bool)
        free_v[:2] = False
        y_lo = np.full(m, -1.2); y_hi = np.full(m, 1.2)
        v_win = v[i0:i1]
        v_lo = np.maximum(v_win - 3.0, 0.2); v_hi = np.minimum(v_win + 3.0, 1.25 * cfg.v_lim)
        y_ref, v_ref = _refine_window(
            y[i0:i1], v_win, tpl, c, free_y, free_v, (y_lo, y_hi), (v_lo, v_hi),
            iters=refine_iters,
        )
        y = y.copy(); v = v.copy()
        y[i0:i1] = y_ref
        v[i0:i1] = v_ref
        label = ManeuverLabel.KEEP

    # binomial passes keep the integrated positions consistent with the
    # recorded speeds at corner points the refiner may have sharpened
    for _ in range(3):
        v_s = v.copy()
        v_s[1:-1] = 0.25 * v[:-2] + 0.5 * v[1:-1] + 0.25 * v[2:]
        v = v_s

    # derived fields + recording noise
    x = _integrate_x(v, dt)
    drift_x = _smooth_drift(n, dt, cfg.noise_rms, rng)
    drift_y = _smooth_drift(n, dt, cfg.noise_rms, rng)
    x_rec = x + drift_x
    y_rec = y + drift_y

    a_lon = np.gradient(v, dt)
    v_lat = np.gradient(y, dt)
    yaw = np.arctan2(v_lat, np.maximum(v, 0.1))
    yaw_rate = np.gradient(yaw, dt)
    if kind == "merge":
        d_remain = np.maximum(cfg.merge_zone[1] - x_rec, 0.0)
    else:
        d_remain = np.full(n, 1000.0)

    states = [
        VehicleState(
            t=i * dt, x=float(x_rec[i]), y=float(y_rec[i]), v_lon=float(max(v[i], 0.0)),
            v_lat=float(v_lat[i]), a_lon=float(a_lon[i]), yaw=float(yaw[i]),
            yaw_rate=float(yaw_rate[i]), d_remain=float(d_remain[i]),
        )
        for i in range(n)
    ]
    traj = Trajectory(tuple(states), dt)
    ctx_seq = _contexts_for(x_rec, sim, cfg, 0)

    crossing_time = None
    if kind == "merge":
        crossed = np.where(np.abs(y) >= cfg.lane_width - 1e-9)[0]
        if len(crossed):
            crossing_time = float(crossed[0] * dt)

    mv_trajs = []
    for m in sim["mv"]:
        mv_states = []
        for i in range(n):
            if math.isnan(m["x"][i]):
                continue
            mv_states.append(
                VehicleState(
                    t=i * dt, x=float(m["x"][i]), y=cfg.lane_width,
                    v_lon=float(max(m["v"][i], 0.0)), v_lat=0.0,
                    a_lon=0.0, yaw=0.0, yaw_rate=0.0, d_remain=0.0,
                )
            )
        mv_trajs.append(Trajectory(tuple(mv_states), dt) if mv_states else None)
    while len(mv_trajs) < 2:
        mv_trajs.append(None)

    return TripData(
        trajectory=traj,
        ctx_seq=ctx_seq,
        crossing_time=crossing_time,
        label=label,
        kind=kind,
        window=(int(i0), int(i1)),
        seed=int(trip_seed),
        mv1=mv_trajs[0],
        mv2=mv_trajs[1],
    )


def demonstration_from_trip(trip):
    """Windowed Demonstration (the slice the plan optimizer shaped)."""
    i0, i1 = trip.window
    return Demonstration(
        traj=trip.trajectory.window(i0, i1),
        ctx_seq=tuple(trip.ctx_seq[i0:i1]),
        label=trip.label,
    )


# ---------------------------------------------------------------------------
# Dataset building.
# ---------------------------------------------------------------------------


def build_dataset(profiles, cfg, out_dir, master_seed=7, trips_per_kind=None, net=None):
    """Write per-driver trip CSVs plus a manifest; deterministic per seed.

    Returns {profile_name: manifest_dict}.
    """
    cfg = cfg or ScenarioConfig()
    net = net or default_network(cfg)
    out_dir = Path(out_dir)
    trips_per_kind = trips_per_kind or cfg.trip_count
    result = {}
    for p_idx, profile in enumerate(profiles):
        pdir = out_dir / profile.name
        (pdir / "trips").mkdir(parents=True, exist_ok=True)
        manifest = {
            "profile": {
                "name": profile.name,
                "theta_change_true": list(profile.theta_change_true),
                "theta_keep_true": list(profile.theta_keep_true),
                "gap_acceptance": profile.gap_acceptance,
                "response": profile.response,
                "desired_speed": profile.desired_speed,
                "lane_change_duration": profile.lane_change_duration,
                "noise_seed": profile.noise_seed,
            },
            "config": asdict(cfg),
            "master_seed": int(master_seed),
            "trips": [],
        }
        trip_no = 0
        for kind in ("merge", "offramp"):
            for k in range(trips_per_kind):
                seed = int(np.random.SeedSequence([master_seed, p_idx, trip_no]).generate_state(1)[0] % (2**31))
                trip = simulate_trip(profile, cfg, seed, kind=kind, net=net)
                stem = f"trip_{trip_no:03d}"
                core_io.write_trajectory_csv(trip.trajectory, pdir / "trips" / f"{stem}.csv")
                write_context_csv(
                    trip.ctx_seq,
                    [s.t for s in trip.trajectory.states],
                    pdir / "trips" / f"{stem}_ctx.csv",
                )
                manifest["trips"].append({
                    "trip_id": stem,
                    "kind": kind,
                    "seed": seed,
                    "label": trip.label.value,
                    "crossing_time": trip.crossing_time,
                    "window": list(trip.window),
                    "n_samples": len(trip.trajectory),
                })
                trip_no += 1
        n_change = sum(1 for t in manifest["trips"] if t["label"] == "change")
        manifest["label_summary"] = {
            "change_trips": n_change,
            "keep_trips": len(manifest["trips"]) - n_change,
        }
        with open(pdir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
        result[profile.name] = manifest
    return result


def load_trip(pdir, entry):
    from .features import read_context_csv

    pdir = Path(pdir)
    traj = core_io.read_trajectory_csv(pdir / "trips" / f"{entry['trip_id']}.csv")
    ctx = read_context_csv(pdir / "trips" / f"{entry['trip_id']}_ctx.csv")
    return traj, ctx


def load_manifest(pdir):
    with open(Path(pdir) / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


def load_demonstrations(pdir, manifest=None, trip_ids=None):
    """Demonstrations (windowed) for every or selected trips of one driver."""
    manifest = manifest or load_manifest(pdir)
    out = []
    for entry in manifest["trips"]:
        if trip_ids is not None and entry["trip_id"] not in trip_ids:
            continue
        traj, ctx = load_trip(pdir, entry)
        i0, i1 = entry["window"]
        out.append(
            Demonstration(
                traj=traj.window(i0, i1),
                ctx_seq=tuple(ctx[i0:i1]),
                label=ManeuverLabel(entry["label"]),
            )
        )
    return out


def gps_trace(traj, net, sigma=0.0, seed=0):
    """Geodetic trace of a local-frame trajectory with optional white noise
    (consumer-GPS mode for map-matching tests)."""
    rng = np.random.default_rng(seed)
    rows = []
    for s in traj.states:
        x = s.x + (rng.normal(0.0, sigma) if sigma > 0 else 0.0)
        y = s.y + (rng.normal(0.0, sigma) if sigma > 0 else 0.0)
        rows.append((s.t, geometry.from_local(x, y, net.origin)))
    return rows
