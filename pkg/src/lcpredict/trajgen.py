"""Polynomial candidate trajectories over the prediction window.

Lateral motion is a quintic between boundary states (held at the target once
the transition completes); longitudinal motion is a quartic pinned by initial
position/speed/acceleration and terminal speed with zero terminal
acceleration. Derivatives are analytic, so sampled candidates carry exact
speeds, accelerations, yaw and yaw rate.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core.types import ManeuverLabel, Trajectory, VehicleState
from .errors import DomainError

A_LON_MAX = 4.0  # drivability filter [m/s^2]


def quintic(y0, vy0, ay0, y1, vy1, ay1, T):
    """Coefficients (a0..a5) of the quintic meeting both boundary states at 0 and T."""
    if T <= 0:
        raise DomainError(f"quintic duration must be positive, got {T}")
    a0, a1, a2 = y0, vy0, ay0 / 2.0
    A = np.array(
        [
            [T**3, T**4, T**5],
            [3 * T**2, 4 * T**3, 5 * T**4],
            [6 * T, 12 * T**2, 20 * T**3],
        ]
    )
    b = np.array(
        [
            y1 - a0 - a1 * T - a2 * T**2,
            vy1 - a1 - 2 * a2 * T,
            ay1 - 2 * a2,
        ]
    )
    a3, a4, a5 = np.linalg.solve(A, b)
    return np.array([a0, a1, a2, a3, a4, a5])


def quartic_speed_profile(x0, v0, a0, vT, T):
    """Coefficients (b0..b4) with position/speed/accel pinned at 0 and
    speed vT, accel 0 pinned at T."""
    if T <= 0:
        raise DomainError(f"quartic duration must be positive, got {T}")
    b0, b1, b2 = x0, v0, a0 / 2.0
    A = np.array([[3 * T**2, 4 * T**3], [6 * T, 12 * T**2]])
    b = np.array([vT - b1 - 2 * b2 * T, -2 * b2])
    b3, b4 = np.linalg.solve(A, b)
    return np.array([b0, b1, b2, b3, b4])


def polyval(coeffs, t):
    return np.polynomial.polynomial.polyval(t, coeffs)


def polyder(coeffs, order=1):
    c = np.asarray(coeffs, dtype=float)
    for _ in range(order):
        c = c[1:] * np.arange(1, len(c))
    return c


@dataclass(frozen=True)
class GeneratorConfig:
    horizon: float = 4.0  # prediction window [s]
    dt: float = 0.2
    lateral_targets: tuple = (0.0, 4.0)  # absolute lane-center offsets [m]
    completion_times: tuple = (2.0, 3.0, 4.0)  # [s]
    terminal_speed_offsets: tuple = (-2.0, 0.0, 2.0)  # [m/s]

    def __post_init__(self):
        if self.horizon <= 0:
            raise DomainError("horizon must be positive")
        if not (self.lateral_targets and self.completion_times and self.terminal_speed_offsets):
            raise DomainError("target grids must be non-empty")
        if any(tc > self.horizon + 1e-12 for tc in self.completion_times):
            raise DomainError("completion times must not exceed the horizon")


@dataclass(frozen=True)
class Candidate:
    traj: Trajectory
    label: ManeuverLabel
    terminal_lateral: float
    duration: float


def _sample_candidate(s, lat_coeffs, hold_from, lat_target, lon_coeffs, cfg):
    """Sampled kinematic arrays; states are only built by the caller after filtering."""
    n = int(round(cfg.horizon / cfg.dt))
    ts = np.arange(n + 1) * cfg.dt

    lat_v = polyder(lat_coeffs, 1)
    lat_a = polyder(lat_coeffs, 2)
    lon_v = polyder(lon_coeffs, 1)
    lon_a = polyder(lon_coeffs, 2)

    before = ts <= hold_from + 1e-12
    y = np.where(before, polyval(lat_coeffs, np.minimum(ts, hold_from)), lat_target)
    vy = np.where(before, polyval(lat_v, np.minimum(ts, hold_from)), 0.0)
    ay = np.where(before, polyval(lat_a, np.minimum(ts, hold_from)), 0.0)

    x = polyval(lon_coeffs, ts)
    vx = polyval(lon_v, ts)
    ax = polyval(lon_a, ts)
    vx = np.where(np.abs(vx) < 1e-12, 0.0, vx)  # scrub float dust at 0
    return ts, x, y, vx, vy, ax, ay


def _build_states(s, cfg, ts, x, y, vx, vy, ax, ay):
    yaw = np.arctan2(vy, vx)
    # d/dt atan2(vy, vx) with analytic accelerations.
    denom = np.maximum(vx * vx + vy * vy, 1e-12)
    yaw_rate = (vx * ay - vy * ax) / denom
    d_remain = np.maximum(s.d_remain - (x - s.x), 0.0)
    states = [
        VehicleState(
            t=s.t + float(ts[i]),
            x=float(x[i]),
            y=float(y[i]),
            v_lon=float(vx[i]),
            v_lat=float(vy[i]),
            a_lon=float(ax[i]),
            yaw=float(yaw[i]),
            yaw_rate=float(yaw_rate[i]),
            d_remain=float(d_remain[i]),
        )
        for i in range(len(ts))
    ]
    return Trajectory(tuple(states), cfg.dt)


def _clamped_hold_candidate(s, cfg):
    """Fallback lane-keep candidate: speed profile clamped at zero if needed."""
    n = int(round(cfg.horizon / cfg.dt))
    ts = np.arange(n + 1) * cfg.dt
    lon = quartic_speed_profile(s.x, s.v_lon, s.a_lon, s.v_lon, cfg.horizon)
    vx = np.maximum(polyval(polyder(lon, 1), ts), 0.0)
    x = s.x + np.concatenate(([0.0], np.cumsum(0.5 * cfg.dt * (vx[1:] + vx[:-1]))))
    ax = np.gradient(vx, cfg.dt)
    y_hold = s.y
    states = [
        VehicleState(
            t=s.t + float(ts[i]), x=float(x[i]), y=y_hold, v_lon=float(vx[i]),
            v_lat=0.0, a_lon=float(ax[i]), yaw=0.0, yaw_rate=0.0,
            d_remain=float(max(s.d_remain - (x[i] - s.x), 0.0)),
        )
        for i in range(n + 1)
    ]
    return Trajectory(tuple(states), cfg.dt)


def generate(s, net, cfg=None):
    """All drivable candidates for the prediction window starting at state s.

    The grid is lateral target x completion time x terminal speed offset.
    Candidates with negative speed or |a_lon| > 4 m/s^2 anywhere are dropped,
    except the lane-keep/zero-offset ones which guarantee a non-empty result.
    """
    cfg = cfg or GeneratorConfig()
    current_center = float(net.nearest_lane(s.x, s.y).center_y(s.x))
    half_width = net.lane_width / 2.0

    out = []
    for target in cfg.lateral_targets:
        is_keep_target = abs(target - current_center) < half_width
        for tc in cfg.completion_times:
            lat = quintic(s.y, s.v_lat, 0.0, target, 0.0, 0.0, tc)
            for dv in cfg.terminal_speed_offsets:
                lon = quartic_speed_profile(
                    s.x, s.v_lon, s.a_lon, s.v_lon + dv, cfg.horizon
                )
                exempt = is_keep_target and dv == 0.0
                arrays = _sample_candidate(s, lat, tc, target, lon, cfg)
                ts, x, y, vx, vy, ax, ay = arrays
                if np.any(vx < 0.0):
                    if not exempt:
                        continue
                    traj = _clamped_hold_candidate(s, cfg)
                elif np.any(np.abs(ax) > A_LON_MAX) and not exempt:
                    continue
                else:
                    traj = _build_states(s, cfg, *arrays)
                label = (
                    ManeuverLabel.CHANGE
                    if abs(traj.states[-1].y - current_center) >= half_width
                    else ManeuverLabel.KEEP
                )
                out.append(
                    Candidate(
                        traj=traj,
                        label=label,
                        terminal_lateral=float(traj.states[-1].y),
                        duration=float(tc),
                    )
                )
    if not out:
        raise AssertionError("candidate set cannot be empty by construction")
    return out
