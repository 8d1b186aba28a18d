"""Differential-drive kinematics driven by per-wheel PWM duty."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .track import Track, wrap_angle


class NumericError(ArithmeticError):
    """Vehicle state became non-finite."""


@dataclass(frozen=True)
class VehicleParams:
    track_width: float = 0.2
    v_max: float = 0.5
    duty_min_moving: float = 20.0

    def __post_init__(self):
        if not self.track_width > 0:
            raise ValueError("track_width must be > 0")
        if not self.v_max > 0:
            raise ValueError("v_max must be > 0")
        if not 0 <= self.duty_min_moving < 100:
            raise ValueError("duty_min_moving must be in [0, 100)")


@dataclass(frozen=True)
class MotorCommand:
    left_duty: float
    right_duty: float

    def __post_init__(self):
        for d in (self.left_duty, self.right_duty):
            if not 0.0 <= d <= 100.0:
                raise ValueError(f"duty {d} outside [0, 100]")

    def swapped(self) -> MotorCommand:
        return MotorCommand(self.right_duty, self.left_duty)


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    s: float = 0.0
    lateral_offset: float = 0.0
    t: float = 0.0
    # centerline heading minus vehicle heading; positive when pointing right of the lane
    heading_error: float = 0.0
    segment_index: int = 0


def duty_to_speed(duty: float, params: VehicleParams) -> float:
    """Wheel ground speed for a PWM duty; the motor stalls below `duty_min_moving`."""
    if not 0.0 <= duty <= 100.0:
        raise ValueError(f"duty {duty} outside [0, 100]")
    if duty < params.duty_min_moving:
        return 0.0
    return params.v_max * duty / 100.0


def steer_to_motor_command(speed_duty: float, steering: float) -> MotorCommand:
    """Mix a base duty and a steering value in [-1, 1] into left/right duties.

    Positive steering turns left by slowing the left motor; at full steering
    the inner motor is off and the vehicle pivots on one driven wheel.
    """
    if not 0.0 <= speed_duty <= 100.0:
        raise ValueError(f"speed_duty {speed_duty} outside [0, 100]")
    if not -1.0 <= steering <= 1.0:
        raise ValueError(f"steering {steering} outside [-1, 1]")
    if steering >= 0:
        return MotorCommand(speed_duty * (1.0 - steering), speed_duty)
    return MotorCommand(speed_duty, speed_duty * (1.0 + steering))


def body_rates(cmd: MotorCommand, params: VehicleParams) -> tuple[float, float]:
    """Forward speed and yaw rate for a command."""
    v_l = duty_to_speed(cmd.left_duty, params)
    v_r = duty_to_speed(cmd.right_duty, params)
    return 0.5 * (v_l + v_r), (v_r - v_l) / params.track_width


def integrate_pose(
    x: float, y: float, heading: float, v: float, omega: float, dt: float
) -> tuple[float, float, float]:
    """Exact unicycle update over one step with constant (v, omega)."""
    if omega == 0.0:
        return x + v * dt * math.cos(heading), y + v * dt * math.sin(heading), heading
    h1 = heading + omega * dt
    r = v / omega
    return (
        x + r * (math.sin(h1) - math.sin(heading)),
        y - r * (math.cos(h1) - math.cos(heading)),
        wrap_angle(h1),
    )


def step(
    state: VehicleState,
    cmd: MotorCommand,
    params: VehicleParams,
    dt: float,
    track: Track | None = None,
) -> VehicleState:
    """Advance one step; with a track, progress and lateral offset are re-projected."""
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must be in (0, 0.05], got {dt}")
    v, omega = body_rates(cmd, params)
    x, y, h = integrate_pose(state.x, state.y, state.heading, v, omega, dt)
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(h)):
        raise NumericError(f"non-finite pose at t={state.t}: {(x, y, h)}")
    t = state.t + dt
    if track is None:
        return replace(state, x=x, y=y, heading=h, t=t)
    return reproject(replace(state, x=x, y=y, heading=h, t=t), track)


def reproject(state: VehicleState, track: Track) -> VehicleState:
    """Recompute progress, lateral offset and heading error from the pose."""
    p = track.project(state.x, state.y, state.segment_index)
    s_new = track.cumulative[p.segment_index] + p.s_local
    # unwrap progress so laps accumulate on closed tracks
    if track.closed:
        total = track.total_length
        prev = math.fmod(state.s, total)
        ds = s_new - prev
        if ds > total / 2:
            ds -= total
        elif ds < -total / 2:
            ds += total
        s = state.s + ds
    else:
        s = s_new
    return replace(
        state,
        s=s,
        lateral_offset=p.offset,
        heading_error=wrap_angle(p.center_heading - state.heading),
        segment_index=p.segment_index,
    )


def initial_state(track: Track, s: float = 0.0) -> VehicleState:
    """Vehicle on the centerline at progress `s`, aligned with the lane."""
    loc = track.locate(s)
    return VehicleState(
        x=loc.center_pose.x,
        y=loc.center_pose.y,
        heading=loc.center_pose.heading,
        s=s,
        segment_index=loc.segment_index,
    )
