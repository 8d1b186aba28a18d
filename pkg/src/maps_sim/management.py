"""Management unit: runs one scenario end to end.

Each fixed step locates the vehicle on the route, dispatches the speed and
frame rate for the current section class, captures a lane frame if one is
due, mixes steering into motor duties, integrates the kinematics and pushes
the modeled power draws through the ADC chain. Curve speed inside the
co-driver's range is set by an energy-budget feedback rule.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import codriver as cd
from .energy import (
    COMP,
    MECH,
    AdcConfig,
    CompPowerModel,
    EnergyConfig,
    EnergyReport,
    MechPowerModel,
    PowerSample,
    ShuntConfig,
    aggregate,
    measure,
    model_computational_power,
    model_mechanical_power,
)
from .perception import (
    ControllerGains,
    FrameSample,
    LaneLost,
    PerceptionConfig,
    frame_due,
    sample_lane,
    steering_from_sample,
)
from .telemetry import TelemetryChannel, TelemetrySink
from .track import Track, TrackLocation, build_reference_track, track_from_dict, track_to_dict
from .vehicle import (
    MotorCommand,
    NumericError,
    VehicleParams,
    duty_to_speed,
    initial_state,
    reproject,
    steer_to_motor_command,
    step,
)

log = logging.getLogger(__name__)

OFF_TRACK_ABORT_S = 1.0


class ScenarioError(ValueError):
    """Configuration problem detected before motion."""


class SimulationError(RuntimeError):
    """Runtime anomaly that aborted a run."""


@dataclass(frozen=True)
class FixedPolicy:
    speed_duty: float
    fps: int


@dataclass(frozen=True)
class CoDriverSource:
    """Where the co-driver policy comes from: 'mock', 'live' or 'replay'."""

    backend: str = "mock"
    transcript: str | None = None
    constraints: cd.Constraints = cd.DEFAULT_CONSTRAINTS

    def make_backend(self) -> cd.CoDriverBackend:
        if self.backend == "mock":
            return cd.MockBackend()
        if self.backend == "live":
            return cd.HttpChatBackend.from_env(transcript=self.transcript)
        if self.backend == "replay":
            if not self.transcript:
                raise ScenarioError("replay backend needs a transcript path")
            return cd.TranscriptReplayBackend(self.transcript)
        raise ScenarioError(f"unknown co-driver backend {self.backend!r}")


@dataclass(frozen=True)
class FeedbackConfig:
    enabled: bool = False
    energy_budget_w: float = 8.0
    adjust_step: float = 5.0
    hysteresis: float = 0.9


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    policy_source: FixedPolicy | CoDriverSource
    laps: int = 5
    dt: float = 0.01
    seed: int = 0
    track: Track = field(default_factory=build_reference_track)
    vehicle: VehicleParams = VehicleParams()
    perception: PerceptionConfig = PerceptionConfig()
    gains: ControllerGains = ControllerGains()
    energy: EnergyConfig = EnergyConfig()
    feedback: FeedbackConfig = FeedbackConfig()
    # look-ahead for section-class switching; 0 switches exactly at boundaries
    anticipation: float = 0.0
    # hard stop at this multiple of the nominal drive time
    time_limit_factor: float = 3.0

    def validate(self, constraints: cd.Constraints = cd.DEFAULT_CONSTRAINTS) -> None:
        if self.laps < 1:
            raise ScenarioError("laps must be >= 1")
        if not 0 < self.dt <= 0.05:
            raise ScenarioError("dt must be in (0, 0.05]")
        if self.anticipation < 0:
            raise ScenarioError("anticipation must be >= 0")
        if not self.track.closed:
            raise ScenarioError("scenarios need a closed track")
        if isinstance(self.policy_source, FixedPolicy):
            p = self.policy_source
            if not constraints.speed_min <= p.speed_duty <= constraints.speed_max:
                raise ScenarioError(f"fixed speed {p.speed_duty} outside the allowed envelope")
            if p.fps not in constraints.fps_set:
                raise ScenarioError(f"fixed fps {p.fps} not in {constraints.fps_set}")


@dataclass
class FeedbackState:
    curve_duty: float
    window_energy: float = 0.0
    window_time: float = 0.0
    adjustments: int = 0

    def window_average(self) -> float | None:
        if self.window_time <= 0:
            return None
        return self.window_energy / self.window_time


@dataclass(frozen=True)
class Setpoint:
    speed_duty: float
    fps: int


def resolve_segment_setpoint(
    policy: cd.CoDriverPolicy,
    location: TrackLocation,
    feedback_state: FeedbackState | None = None,
) -> Setpoint:
    if not location.is_curve:
        return Setpoint(policy.straight.speed_duty, policy.straight.fps)
    c = policy.curved
    if feedback_state is None:
        duty = 0.5 * (c.speed_duty_min + c.speed_duty_max)
    else:
        duty = min(max(feedback_state.curve_duty, c.speed_duty_min), c.speed_duty_max)
    return Setpoint(duty, c.fps)


def feedback_adjust(
    current: float,
    energy_window_avg_w: float,
    budget_w: float,
    duty_range: tuple[float, float],
    adjust_step: float = 5.0,
    hysteresis: float = 0.9,
) -> float:
    """Next curve duty: slow down over budget, speed up well under it, hold in the dead band."""
    lo, hi = duty_range
    if lo > hi:
        raise ValueError("invalid duty range")
    if energy_window_avg_w > budget_w:
        current -= adjust_step
    elif energy_window_avg_w < hysteresis * budget_w:
        current += adjust_step
    return min(max(current, lo), hi)


@dataclass
class Trace:
    """Per-step record of a run; the basis for scoring and invariant checks."""

    lane_half_width: float
    laps_target: int
    track_length: float
    t: np.ndarray
    s: np.ndarray
    offset: np.ndarray
    is_curve: np.ndarray
    duty: np.ndarray
    fps: np.ndarray

    @property
    def laps_progress(self) -> float:
        if len(self.s) == 0:
            return 0.0
        return max(float(self.s[-1]), 0.0) / self.track_length


def compute_accuracy(trace: Trace) -> float:
    """Share of steps inside the lane, in percent.

    Steps that an aborted run never drove count as failures; their number is
    extrapolated from the steps per lap actually achieved.
    """
    n = len(trace.offset)
    if n == 0:
        raise ValueError("empty trace")
    in_lane = int(np.count_nonzero(np.abs(trace.offset) <= trace.lane_half_width))
    progress = trace.laps_progress
    expected = n
    if progress < trace.laps_target:
        if progress > 0:
            expected = max(n, int(round(n * trace.laps_target / progress)))
        else:
            expected = max(n, n * trace.laps_target)
    return 100.0 * in_lane / expected


def lap_success_rate(trace: Trace) -> float:
    """Percent of target laps driven entirely inside the lane."""
    if len(trace.offset) == 0:
        raise ValueError("empty trace")
    lap = np.floor(np.maximum(trace.s, 0.0) / trace.track_length).astype(int)
    out = np.abs(trace.offset) > trace.lane_half_width
    completed = int(math.floor(trace.laps_progress + 1e-9))
    ok = 0
    for k in range(min(completed, trace.laps_target)):
        if not out[lap == k].any():
            ok += 1
    return 100.0 * ok / trace.laps_target


@dataclass(eq=False)
class RunResult:
    name: str
    accuracy_pct: float
    lap_success_pct: float
    laps_completed: int
    off_track_events: int
    lane_lost_events: int
    duration_s: float
    energy: EnergyReport
    policy_used: cd.CoDriverPolicy
    degraded: bool
    aborted: str | None
    seed: int
    trace: Trace
    # columns: t, comp_w, mech_w (measured through the ADC chain)
    power_trace: np.ndarray
    adc_counts: np.ndarray
    feedback_adjustments: int = 0
    telemetry: dict | None = None

    def summary(self) -> dict:
        e = self.energy
        return {
            "name": self.name,
            "seed": self.seed,
            "accuracy_pct": self.accuracy_pct,
            "lap_success_pct": self.lap_success_pct,
            "laps_completed": self.laps_completed,
            "off_track_events": self.off_track_events,
            "lane_lost_events": self.lane_lost_events,
            "duration_s": self.duration_s,
            "avg_power_comp": e.avg_power_comp,
            "avg_power_mech": e.avg_power_mech,
            "avg_power_total": e.avg_power_total,
            "energy_comp_j": e.energy_comp,
            "energy_mech_j": e.energy_mech,
            "policy": self.policy_used.to_dict(),
            "degraded": self.degraded,
            "aborted": self.aborted,
            "feedback_adjustments": self.feedback_adjustments,
        }

    def same_outcome(self, other: RunResult) -> bool:
        return (
            self.summary() == other.summary()
            and np.array_equal(self.power_trace, other.power_trace)
            and np.array_equal(self.trace.offset, other.trace.offset)
        )

    def samples(self) -> list[PowerSample]:
        out = []
        for t, c, m in self.power_trace:
            out.append(PowerSample(float(t), COMP, float(c)))
            out.append(PowerSample(float(t), MECH, float(m)))
        return out

    def write_power_csv(self, path: str | Path) -> None:
        lines = ["t,comp_w,mech_w,total_w"]
        for t, c, m in self.power_trace:
            lines.append(f"{t:.2f},{c:.6f},{m:.6f},{c + m:.6f}")
        Path(path).write_text("\n".join(lines) + "\n")

    def write_samples_csv(self, path: str | Path) -> None:
        """Raw measurement log: one row per unit per sample time."""
        lines = ["t,unit,d_out,watts"]
        for (t, c, m), (dc, dm) in zip(self.power_trace, self.adc_counts):
            lines.append(f"{t:.2f},{COMP},{int(dc)},{c:.6f}")
            lines.append(f"{t:.2f},{MECH},{int(dm)},{m:.6f}")
        Path(path).write_text("\n".join(lines) + "\n")

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")


def resolve_policy(cfg: ScenarioConfig) -> tuple[cd.CoDriverPolicy, bool]:
    src = cfg.policy_source
    if isinstance(src, FixedPolicy):
        return cd.CoDriverPolicy.fixed(src.speed_duty, src.fps), False
    result = cd.fetch_policy(cfg.track, src.make_backend(), src.constraints)
    return result.policy, result.degraded


def _nominal_time(cfg: ScenarioConfig, policy: cd.CoDriverPolicy) -> float:
    slowest = min(policy.straight.speed_duty, policy.curved.speed_duty_min)
    v = duty_to_speed(slowest, cfg.vehicle) or 0.1 * cfg.vehicle.v_max
    return cfg.laps * cfg.track.total_length / v


def run_scenario(
    cfg: ScenarioConfig,
    sink: TelemetrySink | None = None,
    policy: cd.CoDriverPolicy | None = None,
) -> RunResult:
    """Drive `cfg.laps` laps (or until an unrecoverable departure) and score the run.

    A co-driver policy is fetched once before motion unless `policy` is given.
    The result depends only on `cfg` (including its seed); the telemetry sink
    never feeds back into the loop.
    """
    cfg.validate()
    degraded = False
    if policy is None:
        policy, degraded = resolve_policy(cfg)

    track = cfg.track
    hw = track.lane_half_width
    total_len = track.total_length
    target = cfg.laps * total_len
    dt = cfg.dt
    rng = np.random.default_rng(cfg.seed)
    energy_cfg = cfg.energy
    sample_period = 1.0 / energy_cfg.sample_rate_hz
    t_limit = cfg.time_limit_factor * _nominal_time(cfg, policy)

    fb = cfg.feedback
    c = policy.curved
    fb_state = FeedbackState(0.5 * (c.speed_duty_min + c.speed_duty_max)) if fb.enabled else None

    channel = TelemetryChannel(sink) if sink is not None else None

    state = initial_state(track)
    last_frame_t: float | None = None
    steering = 0.0
    prev_curve: bool | None = None

    ts, ss, offs, curves, duties, fpss = [], [], [], [], [], []
    p_rows: list[tuple[float, float, float]] = []
    d_rows: list[tuple[int, int]] = []
    next_sample_t = 0.0
    off_track_events = 0
    lane_lost_events = 0
    was_out = False
    beyond_since: float | None = None
    aborted: str | None = None
    k = 0

    try:
        while state.s < target:
            t = k * dt
            loc = track.locate(math.fmod(max(state.s, 0.0) + cfg.anticipation, total_len))
            is_curve = loc.is_curve

            if fb_state is not None and is_curve and prev_curve is False:
                avg = fb_state.window_average()
                if avg is not None:
                    new = feedback_adjust(
                        fb_state.curve_duty,
                        avg,
                        fb.energy_budget_w,
                        (c.speed_duty_min, c.speed_duty_max),
                        fb.adjust_step,
                        fb.hysteresis,
                    )
                    if new != fb_state.curve_duty:
                        fb_state.adjustments += 1
                    fb_state.curve_duty = new
                fb_state.window_energy = fb_state.window_time = 0.0
            prev_curve = is_curve

            sp = resolve_segment_setpoint(policy, loc, fb_state)

            if frame_due(t, last_frame_t, sp.fps):
                last_frame_t = t
                try:
                    frame: FrameSample = sample_lane(state, track, cfg.perception, rng)
                except LaneLost:
                    lane_lost_events += 1
                else:
                    steering = steering_from_sample(frame, cfg.gains)

            cmd: MotorCommand = steer_to_motor_command(sp.speed_duty, steering)

            if t >= next_sample_t - 1e-9:
                next_sample_t += sample_period
                p_mech = model_mechanical_power(cmd.left_duty, cmd.right_duty, energy_cfg.mech_model)
                p_comp = model_computational_power(sp.fps, energy_cfg.comp_model)
                r_c, s_c = measure(p_comp, COMP, t, energy_cfg)
                r_m, s_m = measure(p_mech, MECH, t, energy_cfg)
                p_rows.append((t, s_c.watts, s_m.watts))
                d_rows.append((r_c.d_out, r_m.d_out))
                if fb_state is not None:
                    fb_state.window_energy += (s_c.watts + s_m.watts) * sample_period
                    fb_state.window_time += sample_period
                if channel is not None:
                    channel.offer(s_c)
                    channel.offer(s_m)
                    channel.offer(PowerSample(t, "total", s_c.watts + s_m.watts))

            state = step(state, cmd, cfg.vehicle, dt)
            state = reproject(state, track)
            k += 1

            off = state.lateral_offset
            out = abs(off) > hw
            if out and not was_out:
                off_track_events += 1
            was_out = out
            if abs(off) > 2.0 * hw:
                if beyond_since is None:
                    beyond_since = state.t
                elif state.t - beyond_since > OFF_TRACK_ABORT_S:
                    aborted = f"off track for more than {OFF_TRACK_ABORT_S:g} s at t={state.t:.2f}"
            else:
                beyond_since = None

            ts.append(state.t)
            ss.append(state.s)
            offs.append(off)
            curves.append(is_curve)
            duties.append(sp.speed_duty)
            fpss.append(sp.fps)

            if aborted:
                break
            if state.t > t_limit:
                aborted = f"time limit {t_limit:.1f} s reached"
                break
    except NumericError as e:
        if channel is not None:
            channel.close()
        raise SimulationError(f"{cfg.name}: {e}") from e

    duration = k * dt
    trace = Trace(
        hw,
        cfg.laps,
        total_len,
        np.asarray(ts),
        np.asarray(ss),
        np.asarray(offs),
        np.asarray(curves, dtype=bool),
        np.asarray(duties),
        np.asarray(fpss),
    )
    samples = []
    for t, pc, pm in p_rows:
        samples.append(PowerSample(t, COMP, pc))
        samples.append(PowerSample(t, MECH, pm))
    energy = aggregate(samples, duration)
    laps_completed = min(cfg.laps, int(math.floor(trace.laps_progress + 1e-9)))

    result = RunResult(
        name=cfg.name,
        accuracy_pct=compute_accuracy(trace),
        lap_success_pct=lap_success_rate(trace),
        laps_completed=laps_completed,
        off_track_events=off_track_events,
        lane_lost_events=lane_lost_events,
        duration_s=duration,
        energy=energy,
        policy_used=policy,
        degraded=degraded,
        aborted=aborted,
        seed=cfg.seed,
        trace=trace,
        power_trace=np.asarray(p_rows, dtype=float).reshape(-1, 3),
        adc_counts=np.asarray(d_rows, dtype=int).reshape(-1, 2),
        feedback_adjustments=fb_state.adjustments if fb_state else 0,
    )
    if channel is not None:
        channel.offer(result.summary())
        channel.close()
        result.telemetry = channel.stats()
    return result


# -- JSON scenario files ----------------------------------------------------


def _sub(cls, d: dict | None, **extra):
    kw = dict(d or {})
    kw.update(extra)
    return cls(**kw)


def energy_from_dict(d: dict | None) -> EnergyConfig:
    d = d or {}
    base = EnergyConfig()
    return EnergyConfig(
        adc=_sub(AdcConfig, d.get("adc")) if "adc" in d else base.adc,
        comp_shunt=replace(base.comp_shunt, **d.get("comp_shunt", {})),
        mech_shunt=replace(base.mech_shunt, **d.get("mech_shunt", {})),
        mech_model=replace(base.mech_model, **d.get("mech_model", {})),
        comp_model=replace(base.comp_model, **d.get("comp_model", {})),
        sample_rate_hz=float(d.get("sample_rate_hz", base.sample_rate_hz)),
    )


def policy_source_from_dict(d: dict) -> FixedPolicy | CoDriverSource:
    if "fixed" in d:
        f = d["fixed"]
        return FixedPolicy(float(f["speed"]), int(f["fps"]))
    if "codriver" in d:
        c = d["codriver"] or {}
        return CoDriverSource(c.get("backend", "mock"), c.get("transcript"))
    raise ScenarioError("policy must be {'fixed': {...}} or {'codriver': {...}}")


def policy_source_to_dict(src: FixedPolicy | CoDriverSource) -> dict:
    if isinstance(src, FixedPolicy):
        return {"fixed": {"speed": src.speed_duty, "fps": src.fps}}
    return {"codriver": {"backend": src.backend, "transcript": src.transcript}}


def scenario_from_dict(d: dict) -> ScenarioConfig:
    try:
        perception = dict(d.get("perception", {}))
        gains = {k: perception.pop(k) for k in ("k_offset", "k_heading", "steering_clip") if k in perception}
        if "allowed_fps" in perception:
            perception["allowed_fps"] = tuple(perception["allowed_fps"])
        cfg = ScenarioConfig(
            name=d.get("name", "scenario"),
            policy_source=policy_source_from_dict(d.get("policy", {"codriver": {}})),
            laps=int(d.get("laps", 5)),
            dt=float(d.get("dt", 0.01)),
            seed=int(d.get("seed", 0)),
            track=track_from_dict(d["track"]) if "track" in d else build_reference_track(),
            vehicle=_sub(VehicleParams, d.get("vehicle")),
            perception=_sub(PerceptionConfig, perception),
            gains=_sub(ControllerGains, gains),
            energy=energy_from_dict(d.get("energy")),
            feedback=_sub(FeedbackConfig, d.get("feedback")),
            anticipation=float(d.get("anticipation", 0.0)),
        )
    except (KeyError, TypeError) as e:
        raise ScenarioError(f"invalid scenario config: {e}") from e
    cfg.validate()
    return cfg


def scenario_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    perception = asdict(cfg.perception)
    perception["allowed_fps"] = list(perception["allowed_fps"])
    perception.update(asdict(cfg.gains))
    return {
        "name": cfg.name,
        "policy": policy_source_to_dict(cfg.policy_source),
        "laps": cfg.laps,
        "dt": cfg.dt,
        "seed": cfg.seed,
        "track": track_to_dict(cfg.track),
        "vehicle": asdict(cfg.vehicle),
        "perception": perception,
        "energy": asdict(cfg.energy),
        "feedback": asdict(cfg.feedback),
        "anticipation": cfg.anticipation,
    }


def load_scenario(path: str | Path) -> ScenarioConfig:
    return scenario_from_dict(json.loads(Path(path).read_text()))


def trace_segments(trace: Trace) -> Sequence[tuple[int, int]]:
    """(start, stop) index ranges of consecutive steps with the same section class."""
    flags = trace.is_curve
    if len(flags) == 0:
        return []
    edges = np.flatnonzero(np.diff(flags.astype(int))) + 1
    bounds = np.concatenate(([0], edges, [len(flags)]))
    return list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))
