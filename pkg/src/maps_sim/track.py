"""Closed test route made of straight and circular-arc segments.

Everything is parameterized by arc length, so curvature is exact and the
centerline pose at any progress value is computed in closed form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

TWO_PI = 2.0 * math.pi
CLOSURE_TOL = 1e-6


class TrackError(ValueError):
    """Invalid track geometry or an out-of-range query."""


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, TWO_PI)
    if a <= 0.0:
        a += TWO_PI
    return a - math.pi


class Pose(NamedTuple):
    x: float
    y: float
    heading: float


@dataclass(frozen=True)
class Straight:
    length: float

    def __post_init__(self):
        if not (self.length > 0 and math.isfinite(self.length)):
            raise TrackError(f"straight length must be > 0, got {self.length}")

    @property
    def arc_length(self) -> float:
        return self.length

    @property
    def curvature(self) -> float:
        return 0.0

    @property
    def is_curve(self) -> bool:
        return False


@dataclass(frozen=True)
class Arc:
    radius: float
    sweep_angle: float
    turn: str = "left"

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise TrackError(f"arc radius must be > 0, got {self.radius}")
        if not (0.0 < self.sweep_angle <= TWO_PI + 1e-12):
            raise TrackError(f"arc sweep must be in (0, 2pi], got {self.sweep_angle}")
        if self.turn not in ("left", "right"):
            raise TrackError(f"turn must be 'left' or 'right', got {self.turn!r}")

    @property
    def arc_length(self) -> float:
        return self.radius * self.sweep_angle

    @property
    def sign(self) -> float:
        return 1.0 if self.turn == "left" else -1.0

    @property
    def curvature(self) -> float:
        return self.sign / self.radius

    @property
    def is_curve(self) -> bool:
        return True


Segment = Straight | Arc


def advance_pose(pose: Pose, seg: Segment, ds: float) -> Pose:
    """Move `ds` meters along `seg` starting from `pose` (the segment start)."""
    x, y, h = pose
    if isinstance(seg, Straight):
        return Pose(x + ds * math.cos(h), y + ds * math.sin(h), h)
    k = seg.curvature
    dh = k * ds
    return Pose(
        x + (math.sin(h + dh) - math.sin(h)) / k,
        y - (math.cos(h + dh) - math.cos(h)) / k,
        wrap_angle(h + dh),
    )


@dataclass(frozen=True)
class TrackLocation:
    segment_index: int
    s_local: float
    curvature: float
    center_pose: Pose

    @property
    def is_curve(self) -> bool:
        return self.curvature != 0.0


@dataclass(frozen=True)
class Projection:
    """Closest centerline point to an arbitrary (x, y)."""

    segment_index: int
    s_local: float
    # positive = vehicle to the right of the direction of travel
    offset: float
    # centerline heading minus vehicle heading is computed by the caller
    center_heading: float
    distance: float


@dataclass(frozen=True)
class Track:
    segments: tuple[Segment, ...]
    lane_half_width: float
    closed: bool = True
    start: Pose = Pose(0.0, 0.0, 0.0)
    # derived tables
    starts: tuple[Pose, ...] = field(init=False, repr=False, compare=False)
    cumulative: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise TrackError("track needs at least one segment")
        if not self.lane_half_width > 0:
            raise TrackError("lane_half_width must be > 0")
        poses = [self.start]
        cum = [0.0]
        for seg in segs:
            poses.append(advance_pose(poses[-1], seg, seg.arc_length))
            cum.append(cum[-1] + seg.arc_length)
        if self.closed:
            end, start = poses[-1], self.start
            dpos = math.hypot(end.x - start.x, end.y - start.y)
            dang = abs(wrap_angle(end.heading - start.heading))
            if dpos > CLOSURE_TOL or dang > CLOSURE_TOL:
                raise TrackError(
                    f"closed track does not close: residual {dpos:.3g} m, {dang:.3g} rad"
                )
        object.__setattr__(self, "starts", tuple(poses))
        object.__setattr__(self, "cumulative", tuple(cum))

    @property
    def total_length(self) -> float:
        return self.cumulative[-1]

    def closure_residual(self) -> tuple[float, float]:
        end, start = self.starts[-1], self.start
        return (
            math.hypot(end.x - start.x, end.y - start.y),
            abs(wrap_angle(end.heading - start.heading)),
        )

    def segment_start(self, index: int) -> float:
        return self.cumulative[index]

    def locate(self, s: float) -> TrackLocation:
        return locate(self, s)

    def project(self, x: float, y: float, hint: int | None = None) -> Projection:
        return project(self, x, y, hint)


def build_reference_track(scale: float = 1.0, lane_half_width: float | None = None) -> Track:
    """Rounded-square loop: four straights of 2*scale and four left quarter arcs of radius scale."""
    if not scale > 0:
        raise TrackError(f"scale must be > 0, got {scale}")
    segs: list[Segment] = []
    for _ in range(4):
        segs.append(Straight(2.0 * scale))
        segs.append(Arc(scale, math.pi / 2, "left"))
    hw = 0.15 * scale if lane_half_width is None else lane_half_width
    return Track(tuple(segs), hw, closed=True)


def _find_segment(track: Track, s: float) -> int:
    cum = track.cumulative
    lo, hi = 0, len(track.segments) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if cum[mid] <= s:
            lo = mid
        else:
            hi = mid - 1
    return lo


def locate(track: Track, s: float) -> TrackLocation:
    """Segment, local offset, signed curvature and centerline pose at progress `s`."""
    if not (s >= 0 and math.isfinite(s)):
        raise TrackError(f"progress must be finite and >= 0, got {s}")
    total = track.total_length
    if track.closed:
        s = math.fmod(s, total)
    elif s > total + 1e-12:
        raise TrackError(f"s={s} beyond open track length {total}")
    else:
        s = min(s, total)
    i = _find_segment(track, s)
    seg = track.segments[i]
    s_local = min(max(s - track.cumulative[i], 0.0), seg.arc_length)
    pose = advance_pose(track.starts[i], seg, s_local)
    return TrackLocation(i, s_local, seg.curvature, pose)


def _project_segment(track: Track, i: int, x: float, y: float) -> Projection:
    seg = track.segments[i]
    x0, y0, h0 = track.starts[i]
    if isinstance(seg, Straight):
        c, s = math.cos(h0), math.sin(h0)
        dx, dy = x - x0, y - y0
        along = dx * c + dy * s
        left = -dx * s + dy * c
        clamped = min(max(along, 0.0), seg.length)
        dist = math.hypot(along - clamped, left)
        return Projection(i, clamped, -left, h0, dist)
    sign = seg.sign
    r = seg.radius
    cx = x0 - sign * r * math.sin(h0)
    cy = y0 + sign * r * math.cos(h0)
    dx, dy = x - cx, y - cy
    rho = math.hypot(dx, dy)
    phi0 = h0 - sign * math.pi / 2
    phi = math.atan2(dy, dx)
    theta = sign * (phi - phi0)
    theta = math.fmod(theta, TWO_PI)
    if theta < 0:
        theta += TWO_PI
    sweep = seg.sweep_angle
    if theta <= sweep:
        s_local = r * theta
        # left arc: inside of the turn is on the left
        offset = sign * (rho - r)
        return Projection(i, s_local, offset, wrap_angle(h0 + sign * theta), abs(rho - r))
    # beyond either end; snap to nearer endpoint
    past_end = theta - sweep
    before_start = TWO_PI - theta
    s_local = seg.arc_length if past_end < before_start else 0.0
    end = advance_pose(track.starts[i], seg, s_local)
    dist = math.hypot(x - end.x, y - end.y)
    ex, ey = x - end.x, y - end.y
    left = -ex * math.sin(end.heading) + ey * math.cos(end.heading)
    return Projection(i, s_local, -left, end.heading, dist)


def project(track: Track, x: float, y: float, hint: int | None = None) -> Projection:
    """Closest centerline point; searches the hint segment and its neighbors, or all segments."""
    n = len(track.segments)
    if hint is None or n <= 3:
        candidates = range(n)
    elif track.closed:
        candidates = ((hint - 1) % n, hint, (hint + 1) % n)
    else:
        candidates = [j for j in (hint - 1, hint, hint + 1) if 0 <= j < n]
    best = None
    for j in candidates:
        p = _project_segment(track, j, x, y)
        if best is None or p.distance < best.distance - 1e-12:
            best = p
    return best


def describe_for_prompt(track: Track) -> str:
    """Deterministic, one-line-per-segment road description."""
    lines = [
        f"Road: {'closed loop' if track.closed else 'open route'} of "
        f"{len(track.segments)} sections, total length {track.total_length:.3f} m, "
        f"lane half-width {track.lane_half_width:.3f} m.",
    ]
    for i, seg in enumerate(track.segments):
        if isinstance(seg, Straight):
            lines.append(
                f"Section {i + 1}: straight, length {seg.length:.3f} m, curvature 0.000 1/m"
            )
        else:
            lines.append(
                f"Section {i + 1}: {seg.turn} curve, length {seg.arc_length:.3f} m, "
                f"radius {seg.radius:.3f} m, curvature {seg.curvature:+.3f} 1/m, "
                f"turn {math.degrees(seg.sweep_angle):.1f} deg"
            )
    return "\n".join(lines)


def segment_from_dict(d: dict) -> Segment:
    kind = d.get("kind")
    if kind == "straight":
        return Straight(float(d["length"]))
    if kind == "arc":
        return Arc(float(d["radius"]), math.radians(float(d["sweep_deg"])), d.get("dir", "left"))
    raise TrackError(f"unknown segment kind {kind!r}")


def segment_to_dict(seg: Segment) -> dict:
    if isinstance(seg, Straight):
        return {"kind": "straight", "length": seg.length}
    return {
        "kind": "arc",
        "radius": seg.radius,
        "sweep_deg": math.degrees(seg.sweep_angle),
        "dir": seg.turn,
    }


def track_from_dict(d: dict) -> Track:
    if d.get("reference"):
        return build_reference_track(float(d.get("scale", 1.0)), d.get("lane_half_width"))
    return Track(
        tuple(segment_from_dict(s) for s in d["segments"]),
        float(d["lane_half_width"]),
        closed=bool(d.get("closed", True)),
    )


def track_to_dict(track: Track) -> dict:
    return {
        "lane_half_width": track.lane_half_width,
        "closed": track.closed,
        "segments": [segment_to_dict(s) for s in track.segments],
    }


def load_track(path: str | Path) -> Track:
    return track_from_dict(json.loads(Path(path).read_text()))


def straight_track(length: float, lane_half_width: float = 0.15) -> Track:
    return Track((Straight(length),), lane_half_width, closed=False)
