"""Frame-rate-limited lane perception and the proportional lane-keeping law.

There is no image pipeline here: a frame is the true lateral offset and
heading error plus Gaussian noise, taken only when a frame is due. The
controller holds the last frame between captures, which is what makes the
camera rate matter on curves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .track import Track
from .vehicle import VehicleState

ALLOWED_FPS = (5, 30)


class LaneLost(RuntimeError):
    """The lane is outside the camera's view."""

    def __init__(self, t: float, offset: float):
        super().__init__(f"lane lost at t={t:.3f}s (offset {offset:+.3f} m)")
        self.t = t
        self.offset = offset


@dataclass(frozen=True)
class PerceptionConfig:
    fps: float = 30
    offset_noise_std: float = 0.002
    heading_noise_std: float = 0.004
    seed: int = 0
    allowed_fps: tuple[float, ...] = ALLOWED_FPS

    def __post_init__(self):
        if self.fps not in self.allowed_fps:
            raise ValueError(f"fps {self.fps} not in allowed set {self.allowed_fps}")
        if self.offset_noise_std < 0 or self.heading_noise_std < 0:
            raise ValueError("noise standard deviations must be >= 0")


@dataclass(frozen=True)
class FrameSample:
    t: float
    measured_offset: float
    measured_heading_error: float


@dataclass(frozen=True)
class ControllerGains:
    k_offset: float = 4.0
    k_heading: float = 1.0
    steering_clip: float = 1.0

    def __post_init__(self):
        if self.k_offset < 0 or self.k_heading < 0:
            raise ValueError("gains must be >= 0")
        if not 0 < self.steering_clip <= 1:
            raise ValueError("steering_clip must be in (0, 1]")


def frame_due(t: float, last_frame_t: float | None, fps: float) -> bool:
    if last_frame_t is None:
        return True
    return t - last_frame_t >= 1.0 / fps - 1e-12


def sample_lane(
    state: VehicleState,
    track: Track,
    cfg: PerceptionConfig,
    rng: np.random.Generator,
) -> FrameSample:
    """One noisy lane measurement; raises LaneLost past twice the lane half-width."""
    if abs(state.lateral_offset) >= 2.0 * track.lane_half_width:
        raise LaneLost(state.t, state.lateral_offset)
    # always draw both so the stream does not depend on which stds are zero
    n_off, n_head = rng.standard_normal(2)
    return FrameSample(
        state.t,
        state.lateral_offset + cfg.offset_noise_std * n_off,
        state.heading_error + cfg.heading_noise_std * n_head,
    )


def steering_from_sample(sample: FrameSample, gains: ControllerGains) -> float:
    raw = gains.k_offset * sample.measured_offset + gains.k_heading * sample.measured_heading_error
    c = gains.steering_clip
    return min(max(raw, -c), c)
