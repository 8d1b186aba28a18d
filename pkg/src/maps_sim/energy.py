"""Shunt/ADC power measurement and the per-unit power models.

The measurement chain is ADC count -> input voltage -> shunt current ->
device power. Simulated draws are pushed back through the inverse chain
(quantized to whole counts) so every recorded sample goes through the
forward conversion exactly as a bench reading would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

COMP = "comp"
MECH = "mech"
UNITS = (COMP, MECH)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AdcConfig:
    v_max: float = 3.3
    d_max: int = 1023

    def __post_init__(self):
        if not self.v_max > 0:
            raise ConfigError("ADC v_max must be > 0")
        if not (isinstance(self.d_max, int) and self.d_max > 0):
            raise ConfigError("ADC d_max must be a positive integer")


@dataclass(frozen=True)
class ShuntConfig:
    resistance: float = 0.1
    device_voltage: float = 5.0

    def __post_init__(self):
        if not self.resistance > 0:
            raise ConfigError("shunt resistance must be > 0")
        if not self.device_voltage > 0:
            raise ConfigError("device voltage must be > 0")


@dataclass(frozen=True)
class AdcReading:
    d_out: int
    unit: str
    t: float
    saturated: bool = False


@dataclass(frozen=True)
class PowerSample:
    t: float
    unit: str
    watts: float


@dataclass(frozen=True)
class MechPowerModel:
    """Per-motor draw p0 + p1*x + p2*x**2 with x = duty/100, for every motor with duty > 0."""

    p0: float = 0.3
    p1: float = 1.2
    p2: float = 1.5


@dataclass(frozen=True)
class CompPowerModel:
    p_idle: float = 2.0
    p_frame: float = 0.08


@dataclass(frozen=True)
class EnergyConfig:
    adc: AdcConfig = AdcConfig()
    comp_shunt: ShuntConfig = ShuntConfig(0.1, 5.0)
    mech_shunt: ShuntConfig = ShuntConfig(0.1, 12.0)
    mech_model: MechPowerModel = MechPowerModel()
    comp_model: CompPowerModel = CompPowerModel()
    sample_rate_hz: float = 100.0

    def shunt(self, unit: str) -> ShuntConfig:
        return self.comp_shunt if unit == COMP else self.mech_shunt


def adc_to_voltage(d_out: int, cfg: AdcConfig) -> float:
    if not 0 <= d_out <= cfg.d_max:
        raise ValueError(f"d_out {d_out} outside [0, {cfg.d_max}]")
    return d_out * cfg.v_max / cfg.d_max


def voltage_to_current(input_voltage: float, shunt: ShuntConfig) -> float:
    if shunt.resistance <= 0:
        raise ConfigError("shunt resistance must be > 0")
    if input_voltage < 0:
        raise ValueError("input voltage must be >= 0")
    return input_voltage / shunt.resistance


def current_to_power(current: float, shunt: ShuntConfig) -> float:
    if current < 0:
        raise ValueError("current must be >= 0")
    return current * shunt.device_voltage


def reading_to_power(reading: AdcReading, shunt: ShuntConfig, adc: AdcConfig) -> float:
    return current_to_power(voltage_to_current(adc_to_voltage(reading.d_out, adc), shunt), shunt)


def power_lsb(shunt: ShuntConfig, adc: AdcConfig) -> float:
    """Power represented by one ADC count."""
    return (adc.v_max / adc.d_max) / shunt.resistance * shunt.device_voltage


def power_to_adc(
    watts: float, shunt: ShuntConfig, adc: AdcConfig, unit: str = COMP, t: float = 0.0
) -> AdcReading:
    """Quantized ADC count that a shunt would report for `watts`."""
    if not (watts >= 0 and math.isfinite(watts)):
        raise ValueError(f"power must be finite and >= 0, got {watts}")
    v_shunt = watts / shunt.device_voltage * shunt.resistance
    d = round(v_shunt * adc.d_max / adc.v_max)
    if d > adc.d_max:
        return AdcReading(adc.d_max, unit, t, saturated=True)
    return AdcReading(int(d), unit, t)


def model_mechanical_power(left_duty: float, right_duty: float, model: MechPowerModel) -> float:
    total = 0.0
    for duty in (left_duty, right_duty):
        if duty > 0:
            x = duty / 100.0
            total += model.p0 + model.p1 * x + model.p2 * x * x
    return total


def model_computational_power(fps: float, model: CompPowerModel) -> float:
    if not fps > 0:
        raise ValueError("fps must be > 0")
    return model.p_idle + model.p_frame * fps


def measure(watts: float, unit: str, t: float, cfg: EnergyConfig) -> tuple[AdcReading, PowerSample]:
    """Run a modeled draw through the full quantized chain."""
    shunt = cfg.shunt(unit)
    reading = power_to_adc(watts, shunt, cfg.adc, unit, t)
    return reading, PowerSample(t, unit, reading_to_power(reading, shunt, cfg.adc))


@dataclass(frozen=True)
class EnergyReport:
    avg_power_comp: float
    avg_power_mech: float
    avg_power_total: float
    energy_comp: float
    energy_mech: float
    duration: float
    normalized_comp: float = 0.0
    normalized_mech: float = 0.0
    normalized_total: float = 0.0

    @property
    def energy_total(self) -> float:
        return self.energy_comp + self.energy_mech

    @property
    def energy_joules(self) -> dict[str, float]:
        return {COMP: self.energy_comp, MECH: self.energy_mech, "total": self.energy_total}


def _unit_energy(samples: Sequence[PowerSample], end: float) -> float:
    """Energy of a zero-order-hold sample stream: each sample holds until the next one."""
    e = 0.0
    for cur, nxt in zip(samples, samples[1:]):
        e += cur.watts * (nxt.t - cur.t)
    last = samples[-1]
    e += last.watts * (end - last.t)
    return e


def aggregate(samples: Iterable[PowerSample], duration: float, start: float = 0.0) -> EnergyReport:
    """Per-unit time-weighted average power and energy over [start, start + duration].

    Samples are treated as piecewise constant, each holding its value until
    the next sample of the same unit (the last one until the window end).
    """
    if not duration > 0:
        raise ValueError("duration must be > 0")
    by_unit: dict[str, list[PowerSample]] = {COMP: [], MECH: []}
    n = 0
    for s in samples:
        by_unit.setdefault(s.unit, []).append(s)
        n += 1
    if n == 0:
        raise ValueError("cannot aggregate an empty sample set")
    end = start + duration
    energy = {}
    for unit in UNITS:
        seq = sorted(by_unit[unit], key=lambda s: s.t)
        energy[unit] = _unit_energy(seq, end) if seq else 0.0
    e_c, e_m = energy[COMP], energy[MECH]
    return EnergyReport(
        avg_power_comp=e_c / duration,
        avg_power_mech=e_m / duration,
        avg_power_total=(e_c + e_m) / duration,
        energy_comp=e_c,
        energy_mech=e_m,
        duration=duration,
    )


def trapezoid_energy(samples: Sequence[PowerSample]) -> float:
    """Trapezoid-rule energy between the first and last sample of one unit."""
    e = 0.0
    for a, b in zip(samples, samples[1:]):
        e += 0.5 * (a.watts + b.watts) * (b.t - a.t)
    return e
