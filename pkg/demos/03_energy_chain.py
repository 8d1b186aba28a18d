"""
Counting watts through a shunt and a 10-bit ADC
===============================================

The simulator never reports modeled power directly. Each draw is turned
into the count an ADC would see across a shunt resistor, then converted
back, so every reported number carries the quantization of the real meter.
"""

import numpy as np

from maps_sim.energy import (
    COMP,
    MECH,
    CompPowerModel,
    EnergyConfig,
    MechPowerModel,
    adc_to_voltage,
    current_to_power,
    measure,
    model_computational_power,
    model_mechanical_power,
    power_lsb,
    voltage_to_current,
)

cfg = EnergyConfig()

d = 512
v = adc_to_voltage(d, cfg.adc)
i = voltage_to_current(v, cfg.comp_shunt)
p = current_to_power(i, cfg.comp_shunt)
print(f"count {d} -> {v:.6f} V -> {i:.4f} A -> {p:.3f} W")

for unit in (COMP, MECH):
    sh = cfg.shunt(unit)
    print(f"{unit}: one count = {power_lsb(sh, cfg.adc) * 1000:.2f} mW, full scale {power_lsb(sh, cfg.adc) * cfg.adc.d_max:.1f} W")

print("\ncamera rate vs compute draw")
for fps in (5, 30):
    print(f"  {fps:>2} fps: {model_computational_power(fps, CompPowerModel()):.2f} W")

print("\nduty vs motor draw (both wheels)")
for duty in (70, 75, 80, 90):
    w = model_mechanical_power(duty, duty, MechPowerModel())
    reading, sample = measure(w, MECH, 0.0, cfg)
    print(f"  duty {duty}: model {w:.4f} W, ADC {reading.d_out:>4}, measured {sample.watts:.4f} W")

# quantization error is bounded by half a count
rng = np.random.default_rng(0)
lsb = power_lsb(cfg.mech_shunt, cfg.adc)
errs = [abs(measure(w, MECH, 0.0, cfg)[1].watts - w) for w in rng.uniform(0, 10, 5000)]
print(f"\nworst quantization error over 5000 draws: {max(errs) / lsb:.3f} counts")
