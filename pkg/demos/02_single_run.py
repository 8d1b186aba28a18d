"""
One run, step by step
=====================

Drives five laps with the co-driver's policy and looks at what the trace
records: where the car was, which setpoint was active, and what it cost.
"""

import numpy as np

from maps_sim.management import CoDriverSource, FixedPolicy, ScenarioConfig, run_scenario

cfg = ScenarioConfig("MAPS", CoDriverSource("mock"), laps=5, seed=0)
res = run_scenario(cfg)

tr = res.trace
print(f"{res.laps_completed} laps in {res.duration_s:.1f} s simulated, {len(tr.t)} steps")
print(f"accuracy {res.accuracy_pct:.2f}%  lap success {res.lap_success_pct:.0f}%")

# setpoints switch at section boundaries
for name, mask in (("straight", ~tr.is_curve), ("curve", tr.is_curve)):
    print(
        f"{name:>8}: duty {np.unique(tr.duty[mask])}, fps {np.unique(tr.fps[mask])}, "
        f"max |offset| {np.abs(tr.offset[mask]).max() * 1000:.1f} mm"
    )

e = res.energy
print(f"avg power  comp {e.avg_power_comp:.3f} W  mech {e.avg_power_mech:.3f} W  total {e.avg_power_total:.3f} W")
print(f"energy     {e.energy_total:.1f} J")

# the same loop at a fixed slow, high-frame-rate setting for contrast
slow = run_scenario(ScenarioConfig("LowHigh", FixedPolicy(70, 30), seed=0))
print(
    f"\nLowHigh: {slow.duration_s:.1f} s, total {slow.energy.avg_power_total:.3f} W, "
    f"energy {slow.energy.energy_total:.1f} J"
)

# a trace is easy to dump for plotting elsewhere
res.write_power_csv("power_MAPS.csv")
print("power trace written to power_MAPS.csv")
