"""End-to-end acceptance criteria, one PASS/FAIL line each."""

import math
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from maps_sim.codriver import CoDriverPolicy, CurvedSetting, StraightSetting, encode_prompt, mock_complete, parse_response
from maps_sim.energy import AdcConfig, ShuntConfig, adc_to_voltage, current_to_power, power_lsb, power_to_adc, reading_to_power, voltage_to_current
from maps_sim.harness import BASELINES, MAPS, canonical_suite, pareto_check, report_csv, run_suite, savings, strictly_dominates, weakly_dominates
from maps_sim.telemetry import FailingSink, NullSink, encode_mqtt_connect, encode_mqtt_publish, encode_remaining_length
from maps_sim.track import Straight, Track, build_reference_track, describe_for_prompt
from maps_sim.vehicle import MotorCommand, VehicleParams, VehicleState, initial_state, step

pytestmark = pytest.mark.acceptance


def test_measurement_chain_exact(verdict):
    adc = AdcConfig(3.3, 1023)
    checks = [
        abs(adc_to_voltage(512, adc) - 1.6516129032) <= 1e-9 * 1.6516129032,
        abs(adc_to_voltage(512, adc) - 512 * 33 / 10230) <= 1e-15,
        voltage_to_current(0.05, ShuntConfig(0.1, 5.0)) == pytest.approx(0.5, rel=1e-12),
        current_to_power(0.5, ShuntConfig(0.1, 5.0)) == pytest.approx(2.5, rel=1e-12),
        adc_to_voltage(0, adc) == 0.0,
        adc_to_voltage(1023, adc) == 3.3,
        voltage_to_current(0.0, ShuntConfig()) == 0.0,
        current_to_power(0.0, ShuntConfig()) == 0.0,
    ]
    verdict("measurement chain unit exactness", all(checks), f"{sum(checks)}/{len(checks)} values exact")


def test_adc_roundtrip(verdict):
    adc = AdcConfig()
    worst = 0.0
    ok = True
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for shunt in (ShuntConfig(0.1, 5.0), ShuntConfig(0.1, 12.0)):
        lsb = power_lsb(shunt, adc)
        for w in rng.uniform(0.0, lsb * adc.d_max, 1000):
            err = abs(reading_to_power(power_to_adc(float(w), shunt, adc), shunt, adc) - w)
            worst = max(worst, err / lsb)
            ok &= err <= lsb
    elapsed = time.perf_counter() - t0
    verdict("ADC round-trip within one LSB", ok and elapsed < 1.0, f"worst {worst:.3f} LSB, {elapsed:.3f} s")


def test_recommended_policy_from_mock(verdict):
    text = mock_complete(encode_prompt(describe_for_prompt(build_reference_track())))
    r = parse_response(text)
    want = CoDriverPolicy(StraightSetting(90, 5), CurvedSetting(70, 80, 30))
    verdict(
        "mock co-driver yields straight 90/5, curved 70-80/30 with no clamping",
        r.policy == want and not r.clamp_events,
        f"got {r.policy.to_dict()}",
    )


@pytest.fixture(scope="module")
def suite_report():
    t0 = time.perf_counter()
    report = run_suite(canonical_suite(repetitions=3, seed_base=0))
    return report, time.perf_counter() - t0


def test_ordering_accuracy(suite_report, verdict):
    rep, _ = suite_report
    maps = rep.row(MAPS).accuracy_pct
    not_below = all(maps >= rep.row(n).accuracy_pct for n in BASELINES)
    gain = maps - rep.row("LowHigh").accuracy_pct
    verdict(
        "(a) MAPS accuracy >= every baseline and >= LowHigh + 5 points",
        not_below and gain >= 5.0,
        f"MAPS {maps:.2f}%, LowHigh {rep.row('LowHigh').accuracy_pct:.2f}%, gain {gain:+.2f}, "
        f"not below any baseline: {not_below}",
    )


def test_ordering_comp(suite_report, verdict):
    rep, _ = suite_report
    m = rep.row(MAPS).comp_w
    s = savings(rep, MAPS, "LowHigh", "comp_w")
    ok = m < rep.row("LowHigh").comp_w and m < rep.row("HighHigh").comp_w and s >= 5.0
    verdict("(b) MAPS computational power below LowHigh and HighHigh, >= 5% saving vs LowHigh", ok, f"saving {s:.1f}%")


def test_ordering_mech(suite_report, verdict):
    rep, _ = suite_report
    m = rep.row(MAPS).mech_w
    others = {n: rep.row(n).mech_w for n in BASELINES}
    ok = all(m < v for v in others.values())
    detail = f"MAPS {m:.3f} W; " + ", ".join(f"{n} {v:.3f}" for n, v in others.items())
    verdict("(c) MAPS mechanical power is the strict minimum", ok, detail)


def test_ordering_total(suite_report, verdict):
    rep, _ = suite_report
    m = rep.row(MAPS).total_w
    ok = m < rep.row("HighHigh").total_w and m < rep.row("LowHigh").total_w
    verdict(
        "(d) MAPS total power below HighHigh and LowHigh",
        ok,
        f"saving {savings(rep, MAPS, 'HighHigh'):.1f}% vs HighHigh, {savings(rep, MAPS, 'LowHigh'):.1f}% vs LowHigh",
    )


def test_suite_runtime(suite_report, verdict):
    _, elapsed = suite_report
    verdict("canonical suite runs in under 60 s", elapsed < 60.0, f"{elapsed:.1f} s")


def test_cli_suite_determinism(tmp_path, verdict):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        proc = subprocess.run(
            [sys.executable, "-m", "maps_sim.cli", "suite", "--seed", "7", "--out", str(d)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append((d / "summary.csv").read_bytes())
    verdict("maps-sim suite --seed 7 twice gives byte-identical CSV", outs[0] == outs[1])


def test_dynamics_properties(verdict):
    p = VehicleParams()
    line = Track((Straight(1000.0),), 0.15, closed=False)
    s = initial_state(line)
    worst = 0.0
    for _ in range(50_000):
        s = step(s, MotorCommand(90, 90), p, 0.01, line)
        worst = max(worst, abs(s.lateral_offset))
    straight_ok = worst < 1e-9

    rng = np.random.default_rng(0)
    a = b = VehicleState()
    mirror_err = 0.0
    for _ in range(2000):
        l, r = rng.uniform(0, 100, 2)
        a = step(a, MotorCommand(l, r), p, 0.01)
        b = step(b, MotorCommand(r, l), p, 0.01)
        mirror_err = max(mirror_err, abs(a.x - b.x), abs(a.y + b.y), abs(math.sin(a.heading + b.heading)))
    mirror_ok = mirror_err < 1e-9

    closure = max(build_reference_track(k).closure_residual()[0] for k in (0.5, 1.0, 2.0, 3.7))
    closure_ok = closure < 1e-6
    verdict(
        "straight-line invariance, mirror symmetry, closure residual",
        straight_ok and mirror_ok and closure_ok,
        f"max offset {worst:.1e} m, mirror error {mirror_err:.1e}, closure {closure:.1e} m",
    )


def test_mqtt_golden_bytes(verdict):
    publish = encode_mqtt_publish("a", "x")
    checks = {
        "publish == 30 05 00 01 61 78": publish == bytes.fromhex("30 05 00 01 61 78"),
        "varint(200) == C8 01": encode_remaining_length(200) == bytes.fromhex("C8 01"),
        "CONNECT contains 00 04 4D 51 54 54 04": bytes.fromhex("00 04 4D 51 54 54 04") in encode_mqtt_connect("maps"),
    }
    failed = [k for k, v in checks.items() if not v]
    verdict("MQTT golden bytes", not failed, f"publish encodes as {publish.hex(' ')}; failing: {failed or 'none'}")


def test_telemetry_non_interference(verdict):
    suite = canonical_suite(repetitions=3, seed_base=11)
    quiet = run_suite(suite, sink_factory=lambda cfg: NullSink())
    broken = run_suite(suite, sink_factory=lambda cfg: FailingSink())
    verdict("failing telemetry sink leaves results unchanged", report_csv(quiet) == report_csv(broken))


def test_pareto_not_strictly_dominated(verdict):
    target, grid = pareto_check()
    strict = [g.label for g in grid if strictly_dominates(g, target)]
    weak = [g.label for g in grid if weakly_dominates(g, target)]
    verdict(
        "MAPS per-class policy not strictly dominated by any of the 16 grid policies",
        len(grid) == 16 and not strict,
        f"MAPS {target.accuracy_pct:.2f}% / {target.energy_j:.1f} J; "
        f"strict dominators {strict or 'none'}; weak dominators {len(weak)}",
    )
