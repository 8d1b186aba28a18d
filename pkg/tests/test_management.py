import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maps_sim.codriver import RECOMMENDED_POLICY, CoDriverPolicy
from maps_sim.management import (
    CoDriverSource,
    FeedbackConfig,
    FeedbackState,
    FixedPolicy,
    ScenarioConfig,
    ScenarioError,
    Setpoint,
    Trace,
    compute_accuracy,
    feedback_adjust,
    lap_success_rate,
    load_scenario,
    resolve_segment_setpoint,
    run_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from maps_sim.perception import PerceptionConfig
from maps_sim.telemetry import MemorySink
from maps_sim.track import build_reference_track

TRACK = build_reference_track(1.0)
STRAIGHT = TRACK.locate(1.0)
ARC = TRACK.locate(2.5)


def test_setpoint_straight():
    assert resolve_segment_setpoint(RECOMMENDED_POLICY, STRAIGHT) == Setpoint(90, 5)


def test_setpoint_arc_midpoint():
    assert resolve_segment_setpoint(RECOMMENDED_POLICY, ARC) == Setpoint(75, 30)


def test_setpoint_fixed():
    p = CoDriverPolicy.fixed(70, 30)
    for loc in (STRAIGHT, ARC):
        assert resolve_segment_setpoint(p, loc) == Setpoint(70, 30)


def test_setpoint_feedback_clamped():
    assert resolve_segment_setpoint(RECOMMENDED_POLICY, ARC, FeedbackState(curve_duty=95)).speed_duty == 80


def test_feedback_rule():
    assert feedback_adjust(75, 7.0, 6.0, (70, 80), 5) == 70
    assert feedback_adjust(75, 5.0, 6.0, (70, 80), 5) == 80  # 5 W is below 0.9 * 6 W
    assert feedback_adjust(75, 5.7, 6.0, (70, 80), 5) == 75  # inside the dead band
    assert feedback_adjust(75, 6.0, 6.0, (70, 80), 5) == 75


@given(st.floats(70, 80), st.floats(0, 50), st.floats(0.1, 50), st.floats(0.1, 20))
def test_feedback_stays_in_range(cur, avg, budget, step):
    assert 70 <= feedback_adjust(cur, avg, budget, (70, 80), step) <= 80


def _trace(offsets, s_end, laps=5, length=10.0, hw=0.15):
    n = len(offsets)
    return Trace(
        hw,
        laps,
        length,
        np.arange(n) * 0.01,
        np.linspace(0, s_end, n),
        np.asarray(offsets, float),
        np.zeros(n, bool),
        np.full(n, 70.0),
        np.full(n, 30.0),
    )


def test_accuracy_perfect():
    tr = _trace(np.zeros(1000), 50.0)
    assert compute_accuracy(tr) == 100.0
    assert lap_success_rate(tr) == 100.0


def test_accuracy_half_out():
    off = np.zeros(1000)
    off[::2] = 0.5
    assert compute_accuracy(_trace(off, 50.0)) == pytest.approx(50.0)


def test_accuracy_abort_at_lap_three():
    tr = _trace(np.zeros(600), 30.0)
    assert compute_accuracy(tr) == pytest.approx(60.0)
    assert lap_success_rate(tr) == pytest.approx(60.0)


def test_accuracy_empty():
    with pytest.raises(ValueError):
        compute_accuracy(_trace([], 0.0))


def test_config_validation():
    with pytest.raises(ScenarioError):
        run_scenario(ScenarioConfig("x", FixedPolicy(100, 30)))
    with pytest.raises(ScenarioError):
        run_scenario(ScenarioConfig("x", FixedPolicy(70, 30), laps=0))
    with pytest.raises(ValueError):
        ScenarioConfig("x", FixedPolicy(70, 30), perception=PerceptionConfig(fps=10))


@pytest.fixture(scope="module")
def maps_run():
    return run_scenario(ScenarioConfig("MAPS", CoDriverSource("mock"), laps=1, seed=3))


def test_deterministic(maps_run):
    again = run_scenario(ScenarioConfig("MAPS", CoDriverSource("mock"), laps=1, seed=3))
    assert maps_run.same_outcome(again)


def test_setpoint_dispatch(maps_run):
    tr = maps_run.trace
    assert np.all(tr.fps[~tr.is_curve] == 5)
    assert np.all(tr.fps[tr.is_curve] == 30)
    assert np.all(tr.duty[~tr.is_curve] == 90)
    # feedback off: curve duty is constant
    assert np.unique(tr.duty[tr.is_curve]).tolist() == [75.0]


def test_maps_run_uses_recommended_policy(maps_run):
    assert maps_run.policy_used == RECOMMENDED_POLICY
    assert not maps_run.degraded and maps_run.aborted is None
    assert maps_run.laps_completed == 1


def test_low_high_completes_five_laps():
    r = run_scenario(ScenarioConfig("LowHigh", FixedPolicy(70, 30), seed=0))
    assert r.laps_completed == 5
    assert r.off_track_events == 0 and r.aborted is None


def test_zero_noise_dense_sampling_accuracy():
    cfg = ScenarioConfig(
        "clean", FixedPolicy(70, 30), laps=2, perception=PerceptionConfig(30, 0.0, 0.0)
    )
    assert run_scenario(cfg).accuracy_pct >= 99.0


def test_monotone_energy():
    def avg(duty, fps):
        return run_scenario(ScenarioConfig("m", FixedPolicy(duty, fps), laps=1, seed=1)).energy

    for fps in (5, 30):
        assert avg(90, fps).avg_power_mech >= avg(70, fps).avg_power_mech
    for duty in (70, 90):
        assert avg(duty, 30).avg_power_comp >= avg(duty, 5).avg_power_comp


def test_feedback_moves_within_range():
    fb = FeedbackConfig(enabled=True, energy_budget_w=7.0)
    r = run_scenario(ScenarioConfig("fb", CoDriverSource("mock"), laps=1, feedback=fb))
    curve = r.trace.duty[r.trace.is_curve]
    assert curve.min() >= 70 and curve.max() <= 80
    assert r.feedback_adjustments > 0


def test_telemetry_stream(maps_run):
    sink = MemorySink()
    r = run_scenario(ScenarioConfig("MAPS", CoDriverSource("mock"), laps=1, seed=3), sink=sink)
    assert r.same_outcome(maps_run)
    topics = {t for t, _ in sink.records}
    assert topics == {"maps/energy/comp", "maps/energy/mech", "maps/energy/total", "maps/run/summary"}


def test_degraded_replay_falls_back(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text(json.dumps({"request": {}, "response": "nothing useful"}) + "\n")
    r = run_scenario(ScenarioConfig("MAPS", CoDriverSource("replay", str(p)), laps=1))
    assert r.degraded
    assert r.policy_used == CoDriverPolicy.fixed(70, 30)


def test_config_json_roundtrip(tmp_path):
    cfg = ScenarioConfig("MAPS", CoDriverSource("mock"), laps=2, seed=4, anticipation=0.1)
    d = scenario_to_dict(cfg)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    back = load_scenario(p)
    assert scenario_to_dict(back) == d
    assert back.perception == cfg.perception and back.gains == cfg.gains


def test_config_from_minimal_dict():
    cfg = scenario_from_dict(
        {"name": "x", "policy": {"fixed": {"speed": 90, "fps": 5}}, "perception": {"fps": 5, "k_offset": 6}}
    )
    assert cfg.policy_source == FixedPolicy(90, 5)
    assert cfg.gains.k_offset == 6
    assert replace(cfg, laps=1).laps == 1


def _per_segment_max(result, segments, tail=0.0):
    """Max |offset| per track segment, optionally over only the last `tail` share of each."""
    tr = result.trace
    track = TRACK
    s_mod = np.mod(tr.s, track.total_length)
    out = {}
    for k in segments:
        lo, length = track.cumulative[k], track.segments[k].arc_length
        mask = (s_mod >= lo + (1 - tail) * length if tail else s_mod >= lo) & (s_mod < lo + length)
        out[k] = float(np.abs(tr.offset[mask]).max())
    return out


ARCS = (1, 3, 5, 7)
STRAIGHTS = (0, 2, 4, 6)


@pytest.mark.parametrize("seed", [0, 1])
def test_staleness_grows_with_speed_over_fps(seed):
    fast = run_scenario(ScenarioConfig("HighLow", FixedPolicy(90, 5), laps=2, seed=seed))
    slow = run_scenario(ScenarioConfig("LowHigh", FixedPolicy(70, 30), laps=2, seed=seed))
    f, s = _per_segment_max(fast, ARCS), _per_segment_max(slow, ARCS)
    for k in ARCS:
        assert f[k] > s[k], (k, f[k], s[k])


@pytest.mark.parametrize("fps", [5, 30])
def test_straights_settle_without_noise(fps):
    cfg = ScenarioConfig("z", FixedPolicy(90, fps), laps=1, perception=PerceptionConfig(fps, 0.0, 0.0))
    r = run_scenario(cfg)
    for k, v in _per_segment_max(r, STRAIGHTS, tail=0.2).items():
        assert v < 0.01 * TRACK.lane_half_width, (k, v)


def test_clean_low_speed_never_loses_lane():
    cfg = ScenarioConfig("z", FixedPolicy(70, 30), laps=2, perception=PerceptionConfig(30, 0.0, 0.0))
    r = run_scenario(cfg)
    assert r.lane_lost_events == 0 and r.aborted is None
