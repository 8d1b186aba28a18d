"""maps-sim command line: run, suite, calibrate, replay."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import codriver as cd
from .harness import (
    MAPS,
    apply_overrides,
    calibrate,
    calibration_to_dict,
    canonical_suite,
    emit_report,
    ordering_checks,
    report_markdown,
    run_suite,
)
from .management import (
    CoDriverSource,
    FixedPolicy,
    ScenarioConfig,
    ScenarioError,
    SimulationError,
    load_scenario,
    run_scenario,
)
from .telemetry import ENV_MQTT_URL, FileSink, MqttSink, NullSink, SinkError

log = logging.getLogger("maps_sim")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("calibration overrides")
    g.add_argument("--calibration", type=Path, help="JSON file with partial scenario settings")
    g.add_argument("--offset-noise", type=float, help="lateral offset noise std (m)")
    g.add_argument("--heading-noise", type=float, help="heading error noise std (rad)")
    g.add_argument("--k-offset", type=float, help="steering gain on lateral offset (1/m)")
    g.add_argument("--k-heading", type=float, help="steering gain on heading error")
    g.add_argument("--lane-half-width", type=float, help="lane half-width (m)")
    g.add_argument("--laps", type=int)
    g.add_argument("--dt", type=float)


def _add_telemetry(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("telemetry")
    g.add_argument("--telemetry-out", type=Path, help="append samples as JSONL to this file")
    g.add_argument("--mqtt-host", help=f"MQTT broker host (or set {ENV_MQTT_URL})")
    g.add_argument("--mqtt-port", type=int, default=1883)


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.calibration:
        cfg = apply_overrides(cfg, json.loads(args.calibration.read_text()))
    perception = {}
    if args.offset_noise is not None:
        perception["offset_noise_std"] = args.offset_noise
    if args.heading_noise is not None:
        perception["heading_noise_std"] = args.heading_noise
    if args.k_offset is not None:
        perception["k_offset"] = args.k_offset
    if args.k_heading is not None:
        perception["k_heading"] = args.k_heading
    if perception:
        cfg = apply_overrides(cfg, {"perception": perception})
    if args.lane_half_width is not None:
        cfg = replace(cfg, track=replace(cfg.track, lane_half_width=args.lane_half_width))
    if args.laps is not None:
        cfg = replace(cfg, laps=args.laps)
    if args.dt is not None:
        cfg = replace(cfg, dt=args.dt)
    return cfg


def _sink_factory(args):
    """None (no telemetry), or a callable making one sink per run."""
    if args.telemetry_out:
        return lambda cfg: FileSink(args.telemetry_out)
    if args.mqtt_host or os.environ.get(ENV_MQTT_URL):

        def make(cfg):
            try:
                if args.mqtt_host:
                    return MqttSink(args.mqtt_host, args.mqtt_port, client_id=f"maps-{cfg.name}"[:23])
                return MqttSink.from_env(client_id=f"maps-{cfg.name}"[:23])
            except SinkError as e:
                log.warning("%s; telemetry disabled for %s", e, cfg.name)
                return NullSink()

        return make
    return None


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_scenario(args.config), args)
    factory = _sink_factory(args)
    result = run_scenario(cfg, sink=factory(cfg) if factory else None)
    summary = result.summary()
    print(json.dumps(summary, indent=2))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        result.write_json(args.out / f"{cfg.name}.json")
        result.write_power_csv(args.out / f"power_{cfg.name}.csv")
        result.write_samples_csv(args.out / f"samples_{cfg.name}.csv")
    return 0 if result.aborted is None else 1


def _template(args) -> ScenarioConfig:
    base = load_scenario(args.config) if getattr(args, "config", None) else ScenarioConfig(
        "template", FixedPolicy(70, 30)
    )
    return _apply_overrides(base, args)


def cmd_suite(args) -> int:
    suite = canonical_suite(
        repetitions=args.repetitions,
        seed_base=args.seed,
        live=args.live,
        transcript=str(args.transcript) if args.transcript else None,
        template=_template(args),
    )
    report = run_suite(suite, sink_factory=_sink_factory(args), workers=args.workers)
    print(report_markdown(report), end="")
    checks = ordering_checks(report)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if args.out:
        for p in emit_report(report, args.out):
            log.info("wrote %s", p)
    config_errors = [e for r in report.rows for e in r.errors if e.startswith(("ScenarioError", "ValueError"))]
    incomplete = [r.scenario for r in report.rows if not r.ok]
    return 0 if not config_errors and not incomplete else 1


def cmd_calibrate(args) -> int:
    template = _template(args)

    def progress(point, checks):
        print(f"{sum(checks.values())}/{len(checks)}  {point}", flush=True)

    results = calibrate(
        template, laps=args.sweep_laps, repetitions=args.repetitions, seed_base=args.seed, progress=progress
    )
    best_point, best_checks, best_report = results[0]
    print("\nbest calibration:", best_point)
    for name, ok in best_checks.items():
        print(f"{'holds ' if ok else 'broken'}  {name}")
    print(report_markdown(best_report), end="")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(calibration_to_dict(best_point), indent=2) + "\n")
        print(f"calibration written to {args.out}")
    return 0


def cmd_replay(args) -> int:
    base = load_scenario(args.config) if args.config else ScenarioConfig(MAPS, FixedPolicy(70, 30))
    cfg = replace(base, name=MAPS, policy_source=CoDriverSource("replay", str(args.transcript)))
    if args.laps is not None:
        cfg = replace(cfg, laps=args.laps)
    result = run_scenario(cfg)
    print(json.dumps(result.summary(), indent=2))
    return 0 if not result.degraded and result.aborted is None else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maps-sim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario from a JSON config")
    r.add_argument("--config", type=Path, required=True)
    r.add_argument("--out", type=Path, help="directory for result JSON and CSV traces")
    _add_overrides(r)
    _add_telemetry(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", help="run the four baselines and MAPS")
    s.add_argument("--live", action="store_true", help=f"query the chat endpoint in {cd.ENV_URL}")
    s.add_argument("--transcript", type=Path, help="record (with --live) or replay co-driver answers")
    s.add_argument("--out", type=Path)
    s.add_argument("--seed", type=int, default=0, help="seed base; repetition i uses seed+i")
    s.add_argument("--repetitions", type=int, default=3)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--config", type=Path, help="scenario JSON used as the shared template")
    _add_overrides(s)
    _add_telemetry(s)
    s.set_defaults(func=cmd_suite)

    c = sub.add_parser("calibrate", help="sweep perception noise and gains against the orderings")
    c.add_argument("--out", type=Path, help="write the best calibration JSON here")
    c.add_argument("--sweep-laps", type=int, default=2)
    c.add_argument("--repetitions", type=int, default=2)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--config", type=Path)
    _add_overrides(c)
    c.set_defaults(func=cmd_calibrate)

    rp = sub.add_parser("replay", help="drive with a policy decoded from a recorded transcript")
    rp.add_argument("--transcript", type=Path, required=True)
    rp.add_argument("--config", type=Path)
    rp.add_argument("--laps", type=int)
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ScenarioError, ValueError, FileNotFoundError) as e:
        print(f"maps-sim: configuration error: {e}", file=sys.stderr)
        return 2
    except SimulationError as e:
        print(f"maps-sim: simulation aborted: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
