"""Experiment harness: the four fixed baselines plus the co-driver policy.

Every scenario drives the same track with the same lap count, step size and
seed schedule. Results are averaged over repetitions, power columns are
min-max normalized across scenarios, and pairwise savings are reported for
every ordered pair.
"""

from __future__ import annotations

import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import codriver as cd
from .management import (
    CoDriverSource,
    FixedPolicy,
    RunResult,
    ScenarioConfig,
    ScenarioError,
    SimulationError,
    run_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from .telemetry import TelemetrySink

log = logging.getLogger(__name__)

BASELINES = {
    "HighHigh": FixedPolicy(90, 30),
    "LowHigh": FixedPolicy(70, 30),
    "HighLow": FixedPolicy(90, 5),
    "LowLow": FixedPolicy(70, 5),
}
MAPS = "MAPS"
CANONICAL_NAMES = (*BASELINES, MAPS)
POWER_COLUMNS = ("comp_w", "mech_w", "total_w")
CSV_HEADER = "scenario,accuracy_pct,comp_w,mech_w,total_w,norm_comp,norm_mech,norm_total"


@dataclass(frozen=True)
class ExperimentSuite:
    scenarios: tuple[ScenarioConfig, ...]
    repetitions: int = 3
    seed_base: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate scenario names in {names}")

    def seeds(self) -> list[int]:
        return [self.seed_base + r for r in range(self.repetitions)]


def canonical_suite(
    repetitions: int = 3,
    seed_base: int = 0,
    live: bool = False,
    transcript: str | None = None,
    template: ScenarioConfig | None = None,
) -> ExperimentSuite:
    """HighHigh, LowHigh, HighLow, LowLow and MAPS on a shared template."""
    base = template or ScenarioConfig("template", FixedPolicy(70, 30))
    scen = [replace(base, name=name, policy_source=src) for name, src in BASELINES.items()]
    if live:
        src = CoDriverSource("live", transcript)
    elif transcript:
        src = CoDriverSource("replay", transcript)
    else:
        src = CoDriverSource("mock")
    scen.append(replace(base, name=MAPS, policy_source=src))
    return ExperimentSuite(tuple(scen), repetitions, seed_base)


@dataclass
class ScenarioRow:
    scenario: str
    accuracy_pct: float
    lap_success_pct: float
    comp_w: float
    mech_w: float
    total_w: float
    energy_j: float
    duration_s: float
    wall_s: float
    runs: int
    degraded: bool = False
    errors: list[str] = field(default_factory=list)
    accuracy_min: float = 0.0
    accuracy_max: float = 0.0
    policy: dict | None = None
    norm_comp: float = 0.0
    norm_mech: float = 0.0
    norm_total: float = 0.0

    @property
    def ok(self) -> bool:
        return self.runs > 0 and not self.errors


@dataclass
class ComparisonReport:
    rows: list[ScenarioRow]
    seeds: list[int]
    degenerate_normalization: bool = False
    # first-repetition power traces per scenario, (t, comp_w, mech_w)
    traces: dict[str, np.ndarray] = field(default_factory=dict, compare=False, repr=False)

    def row(self, name: str) -> ScenarioRow:
        for r in self.rows:
            if r.scenario == name:
                return r
        raise KeyError(f"scenario {name!r} not in report")

    @property
    def names(self) -> list[str]:
        return [r.scenario for r in self.rows]

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.rows]

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "degenerate_normalization": self.degenerate_normalization,
            "rows": [asdict(r) for r in self.rows],
            "savings": {col: savings_matrix(self, col) for col in POWER_COLUMNS if self._savable(col)},
        }

    def _savable(self, col: str) -> bool:
        return all(getattr(r, col) > 0 for r in self.rows)

    @classmethod
    def from_dict(cls, d: dict) -> ComparisonReport:
        return cls([ScenarioRow(**r) for r in d["rows"]], list(d["seeds"]), d["degenerate_normalization"])


def normalize(values: Sequence[float]) -> tuple[list[float], bool]:
    """Min-max scaling to [0, 1]; a constant column maps to zeros and is flagged."""
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values), True
    return [(v - lo) / (hi - lo) for v in values], False


def savings(report: ComparisonReport, a: str, b: str, column: str = "total_w") -> float:
    """Percent of scenario b's power saved by scenario a."""
    p_a = getattr(report.row(a), column)
    p_b = getattr(report.row(b), column)
    if not p_b > 0:
        raise ValueError(f"{b} has non-positive {column}")
    return 100.0 * (p_b - p_a) / p_b


def savings_matrix(report: ComparisonReport, column: str = "total_w") -> dict[str, dict[str, float]]:
    return {
        a: {b: savings(report, a, b, column) for b in report.names if b != a} for a in report.names
    }


def _run_one(args) -> tuple[str, int, dict | None, np.ndarray | None, str | None, float]:
    cfg, sink_factory = args
    t0 = time.perf_counter()
    sink = sink_factory(cfg) if sink_factory else None
    try:
        r = run_scenario(cfg, sink=sink)
    except (ScenarioError, SimulationError, cd.BackendError, ValueError) as e:
        return cfg.name, cfg.seed, None, None, f"{type(e).__name__}: {e}", time.perf_counter() - t0
    return cfg.name, cfg.seed, _row_stats(r), r.power_trace, None, time.perf_counter() - t0


def _row_stats(r: RunResult) -> dict:
    s = r.summary()
    s["energy_j"] = r.energy.energy_total
    if r.aborted:
        s["abort"] = r.aborted
    return s


def run_suite(
    suite: ExperimentSuite,
    sink_factory: Callable[[ScenarioConfig], TelemetrySink] | None = None,
    workers: int = 1,
) -> ComparisonReport:
    """Run every scenario for every seed and assemble the comparison report.

    A failing scenario is recorded in its row's `errors`; the rest of the
    suite still runs. Row order follows `suite.scenarios`.
    """
    jobs = [
        (replace(cfg, seed=seed), sink_factory)
        for cfg in suite.scenarios
        for seed in suite.seeds()
    ]
    if workers > 1 and sink_factory is None:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(_run_one, jobs))
    else:
        outcomes = [_run_one(j) for j in jobs]

    rows = []
    traces = {}
    for cfg in suite.scenarios:
        mine = [o for o in outcomes if o[0] == cfg.name]
        stats = [o[2] for o in mine if o[2] is not None]
        errors = [o[4] for o in mine if o[4] is not None]
        errors += [f"seed {s['seed']}: {s['abort']}" for s in stats if "abort" in s]
        wall = sum(o[5] for o in mine)
        first = next((o[3] for o in mine if o[3] is not None), None)
        if first is not None:
            traces[cfg.name] = first
        if not stats:
            rows.append(ScenarioRow(cfg.name, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, wall, 0, errors=errors))
            continue

        def mean(key):
            return float(np.mean([s[key] for s in stats]))

        accs = [s["accuracy_pct"] for s in stats]
        rows.append(
            ScenarioRow(
                scenario=cfg.name,
                accuracy_pct=mean("accuracy_pct"),
                lap_success_pct=mean("lap_success_pct"),
                comp_w=mean("avg_power_comp"),
                mech_w=mean("avg_power_mech"),
                total_w=mean("avg_power_total"),
                energy_j=mean("energy_j"),
                duration_s=mean("duration_s"),
                wall_s=wall,
                runs=len(stats),
                degraded=any(s["degraded"] for s in stats),
                errors=errors,
                accuracy_min=float(min(accs)),
                accuracy_max=float(max(accs)),
                policy=stats[0]["policy"],
            )
        )

    degenerate = False
    for col, norm in zip(POWER_COLUMNS, ("norm_comp", "norm_mech", "norm_total")):
        vals, flat = normalize([getattr(r, col) for r in rows])
        degenerate |= flat
        for r, v in zip(rows, vals):
            setattr(r, norm, v)
    return ComparisonReport(rows, suite.seeds(), degenerate, traces)


# -- output -------------------------------------------------------------------


def _f(v: float) -> str:
    return f"{v:.6f}"


def report_csv(report: ComparisonReport) -> str:
    lines = [CSV_HEADER]
    for r in report.rows:
        lines.append(
            ",".join(
                [r.scenario]
                + [_f(v) for v in (r.accuracy_pct, r.comp_w, r.mech_w, r.total_w)]
                + [_f(v) for v in (r.norm_comp, r.norm_mech, r.norm_total)]
            )
        )
    return "\n".join(lines) + "\n"


def savings_csv(report: ComparisonReport, column: str = "total_w") -> str:
    names = report.names
    m = savings_matrix(report, column)
    lines = ["a_vs_b," + ",".join(names)]
    for a in names:
        lines.append(a + "," + ",".join("" if a == b else f"{m[a][b]:.4f}" for b in names))
    return "\n".join(lines) + "\n"


def report_markdown(report: ComparisonReport) -> str:
    out = [
        "| scenario | accuracy % | lap success % | comp W | mech W | total W "
        "| norm comp | norm mech | norm total | duration s | wall s |",
        "|---|---|---|---|---|---|---|---|---|---|---|",
    ]
    for r in report.rows:
        out.append(
            f"| {r.scenario} | {r.accuracy_pct:.2f} | {r.lap_success_pct:.1f} | {r.comp_w:.3f} "
            f"| {r.mech_w:.3f} | {r.total_w:.3f} | {r.norm_comp:.3f} | {r.norm_mech:.3f} "
            f"| {r.norm_total:.3f} | {r.duration_s:.1f} | {r.wall_s:.2f} |"
        )
    notes = []
    if report.degenerate_normalization:
        notes.append("Normalization is degenerate for at least one column (all values equal).")
    for r in report.rows:
        for e in r.errors:
            notes.append(f"{r.scenario}: {e}")
        if r.degraded:
            notes.append(f"{r.scenario}: co-driver unavailable, safe default policy used")
    if notes:
        out += ["", *(f"- {n}" for n in notes)]
    return "\n".join(out) + "\n"


def power_trace_csv(trace: np.ndarray) -> str:
    lines = ["t,comp_w,mech_w,total_w"]
    for t, c, m in trace:
        lines.append(f"{t:.2f},{c:.6f},{m:.6f},{c + m:.6f}")
    return "\n".join(lines) + "\n"


def emit_report(
    report: ComparisonReport, out_dir: str | Path, formats: Iterable[str] = ("csv", "markdown", "json")
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def write(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    formats = set(formats)
    unknown = formats - {"csv", "markdown", "json"}
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    if "csv" in formats:
        write("summary.csv", report_csv(report))
        for col in POWER_COLUMNS:
            if report._savable(col):
                write(f"savings_{col}.csv", savings_csv(report, col))
        for name, trace in report.traces.items():
            write(f"power_{name}.csv", power_trace_csv(trace))
    if "markdown" in formats:
        write("summary.md", report_markdown(report))
    if "json" in formats:
        write("report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    return written


def load_report(path: str | Path) -> ComparisonReport:
    return ComparisonReport.from_dict(json.loads(Path(path).read_text()))


# -- qualitative checks and calibration ------------------------------------------


def ordering_checks(report: ComparisonReport, min_accuracy_gain: float = 5.0, min_comp_saving: float = 5.0) -> dict[str, bool]:
    """Qualitative comparisons between MAPS and the baselines."""
    m = report.row(MAPS)
    base = [report.row(n) for n in BASELINES]
    lh, hh = report.row("LowHigh"), report.row("HighHigh")
    return {
        "accuracy_not_below_any_baseline": all(m.accuracy_pct >= b.accuracy_pct for b in base),
        "accuracy_gain_over_lowhigh": m.accuracy_pct - lh.accuracy_pct >= min_accuracy_gain,
        "comp_below_lowhigh_and_highhigh": m.comp_w < lh.comp_w and m.comp_w < hh.comp_w,
        "comp_saving_vs_lowhigh": savings(report, MAPS, "LowHigh", "comp_w") >= min_comp_saving,
        "mech_strict_minimum": all(m.mech_w < b.mech_w for b in base),
        "total_below_highhigh_and_lowhigh": m.total_w < hh.total_w and m.total_w < lh.total_w,
    }


@dataclass(frozen=True)
class CalibrationPoint:
    offset_noise_std: float
    heading_noise_std: float
    k_offset: float
    k_heading: float

    def apply(self, cfg: ScenarioConfig) -> ScenarioConfig:
        return replace(
            cfg,
            perception=replace(
                cfg.perception,
                offset_noise_std=self.offset_noise_std,
                heading_noise_std=self.heading_noise_std,
            ),
            gains=replace(cfg.gains, k_offset=self.k_offset, k_heading=self.k_heading),
        )


DEFAULT_GRID = {
    "offset_noise_std": (0.002, 0.01, 0.02),
    "heading_noise_std": (0.004, 0.02, 0.05),
    "k_offset": (4.0, 10.0, 20.0),
    "k_heading": (0.5, 1.0),
}


def calibrate(
    template: ScenarioConfig | None = None,
    grid: dict[str, Sequence[float]] | None = None,
    laps: int = 2,
    repetitions: int = 2,
    seed_base: int = 0,
    progress: Callable[[CalibrationPoint, dict[str, bool]], None] | None = None,
) -> list[tuple[CalibrationPoint, dict[str, bool], ComparisonReport]]:
    """Sweep perception noise and controller gains, scoring each point by the ordering checks."""
    grid = grid or DEFAULT_GRID
    base = replace(template or ScenarioConfig("template", FixedPolicy(70, 30)), laps=laps)
    keys = ("offset_noise_std", "heading_noise_std", "k_offset", "k_heading")
    out = []
    for values in itertools.product(*(grid[k] for k in keys)):
        point = CalibrationPoint(*values)
        suite = canonical_suite(repetitions, seed_base, template=point.apply(base))
        report = run_suite(suite)
        checks = ordering_checks(report)
        out.append((point, checks, report))
        if progress:
            progress(point, checks)
    # most orderings first; among ties prefer a wider accuracy lead over the worst baseline
    out.sort(key=lambda item: (-sum(item[1].values()), -_accuracy_spread(item[2])))
    return out


def _accuracy_spread(report: ComparisonReport) -> float:
    worst = min(report.row(n).accuracy_pct for n in BASELINES)
    return report.row(MAPS).accuracy_pct - worst


def calibration_to_dict(point: CalibrationPoint) -> dict:
    return {
        "perception": {
            "offset_noise_std": point.offset_noise_std,
            "heading_noise_std": point.heading_noise_std,
            "k_offset": point.k_offset,
            "k_heading": point.k_heading,
        }
    }


def apply_overrides(cfg: ScenarioConfig, overrides: dict) -> ScenarioConfig:
    """Overlay a partial scenario dict (e.g. a saved calibration) onto `cfg`."""
    d = scenario_to_dict(cfg)
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(d.get(key), dict):
            d[key] = _deep_merge(d[key], val)
        else:
            d[key] = val
    return scenario_from_dict(d)


def _deep_merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = _deep_merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


# -- Pareto check over per-class grid policies ---------------------------------------

GRID_SPEEDS = (70, 90)
GRID_FPS = (5, 30)


@dataclass(frozen=True)
class ParetoPoint:
    label: str
    policy: cd.CoDriverPolicy
    accuracy_pct: float
    energy_j: float


def grid_policies() -> list[cd.CoDriverPolicy]:
    """All 16 (straight, curved) combinations of speed {70, 90} and fps {5, 30}."""
    settings = list(itertools.product(GRID_SPEEDS, GRID_FPS))
    return [
        cd.CoDriverPolicy(cd.StraightSetting(sv, sf), cd.CurvedSetting(cv, cv, cf))
        for (sv, sf), (cv, cf) in itertools.product(settings, settings)
    ]


def _label(p: cd.CoDriverPolicy) -> str:
    s, c = p.straight, p.curved
    curve = f"{c.speed_duty_min:g}" if c.speed_duty_min == c.speed_duty_max else f"{c.speed_duty_min:g}-{c.speed_duty_max:g}"
    return f"S{s.speed_duty:g}/{s.fps} C{curve}/{c.fps}"


def evaluate_policy(cfg: ScenarioConfig, policy: cd.CoDriverPolicy) -> ParetoPoint:
    r = run_scenario(cfg, policy=policy)
    return ParetoPoint(_label(policy), policy, r.accuracy_pct, r.energy.energy_total)


def strictly_dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    """a is better than b in both accuracy (higher) and energy (lower)."""
    return a.accuracy_pct > b.accuracy_pct and a.energy_j < b.energy_j


def weakly_dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    """a is no worse in both objectives and better in at least one."""
    return (
        a.accuracy_pct >= b.accuracy_pct
        and a.energy_j <= b.energy_j
        and (a.accuracy_pct > b.accuracy_pct or a.energy_j < b.energy_j)
    )


def pareto_check(
    template: ScenarioConfig | None = None,
    policy: cd.CoDriverPolicy = cd.RECOMMENDED_POLICY,
    laps: int = 1,
) -> tuple[ParetoPoint, list[ParetoPoint]]:
    """Evaluate `policy` and the 16 grid policies on identical one-lap runs."""
    base = replace(template or ScenarioConfig("pareto", FixedPolicy(70, 30)), laps=laps)
    target = evaluate_policy(replace(base, name="MAPS"), policy)
    grid = [evaluate_policy(replace(base, name=_label(p)), p) for p in grid_policies()]
    return target, grid
