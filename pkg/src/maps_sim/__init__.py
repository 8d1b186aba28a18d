"""Energy/accuracy tradeoff simulator for an LLM co-driven robot car."""

from .codriver import (
    RECOMMENDED_POLICY,
    SAFE_DEFAULT_POLICY,
    CoDriverPolicy,
    Constraints,
    HttpChatBackend,
    MockBackend,
    TranscriptReplayBackend,
    encode_prompt,
    fetch_policy,
    parse_response,
)
from .energy import EnergyConfig, EnergyReport, PowerSample, aggregate
from .harness import ComparisonReport, canonical_suite, emit_report, run_suite, savings
from .management import CoDriverSource, FixedPolicy, RunResult, ScenarioConfig, run_scenario
from .track import Track, build_reference_track, describe_for_prompt, locate
from .vehicle import MotorCommand, VehicleParams, VehicleState

__version__ = "0.1.0"

__all__ = [
    "RECOMMENDED_POLICY",
    "SAFE_DEFAULT_POLICY",
    "CoDriverPolicy",
    "CoDriverSource",
    "ComparisonReport",
    "Constraints",
    "EnergyConfig",
    "EnergyReport",
    "FixedPolicy",
    "HttpChatBackend",
    "MockBackend",
    "MotorCommand",
    "PowerSample",
    "RunResult",
    "ScenarioConfig",
    "Track",
    "TranscriptReplayBackend",
    "VehicleParams",
    "VehicleState",
    "aggregate",
    "build_reference_track",
    "canonical_suite",
    "describe_for_prompt",
    "emit_report",
    "encode_prompt",
    "fetch_policy",
    "locate",
    "parse_response",
    "run_scenario",
    "run_suite",
    "savings",
]
