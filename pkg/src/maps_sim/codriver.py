"""LLM map-reader co-driver: prompt encoding, chat backends and response decoding.

The co-driver is consulted once before the drive. It reads a text
description of the route and answers with a speed (PWM duty) and camera
frame rate for straight sections and for curved sections.
"""

from __future__ import annotations

import json
import logging
import os
import re
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .track import Track, describe_for_prompt

log = logging.getLogger(__name__)

ENV_URL = "MAPS_LLM_URL"
ENV_KEY = "MAPS_LLM_KEY"
ENV_MODEL = "MAPS_LLM_MODEL"


class ParseFailure(ValueError):
    """No policy could be recovered from a co-driver response."""

    def __init__(self, text: str, reason: str = "no recognizable policy"):
        super().__init__(reason)
        self.text = text


class BackendError(RuntimeError):
    """The backend could not produce a response (network, HTTP, format)."""


@dataclass(frozen=True)
class Constraints:
    speed_min: int = 70
    speed_max: int = 90
    fps_set: tuple[int, ...] = (5, 30)
    directions: tuple[str, ...] = ("right", "left", "opposite")

    def __post_init__(self):
        if not self.fps_set:
            raise ValueError("constraint fps set is empty")
        if not self.directions:
            raise ValueError("constraint direction vocabulary is empty")
        if not 0 <= self.speed_min <= self.speed_max <= 100:
            raise ValueError("speed range must satisfy 0 <= min <= max <= 100")

    def clamp_speed(self, v: float) -> float:
        return min(max(v, self.speed_min), self.speed_max)

    def clamp_fps(self, f: float) -> int:
        """Nearest allowed frame rate (ties go to the higher one)."""
        return min(sorted(self.fps_set, reverse=True), key=lambda a: abs(a - f))


DEFAULT_CONSTRAINTS = Constraints()


@dataclass(frozen=True)
class StraightSetting:
    speed_duty: float
    fps: int


@dataclass(frozen=True)
class CurvedSetting:
    speed_duty_min: float
    speed_duty_max: float
    fps: int


@dataclass(frozen=True)
class CoDriverPolicy:
    straight: StraightSetting
    curved: CurvedSetting

    def __post_init__(self):
        if self.curved.speed_duty_min > self.curved.speed_duty_max:
            raise ValueError("curved speed_duty_min exceeds speed_duty_max")

    @classmethod
    def fixed(cls, speed_duty: float, fps: int) -> CoDriverPolicy:
        return cls(StraightSetting(speed_duty, fps), CurvedSetting(speed_duty, speed_duty, fps))

    def within(self, c: Constraints) -> bool:
        speeds = (self.straight.speed_duty, self.curved.speed_duty_min, self.curved.speed_duty_max)
        return all(c.speed_min <= v <= c.speed_max for v in speeds) and {
            self.straight.fps,
            self.curved.fps,
        } <= set(c.fps_set)

    def to_dict(self) -> dict:
        return {
            "straight": {"speed": self.straight.speed_duty, "fps": self.straight.fps},
            "curved": {
                "speed_min": self.curved.speed_duty_min,
                "speed_max": self.curved.speed_duty_max,
                "fps": self.curved.fps,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> CoDriverPolicy:
        s, c = d["straight"], d["curved"]
        return cls(
            StraightSetting(s["speed"], s["fps"]),
            CurvedSetting(c["speed_min"], c["speed_max"], c["fps"]),
        )


SAFE_DEFAULT_POLICY = CoDriverPolicy(StraightSetting(70, 30), CurvedSetting(70, 70, 30))
RECOMMENDED_POLICY = CoDriverPolicy(StraightSetting(90, 5), CurvedSetting(70, 80, 30))


@dataclass(frozen=True)
class PromptEnvelope:
    system_text: str
    user_text: str
    constraints: Constraints
    image: bytes | None = None

    def messages(self) -> list[dict]:
        return [
            {"role": "system", "content": self.system_text},
            {"role": "user", "content": self.user_text},
        ]


SYSTEM_TEXT = (
    "You are a map-reading co-driver for a small autonomous robot car. "
    "You read a road description and recommend the motor speed and the camera "
    "frame rate for each kind of road section."
)


def _join_words(words) -> str:
    words = list(words)
    if len(words) == 1:
        return words[0]
    return ", ".join(words[:-1]) + ", and " + words[-1]


def encode_prompt(description: str, constraints: Constraints | None = DEFAULT_CONSTRAINTS) -> PromptEnvelope:
    if constraints is None:
        raise ValueError("constraints are required")
    if not description.strip():
        raise ValueError("road description is empty")
    c = constraints
    fps_words = " and ".join(f"{f} fps" for f in sorted(c.fps_set))
    user = (
        "We have a road with the following specification.\n"
        f"{description}\n\n"
        f"The robot can move at a speed between {c.speed_min} and {c.speed_max}, "
        f"measure images with the camera at {fps_words} rates, and recognize its "
        f"direction of movement to the {_join_words(c.directions)}. "
        "According to the specified route, tell us the appropriate speed and fps "
        "in different parts of the road.\n"
        "Answer with lines of the form 'Straight Path: Speed = N, FPS = K' and "
        "'Curved Path: Speed = N-M, FPS = K', and also include a JSON block:\n"
        '```json\n{"straight": {"speed": N, "fps": K}, '
        '"curved": {"speed_min": N, "speed_max": M, "fps": K}}\n```'
    )
    return PromptEnvelope(SYSTEM_TEXT, user, c)


@dataclass
class ParseResult:
    policy: CoDriverPolicy
    clamp_events: list[str] = field(default_factory=list)
    filled: list[str] = field(default_factory=list)
    source: str = "json"


_JSON_BLOCK = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.S)
_NUM = r"(\d+(?:\.\d+)?)"
_SETTING = re.compile(
    rf"speed\s*[=:]\s*{_NUM}(?:\s*(?:-|–|to)\s*{_NUM})?\s*(?:\([^)]*\))?\s*,?\s*fps\s*[=:]\s*{_NUM}",
    re.I,
)
_STRAIGHT_KEY = re.compile(r"straight", re.I)
_CURVED_KEY = re.compile(r"curve", re.I)


def _json_candidates(text: str):
    for m in _JSON_BLOCK.finditer(text):
        yield m.group(1)
    # bare object spanning the whole response
    stripped = text.strip()
    if stripped.startswith("{") and stripped.endswith("}"):
        yield stripped


def _from_json(text: str) -> dict | None:
    for blob in _json_candidates(text):
        try:
            d = json.loads(blob)
        except json.JSONDecodeError:
            continue
        if isinstance(d, dict) and ("straight" in d or "curved" in d):
            return d
    return None


def _from_lines(text: str) -> dict | None:
    found: dict = {}
    unkeyed = []
    for line in text.splitlines():
        m = _SETTING.search(line)
        if not m:
            continue
        lo = float(m.group(1))
        hi = float(m.group(2)) if m.group(2) else lo
        fps = float(m.group(3))
        prefix = line[: m.start()]
        if _CURVED_KEY.search(prefix):
            found.setdefault("curved", {"speed_min": lo, "speed_max": hi, "fps": fps})
        elif _STRAIGHT_KEY.search(prefix):
            found.setdefault("straight", {"speed": lo, "fps": fps})
        else:
            unkeyed.append((lo, hi, fps))
    if not found and unkeyed:
        # a single bare setting applies to every section class
        lo, hi, fps = unkeyed[0]
        found["straight"] = {"speed": lo, "fps": fps}
        found["curved"] = {"speed_min": lo, "speed_max": hi, "fps": fps}
    return found or None


def _num(d: dict, *keys):
    for k in keys:
        if k in d and d[k] is not None:
            return float(d[k])
    return None


def parse_response(text: str, constraints: Constraints = DEFAULT_CONSTRAINTS) -> ParseResult:
    """Decode a co-driver answer into a policy inside the allowed envelope.

    A JSON block is preferred; otherwise 'Speed = N[-M], FPS = K' lines
    keyed by Straight/Curved are used. Out-of-envelope values are clamped
    and recorded, missing fields fall back to speed 70 / 30 fps.
    """
    if not text or not text.strip():
        raise ParseFailure(text or "", "empty response")
    raw = _from_json(text)
    source = "json"
    if raw is None:
        raw = _from_lines(text)
        source = "text"
    if raw is None:
        raise ParseFailure(text)

    c = constraints
    clamps: list[str] = []
    filled: list[str] = []
    safe_speed = c.clamp_speed(70)
    safe_fps = c.clamp_fps(30)

    def speed(name, value):
        if value is None:
            filled.append(name)
            return safe_speed
        v = c.clamp_speed(value)
        if v != value:
            clamps.append(f"{name}: {value:g} -> {v:g}")
        return v

    def fps(name, value):
        if value is None:
            filled.append(name)
            return safe_fps
        f = c.clamp_fps(value)
        if f != value:
            clamps.append(f"{name}: {value:g} -> {f:g}")
        return f

    s = raw.get("straight") or {}
    cv = raw.get("curved") or {}
    straight = StraightSetting(
        speed("straight.speed", _num(s, "speed", "speed_duty")),
        fps("straight.fps", _num(s, "fps")),
    )
    lo = speed("curved.speed_min", _num(cv, "speed_min", "speed_duty_min", "speed"))
    hi = speed("curved.speed_max", _num(cv, "speed_max", "speed_duty_max", "speed"))
    if lo > hi:
        clamps.append(f"curved range {lo:g}-{hi:g} reordered")
        lo, hi = hi, lo
    curved = CurvedSetting(lo, hi, fps("curved.fps", _num(cv, "fps")))
    for msg in clamps:
        log.warning("co-driver value clamped: %s", msg)
    return ParseResult(CoDriverPolicy(straight, curved), clamps, filled, source)


def render_policy(policy: CoDriverPolicy) -> str:
    """Answer text in the two-line recommendation format for a given policy."""
    s, c = policy.straight, policy.curved

    def n(v):
        v = float(v)
        return str(int(v)) if v.is_integer() else repr(v)

    curve_speed = n(c.speed_duty_min) if c.speed_duty_min == c.speed_duty_max else (
        f"{n(c.speed_duty_min)}-{n(c.speed_duty_max)}"
    )
    return (
        "Route Analysis\n"
        "The road alternates straight sections and curved sections.\n\n"
        "Speed and FPS Adjustment Strategy\n"
        f"- Entering a Curve: Detect the curve and decrease speed to {curve_speed} "
        f"while increasing fps to {c.fps}.\n"
        f"- Exiting a Curve: Once the curve ends, gradually increase speed back to "
        f"{n(s.speed_duty)} and decrease fps to {s.fps}.\n\n"
        "Practical Application\n"
        f"- Straight Path: Speed = {n(s.speed_duty)}, FPS = {s.fps}\n"
        f"- Curved Path: Speed = {curve_speed}, FPS = {c.fps}\n"
    )


class CoDriverBackend(Protocol):
    def complete(self, prompt: PromptEnvelope) -> str: ...


class MockBackend:
    """Offline backend that always recommends the same policy."""

    def __init__(self, policy: CoDriverPolicy = RECOMMENDED_POLICY):
        self.policy = policy

    def complete(self, prompt: PromptEnvelope) -> str:
        return render_policy(self.policy)


def mock_complete(prompt: PromptEnvelope) -> str:
    return MockBackend().complete(prompt)


class HttpChatBackend:
    """POSTs chat-completions JSON to an HTTP endpoint.

    Optionally appends each exchange to a JSONL transcript for later replay.
    """

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        model: str = "gpt-4o",
        timeout: float = 60.0,
        transcript: str | Path | None = None,
    ):
        parts = urllib.parse.urlparse(url)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise ValueError(f"malformed endpoint URL: {url!r}")
        self.url = url
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self.transcript = Path(transcript) if transcript else None

    @classmethod
    def from_env(cls, **kw) -> HttpChatBackend:
        url = os.environ.get(ENV_URL)
        if not url:
            raise ValueError(f"{ENV_URL} is not set")
        kw.setdefault("model", os.environ.get(ENV_MODEL, "gpt-4o"))
        return cls(url, os.environ.get(ENV_KEY), **kw)

    def request_body(self, prompt: PromptEnvelope) -> dict:
        return {"model": self.model, "messages": prompt.messages()}

    def complete(self, prompt: PromptEnvelope) -> str:
        body = json.dumps(self.request_body(prompt)).encode()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as e:
            raise BackendError(f"chat request failed: {e}") from e
        text = extract_content(payload)
        if self.transcript is not None:
            record_transcript(self.transcript, self.request_body(prompt), text)
        return text


def extract_content(payload: dict) -> str:
    try:
        text = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as e:
        raise BackendError(f"unexpected chat response shape: {e!r}") from e
    if not isinstance(text, str) or not text.strip():
        raise BackendError("chat response content is empty")
    return text


def record_transcript(path: Path, request: dict, response_text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as f:
        f.write(json.dumps({"request": request, "response": response_text}) + "\n")


class TranscriptReplayBackend:
    """Replays responses recorded in a JSONL transcript, in order."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.responses = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                self.responses.append(json.loads(line)["response"])
        if not self.responses:
            raise ValueError(f"transcript {self.path} has no responses")
        self._next = 0

    def complete(self, prompt: PromptEnvelope) -> str:
        text = self.responses[self._next % len(self.responses)]
        self._next += 1
        return text


@dataclass(frozen=True)
class FetchResult:
    policy: CoDriverPolicy
    degraded: bool
    prompt: PromptEnvelope
    response: str | None = None
    clamp_events: tuple[str, ...] = ()
    error: str | None = None


def fetch_policy(
    track: Track,
    backend: CoDriverBackend,
    constraints: Constraints = DEFAULT_CONSTRAINTS,
) -> FetchResult:
    """Encode the track, query the backend once and decode the answer.

    Backend errors and unparseable answers yield the safe default policy with
    `degraded` set.
    """
    prompt = encode_prompt(describe_for_prompt(track), constraints)
    try:
        text = backend.complete(prompt)
    except BackendError as e:
        log.warning("co-driver backend failed, using safe default: %s", e)
        return FetchResult(SAFE_DEFAULT_POLICY, True, prompt, error=str(e))
    try:
        parsed = parse_response(text, constraints)
    except ParseFailure as e:
        log.warning("co-driver response unparseable, using safe default")
        return FetchResult(SAFE_DEFAULT_POLICY, True, prompt, text, error=str(e))
    return FetchResult(parsed.policy, False, prompt, text, tuple(parsed.clamp_events))
