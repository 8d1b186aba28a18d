import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from maps_sim.codriver import (
    RECOMMENDED_POLICY,
    SAFE_DEFAULT_POLICY,
    BackendError,
    CoDriverPolicy,
    Constraints,
    CurvedSetting,
    HttpChatBackend,
    MockBackend,
    ParseFailure,
    StraightSetting,
    TranscriptReplayBackend,
    encode_prompt,
    fetch_policy,
    mock_complete,
    parse_response,
    render_policy,
)
from maps_sim.track import build_reference_track, describe_for_prompt

TRACK = build_reference_track(1.0)
DESC = describe_for_prompt(TRACK)

# A hand-written answer in the two-line recommendation format the parser targets.
PROSE_ANSWER = """\
Looking at the layout, the loop is four long straights joined by tight left bends.

Plan:
- On the long runs the lane barely changes, so drive fast and save camera work.
- Slow into each bend and sample more often until it straightens out.

Summary
- Straight Path: Speed = 90, FPS = 5
- Curved Path: Speed = 70-80, FPS = 30
"""


def test_prompt_contents():
    p = encode_prompt(DESC)
    assert "between 70 and 90" in p.user_text
    assert "right, left, and opposite" in p.user_text
    assert "5 fps and 30 fps" in p.user_text
    assert DESC in p.user_text
    assert [m["role"] for m in p.messages()] == ["system", "user"]


def test_prompt_deterministic():
    assert encode_prompt(DESC) == encode_prompt(DESC)


def test_prompt_requires_constraints():
    with pytest.raises(ValueError):
        Constraints(fps_set=())
    with pytest.raises(ValueError):
        Constraints(directions=())
    with pytest.raises(ValueError):
        encode_prompt(DESC, None)
    with pytest.raises(ValueError):
        encode_prompt("  ")


def test_parse_prose_answer():
    r = parse_response(PROSE_ANSWER)
    assert r.policy == RECOMMENDED_POLICY
    assert r.source == "text"
    assert r.clamp_events == [] and r.filled == []


def test_parse_clamps():
    r = parse_response("Speed = 120, FPS = 60")
    assert r.policy.straight == StraightSetting(90, 30)
    assert r.policy.curved == CurvedSetting(90, 90, 30)
    assert r.clamp_events


def test_parse_low_clamps_and_nearest_fps():
    r = parse_response("Straight: Speed = 10, FPS = 12\nCurve: Speed = 95-60, FPS = 18")
    assert r.policy.straight == StraightSetting(70, 5)
    assert r.policy.curved == CurvedSetting(70, 90, 30)


def test_parse_failure_keeps_text():
    text = "The weather is lovely and the road looks pleasant today."
    with pytest.raises(ParseFailure) as e:
        parse_response(text)
    assert e.value.text == text
    with pytest.raises(ParseFailure):
        parse_response("")


def test_parse_json_preferred():
    text = (
        "Straight Path: Speed = 70, FPS = 30\n"
        '```json\n{"straight": {"speed": 85, "fps": 5}, "curved": {"speed_min": 72, "speed_max": 74, "fps": 30}}\n```'
    )
    r = parse_response(text)
    assert r.source == "json"
    assert r.policy == CoDriverPolicy(StraightSetting(85, 5), CurvedSetting(72, 74, 30))


def test_missing_fields_filled():
    r = parse_response('```json\n{"straight": {"speed": 80}}\n```')
    assert r.policy.straight == StraightSetting(80, 30)
    assert r.policy.curved == CurvedSetting(70, 70, 30)
    assert set(r.filled) == {"straight.fps", "curved.speed_min", "curved.speed_max", "curved.fps"}


def test_mock_reproduces_recommended_policy():
    text = mock_complete(encode_prompt(DESC))
    r = parse_response(text)
    assert r.policy == CoDriverPolicy(StraightSetting(90, 5), CurvedSetting(70, 80, 30))
    assert r.clamp_events == []
    assert text == mock_complete(encode_prompt(DESC))


policies = st.builds(
    lambda s, sf, a, b, cf: CoDriverPolicy(StraightSetting(s, sf), CurvedSetting(min(a, b), max(a, b), cf)),
    st.integers(70, 90) | st.floats(70, 90),
    st.sampled_from([5, 30]),
    st.integers(70, 90) | st.floats(70, 90),
    st.integers(70, 90) | st.floats(70, 90),
    st.sampled_from([5, 30]),
)


@given(policies)
def test_render_parse_roundtrip(policy):
    r = parse_response(render_policy(policy))
    assert r.policy == policy
    assert r.clamp_events == []


@given(st.text(max_size=200))
def test_parse_never_escapes_envelope(text):
    try:
        r = parse_response(text)
    except ParseFailure:
        return
    assert r.policy.within(Constraints())


def test_fetch_mock():
    res = fetch_policy(TRACK, MockBackend())
    assert res.policy == RECOMMENDED_POLICY and not res.degraded


class _Down:
    def complete(self, prompt):
        raise BackendError("connection refused")


class _Babble:
    def complete(self, prompt):
        return "no idea"


def test_fetch_fallbacks():
    for backend in (_Down(), _Babble()):
        res = fetch_policy(TRACK, backend)
        assert res.degraded
        assert res.policy == SAFE_DEFAULT_POLICY == CoDriverPolicy(StraightSetting(70, 30), CurvedSetting(70, 70, 30))


def test_malformed_url():
    for url in ("not a url", "ftp://x/y", "http://"):
        with pytest.raises(ValueError):
            HttpChatBackend(url)


@pytest.fixture
def chat_server():
    seen = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            seen.append((body, self.headers.get("Authorization")))
            out = json.dumps({"choices": [{"message": {"role": "assistant", "content": PROSE_ANSWER}}]}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(out)))
            self.end_headers()
            self.wfile.write(out)

        def log_message(self, *a):
            pass

    srv = HTTPServer(("127.0.0.1", 0), Handler)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield f"http://127.0.0.1:{srv.server_port}/v1/chat/completions", seen
    srv.shutdown()
    srv.server_close()


def test_http_backend_records_and_replays(chat_server, tmp_path):
    url, seen = chat_server
    transcript = tmp_path / "live.jsonl"
    backend = HttpChatBackend(url, api_key="k", model="m", timeout=5, transcript=transcript)
    live = fetch_policy(TRACK, backend)
    assert not live.degraded and live.policy == RECOMMENDED_POLICY
    body, auth = seen[0]
    assert body["model"] == "m" and body["messages"][1]["content"] == encode_prompt(DESC).user_text
    assert auth == "Bearer k"

    rec = json.loads(transcript.read_text().splitlines()[0])
    direct = parse_response(rec["response"]).policy
    replayed = fetch_policy(TRACK, TranscriptReplayBackend(transcript))
    assert replayed.policy == direct == live.policy


def test_http_backend_unreachable():
    backend = HttpChatBackend("http://127.0.0.1:9/x", timeout=0.5)
    res = fetch_policy(TRACK, backend)
    assert res.degraded and res.policy == SAFE_DEFAULT_POLICY


def test_empty_transcript(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text("")
    with pytest.raises(ValueError):
        TranscriptReplayBackend(p)
