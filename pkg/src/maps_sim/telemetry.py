"""Telemetry export: MQTT 3.1.1 packet encoding and pluggable sinks.

Only what a fire-and-forget exporter needs is encoded: CONNECT and QoS 0
PUBLISH. Samples cross from the simulation thread to a single sink worker
through a bounded queue that drops the oldest entries when full, so a slow
or broken sink can never change simulation results.
"""

from __future__ import annotations

import collections
import json
import logging
import os
import socket
import struct
import threading
import urllib.parse
from pathlib import Path
from typing import Protocol

from .energy import COMP, MECH, PowerSample

log = logging.getLogger(__name__)

MAX_PAYLOAD = 64 * 1024
MAX_REMAINING_LEN = 268_435_455
TOPIC_PREFIX = "maps"
SUMMARY_TOPIC = "maps/run/summary"
UNIT_TOPICS = {COMP: "maps/energy/comp", MECH: "maps/energy/mech", "total": "maps/energy/total"}
ENV_MQTT_URL = "MAPS_MQTT_URL"


class EncodeError(ValueError):
    pass


class SinkError(RuntimeError):
    pass


def encode_remaining_length(n: int) -> bytes:
    """MQTT variable-length integer (7 bits per byte, MSB = continuation)."""
    if not 0 <= n <= MAX_REMAINING_LEN:
        raise EncodeError(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        n, digit = divmod(n, 128)
        if n:
            out.append(digit | 0x80)
        else:
            out.append(digit)
            return bytes(out)


def _utf8_field(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise EncodeError("string field longer than 65535 bytes")
    return struct.pack("!H", len(b)) + b


def encode_mqtt_publish(topic: str, payload: bytes | str) -> bytes:
    """QoS 0, non-retained PUBLISH packet."""
    if not topic:
        raise EncodeError("topic must be non-empty")
    if "+" in topic or "#" in topic or "\x00" in topic:
        raise EncodeError(f"invalid publish topic {topic!r}")
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    if len(payload) > MAX_PAYLOAD:
        raise EncodeError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    body = _utf8_field(topic) + payload
    return b"\x30" + encode_remaining_length(len(body)) + body


def encode_mqtt_connect(client_id: str, keepalive: int = 60) -> bytes:
    """CONNECT with protocol level 4 and clean session, no credentials or will."""
    if not client_id or len(client_id.encode("utf-8")) > 23:
        raise EncodeError("client id must be 1..23 bytes")
    variable = _utf8_field("MQTT") + bytes([0x04, 0x02]) + struct.pack("!H", keepalive)
    body = variable + _utf8_field(client_id)
    return b"\x10" + encode_remaining_length(len(body)) + body


def encode_mqtt_disconnect() -> bytes:
    return b"\xe0\x00"


def sample_payload(sample: PowerSample) -> bytes:
    # fixed key order keeps payloads byte-stable
    return json.dumps(
        {"t": sample.t, "unit": sample.unit, "watts": sample.watts}, separators=(",", ":")
    ).encode("utf-8")


def topic_for(unit: str) -> str:
    try:
        return UNIT_TOPICS[unit]
    except KeyError:
        raise ValueError(f"no topic for unit {unit!r}") from None


class TelemetrySink(Protocol):
    def publish(self, topic: str, payload: bytes) -> None: ...

    def close(self) -> None: ...


class NullSink:
    def publish(self, topic: str, payload: bytes) -> None:
        return None

    def close(self) -> None:
        return None


class FailingSink:
    """Rejects every publish; used to show telemetry cannot affect a run."""

    def __init__(self):
        self.attempts = 0

    def publish(self, topic: str, payload: bytes) -> None:
        self.attempts += 1
        raise SinkError("sink unavailable")

    def close(self) -> None:
        return None


class MemorySink:
    def __init__(self):
        self.records: list[tuple[str, bytes]] = []

    def publish(self, topic: str, payload: bytes) -> None:
        self.records.append((topic, payload))

    def close(self) -> None:
        return None


class FileSink:
    """One JSON line per record: {"topic": ..., "payload": <decoded JSON>}."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = self.path.open("a", encoding="utf-8")

    def publish(self, topic: str, payload: bytes) -> None:
        rec = {"topic": topic, "payload": json.loads(payload)}
        self._f.write(json.dumps(rec, separators=(",", ":")) + "\n")

    def close(self) -> None:
        self._f.close()


def read_jsonl_samples(path: str | Path) -> list[PowerSample]:
    """Read power samples back from a FileSink log (summary records skipped)."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        if rec["topic"] == SUMMARY_TOPIC:
            continue
        p = rec["payload"]
        out.append(PowerSample(p["t"], p["unit"], p["watts"]))
    return out


class MqttSink:
    """Plain-TCP MQTT publisher: CONNECT once, then QoS 0 PUBLISH packets."""

    def __init__(
        self,
        host: str = "localhost",
        port: int = 1883,
        client_id: str = "maps-sim",
        timeout: float = 2.0,
        connect: bool = True,
    ):
        self.host = host
        self.port = port
        self.client_id = client_id
        self.timeout = timeout
        self._sock: socket.socket | None = None
        if connect:
            self.connect()

    @classmethod
    def from_url(cls, url: str, **kw) -> MqttSink:
        parts = urllib.parse.urlparse(url)
        if parts.scheme not in ("mqtt", "tcp") or not parts.hostname:
            raise ValueError(f"unsupported MQTT URL {url!r}")
        return cls(parts.hostname, parts.port or 1883, **kw)

    @classmethod
    def from_env(cls, **kw) -> MqttSink:
        url = os.environ.get(ENV_MQTT_URL)
        if not url:
            raise ValueError(f"{ENV_MQTT_URL} is not set")
        return cls.from_url(url, **kw)

    def connect(self) -> None:
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
            sock.sendall(encode_mqtt_connect(self.client_id))
            connack = sock.recv(4)
        except OSError as e:
            raise SinkError(f"MQTT connect to {self.host}:{self.port} failed: {e}") from e
        if len(connack) < 4 or connack[0] != 0x20 or connack[3] != 0:
            sock.close()
            raise SinkError(f"MQTT broker refused connection: {connack!r}")
        self._sock = sock

    def publish(self, topic: str, payload: bytes) -> None:
        if self._sock is None:
            raise SinkError("MQTT sink not connected")
        try:
            self._sock.sendall(encode_mqtt_publish(topic, payload))
        except OSError as e:
            raise SinkError(f"MQTT publish failed: {e}") from e

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.sendall(encode_mqtt_disconnect())
            except OSError:
                pass
            self._sock.close()
            self._sock = None


def publish_sample(sink: TelemetrySink, sample: PowerSample) -> bool:
    """Publish one sample; failures are logged and reported as False."""
    try:
        sink.publish(topic_for(sample.unit), sample_payload(sample))
    except Exception as e:  # sinks are untrusted; never propagate into the run
        log.debug("telemetry publish failed: %s", e)
        return False
    return True


def publish_summary(sink: TelemetrySink, summary: dict) -> bool:
    try:
        sink.publish(SUMMARY_TOPIC, json.dumps(summary, separators=(",", ":")).encode("utf-8"))
    except Exception as e:
        log.debug("telemetry summary publish failed: %s", e)
        return False
    return True


class TelemetryChannel:
    """Bounded hand-off from the simulation thread to one sink worker.

    `offer` never blocks; when the queue is full the oldest record is dropped.
    """

    def __init__(self, sink: TelemetrySink, maxlen: int = 4096):
        self.sink = sink
        self._q: collections.deque = collections.deque(maxlen=maxlen)
        self._cv = threading.Condition()
        self._closed = False
        self.offered = 0
        self.dropped = 0
        self.published = 0
        self.failed = 0
        self._worker = threading.Thread(target=self._drain, name="telemetry-sink", daemon=True)
        self._worker.start()

    def offer(self, item: PowerSample | dict) -> None:
        with self._cv:
            if len(self._q) == self._q.maxlen:
                self.dropped += 1
            self._q.append(item)
            self.offered += 1
            self._cv.notify()

    def _drain(self) -> None:
        while True:
            with self._cv:
                while not self._q and not self._closed:
                    self._cv.wait()
                if not self._q and self._closed:
                    return
                item = self._q.popleft()
            if isinstance(item, PowerSample):
                ok = publish_sample(self.sink, item)
            else:
                ok = publish_summary(self.sink, item)
            if ok:
                self.published += 1
            else:
                self.failed += 1

    def close(self, timeout: float | None = 10.0) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify()
        self._worker.join(timeout)
        try:
            self.sink.close()
        except Exception as e:
            log.debug("telemetry sink close failed: %s", e)

    def stats(self) -> dict:
        return {
            "offered": self.offered,
            "published": self.published,
            "failed": self.failed,
            "dropped": self.dropped,
        }
