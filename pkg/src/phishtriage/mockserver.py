"""Scripted stand-in for a chat-completions endpoint and a URL reputation API.

Fixture format (a dict, or a JSON file holding one)::

    {
      "default": {"status": 200, "verdict": {...}},
      "routes": {
        "<fixture_key(user content)>": [
          {"status": 429},
          {"status": 200, "verdict": {...}, "delay": 0.05}
        ]
      },
      "reputation": {
        "<url>": {"status": 200, "stats": {"malicious": 5, "harmless": 65}}
      }
    }

A route may be one response or a list; lists are consumed in order and the
last entry repeats.  A response carries ``verdict`` (serialized into the
message content), ``content`` (sent verbatim), or ``body`` (the whole JSON
body).  ``delay`` sleeps before answering.

The server counts calls and tracks the peak number of requests in flight.
"""
from __future__ import annotations

import base64
import hashlib
import json
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Optional

__all__ = ["fixture_key", "MockEndpoint", "RecordedCall", "vt_url_id"]


def fixture_key(user_content: str) -> str:
    """Route key for a request: sha256 of its user message content."""
    return hashlib.sha256(user_content.encode("utf-8")).hexdigest()


def vt_url_id(url: str) -> str:
    return base64.urlsafe_b64encode(url.encode("utf-8")).decode("ascii").rstrip("=")


@dataclass
class RecordedCall:
    path: str
    key: Optional[str]
    body: Any
    started: float
    finished: float = 0.0
    status: int = 0
    headers: dict = field(default_factory=dict)


@dataclass
class _State:
    fixture: dict
    cursor: dict = field(default_factory=lambda: defaultdict(int))
    calls: list = field(default_factory=list)
    in_flight: int = 0
    max_in_flight: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


class _Handler(BaseHTTPRequestHandler):
    server_version = "MockEndpoint/1.0"
    state: _State

    def log_message(self, fmt, *args):
        pass

    def _enter(self, key: Optional[str], body: Any) -> RecordedCall:
        headers = {k.lower(): v for k, v in self.headers.items()}
        call = RecordedCall(self.path, key, body, time.monotonic(), headers=headers)
        with self.state.lock:
            self.state.in_flight += 1
            self.state.max_in_flight = max(self.state.max_in_flight, self.state.in_flight)
            self.state.calls.append(call)
        return call

    def _leave(self, call: RecordedCall, status: int) -> None:
        with self.state.lock:
            self.state.in_flight -= 1
            call.finished = time.monotonic()
            call.status = status

    def _next_response(self, table: dict, key: Optional[str], fallback: Any) -> dict:
        script = table.get(key, fallback) if key is not None else fallback
        if script is None:
            return {"status": 404, "body": {"error": "no fixture"}}
        if isinstance(script, list):
            with self.state.lock:
                idx = self.state.cursor[key]
                self.state.cursor[key] += 1
            return script[min(idx, len(script) - 1)]
        return script

    def _reply(self, status: int, body: Any, headers: Optional[dict] = None) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        for name, value in (headers or {}).items():
            self.send_header(name, str(value))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw or b"{}")
        except ValueError:
            body = None
        user = ""
        if isinstance(body, dict):
            for message in body.get("messages") or []:
                if message.get("role") == "user":
                    user = message.get("content") or ""
        key = fixture_key(user)
        call = self._enter(key, body)
        status = 500
        try:
            spec = self._next_response(self.state.fixture.get("routes", {}), key, self.state.fixture.get("default"))
            if spec.get("delay"):
                time.sleep(float(spec["delay"]))
            status = int(spec.get("status", 200))
            if "body" in spec:
                payload = spec["body"]
            elif status == 200:
                content = spec["content"] if "content" in spec else json.dumps(spec.get("verdict", {}))
                if isinstance(body, dict) and body.get("tools"):
                    name = body["tools"][0]["function"]["name"]
                    message = {
                        "role": "assistant",
                        "content": None,
                        "tool_calls": [
                            {"id": "call_0", "type": "function",
                             "function": {"name": name, "arguments": content}}
                        ],
                    }
                else:
                    message = {"role": "assistant", "content": content}
                payload = {
                    "id": "mock",
                    "object": "chat.completion",
                    "model": body.get("model") if isinstance(body, dict) else None,
                    "choices": [{"index": 0, "message": message, "finish_reason": "stop"}],
                }
            else:
                payload = {"error": {"message": f"scripted status {status}"}}
            self._reply(status, payload, spec.get("headers"))
        finally:
            self._leave(call, status)

    def do_GET(self):
        # VirusTotal-shaped: GET /api/v3/urls/<base64url(url)>
        prefix = "/api/v3/urls/"
        key = None
        if self.path.startswith(prefix):
            ident = self.path[len(prefix):]
            padded = ident + "=" * (-len(ident) % 4)
            try:
                key = base64.urlsafe_b64decode(padded).decode("utf-8")
            except Exception:
                key = None
        call = self._enter(key, None)
        status = 500
        try:
            spec = self._next_response(self.state.fixture.get("reputation", {}), key, None)
            if spec.get("delay"):
                time.sleep(float(spec["delay"]))
            status = int(spec.get("status", 200))
            if "body" in spec:
                payload = spec["body"]
            elif status == 200:
                payload = {"data": {"id": key, "attributes": {"last_analysis_stats": spec.get("stats", {})}}}
            else:
                payload = {"error": {"code": status}}
            self._reply(status, payload, spec.get("headers"))
        finally:
            self._leave(call, status)


class MockEndpoint:
    """Threaded local HTTP server driven by a fixture.

    Use as a context manager; ``base_url`` points at the ``/v1`` root.
    """

    def __init__(self, fixture=None, host: str = "127.0.0.1", port: int = 0):
        if isinstance(fixture, (str, Path)):
            fixture = json.loads(Path(fixture).read_text("utf-8"))
        self._state = _State(fixture=dict(fixture or {}))
        handler = type("BoundHandler", (_Handler,), {"state": self._state})
        self._server = ThreadingHTTPServer((host, port), handler)
        self._server.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def root_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def base_url(self) -> str:
        return self.root_url + "/v1"

    def start(self) -> "MockEndpoint":
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockEndpoint":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # fixture editing
    def set_default(self, response: dict) -> None:
        with self._state.lock:
            self._state.fixture["default"] = response

    def route(self, user_content: str, *responses: dict) -> str:
        key = fixture_key(user_content)
        with self._state.lock:
            self._state.fixture.setdefault("routes", {})[key] = list(responses)
            self._state.cursor.pop(key, None)
        return key

    def reputation(self, url: str, *responses: dict) -> None:
        with self._state.lock:
            self._state.fixture.setdefault("reputation", {})[url] = list(responses)
            self._state.cursor.pop(url, None)

    # instrumentation
    @property
    def calls(self) -> list[RecordedCall]:
        with self._state.lock:
            return list(self._state.calls)

    @property
    def call_count(self) -> int:
        with self._state.lock:
            return len(self._state.calls)

    @property
    def max_in_flight(self) -> int:
        with self._state.lock:
            return self._state.max_in_flight

    def reset_counters(self) -> None:
        with self._state.lock:
            self._state.calls.clear()
            self._state.max_in_flight = 0
