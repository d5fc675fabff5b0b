"""Newline-delimited JSON ask/tell service around the scheduler.

One JSON object per line in, one per line out. Ops: ``init`` creates a
session from a cluster/config payload, ``ask`` returns the next decision,
``tell`` reports its utility, ``snapshot`` dumps the scheduler state and
``shutdown`` closes the session. Every response carries ``ok``; failures
additionally carry ``error`` and never mutate state, so any trainer that
can read and write lines can drive the scheduler.

Transports: stdio (one session space, exits on EOF) or TCP (one session
space per connection, connections served concurrently).
"""

from __future__ import annotations

import json
import math
import socketserver
import sys
from typing import IO, Mapping

from .bandit import (
    SchedulerConfig,
    SchedulerError,
    SchedulerState,
    build_clusters,
    new_scheduler,
)

__all__ = ["SessionRegistry", "handle_line", "serve_stdio", "serve_tcp"]

OPS = ("init", "ask", "tell", "snapshot", "shutdown")


def _scheduler_from_payload(payload: Mapping) -> SchedulerState:
    if not isinstance(payload, Mapping):
        raise ValueError("config must be an object")
    clusters = build_clusters(payload.get("clusters", []))
    config = SchedulerConfig(
        exploration_coefficient=float(payload.get("c", 1.0)),
        window_capacity=int(payload.get("W", 10)),
    )
    return new_scheduler(clusters, config)


class SessionRegistry:
    """Sessions keyed by id; messages within one registry are handled
    strictly in arrival order."""

    def __init__(self) -> None:
        self._sessions: dict[str, SchedulerState] = {}
        self._counter = 0

    def handle(self, message: Mapping) -> dict:
        try:
            op = message.get("op")
            if op == "init":
                return self._init(message)
            if op not in OPS:
                return {"ok": False, "error": f"unknown op {op!r}"}
            session = message.get("session")
            state = self._sessions.get(session)
            if state is None:
                return {"ok": False, "error": "unknown session"}
            if op == "ask":
                return self._ask(state)
            if op == "tell":
                return self._tell(state, message)
            if op == "snapshot":
                return {"ok": True, "snapshot": state.snapshot().to_dict()}
            self._sessions.pop(session)
            return {"ok": True}
        except (SchedulerError, ValueError, TypeError, KeyError) as exc:
            return {"ok": False, "error": str(exc)}

    def _init(self, message: Mapping) -> dict:
        state = _scheduler_from_payload(message.get("config", {}))
        self._counter += 1
        session_id = f"s{self._counter}"
        self._sessions[session_id] = state
        return {"ok": True, "session": session_id}

    @staticmethod
    def _ask(state: SchedulerState) -> dict:
        decision = state.select()
        return {
            "ok": True,
            "cluster": decision.cluster_name,
            "hp": decision.hp_name,
            "value": decision.hp_value,
            "episode": decision.episode,
        }

    @staticmethod
    def _tell(state: SchedulerState, message: Mapping) -> dict:
        if "v_bar" not in message:
            return {"ok": False, "error": "tell requires v_bar"}
        v_bar = message["v_bar"]
        if isinstance(v_bar, bool) or not isinstance(v_bar, (int, float)):
            return {"ok": False, "error": "v_bar must be a number"}
        if not math.isfinite(v_bar):
            return {"ok": False, "error": "non-finite v_bar"}
        state.record(float(v_bar))
        return {"ok": True}


def handle_line(registry: SessionRegistry, line: str) -> str:
    """One request line to one response line; malformed input never
    touches session state."""
    line = line.strip()
    if not line:
        return json.dumps({"ok": False, "error": "empty line"})
    try:
        message = json.loads(line)
    except json.JSONDecodeError:
        return json.dumps({"ok": False, "error": "invalid json"})
    if not isinstance(message, dict):
        return json.dumps({"ok": False, "error": "message must be a JSON object"})
    return json.dumps(registry.handle(message), sort_keys=True)


def serve_stdio(stdin: IO[str] | None = None, stdout: IO[str] | None = None) -> None:
    """Serve one session space over stdin/stdout until EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    registry = SessionRegistry()
    for line in stdin:
        stdout.write(handle_line(registry, line) + "\n")
        stdout.flush()


class _LineHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        registry = SessionRegistry()
        for raw in self.rfile:
            response = handle_line(registry, raw.decode("utf-8", errors="replace"))
            self.wfile.write(response.encode("utf-8") + b"\n")
            self.wfile.flush()


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def serve_tcp(host: str = "127.0.0.1", port: int = 0) -> _ThreadingServer:
    """Bind a threading TCP server; caller runs serve_forever()."""
    return _ThreadingServer((host, port), _LineHandler)
