"""Blocking client for the newline-delimited JSON ask/tell protocol.

Endpoints:

* ``stdio:<command>`` spawns the command (e.g.
  ``stdio:python3 -m hpbandit serve --stdio``) and talks over its pipes;
* ``tcp://host:port`` connects to a running TCP server.

One request line out, one response line back, strictly in order. Server
failures (``ok: false``) raise :class:`SchedulerServiceError` carrying the
server's error string; transport problems raise ``ConnectionError``.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
import sys
from typing import Mapping


class SchedulerServiceError(RuntimeError):
    """The service answered ok=false; ``error`` holds its message."""

    def __init__(self, error: str) -> None:
        super().__init__(error)
        self.error = error


class _StdioTransport:
    def __init__(self, command: list[str]) -> None:
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ConnectionError(f"could not spawn {command!r}: {exc}") from exc

    def send_line(self, line: str) -> None:
        if self._proc.poll() is not None:
            raise ConnectionError("server process has exited")
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ConnectionError("server pipe closed") from exc

    def recv_line(self) -> str:
        line = self._proc.stdout.readline()
        if line == "":
            raise ConnectionError("server closed the connection")
        return line

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class _TcpTransport:
    def __init__(self, host: str, port: int) -> None:
        try:
            self._sock = socket.create_connection((host, port), timeout=30)
        except OSError as exc:
            raise ConnectionError(f"could not connect to {host}:{port}: {exc}") from exc
        self._reader = self._sock.makefile("r", encoding="utf-8")

    def send_line(self, line: str) -> None:
        try:
            self._sock.sendall((line + "\n").encode("utf-8"))
        except OSError as exc:
            raise ConnectionError("socket send failed") from exc

    def recv_line(self) -> str:
        line = self._reader.readline()
        if line == "":
            raise ConnectionError("server closed the connection")
        return line

    def close(self) -> None:
        try:
            self._reader.close()
            self._sock.close()
        except OSError:
            pass


def _make_transport(endpoint: str):
    if endpoint.startswith("stdio:"):
        command = shlex.split(endpoint[len("stdio:") :])
        if not command:
            raise ValueError("stdio endpoint needs a command")
        return _StdioTransport(command)
    if endpoint.startswith("tcp://"):
        rest = endpoint[len("tcp://") :]
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad tcp endpoint {endpoint!r}")
        return _TcpTransport(host, int(port))
    raise ValueError(f"unsupported endpoint {endpoint!r}; use stdio:... or tcp://host:port")


def default_server_command() -> str:
    """Endpoint string that spawns the bundled service in-process."""
    return f"stdio:{sys.executable} -m hpbandit serve --stdio"


class ClientSession:
    """One scheduler session over one transport. Not thread-safe; the
    protocol is strictly sequential anyway."""

    def __init__(self, transport, session_id: str) -> None:
        self._transport = transport
        self.session_id = session_id
        self.pending = False
        self.last_episode = 0

    # -- wire plumbing ------------------------------------------------------

    def raw_request(self, line: str) -> dict:
        """Send one raw line and parse one response line. Exposed for
        protocol testing (e.g. malformed-message injection)."""
        self._transport.send_line(line)
        return json.loads(self._transport.recv_line())

    def _request(self, message: Mapping) -> dict:
        response = self.raw_request(json.dumps(message))
        if not response.get("ok"):
            raise SchedulerServiceError(str(response.get("error", "unknown error")))
        return response

    # -- protocol ops -------------------------------------------------------

    def ask(self) -> tuple[str, str, float]:
        response = self._request({"op": "ask", "session": self.session_id})
        self.pending = True
        self.last_episode = int(response["episode"])
        return response["cluster"], response["hp"], float(response["value"])

    def tell(self, v_bar: float) -> None:
        self._request({"op": "tell", "session": self.session_id, "v_bar": float(v_bar)})
        self.pending = False

    def snapshot(self) -> dict:
        return self._request({"op": "snapshot", "session": self.session_id})["snapshot"]

    def shutdown(self) -> None:
        self._request({"op": "shutdown", "session": self.session_id})

    def close(self) -> None:
        self._transport.close()

    def __enter__(self) -> "ClientSession":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def connect(endpoint: str, config: Mapping) -> ClientSession:
    """Open a transport, run the init exchange and return a live session."""
    transport = _make_transport(endpoint)
    try:
        transport.send_line(json.dumps({"op": "init", "config": dict(config)}))
        response = json.loads(transport.recv_line())
    except ConnectionError:
        transport.close()
        raise
    if not response.get("ok"):
        transport.close()
        raise SchedulerServiceError(str(response.get("error", "init failed")))
    return ClientSession(transport, response["session"])
