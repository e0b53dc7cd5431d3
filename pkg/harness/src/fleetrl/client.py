"""Client side of the simulator's line-delimited JSON protocol.

Each request is one JSON object on one line; each reply likewise. The
client either spawns a local server process (``serve:<config path>``,
using the ``evfleet`` entry point over stdio) or connects to a running
one (``tcp:[host:]port``). An ``error`` reply, a closed pipe, or an
unparsable line all raise TransportError: a trainer cannot tell these
apart from lost state, so they end the session.
"""

from __future__ import annotations

import json
import socket
import subprocess
from typing import Optional, Sequence


class TransportError(RuntimeError):
    """The server went away or broke protocol mid-session."""


def _parse_tcp(endpoint: str) -> tuple[str, int]:
    rest = endpoint[len("tcp:"):]
    host, _, port = rest.rpartition(":")
    host = host or "127.0.0.1"
    if not port.isdigit() or not 0 < int(port) < 65536:
        raise ValueError(f"bad tcp endpoint {endpoint!r}")
    return host, int(port)


class EnvClient:
    """One protocol session against a fleet environment server."""

    def __init__(self, endpoint: str):
        self.endpoint = endpoint
        self._proc: Optional[subprocess.Popen] = None
        self._sock: Optional[socket.socket] = None
        if endpoint.startswith("serve:"):
            config_path = endpoint[len("serve:"):]
            try:
                self._proc = subprocess.Popen(
                    ["evfleet", "serve", "--config", config_path],
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                )
            except OSError as err:
                raise TransportError(f"cannot spawn server: {err}") from err
            self._reader = self._proc.stdout
            self._writer = self._proc.stdin
        elif endpoint.startswith("tcp:"):
            host, port = _parse_tcp(endpoint)
            try:
                self._sock = socket.create_connection((host, port), timeout=120)
            except OSError as err:
                raise TransportError(f"cannot reach {endpoint}: {err}") from err
            self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")
            self._writer = self._sock.makefile("w", encoding="utf-8", newline="\n")
        else:
            raise ValueError(
                f"endpoint must be serve:<config path> or tcp:[host:]port, "
                f"got {endpoint!r}"
            )
        greeting = self._recv()
        if greeting.get("kind") != "hello":
            raise TransportError(f"expected a hello line, got {greeting!r}")
        self.protocol = greeting.get("protocol")

    # -- framing ------------------------------------------------------------

    def _send(self, msg: dict) -> None:
        try:
            self._writer.write(
                json.dumps(msg, sort_keys=True, separators=(",", ":")) + "\n"
            )
            self._writer.flush()
        except (OSError, ValueError) as err:
            raise TransportError(f"send failed: {err}") from err

    def _recv(self) -> dict:
        try:
            line = self._reader.readline()
        except (OSError, ValueError) as err:
            raise TransportError(f"receive failed: {err}") from err
        if not line:
            raise TransportError("server closed the connection")
        try:
            parsed = json.loads(line)
        except ValueError as err:
            raise TransportError(f"unparsable reply {line!r}") from err
        if not isinstance(parsed, dict):
            raise TransportError(f"reply is not an object: {line!r}")
        return parsed

    def request(self, msg: dict) -> dict:
        self._send(msg)
        reply = self._recv()
        if reply.get("kind") == "error":
            raise TransportError(
                f"server rejected {msg.get('kind')!r}: {reply.get('message')}"
            )
        return reply

    # -- protocol verbs -----------------------------------------------------

    def reset(
        self, seed: int, episode_length: int, persist_fleet: bool = False
    ) -> dict:
        return self.request(
            {
                "kind": "reset",
                "seed": seed,
                "episode_length": episode_length,
                "persist_fleet": persist_fleet,
            }
        )

    def step(self, decisions: Sequence[float], rates: Sequence[float]) -> dict:
        return self.request(
            {"kind": "step", "decisions": list(decisions), "rates": list(rates)}
        )

    def close(self) -> None:
        try:
            self._send({"kind": "close"})
            self._recv()  # bye
        except TransportError:
            pass
        if self._sock is not None:
            for handle in (self._reader, self._writer, self._sock):
                try:
                    handle.close()
                except OSError:
                    pass  # a dead peer can fail the final flush
            self._sock = None
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            self._proc = None

    def __enter__(self) -> "EnvClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
