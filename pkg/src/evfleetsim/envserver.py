"""Line-delimited JSON control protocol for external training loops.

One JSON object per line, UTF-8, over stdio or a local TCP socket. The
server opens with a hello line, then answers every request with exactly one
reply line. Malformed or out-of-order requests get an error reply and the
session continues.

Requests:
  {"kind": "reset", "seed": int?, "episode_length": int?, "persist_fleet": bool?}
  {"kind": "step", "decisions": [bool|number x N], "rates": [0..1 x N]}
  {"kind": "close"}

Replies:
  {"kind": "hello", "protocol": 1}                     (once, on connect)
  {"kind": "observation", "tick": t, "soh": [...], "soc": [...],
   "reward": r, "done": bool}
  {"kind": "error", "message": "..."}
  {"kind": "bye"}

Rates arrive as fractions of each vehicle's rate limit. ``persist_fleet``
carries battery wear and retirements across episode resets.
"""

from __future__ import annotations

import dataclasses
import json
import socket
import sys
from typing import Optional

from .battery import BatteryState
from .config import SimConfig
from .demand import jobs_from_records
from .engine import ScheduleRejected, Simulation
from .policies import assemble_schedule, reward_step
from .runner import build_traffic, demand_records

PROTOCOL_VERSION = 1
DEFAULT_EPISODE_TICKS = 168  # one simulated week at hourly ticks


def encode(message: dict) -> str:
    return json.dumps(message, sort_keys=True, separators=(",", ":"))


def _error(message: str) -> dict:
    return {"kind": "error", "message": message}


class EnvSession:
    """Protocol state machine for one client connection."""

    def __init__(self, config: SimConfig):
        self.base_config = config
        self.sim = None
        self.episode_length = DEFAULT_EPISODE_TICKS
        self._traffic = None  # fitted once from the base config, shared by episodes

    def hello(self) -> dict:
        return {"kind": "hello", "protocol": PROTOCOL_VERSION}

    def handle_line(self, line: str) -> dict:
        try:
            message = json.loads(line)
        except ValueError as err:
            return _error(f"unparsable request: {err}")
        if not isinstance(message, dict) or not isinstance(message.get("kind"), str):
            return _error("request must be an object with a string 'kind'")
        kind = message["kind"]
        if kind == "reset":
            return self._reset(message)
        if kind == "step":
            return self._step(message)
        if kind == "close":
            return {"kind": "bye"}
        return _error(f"unknown request kind {kind!r}")

    # -- handlers ------------------------------------------------------------

    def _observation(self, reward: float) -> dict:
        snap = self.sim.snapshot()
        return {
            "kind": "observation",
            "tick": self.sim.tick_index,
            "soh": [v.soh for v in snap.vehicles],
            "soc": [v.soc_fraction for v in snap.vehicles],
            "reward": reward,
            "done": self.sim.tick_index >= self.episode_length,
        }

    def _reset(self, message: dict) -> dict:
        seed = message.get("seed", self.base_config.seed)
        episode_length = message.get("episode_length", DEFAULT_EPISODE_TICKS)
        persist = message.get("persist_fleet", False)
        if not isinstance(seed, int) or isinstance(seed, bool):
            return _error("'seed' must be an integer")
        if not isinstance(episode_length, int) or isinstance(episode_length, bool):
            return _error("'episode_length' must be an integer")
        if episode_length <= 0:
            return _error("'episode_length' must be positive")
        if not isinstance(persist, bool):
            return _error("'persist_fleet' must be a boolean")

        # The travel model describes the road network, not one episode, so it
        # is fitted from the base configuration and reused; only the job feed
        # is regenerated per episode.
        config = dataclasses.replace(
            self.base_config, seed=seed, horizon_ticks=episode_length
        )
        carried = self.sim.vehicles if (persist and self.sim is not None) else None
        try:
            if self._traffic is None:
                base_records, base_hash, _ = demand_records(self.base_config)
                self._traffic = build_traffic(self.base_config, base_records, base_hash)
            records, _hash, _stats = demand_records(config)
            sim = Simulation(config, self._traffic, jobs_from_records(records))
        except (ValueError, KeyError, OSError) as err:
            return _error(f"cannot build episode: {err}")
        if carried is not None:
            for old, new in zip(carried, sim.vehicles):
                cap = old.battery.capacity_kwh
                new.battery = BatteryState(
                    soc_kwh=cap,  # each episode starts topped up, wear kept
                    capacity_kwh=cap,
                    initial_capacity_kwh=old.battery.initial_capacity_kwh,
                    temperature_k=old.battery.temperature_k,
                )
                new.ledger.soc_start_kwh = cap
                new.below_threshold = old.below_threshold
                new.retired = old.retired
        self.sim = sim
        self.episode_length = episode_length
        return self._observation(0.0)

    def _step(self, message: dict) -> dict:
        if self.sim is None:
            return _error("no episode in progress; send reset first")
        if self.sim.tick_index >= self.episode_length:
            return _error("episode is over; send reset first")
        n = len(self.sim.vehicles)
        decisions = message.get("decisions")
        rates = message.get("rates")
        if not isinstance(decisions, list) or len(decisions) != n:
            return _error(f"'decisions' must be a list of length {n}")
        if not isinstance(rates, list) or len(rates) != n:
            return _error(f"'rates' must be a list of length {n}")
        flags = []
        for value in decisions:
            if isinstance(value, bool):
                flags.append(value)
            elif isinstance(value, (int, float)):
                flags.append(float(value) >= 0.5)
            else:
                return _error("'decisions' entries must be booleans or numbers")
        fractions = []
        for value in rates:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                return _error("'rates' entries must be numbers")
            value = float(value)
            if not 0.0 <= value <= 1.0:
                return _error("'rates' entries must sit in [0, 1]")
            fractions.append(value)

        schedule = assemble_schedule(self.sim.snapshot(), self.sim.traffic, flags, fractions)
        try:
            result = self.sim.tick(schedule)
        except ScheduleRejected as err:  # assembler bugs should not kill the session
            return _error(f"schedule rejected: {err}")
        return self._observation(reward_step(result, self.base_config.reward))


# --- transports ------------------------------------------------------------------


def serve_stdio(config: SimConfig, stdin=None, stdout=None) -> None:
    """Speak the protocol over standard streams until close/EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    session = EnvSession(config)
    stdout.write(encode(session.hello()) + "\n")
    stdout.flush()
    for line in stdin:
        if not line.strip():
            continue
        reply = session.handle_line(line)
        stdout.write(encode(reply) + "\n")
        stdout.flush()
        if reply.get("kind") == "bye":
            break


def serve_tcp(
    config: SimConfig,
    host: str = "127.0.0.1",
    port: int = 0,
    max_sessions: Optional[int] = None,
    ready_callback=None,
) -> None:
    """Accept local connections sequentially, one protocol session each.

    ``ready_callback`` (if given) receives the bound (host, port) before the
    first accept; with ``port=0`` the OS picks a free one.
    """
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        if ready_callback is not None:
            ready_callback(server.getsockname())
        served = 0
        while max_sessions is None or served < max_sessions:
            conn, _addr = server.accept()
            with conn:
                reader = conn.makefile("r", encoding="utf-8", newline="\n")
                writer = conn.makefile("w", encoding="utf-8", newline="\n")
                session = EnvSession(config)
                writer.write(encode(session.hello()) + "\n")
                writer.flush()
                for line in reader:
                    if not line.strip():
                        continue
                    reply = session.handle_line(line)
                    writer.write(encode(reply) + "\n")
                    writer.flush()
                    if reply.get("kind") == "bye":
                        break
            served += 1
