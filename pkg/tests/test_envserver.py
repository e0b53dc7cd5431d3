"""Line protocol: session state machine, framing, transports."""

import io
import json
import socket
import threading

import pytest

from evfleetsim.envserver import (
    DEFAULT_EPISODE_TICKS,
    EnvSession,
    PROTOCOL_VERSION,
    encode,
    serve_stdio,
    serve_tcp,
)

from test_runner import small_config

N = 3  # fleet size in small_config


@pytest.fixture
def session():
    return EnvSession(small_config(horizon=24, zones=(1, 2)))


def send(session, **message) -> dict:
    return session.handle_line(json.dumps(message))


def reset(session, **kw) -> dict:
    obs = send(session, kind="reset", **kw)
    assert obs["kind"] == "observation", obs
    return obs


class TestFraming:
    def test_hello_shape(self, session):
        assert session.hello() == {"kind": "hello", "protocol": PROTOCOL_VERSION}

    def test_encode_is_canonical(self):
        assert encode({"b": 1, "a": [1.5, True]}) == '{"a":[1.5,true],"b":1}'

    def test_garbage_line_keeps_session(self, session):
        assert send(session, kind="nonsense")["kind"] == "error"
        assert session.handle_line("{not json")["kind"] == "error"
        assert session.handle_line("[1,2,3]")["kind"] == "error"
        assert reset(session)["tick"] == 0  # still usable

    def test_close_says_bye(self, session):
        assert send(session, kind="close") == {"kind": "bye"}


class TestReset:
    def test_initial_observation(self, session):
        obs = reset(session, seed=5)
        assert obs["tick"] == 0
        assert obs["reward"] == 0.0
        assert obs["done"] is False
        assert len(obs["soh"]) == N and len(obs["soc"]) == N
        assert all(value == 1.0 for value in obs["soh"])
        assert all(value == 1.0 for value in obs["soc"])

    def test_default_episode_length(self, session):
        reset(session)
        assert session.episode_length == DEFAULT_EPISODE_TICKS

    def test_validation(self, session):
        assert send(session, kind="reset", seed="abc")["kind"] == "error"
        assert send(session, kind="reset", seed=True)["kind"] == "error"
        assert send(session, kind="reset", episode_length=0)["kind"] == "error"
        assert send(session, kind="reset", episode_length=2.5)["kind"] == "error"
        assert send(session, kind="reset", persist_fleet=1)["kind"] == "error"

    def test_same_seed_same_episode(self, session):
        def rollout():
            obs = reset(session, seed=7, episode_length=6)
            trace = [obs]
            while not trace[-1]["done"]:
                trace.append(
                    send(session, kind="step", decisions=[False] * N, rates=[0.0] * N)
                )
            return trace

        assert rollout() == rollout()

    def test_fresh_fleet_without_persist(self, session):
        reset(session, seed=1, episode_length=4)
        for _ in range(4):
            send(session, kind="step", decisions=[False] * N, rates=[0.0] * N)
        obs = reset(session, seed=1)
        assert all(value == 1.0 for value in obs["soc"])
        assert all(value == 1.0 for value in obs["soh"])


class TestStep:
    def test_step_before_reset_is_error(self, session):
        reply = send(session, kind="step", decisions=[False] * N, rates=[0.0] * N)
        assert reply["kind"] == "error"
        assert "reset" in reply["message"]

    def test_step_advances_and_finishes(self, session):
        reset(session, seed=3, episode_length=2)
        first = send(session, kind="step", decisions=[True] * N, rates=[1.0] * N)
        assert first["kind"] == "observation"
        assert first["tick"] == 1 and first["done"] is False
        second = send(session, kind="step", decisions=[True] * N, rates=[1.0] * N)
        assert second["tick"] == 2 and second["done"] is True
        third = send(session, kind="step", decisions=[True] * N, rates=[1.0] * N)
        assert third["kind"] == "error"
        assert "over" in third["message"]

    def test_numeric_decisions_threshold(self, session):
        # 0.5 and up means charge; valid either as booleans or probabilities
        reset(session, seed=3, episode_length=4)
        obs = send(session, kind="step", decisions=[0.5, 0.49, 1], rates=[1.0] * N)
        assert obs["kind"] == "observation"

    def test_action_validation(self, session):
        reset(session, seed=3, episode_length=4)
        checks = [
            {"decisions": [True] * (N - 1), "rates": [0.0] * N},
            {"decisions": [True] * N, "rates": [0.0] * (N + 1)},
            {"decisions": "yes", "rates": [0.0] * N},
            {"decisions": [True] * N, "rates": [0.0, 0.0, 1.5]},
            {"decisions": [True] * N, "rates": [0.0, 0.0, -0.1]},
            {"decisions": [True] * N, "rates": [0.0, 0.0, "fast"]},
            {"decisions": [None, True, False], "rates": [0.0] * N},
            {"decisions": [True] * N, "rates": [0.0, 0.0, float("nan")]},
        ]
        for bad in checks:
            reply = send(session, kind="step", **bad)
            assert reply["kind"] == "error", bad
        # session survived all of it
        good = send(session, kind="step", decisions=[False] * N, rates=[0.0] * N)
        assert good["kind"] == "observation"

    def test_charge_commands_reach_the_fleet(self, session):
        reset(session, seed=3, episode_length=12)
        drained = None
        for _ in range(6):  # serving drains the packs
            drained = send(session, kind="step", decisions=[False] * N, rates=[0.0] * N)
        after = send(session, kind="step", decisions=[True] * N, rates=[1.0] * N)
        assert sum(after["soc"]) >= sum(drained["soc"]) - 1e-12
        assert isinstance(after["reward"], float)


class TestPersistFleet:
    def test_wear_carries_over(self, session):
        reset(session, seed=2, episode_length=6)
        for _ in range(6):
            send(session, kind="step", decisions=[True] * N, rates=[1.0] * N)
        worn = send(session, kind="reset", seed=2, persist_fleet=True)
        assert worn["kind"] == "observation"
        assert all(value < 1.0 for value in worn["soh"])  # wear kept
        assert all(value == 1.0 for value in worn["soc"])  # but packs start topped up

        fresh = send(session, kind="reset", seed=2, persist_fleet=False)
        assert all(value == 1.0 for value in fresh["soh"])


class TestTransports:
    def test_stdio_round_trip(self):
        config = small_config(horizon=24, zones=(1, 2))
        lines = [
            json.dumps({"kind": "reset", "seed": 4, "episode_length": 2}),
            "",  # blank lines are skipped
            json.dumps({"kind": "step", "decisions": [False] * N, "rates": [0.0] * N}),
            json.dumps({"kind": "close"}),
        ]
        stdout = io.StringIO()
        serve_stdio(config, stdin=io.StringIO("\n".join(lines) + "\n"), stdout=stdout)
        replies = [json.loads(line) for line in stdout.getvalue().splitlines()]
        assert [r["kind"] for r in replies] == ["hello", "observation", "observation", "bye"]
        assert replies[0]["protocol"] == PROTOCOL_VERSION
        assert replies[2]["tick"] == 1

    def test_stdio_stops_at_eof(self):
        config = small_config(horizon=24, zones=(1, 2))
        stdout = io.StringIO()
        serve_stdio(config, stdin=io.StringIO(""), stdout=stdout)
        assert [json.loads(l)["kind"] for l in stdout.getvalue().splitlines()] == ["hello"]

    def test_tcp_round_trip(self):
        config = small_config(horizon=24, zones=(1, 2))
        ready = threading.Event()
        addr = {}

        def on_ready(sockname):
            addr["port"] = sockname[1]
            ready.set()

        server = threading.Thread(
            target=serve_tcp,
            args=(config,),
            kwargs={"port": 0, "max_sessions": 1, "ready_callback": on_ready},
            daemon=True,
        )
        server.start()
        assert ready.wait(timeout=10.0)

        with socket.create_connection(("127.0.0.1", addr["port"]), timeout=10.0) as conn:
            reader = conn.makefile("r", encoding="utf-8")
            writer = conn.makefile("w", encoding="utf-8")

            def ask(message=None):
                if message is not None:
                    writer.write(json.dumps(message) + "\n")
                    writer.flush()
                return json.loads(reader.readline())

            assert ask()["kind"] == "hello"
            obs = ask({"kind": "reset", "seed": 1, "episode_length": 3})
            assert obs["kind"] == "observation" and len(obs["soh"]) == N
            obs = ask({"kind": "step", "decisions": [True] * N, "rates": [0.5] * N})
            assert obs["tick"] == 1
            assert ask({"kind": "close"})["kind"] == "bye"
        server.join(timeout=10.0)
        assert not server.is_alive()
