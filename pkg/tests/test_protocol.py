"""Wire protocol tests: codec fixtures, session state machine, scripted clients."""

import socket
import threading
import time

import numpy as np
import pytest

from deskrace.env import EnvConfig, make
from deskrace.metrics import EpisodeResult
from deskrace.protocol import (
    Message,
    ProtocolError,
    ProtocolViolation,
    SessionConfig,
    SessionState,
    action_message,
    declare,
    decode_message,
    encode_message,
    episode_end_message,
    hello,
    obs_message,
    serve,
    validate_transition,
)
from deskrace.track import GeneratorSpec, generate_track


# -- codec -------------------------------------------------------------------

def test_action_round_trips_exactly():
    m = action_message(0.5, -1.0)
    assert decode_message(encode_message(m)) == m
    assert encode_message(m) == '{"acceleration":-1.0,"steering":0.5,"type":"action"}'


def test_canonical_fixtures():
    assert encode_message(declare(["front"])) == '{"cameras":["front"],"type":"declare"}'
    assert (encode_message(hello("practice", "vegas_standin"))
            == '{"mode":"practice","protocol":1,"track":"vegas_standin","type":"hello"}')
    assert encode_message(Message("shutdown")) == '{"type":"shutdown"}'


def test_obs_raster_round_trips_cell_for_cell():
    rng = np.random.default_rng(0)
    raster = (rng.random((64, 64)) < 0.5).astype(np.uint8)

    class Obs:
        speed = 12.25
        cameras = {"front": raster}
        privileged = None

    m = obs_message(3, 17, Obs(), "evaluate")
    back = decode_message(encode_message(m))
    assert back.payload["cameras"]["front"] == raster.tolist()
    assert back.payload["speed"] == 12.25
    assert back.payload["privileged"] is None


def test_unknown_type_rejected():
    with pytest.raises(ProtocolError, match="unknown message type 'acton'"):
        decode_message('{"type":"acton"}')


def test_malformed_and_incomplete_lines():
    with pytest.raises(ProtocolError, match="malformed"):
        decode_message('{"type":"action",')
    with pytest.raises(ProtocolError, match="JSON object"):
        decode_message('[1,2]')
    with pytest.raises(ProtocolError, match="missing field 'type'"):
        decode_message('{"steering":0.0}')
    with pytest.raises(ProtocolError, match="missing field 'acceleration'"):
        decode_message('{"type":"action","steering":0.0}')
    with pytest.raises(ProtocolError, match="field 'speed'"):
        decode_message('{"type":"obs","episode":0,"step":0,"speed":"fast",'
                       '"cameras":{},"privileged":null}')
    with pytest.raises(ProtocolError, match="field 'steering'"):
        decode_message('{"type":"action","steering":true,"acceleration":0.0}')
    with pytest.raises(ProtocolError, match="field 'cameras'"):
        decode_message('{"type":"declare","cameras":[]}')
    with pytest.raises(ProtocolError, match="field 'cameras'"):
        decode_message('{"type":"declare","cameras":["front","front"]}')


def test_random_messages_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(50):
        kind = rng.choice(["action", "hello", "declare", "error"])
        if kind == "action":
            m = action_message(rng.uniform(-2, 2), rng.uniform(-2, 2))
        elif kind == "hello":
            m = hello(str(rng.choice(["practice", "evaluate"])), f"t{rng.integers(100)}")
        elif kind == "declare":
            m = declare(["front", "left", "right"][: int(rng.integers(1, 4))])
        else:
            m = Message("error", {"code": "x", "detail": f"d{rng.integers(100)}"})
        assert decode_message(encode_message(m)) == m


def test_episode_end_carries_metric_fields():
    r = EpisodeResult(completed_segments=9, total_segments=10, infractions=(),
                      total_distance=500.0, total_time=50.0)
    m = episode_end_message(r)
    assert m.payload["result"] == {"sr": 0.9, "aats_kph": 36.0, "nsi": 0, "ed_s": 50.0}


# -- state machine -----------------------------------------------------------

def test_happy_path_transitions():
    s = SessionState(mode="evaluate")
    s, _ = validate_transition(s, declare(["front"]))
    assert s.phase == "idle" and s.cameras == ("front",)
    s, _ = validate_transition(s, Message("obs", {"episode": 0, "step": 0}))
    assert s.phase == "awaiting_action"
    s, _ = validate_transition(s, action_message(0.1, 0.2))
    assert s.phase == "idle"


def test_action_before_declare_names_expected():
    with pytest.raises(ProtocolViolation, match="expected declare") as exc:
        validate_transition(SessionState(mode="evaluate"), action_message(0, 0))
    assert exc.value.expected == "declare"


def test_two_actions_for_one_obs():
    s = SessionState(mode="evaluate", phase="awaiting_action")
    s, _ = validate_transition(s, action_message(0, 0))
    with pytest.raises(ProtocolViolation):
        validate_transition(s, action_message(0, 0))


def test_out_of_range_action_clamped_and_counted():
    s = SessionState(mode="evaluate", phase="awaiting_action")
    s, m = validate_transition(s, action_message(1.5, 0.0))
    assert m.payload["steering"] == 1.0
    assert s.warnings == 1
    s = SessionState(mode="evaluate", phase="awaiting_action", warnings=s.warnings)
    s, m = validate_transition(s, action_message(-3.0, 2.0))
    assert (m.payload["steering"], m.payload["acceleration"]) == (-1.0, 1.0)
    assert s.warnings == 3


def test_shutdown_closes_from_any_phase():
    for phase in ("awaiting_declare", "idle", "awaiting_action"):
        s = SessionState(mode="practice", phase=phase)
        s, _ = validate_transition(s, Message("shutdown"))
        assert s.phase == "closed"
    with pytest.raises(ProtocolViolation, match="closed"):
        validate_transition(s, action_message(0, 0))


# -- served sessions -----------------------------------------------------------

def env_factory(cameras, mode):
    track = generate_track(GeneratorSpec("circle", radius=60.0))
    return make(EnvConfig(
        track=track, dt=0.1, cameras=tuple(cameras),
        observation_mode="privileged" if mode == "practice" else "camera_only",
        max_episode_time=3.0,
    ))


def start_server(config):
    listener = socket.create_server(("127.0.0.1", 0))
    port = listener.getsockname()[1]
    box = {}

    def run():
        box["outcome"] = serve(env_factory, listener, config)[0]
        listener.close()

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    return port, thread, box


def connect(port):
    sock = socket.create_connection(("127.0.0.1", port), timeout=10.0)
    return sock, sock.makefile("r", encoding="utf-8")


def send(sock, m):
    sock.sendall((encode_message(m) + "\n").encode())


def recv(reader):
    line = reader.readline()
    return decode_message(line.strip()) if line else None


def drive_session(port, cameras=("front",), respond=lambda p: (0.0, 0.3),
                  before_action=None):
    """Minimal compliant client; returns the messages it saw, by type."""
    sock, reader = connect(port)
    seen = {"obs": [], "episode_end": [], "run_end": [], "error": []}
    try:
        m = recv(reader)
        assert m.type == "hello" and m.payload["protocol"] == 1
        send(sock, declare(list(cameras)))
        while True:
            m = recv(reader)
            if m is None or m.type == "shutdown":
                break
            if m.type == "obs":
                seen["obs"].append(m.payload)
                if before_action:
                    before_action(len(seen["obs"]))
                send(sock, action_message(*respond(m.payload)))
            else:
                seen[m.type].append(m.payload)
    finally:
        sock.close()
    return seen


def test_compliant_client_completes_episode():
    port, thread, box = start_server(SessionConfig(mode="evaluate", track="ring"))
    seen = drive_session(port)
    thread.join(timeout=30.0)
    outcome = box["outcome"]
    assert not outcome.aborted
    assert len(outcome.results) == 1
    assert len(seen["episode_end"]) == 1 and len(seen["run_end"]) == 1
    # one action consumed per obs: 3 s at dt 0.1
    assert len(seen["obs"]) == 30
    assert seen["episode_end"][0]["result"]["ed_s"] == pytest.approx(3.0)
    assert outcome.state.phase == "closed" and outcome.stalls == 0


def test_evaluate_mode_never_sends_privileged():
    port, thread, box = start_server(SessionConfig(mode="evaluate", track="ring"))
    seen = drive_session(port)
    thread.join(timeout=30.0)
    assert seen["obs"] and all(p["privileged"] is None for p in seen["obs"])
    assert all(set(p["cameras"]) == {"front"} for p in seen["obs"])


def test_practice_mode_sends_privileged_payload():
    port, thread, box = start_server(SessionConfig(mode="practice", track="ring"))
    seen = drive_session(port, cameras=("front", "left", "right"))
    thread.join(timeout=30.0)
    priv = seen["obs"][0]["privileged"]
    assert set(priv) == {"pose", "s", "d", "mask"}
    assert len(priv["mask"]) == 64 and len(priv["mask"][0]) == 64
    assert set(seen["obs"][0]["cameras"]) == {"front", "left", "right"}


def test_two_episode_run():
    port, thread, box = start_server(
        SessionConfig(mode="evaluate", track="ring", episodes=2))
    seen = drive_session(port)
    thread.join(timeout=60.0)
    assert len(box["outcome"].results) == 2
    assert len(seen["episode_end"]) == 2
    assert len(seen["obs"]) == 60


def test_action_before_declare_is_rejected():
    port, thread, box = start_server(SessionConfig(mode="evaluate", track="ring"))
    sock, reader = connect(port)
    recv(reader)  # hello
    send(sock, action_message(0.0, 0.0))
    m = recv(reader)
    assert m.type == "error" and "declare" in m.payload["detail"]
    thread.join(timeout=10.0)
    assert box["outcome"].aborted and not box["outcome"].results
    sock.close()


def test_stalled_client_aborts_after_limit():
    port, thread, box = start_server(SessionConfig(
        mode="evaluate", track="ring", action_timeout=0.05, max_consecutive_stalls=3))
    sock, reader = connect(port)
    recv(reader)  # hello
    send(sock, declare(["front"]))
    recv(reader)  # first obs, then go silent
    msgs = []
    while True:
        m = recv(reader)
        if m is None:
            break
        msgs.append(m)
    thread.join(timeout=10.0)
    outcome = box["outcome"]
    assert outcome.aborted and outcome.stalls == 3
    assert msgs[-1].type == "error" and msgs[-1].payload["code"] == "stalled"
    # two zero actions were substituted before the limit hit
    assert sum(1 for m in msgs if m.type == "obs") == 2
    sock.close()


def test_single_stall_substitutes_and_recovers():
    port, thread, box = start_server(SessionConfig(
        mode="evaluate", track="ring", action_timeout=0.2))

    def hesitate(n_obs):
        if n_obs == 1:
            time.sleep(0.45)

    seen = drive_session(port, before_action=hesitate)
    thread.join(timeout=60.0)
    outcome = box["outcome"]
    assert not outcome.aborted
    assert outcome.stalls >= 1
    assert len(outcome.results) == 1


def test_out_of_range_actions_counted_not_fatal():
    port, thread, box = start_server(SessionConfig(mode="evaluate", track="ring"))
    seen = drive_session(port, respond=lambda p: (1.5, 0.3))
    thread.join(timeout=30.0)
    outcome = box["outcome"]
    assert not outcome.aborted
    assert outcome.state.warnings == len(seen["obs"])


def test_client_shutdown_ends_session_cleanly():
    port, thread, box = start_server(
        SessionConfig(mode="evaluate", track="ring", episodes=5))
    sock, reader = connect(port)
    recv(reader)
    send(sock, declare(["front"]))
    for _ in range(3):
        m = recv(reader)
        assert m.type == "obs"
        send(sock, action_message(0.0, 0.2))
    send(sock, Message("shutdown"))
    thread.join(timeout=10.0)
    outcome = box["outcome"]
    assert not outcome.aborted and outcome.detail == "client shutdown"
    assert outcome.results == ()
    sock.close()


def test_session_config_validation():
    with pytest.raises(ValueError, match="mode"):
        SessionConfig(mode="race")
    with pytest.raises(ValueError, match="episodes"):
        SessionConfig(episodes=0)
    with pytest.raises(ValueError, match="timeouts"):
        SessionConfig(action_timeout=0.0)
