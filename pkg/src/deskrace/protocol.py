"""Line-delimited message protocol for out-of-process agents.

One JSON object per line over a local byte stream. The server owns the
environment and the clock: it sends an observation, waits up to a
wall-clock timeout for the matching action, and substitutes a zero action
when the agent stalls. Ten consecutive stalls abort the session.

Encoding is canonical (sorted keys, no whitespace) so independently written
clients can test against byte-identical fixtures. Floats use Python's
shortest round-trip repr, which preserves the value exactly.
"""

import json
import socket
from dataclasses import dataclass, field, replace

from .dynamics import Action
from .metrics import aats, aggregate, episode_duration, nsi, success_rate

PROTOCOL_VERSION = 1
MODES = ("practice", "evaluate")
CAMERA_NAMES = ("front", "left", "right")
MESSAGE_TYPES = ("hello", "declare", "obs", "action", "episode_end",
                 "run_end", "shutdown", "error")
PHASES = ("awaiting_declare", "idle", "awaiting_action", "closed")


class ProtocolError(ValueError):
    """A line that cannot be decoded into a valid message."""


class ProtocolViolation(RuntimeError):
    """A well-formed message arriving when the session cannot accept it."""

    def __init__(self, detail: str, expected: str):
        super().__init__(detail)
        self.expected = expected


@dataclass(frozen=True)
class Message:
    type: str
    payload: dict = field(default_factory=dict)


def hello(mode: str, track: str) -> Message:
    return Message("hello", {"protocol": PROTOCOL_VERSION, "mode": mode, "track": track})


def declare(cameras) -> Message:
    return Message("declare", {"cameras": list(cameras)})


def action_message(steering: float, acceleration: float) -> Message:
    return Message("action", {"steering": float(steering),
                              "acceleration": float(acceleration)})


def obs_message(episode: int, step: int, observation, mode: str) -> Message:
    cams = {name: arr.tolist() for name, arr in observation.cameras.items()}
    priv = None
    if mode == "practice" and observation.privileged is not None:
        p = observation.privileged
        priv = {"pose": [float(v) for v in p.pose],
                "s": float(p.frame.s), "d": float(p.frame.d),
                "mask": p.mask.tolist()}
    return Message("obs", {"episode": int(episode), "step": int(step),
                           "speed": float(observation.speed),
                           "cameras": cams, "privileged": priv})


def episode_end_message(result) -> Message:
    return Message("episode_end", {"result": {
        "sr": success_rate(result), "aats_kph": aats(result),
        "nsi": nsi(result), "ed_s": episode_duration(result)}})


def error_message(code: str, detail: str) -> Message:
    return Message("error", {"code": code, "detail": detail})


# required payload fields per type; checkers return None or a complaint
def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_mode(v):
    if v not in MODES:
        return f"expected one of {MODES}"


def _check_cameras(v):
    if not isinstance(v, list) or not v:
        return "expected a non-empty list"
    if any(c not in CAMERA_NAMES for c in v):
        return f"expected names from {CAMERA_NAMES}"
    if len(set(v)) != len(v):
        return "duplicate camera name"


def _typed(kind, label):
    def check(v):
        if not isinstance(v, kind):
            return f"expected {label}"
    return check


def _number(v):
    if not _is_number(v):
        return "expected a number"


def _integer(v):
    if not _is_int(v):
        return "expected an integer"


def _optional_object(v):
    if v is not None and not isinstance(v, dict):
        return "expected an object or null"


_SCHEMAS = {
    "hello": {"protocol": _integer, "mode": _check_mode, "track": _typed(str, "a string")},
    "declare": {"cameras": _check_cameras},
    "obs": {"episode": _integer, "step": _integer, "speed": _number,
            "cameras": _typed(dict, "an object"), "privileged": _optional_object},
    "action": {"steering": _number, "acceleration": _number},
    "episode_end": {"result": _typed(dict, "an object")},
    "run_end": {"report": _typed(dict, "an object")},
    "shutdown": {},
    "error": {"code": _typed(str, "a string"), "detail": _typed(str, "a string")},
}


def encode_message(m: Message) -> str:
    """Canonical single-line JSON for a message (newline added by transport)."""
    doc = {"type": m.type}
    doc.update(m.payload)
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def decode_message(line: str) -> Message:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed line: {exc}") from None
    if not isinstance(doc, dict):
        raise ProtocolError("expected a JSON object")
    kind = doc.pop("type", None)
    if kind is None:
        raise ProtocolError("missing field 'type'")
    schema = _SCHEMAS.get(kind)
    if schema is None:
        raise ProtocolError(f"unknown message type '{kind}'")
    for name, check in schema.items():
        if name not in doc:
            raise ProtocolError(f"'{kind}' message missing field '{name}'")
        complaint = check(doc[name])
        if complaint:
            raise ProtocolError(f"field '{name}': {complaint}")
    return Message(kind, doc)


@dataclass(frozen=True)
class SessionState:
    mode: str
    phase: str = "awaiting_declare"
    cameras: tuple = ()
    warnings: int = 0  # out-of-range action channels, clamped

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"phase '{self.phase}' not one of {PHASES}")
        if self.mode not in MODES:
            raise ValueError(f"mode '{self.mode}' not one of {MODES}")


_EXPECTED = {"awaiting_declare": "declare", "idle": "obs",
             "awaiting_action": "action", "closed": "nothing"}


def validate_transition(state: SessionState, m: Message):
    """Advance the session by one message.

    Returns (new state, message). The message comes back possibly normalized:
    action channels outside [-1, 1] are clamped to the boundary, and each
    clamped channel bumps the state's warning counter.
    """
    if m.type in ("shutdown", "error"):
        return replace(state, phase="closed"), m
    want = _EXPECTED[state.phase]
    if state.phase == "awaiting_declare":
        if m.type == "hello":
            return state, m  # greeting, not a transition
        if m.type == "declare":
            return replace(state, phase="idle",
                           cameras=tuple(m.payload["cameras"])), m
    elif state.phase == "idle":
        if m.type == "obs":
            return replace(state, phase="awaiting_action"), m
        if m.type in ("episode_end", "run_end"):
            return state, m
    elif state.phase == "awaiting_action":
        if m.type == "action":
            clamped = dict(m.payload)
            bumps = 0
            for ch in ("steering", "acceleration"):
                v = clamped[ch]
                if not -1.0 <= v <= 1.0:
                    clamped[ch] = max(-1.0, min(1.0, v))
                    bumps += 1
            return (replace(state, phase="idle", warnings=state.warnings + bumps),
                    Message("action", clamped))
    raise ProtocolViolation(
        f"unexpected '{m.type}' in phase '{state.phase}', expected {want}", want)


@dataclass(frozen=True)
class SessionConfig:
    mode: str = "evaluate"
    track: str = "unnamed"
    episodes: int = 1
    action_timeout: float = 1.0
    handshake_timeout: float = 10.0
    max_consecutive_stalls: int = 10
    budget_s: float | None = None  # run episodes until this much simulated time

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode '{self.mode}' not one of {MODES}")
        if self.episodes < 1:
            raise ValueError("episodes must be at least 1")
        if self.action_timeout <= 0 or self.handshake_timeout <= 0:
            raise ValueError("timeouts must be positive")
        if self.max_consecutive_stalls < 1:
            raise ValueError("max_consecutive_stalls must be at least 1")
        if self.budget_s is not None and self.budget_s <= 0:
            raise ValueError("budget_s must be positive when set")


@dataclass(frozen=True)
class SessionOutcome:
    results: tuple          # EpisodeResult per completed episode
    state: SessionState     # final session state (warnings live here)
    stalls: int = 0         # total substituted actions
    aborted: bool = False   # stall limit hit or client broke protocol
    detail: str = ""


class _LineChannel:
    """Newline framing over a connected socket, with per-read timeouts."""

    def __init__(self, sock):
        self.sock = sock
        self._buf = bytearray()

    def send(self, m: Message):
        self.sock.sendall(encode_message(m).encode() + b"\n")

    def readline(self, timeout: float) -> str:
        # TimeoutError means the deadline passed; "" means the peer closed
        self.sock.settimeout(timeout)
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl].decode()
                del self._buf[: nl + 1]
                return line
            chunk = self.sock.recv(65536)
            if not chunk:
                return ""
            self._buf.extend(chunk)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def serve_connection(sock, env_factory, config: SessionConfig) -> SessionOutcome:
    """Drive one agent session over an already-connected socket.

    env_factory(cameras, mode) must return a fresh environment honoring the
    declared camera set; mode "practice" grants privileged observations.
    """
    chan = _LineChannel(sock)
    state = SessionState(mode=config.mode)
    results = []
    stalls_total = 0

    def bail(code, detail):
        try:
            chan.send(error_message(code, detail))
        except OSError:
            pass
        chan.close()
        return SessionOutcome(tuple(results), replace(state, phase="closed"),
                              stalls=stalls_total, aborted=True, detail=detail)

    try:
        chan.send(hello(config.mode, config.track))
        try:
            line = chan.readline(config.handshake_timeout)
        except TimeoutError:
            return bail("timeout", "no declare within the handshake timeout")
        if not line:
            return bail("closed", "client closed before declaring")
        try:
            state, msg = validate_transition(state, decode_message(line))
        except (ProtocolError, ProtocolViolation) as exc:
            return bail("protocol", str(exc))
        if state.phase == "closed":
            chan.close()
            return SessionOutcome(tuple(results), state, detail="client shutdown")
        if msg.type != "declare":
            return bail("protocol", f"expected declare, got '{msg.type}'")

        env = env_factory(state.cameras, config.mode)
        episode = 0
        elapsed = 0.0
        while (elapsed < config.budget_s if config.budget_s is not None
               else episode < config.episodes):
            # a budget-driven session may overrun on its last episode; the
            # episode cap is fixed at env construction
            obs = env.reset()
            step_i = 0
            consecutive = 0
            done = False
            while not done:
                out_msg = obs_message(episode, step_i, obs, config.mode)
                state, _ = validate_transition(state, out_msg)
                chan.send(out_msg)
                try:
                    line = chan.readline(config.action_timeout)
                except TimeoutError:
                    line = None
                if line is None:
                    # stalled: substitute a zero action and keep the clock moving
                    consecutive += 1
                    stalls_total += 1
                    if consecutive >= config.max_consecutive_stalls:
                        return bail("stalled",
                                    f"{consecutive} consecutive action timeouts")
                    state = replace(state, phase="idle")
                    act = Action(0.0, 0.0)
                elif not line:
                    return bail("closed", "client closed mid-episode")
                else:
                    try:
                        state, msg = validate_transition(state, decode_message(line))
                    except (ProtocolError, ProtocolViolation) as exc:
                        return bail("protocol", str(exc))
                    if state.phase == "closed":
                        chan.close()
                        return SessionOutcome(tuple(results), state, stalls=stalls_total,
                                              detail="client shutdown")
                    act = Action(msg.payload["steering"], msg.payload["acceleration"])
                    consecutive = 0
                outcome = env.step(act)
                obs = outcome.observation
                step_i += 1
                done = outcome.done
            result = env.episode_result()
            results.append(result)
            elapsed += result.total_time
            episode += 1
            end_msg = episode_end_message(result)
            state, _ = validate_transition(state, end_msg)
            chan.send(end_msg)

        report = aggregate(results)
        end = Message("run_end", {"report": json.loads(report.to_json())})
        state, _ = validate_transition(state, end)
        chan.send(end)
        state, _ = validate_transition(state, Message("shutdown"))
        chan.send(Message("shutdown"))
    except (OSError, BrokenPipeError) as exc:
        return SessionOutcome(tuple(results), replace(state, phase="closed"),
                              stalls=stalls_total, aborted=True,
                              detail=f"transport failure: {exc}")
    chan.close()
    return SessionOutcome(tuple(results), state, stalls=stalls_total)


def serve(env_factory, endpoint, config: SessionConfig, max_sessions: int = 1):
    """Listen on endpoint and serve sessions one at a time.

    endpoint is (host, port) or an already-bound listening socket; port 0
    picks an ephemeral port (read it back from the socket you passed in).
    Returns the list of SessionOutcomes.
    """
    if isinstance(endpoint, socket.socket):
        listener, own = endpoint, False
    else:
        host, port = endpoint
        listener = socket.create_server((host, int(port)))
        own = True
    outcomes = []
    try:
        for _ in range(max_sessions):
            conn, _addr = listener.accept()
            outcomes.append(serve_connection(conn, env_factory, config))
    finally:
        if own:
            listener.close()
    return outcomes
