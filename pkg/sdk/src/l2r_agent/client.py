"""Blocking client for the agent wire protocol.

The server owns the environment and the clock: it sends one observation and
expects the matching action within its timeout. The client therefore does
nothing clever. Read a line, decide, write a line. One session per thread.
"""

import logging
import math
import socket

from . import codec

log = logging.getLogger(__name__)

READ_TIMEOUT = 60.0  # the server paces the session; anything slower is dead


class ClientError(RuntimeError):
    """Session-level failure: desync, early close, unexpected traffic."""


class VersionMismatch(ClientError):
    def __init__(self, got):
        super().__init__(f"server speaks protocol {got}, "
                         f"this client speaks {codec.PROTOCOL_VERSION}")
        self.got = got


class ServerFault(ClientError):
    """The server reported an error and ended the session."""

    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


class ClientSession:
    """One live connection with its declare already on the wire.

    Mirrors the server's state machine: exactly one observation is in
    flight at a time, and every action answers the latest observation.
    """

    def __init__(self, sock, endpoint, cameras):
        self.endpoint = endpoint
        self.cameras = cameras
        self.mode = ""
        self.track = ""
        self.episode = 0
        self.step = 0
        self.report = None  # run aggregate, set when run_end arrives
        self._sock = sock
        self._buf = bytearray()

    def send_line(self, line: str):
        self._sock.sendall(line.encode() + b"\n")

    def read_line(self, timeout: float = READ_TIMEOUT) -> str:
        # "" means the server closed the connection
        self._sock.settimeout(timeout)
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = self._buf[:nl].decode()
                del self._buf[: nl + 1]
                return line
            chunk = self._sock.recv(65536)
            if not chunk:
                return ""
            self._buf.extend(chunk)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


def _endpoint(value):
    if isinstance(value, (tuple, list)):
        host, port = value
        return str(host), int(port)
    host, _, port = str(value).rpartition(":")
    if not port.isdigit():
        raise ValueError(f"endpoint '{value}' is not host:port")
    return host or "127.0.0.1", int(port)


def connect(endpoint, cameras, timeout: float = 10.0) -> ClientSession:
    """Dial the server, consume its hello, declare cameras, return the session.

    The camera set is validated before any traffic, so an empty or unknown
    declaration never reaches the wire.
    """
    cams = list(cameras)
    if not cams:
        raise ValueError("camera set must be non-empty")
    unknown = [c for c in cams if c not in codec.CAMERA_NAMES]
    if unknown:
        raise ValueError(f"unknown cameras {unknown}, pick from {codec.CAMERA_NAMES}")
    if len(set(cams)) != len(cams):
        raise ValueError("duplicate camera name")

    host, port = _endpoint(endpoint)
    sock = socket.create_connection((host, port), timeout=timeout)
    session = ClientSession(sock, (host, port), tuple(cams))
    try:
        line = session.read_line(timeout)
        if not line:
            raise ClientError("server closed before greeting")
        msg = codec.decode(line)
        if msg["type"] == "error":
            raise ServerFault(msg["code"], msg["detail"])
        if msg["type"] != "hello":
            raise ClientError(f"expected hello, got '{msg['type']}'")
        if msg["protocol"] != codec.PROTOCOL_VERSION:
            raise VersionMismatch(msg["protocol"])
        session.mode = msg["mode"]
        session.track = msg["track"]
        session.send_line(codec.declare(session.cameras))
    except Exception:
        session.close()
        raise
    return session


def _decide(policy, obs, abort_on_policy_error):
    try:
        steering, acceleration = policy(obs)
        steering, acceleration = float(steering), float(acceleration)
        if not (math.isfinite(steering) and math.isfinite(acceleration)):
            raise ValueError("non-finite action")
    except Exception as exc:
        if abort_on_policy_error:
            raise
        log.warning("policy failed (%s); sending zero action", exc)
        return 0.0, 0.0
    # out-of-range channels would only cost server-side clamp warnings,
    # but a clean client never relies on that
    return max(-1.0, min(1.0, steering)), max(-1.0, min(1.0, acceleration))


def run_agent(session: ClientSession, policy, abort_on_policy_error=False):
    """Loop observations through the policy until the server ends the run.

    policy is any callable mapping the observation dict to a (steering,
    acceleration) pair. In practice mode the observation carries the
    privileged payload; in evaluate mode the server guarantees it is null
    and the dict is passed through untouched either way.

    Returns the per-episode summaries in arrival order; the run aggregate
    lands on session.report. A policy that raises or returns junk costs a
    zero action, not the session, unless abort_on_policy_error is set.
    """
    summaries = []
    try:
        while True:
            line = session.read_line()
            if not line:
                if session.report is not None:
                    return summaries  # server closed after a complete run
                raise ClientError("server closed mid-run")
            msg = codec.decode(line)
            kind = msg["type"]
            if kind == "obs":
                session.episode, session.step = msg["episode"], msg["step"]
                steering, acceleration = _decide(policy, msg, abort_on_policy_error)
                session.send_line(codec.action(steering, acceleration))
            elif kind == "episode_end":
                summaries.append(msg["result"])
            elif kind == "run_end":
                session.report = msg["report"]
            elif kind == "shutdown":
                return summaries
            elif kind == "error":
                raise ServerFault(msg["code"], msg["detail"])
            else:
                raise ClientError(f"unexpected '{kind}' from server")
    finally:
        session.close()
