"""Wire codec for the line-delimited agent protocol.

One JSON object per line. Encoding is canonical: sorted keys, compact
separators, no NaN or Infinity. The server encodes the same way, so both
ends can be checked against shared byte-level fixtures.
"""

import json

PROTOCOL_VERSION = 1
MODES = ("practice", "evaluate")
CAMERA_NAMES = ("front", "left", "right")

# required payload fields per message type
_REQUIRED = {
    "hello": ("mode", "protocol", "track"),
    "declare": ("cameras",),
    "obs": ("cameras", "episode", "privileged", "speed", "step"),
    "action": ("acceleration", "steering"),
    "episode_end": ("result",),
    "run_end": ("report",),
    "shutdown": (),
    "error": ("code", "detail"),
}


class CodecError(ValueError):
    """A line that is not a well-formed protocol message."""


def encode(kind: str, **fields) -> str:
    if kind not in _REQUIRED:
        raise CodecError(f"unknown message type '{kind}'")
    missing = [name for name in _REQUIRED[kind] if name not in fields]
    if missing:
        raise CodecError(f"'{kind}' message missing {missing}")
    return json.dumps({"type": kind, **fields},
                      sort_keys=True, separators=(",", ":"), allow_nan=False)


def decode(line: str) -> dict:
    """Parse one line into a message dict, 'type' key included."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CodecError(f"not JSON: {exc}") from None
    if not isinstance(doc, dict) or "type" not in doc:
        raise CodecError("expected a JSON object with a 'type' field")
    kind = doc["type"]
    if kind not in _REQUIRED:
        raise CodecError(f"unknown message type '{kind}'")
    missing = [name for name in _REQUIRED[kind] if name not in doc]
    if missing:
        raise CodecError(f"'{kind}' message missing {missing}")
    return doc


def declare(cameras) -> str:
    return encode("declare", cameras=list(cameras))


def action(steering: float, acceleration: float) -> str:
    return encode("action", steering=float(steering),
                  acceleration=float(acceleration))
