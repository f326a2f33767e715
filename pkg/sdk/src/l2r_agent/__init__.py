"""Reference client for the race server's line-delimited agent protocol."""

from .client import (
    ClientError,
    ClientSession,
    ServerFault,
    VersionMismatch,
    connect,
    run_agent,
)
from .codec import CAMERA_NAMES, MODES, PROTOCOL_VERSION, CodecError, decode, encode
from .policies import RandomPolicy, center_policy, random_policy

__all__ = [
    "CAMERA_NAMES",
    "MODES",
    "PROTOCOL_VERSION",
    "ClientError",
    "ClientSession",
    "CodecError",
    "RandomPolicy",
    "ServerFault",
    "VersionMismatch",
    "center_policy",
    "connect",
    "decode",
    "encode",
    "random_policy",
    "run_agent",
]
