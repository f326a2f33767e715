"""Entry point: connect to a race server and drive it with a built-in policy."""

import argparse
import json
import sys

from .client import ClientError, connect, run_agent
from .codec import CAMERA_NAMES, CodecError
from .policies import RandomPolicy, center_policy


def build_parser():
    parser = argparse.ArgumentParser(
        prog="l2r-agent",
        description="reference client for the race wire protocol")
    parser.add_argument("--endpoint", required=True, help="server host:port")
    parser.add_argument("--policy", choices=("random", "center"), default="center")
    parser.add_argument("--cameras", default="front",
                        help="comma-separated subset of " + ",".join(CAMERA_NAMES))
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for the random policy")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    policy = RandomPolicy(args.seed) if args.policy == "random" else center_policy
    cameras = [c.strip() for c in args.cameras.split(",") if c.strip()]
    try:
        session = connect(args.endpoint, cameras)
        print(f"connected: track {session.track}, {session.mode} mode", flush=True)
        summaries = run_agent(session, policy)
    except (OSError, ClientError, CodecError, ValueError) as exc:
        print(f"l2r-agent: {exc}", file=sys.stderr)
        return 2
    for i, result in enumerate(summaries):
        fields = " ".join(f"{k}={result[k]}" for k in sorted(result))
        print(f"episode {i}: {fields}")
    if session.report is not None:
        print("run report: " + json.dumps(session.report, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
