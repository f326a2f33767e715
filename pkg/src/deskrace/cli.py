"""Command line front end: tracks, serving, evaluation, leaderboards, plots."""

import argparse
import json
import os
import socket
import sys

from .env import EnvConfig, make
from .harness import (
    HarnessError,
    load_results,
    make_agent,
    persist,
    rank_stage1,
    rank_stage2,
    run_stage1,
    run_stage2,
)
from .protocol import SessionConfig, serve
from .track import (
    GENERATOR_NAMES,
    GeneratorSpec,
    TrackFormatError,
    generate_track,
    load_track,
    save_track,
)

BUILTIN_AGENTS = ("random", "pure_pursuit", "mpc")


def default_seed() -> int:
    return int(os.environ.get("RACE_SEED", "0"))


def _endpoint(text):
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise ValueError(f"endpoint '{text}' is not host:port")
    return (host or "127.0.0.1", int(port))


def _env_factory(track, dt, max_episode_time):
    def factory(cameras, mode):
        return make(EnvConfig(
            track=track, dt=dt, cameras=tuple(cameras),
            observation_mode="privileged" if mode == "practice" else "camera_only",
            max_episode_time=max_episode_time))
    return factory


def cmd_gen_track(args) -> int:
    seed = default_seed() if args.seed is None else args.seed
    track = generate_track(GeneratorSpec(args.spec), seed=seed)
    save_track(track, args.out)
    print(f"wrote {args.out}: {track.id}, {track.total_length:.0f} m, "
          f"{track.n_segments} segments")
    return 0


def cmd_serve(args) -> int:
    track = load_track(args.track)
    listener = socket.create_server(_endpoint(args.listen))
    host, port = listener.getsockname()[:2]
    print(f"listening on {host}:{port}", flush=True)
    config = SessionConfig(mode=args.mode, track=track.id, episodes=args.episodes,
                           action_timeout=args.timeout)
    try:
        outcomes = serve(_env_factory(track, args.dt, args.max_episode_time),
                         listener, config, max_sessions=args.sessions)
    finally:
        listener.close()
    for i, outcome in enumerate(outcomes):
        status = "aborted: " + outcome.detail if outcome.aborted else "ok"
        print(f"session {i}: {len(outcome.results)} episode(s), "
              f"{outcome.stalls} stall(s), {outcome.state.warnings} warning(s), {status}")
    return 1 if any(o.aborted for o in outcomes) else 0


def cmd_eval(args) -> int:
    track = load_track(args.track)
    if args.agent in BUILTIN_AGENTS:
        agent = make_agent(args.agent, seed=default_seed())
    else:
        agent = socket.create_server(_endpoint(args.agent))
        host, port = agent.getsockname()[:2]
        print(f"waiting for the agent on {host}:{port}", flush=True)
    try:
        if args.stage == 1:
            result = run_stage1(agent, track, runs=args.runs,
                                participant=args.participant, dt=args.dt,
                                max_episode_time=args.max_episode_time)
        else:
            result = run_stage2(agent, track, practice_budget=args.practice_budget,
                                runs=args.runs, participant=args.participant,
                                dt=args.dt, max_episode_time=args.max_episode_time)
    finally:
        if not hasattr(agent, "act"):
            agent.close()
    if args.store:
        persist(args.store, result)
    summary = {"participant": result.participant, "stage": result.stage,
               "camera_config": result.camera_config, "valid": result.valid,
               "practice_nsi": result.practice_nsi}
    summary.update(json.loads(result.report.to_json()))
    print(json.dumps(summary, sort_keys=True))
    return 0 if result.valid else 1


def cmd_leaderboard(args) -> int:
    results, skipped = load_results(args.store)
    if skipped:
        print(f"warning: skipped {skipped} corrupt record(s)", file=sys.stderr)
    cohort = [r for r in results
              if r.stage == args.stage and r.camera_config == args.cameras]
    if not cohort:
        print(f"no stage-{args.stage} {args.cameras}-camera submissions in {args.store}")
        return 0
    board = rank_stage1(cohort) if args.stage == 1 else rank_stage2(cohort)
    header = f"{'rank':>4}  {'participant':<24} {'SR':>6} {'AATS':>9} {'NSI':>7}"
    if args.stage == 2:
        header += f" {'score':>8}"
    print(header)
    for e in board:
        line = f"{e.rank:>4}  {e.participant:<24} {e.sr:>6.3f} {e.aats_kph:>9.3f} {e.nsi:>7.3f}"
        if args.stage == 2:
            line += f" {e.score:>8.4f}"
        print(line)
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_trajectory

    track = load_track(args.track) if args.track else None
    plot_trajectory(args.log, args.out, track=track)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="race", description="Desk-scale autonomous racing benchmark")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("gen-track", help="generate a named track file")
    p.add_argument("--spec", required=True, choices=GENERATOR_NAMES)
    p.add_argument("--seed", type=int, default=None,
                   help="default: RACE_SEED environment variable, else 0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_track)

    p = commands.add_parser("serve", help="serve wire-protocol sessions on a track")
    p.add_argument("--track", required=True)
    p.add_argument("--mode", choices=("practice", "evaluate"), default="evaluate")
    p.add_argument("--listen", default="127.0.0.1:0", help="host:port (0 = ephemeral)")
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--timeout", type=float, default=1.0, help="action timeout, seconds")
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--max-episode-time", type=float, default=600.0)
    p.set_defaults(func=cmd_serve)

    p = commands.add_parser("eval", help="run a staged evaluation")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--agent", required=True,
                   help=f"one of {BUILTIN_AGENTS}, or host:port to await a remote agent")
    p.add_argument("--track", required=True)
    p.add_argument("--practice-budget", type=float, default=3600.0,
                   help="stage 2 practice, simulated seconds")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--store", default=None, help="append the result to this file")
    p.add_argument("--participant", default="local")
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--max-episode-time", type=float, default=600.0)
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("leaderboard", help="rank stored submissions")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--cameras", choices=("single", "multi"), required=True)
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_leaderboard)

    p = commands.add_parser("plot", help="render a trajectory log to SVG")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--track", default=None, help="draw this track's boundaries")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TrackFormatError, HarnessError, ValueError, OSError) as exc:
        print(f"race {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
