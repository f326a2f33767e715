"""Desk-scale autonomous racing benchmark.

Segment-based safety accounting, camera-surrogate observations, baseline
racers, a newline-JSON agent protocol and a two-stage evaluation harness.
"""

from .dynamics import Action, VehicleParams, VehicleState, step_dynamics
from .env import EnvConfig, RaceEnv, Watchdog, make
from .harness import (
    SubmissionResult,
    leaderboards,
    load_results,
    persist,
    rank_stage1,
    rank_stage2,
    run_stage1,
    run_stage2,
)
from .metrics import EpisodeResult, MetricsReport, aggregate
from .planners import MpcAgent, PurePursuitAgent, RandomAgent
from .protocol import SessionConfig, serve
from .track import GeneratorSpec, Track, generate_track, load_track, save_track

__version__ = "0.1.0"

__all__ = [
    "Action",
    "EnvConfig",
    "EpisodeResult",
    "GeneratorSpec",
    "MetricsReport",
    "MpcAgent",
    "PurePursuitAgent",
    "RaceEnv",
    "RandomAgent",
    "SessionConfig",
    "SubmissionResult",
    "Track",
    "VehicleParams",
    "VehicleState",
    "Watchdog",
    "aggregate",
    "generate_track",
    "leaderboards",
    "load_results",
    "load_track",
    "make",
    "persist",
    "rank_stage1",
    "rank_stage2",
    "run_stage1",
    "run_stage2",
    "save_track",
    "serve",
    "step_dynamics",
]
