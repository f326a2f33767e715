"""Stage evaluation: running submissions, scoring, ranking, persistence.

Stage 1 runs evaluation episodes on the training track. Stage 2 first grants
a practice phase with privileged observations, metered in simulated seconds,
then scores camera-only evaluation episodes; the submission's NSI is the
count of infractions accumulated during practice.

Agents are either in-process objects (anything with an ``act(obs)`` method)
or remote: pass a ``(host, port)`` pair or a listening socket and the harness
serves the wire protocol there, waiting for the agent to connect.
"""

import dataclasses
import json
import logging
import socket
import statistics
from dataclasses import dataclass

from .env import EnvConfig, make
from .metrics import EpisodeResult, Infraction, MetricsReport, aggregate
from .planners import MpcAgent, PurePursuitAgent, RandomAgent
from .protocol import SessionConfig, serve

log = logging.getLogger(__name__)

STAGES = (1, 2)
CAMERA_CONFIGS = ("single", "multi")
DEFAULT_PRACTICE_BUDGET = 3600.0  # simulated seconds

_EMPTY_REPORT = MetricsReport(sr=0.0, aats_kph=0.0, nsi=0.0, ed_s=0.0, runs=0)


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class SubmissionResult:
    participant: str
    stage: int
    camera_config: str
    episodes: tuple              # EpisodeResult per evaluation run
    report: MetricsReport
    practice_nsi: float | None = None  # stage 2 only: practice-phase infraction count
    entries: int = 1
    valid: bool = True

    def __post_init__(self):
        if self.stage not in STAGES:
            raise HarnessError(f"stage {self.stage} not one of {STAGES}")
        if self.camera_config not in CAMERA_CONFIGS:
            raise HarnessError(
                f"camera_config '{self.camera_config}' not one of {CAMERA_CONFIGS}")
        if (self.stage == 2) != (self.practice_nsi is not None):
            raise HarnessError("practice_nsi is set exactly for stage 2")

    @property
    def nsi(self) -> float:
        return self.report.nsi


@dataclass(frozen=True)
class LeaderboardEntry:
    rank: int
    participant: str
    sr: float
    aats_kph: float
    nsi: float
    score: float | None = None   # stage 2 only


def camera_config(cameras) -> str:
    return "single" if set(cameras) == {"front"} else "multi"


def make_agent(name: str, seed: int = 0):
    """Built-in agents by CLI name."""
    if name == "random":
        return RandomAgent(seed)
    if name == "pure_pursuit":
        return PurePursuitAgent()
    if name == "mpc":
        return MpcAgent()
    raise HarnessError(f"unknown agent '{name}', expected random, pure_pursuit or mpc")


def _is_remote(agent) -> bool:
    return isinstance(agent, (tuple, socket.socket)) and not hasattr(agent, "act")


def _env(track, cameras, mode, dt, max_episode_time):
    return make(EnvConfig(
        track=track, dt=dt, cameras=tuple(cameras),
        observation_mode="privileged" if mode == "practice" else "camera_only",
        max_episode_time=max_episode_time,
    ))


def _run_episode(env, agent) -> EpisodeResult:
    if hasattr(agent, "reset"):
        agent.reset()
    obs = env.reset()
    done = False
    while not done:
        out = env.step(agent.act(obs))
        obs, done = out.observation, out.done
    return env.episode_result()


def _aggregate_or_empty(results):
    return aggregate(results) if results else _EMPTY_REPORT


def run_stage1(agent, track, runs: int = 3, participant: str = "local",
               dt: float = 0.05, max_episode_time: float = 600.0,
               action_timeout: float = 1.0) -> SubmissionResult:
    """Evaluate `runs` episodes on the training track, evaluate mode."""
    if runs < 1:
        raise HarnessError("runs must be at least 1")
    if _is_remote(agent):
        cfg = SessionConfig(mode="evaluate", track=track.id, episodes=runs,
                            action_timeout=action_timeout)
        outcome = serve(lambda cams, mode: _env(track, cams, mode, dt, max_episode_time),
                        agent, cfg)[0]
        results, cams = list(outcome.results), outcome.state.cameras or ("front",)
        valid = not outcome.aborted and len(results) == runs
    else:
        cams = getattr(agent, "cameras", ("front",))
        env = _env(track, cams, "evaluate", dt, max_episode_time)
        results = [_run_episode(env, agent) for _ in range(runs)]
        valid = True
    return SubmissionResult(
        participant=participant, stage=1, camera_config=camera_config(cams),
        episodes=tuple(results), report=_aggregate_or_empty(results), valid=valid)


def run_stage2(agent, track, practice_budget: float = DEFAULT_PRACTICE_BUDGET,
               runs: int = 3, participant: str = "local", dt: float = 0.05,
               max_episode_time: float = 600.0,
               action_timeout: float = 1.0) -> SubmissionResult:
    """Practice with privileged observations, then camera-only evaluation.

    Practice runs episode after episode until the simulated-time budget is
    spent (each episode is capped at the remaining budget); every infraction
    in that phase counts toward practice_nsi, which becomes the submission's
    NSI. Budget 0 skips practice entirely.
    """
    if runs < 1:
        raise HarnessError("runs must be at least 1")
    if practice_budget < 0:
        raise HarnessError("practice_budget cannot be negative")

    if _is_remote(agent):
        return _run_stage2_remote(agent, track, practice_budget, runs, participant,
                                  dt, max_episode_time, action_timeout)

    cams = getattr(agent, "cameras", ("front",))
    practice_nsi = 0
    elapsed = 0.0
    while elapsed < practice_budget and practice_budget - elapsed >= dt:
        cap = min(max_episode_time, practice_budget - elapsed)
        env = _env(track, cams, "practice", dt, cap)
        r = _run_episode(env, agent)
        practice_nsi += len(r.infractions)
        elapsed += r.total_time

    env = _env(track, cams, "evaluate", dt, max_episode_time)
    results = [_run_episode(env, agent) for _ in range(runs)]
    report = dataclasses.replace(aggregate(results), nsi=float(practice_nsi))
    return SubmissionResult(
        participant=participant, stage=2, camera_config=camera_config(cams),
        episodes=tuple(results), report=report, practice_nsi=practice_nsi)


def _run_stage2_remote(endpoint, track, practice_budget, runs, participant,
                       dt, max_episode_time, action_timeout):
    # two sessions on one rendezvous: the agent connects for practice, then
    # reconnects for evaluation; the final practice episode may overrun the
    # budget since a live session cannot shrink its episode cap
    if isinstance(endpoint, (tuple, list)):
        listener = socket.create_server((endpoint[0], int(endpoint[1])))
        own = True
    else:
        listener, own = endpoint, False
    factory = lambda cams, mode: _env(track, cams, mode, dt, max_episode_time)
    try:
        practice_nsi = 0
        aborted = False
        if practice_budget > 0:
            cfg = SessionConfig(mode="practice", track=track.id,
                                action_timeout=action_timeout,
                                budget_s=practice_budget)
            outcome = serve(factory, listener, cfg)[0]
            practice_nsi = sum(len(r.infractions) for r in outcome.results)
            aborted = outcome.aborted
        cfg = SessionConfig(mode="evaluate", track=track.id, episodes=runs,
                            action_timeout=action_timeout)
        outcome = serve(factory, listener, cfg)[0]
    finally:
        if own:
            listener.close()
    results = list(outcome.results)
    cams = outcome.state.cameras or ("front",)
    report = dataclasses.replace(_aggregate_or_empty(results), nsi=float(practice_nsi))
    return SubmissionResult(
        participant=participant, stage=2, camera_config=camera_config(cams),
        episodes=tuple(results), report=report, practice_nsi=practice_nsi,
        valid=not aborted and not outcome.aborted and len(results) == runs)


# -- ranking ---------------------------------------------------------------

def _check_cohort(entries, stage):
    entries = list(entries)
    if any(e.stage != stage for e in entries):
        raise HarnessError(f"cohort mixes stages, expected all stage {stage}")
    if len({e.camera_config for e in entries}) > 1:
        raise HarnessError("cohort mixes camera configurations")
    return entries


def rank_stage1(entries):
    """Descending SR, ties by descending AATS; residual ties keep input order."""
    entries = _check_cohort(entries, 1)
    order = sorted(entries, key=lambda e: (-e.report.sr, -e.report.aats_kph))
    return [LeaderboardEntry(rank=i + 1, participant=e.participant, sr=e.report.sr,
                             aats_kph=e.report.aats_kph, nsi=e.report.nsi)
            for i, e in enumerate(order)]


def stage2_score(entry, cohort) -> float:
    """Speed ratio plus clamped infraction term, scored against the cohort.

    score = AATS/max(AATS) + max(1 - NSI/median(NSI), -1). A zero median
    degenerates the second term; it becomes +1 for a clean entry and -1
    otherwise, preserving the ordering intent.
    """
    cohort = list(cohort)
    if not cohort:
        raise HarnessError("cohort is empty")
    if entry not in cohort:
        raise HarnessError("entry is not part of the cohort")
    max_aats = max(e.report.aats_kph for e in cohort)
    if max_aats <= 0:
        raise HarnessError("cohort max AATS is zero, scores undefined")
    first = entry.report.aats_kph / max_aats
    median_nsi = statistics.median(e.report.nsi for e in cohort)
    if median_nsi == 0:
        second = 1.0 if entry.report.nsi == 0 else -1.0
    else:
        second = max(1.0 - entry.report.nsi / median_nsi, -1.0)
    return first + second


def rank_stage2(entries):
    """Descending SR, ties by descending weighted score."""
    entries = _check_cohort(entries, 2)
    scores = {id(e): stage2_score(e, entries) for e in entries} if entries else {}
    order = sorted(entries, key=lambda e: (-e.report.sr, -scores[id(e)]))
    return [LeaderboardEntry(rank=i + 1, participant=e.participant, sr=e.report.sr,
                             aats_kph=e.report.aats_kph, nsi=e.report.nsi,
                             score=scores[id(e)])
            for i, e in enumerate(order)]


# -- persistence -------------------------------------------------------------

def _episode_record(r: EpisodeResult) -> dict:
    return {
        "completed_segments": r.completed_segments,
        "total_segments": r.total_segments,
        "infractions": [{"kind": i.kind, "s": i.s, "t": i.t, "segment": i.segment}
                        for i in r.infractions],
        "total_distance": r.total_distance,
        "total_time": r.total_time,
        "speed_trace": [[t, v] for t, v in r.speed_trace],
    }


def _episode_from_record(doc) -> EpisodeResult:
    return EpisodeResult(
        completed_segments=int(doc["completed_segments"]),
        total_segments=int(doc["total_segments"]),
        infractions=tuple(Infraction(kind=i["kind"], s=i["s"], t=i["t"],
                                     segment=i["segment"])
                          for i in doc["infractions"]),
        total_distance=doc["total_distance"],
        total_time=doc["total_time"],
        speed_trace=tuple((t, v) for t, v in doc["speed_trace"]),
    )


def submission_record(sub: SubmissionResult) -> str:
    doc = {
        "participant": sub.participant,
        "stage": sub.stage,
        "camera_config": sub.camera_config,
        "episodes": [_episode_record(r) for r in sub.episodes],
        "report": json.loads(sub.report.to_json()),
        "practice_nsi": sub.practice_nsi,
        "entries": sub.entries,
        "valid": sub.valid,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def submission_from_record(line: str) -> SubmissionResult:
    doc = json.loads(line)
    return SubmissionResult(
        participant=doc["participant"],
        stage=int(doc["stage"]),
        camera_config=doc["camera_config"],
        episodes=tuple(_episode_from_record(r) for r in doc["episodes"]),
        report=MetricsReport.from_json(json.dumps(doc["report"])),
        practice_nsi=doc["practice_nsi"],
        entries=int(doc["entries"]),
        valid=bool(doc["valid"]),
    )


def persist(path, sub: SubmissionResult) -> None:
    """Append one submission to the line-delimited results store."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(submission_record(sub) + "\n")


def load_results(path):
    """Read a results store. Returns (submissions, skipped-line count)."""
    results, skipped = [], 0
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        return [], 0
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                results.append(submission_from_record(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                skipped += 1
                log.warning("skipping corrupt record at %s:%d (%s)", path, lineno, exc)
    return results, skipped


def leaderboards(results):
    """Rank submissions into one board per (stage, camera_config)."""
    groups = {}
    for sub in results:
        groups.setdefault((sub.stage, sub.camera_config), []).append(sub)
    boards = {}
    for key in sorted(groups):
        stage, _cams = key
        ranker = rank_stage1 if stage == 1 else rank_stage2
        boards[key] = ranker(groups[key])
    return boards
