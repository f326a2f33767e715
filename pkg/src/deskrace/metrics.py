"""Per-episode accounting and the four headline metrics.

A Tracker accumulates step records for one episode. The resulting
EpisodeResult carries everything the metrics need: success rate is completed
segments over total segments, average adjusted track speed (AATS) is distance
over time scaled to km/h, the number of safety infractions (NSI) counts
recorded infraction events, and episode duration (ED) is total elapsed time.
Because a failed segment respawns the vehicle at the start of the next one,
SR + NSI/total_segments = 1 holds exactly for every episode the environment
runs to termination.

Aggregation over repeated runs is the arithmetic mean of each metric, which
is why reports can carry fractional NSI.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

INFRACTION_KINDS = ("off_track", "collision", "no_progress")


@dataclass(frozen=True)
class Infraction:
    """A single safety infraction: what happened, where and when."""

    kind: str
    s: float
    t: float
    segment: int

    def __post_init__(self):
        if self.kind not in INFRACTION_KINDS:
            raise ValueError(f"kind '{self.kind}' not one of {INFRACTION_KINDS}")


@dataclass(frozen=True)
class EpisodeResult:
    completed_segments: int
    total_segments: int
    infractions: tuple
    total_distance: float
    total_time: float
    speed_trace: tuple = ()


@dataclass(frozen=True)
class MetricsReport:
    sr: float
    aats_kph: float
    nsi: float
    ed_s: float
    runs: int

    def to_json(self) -> str:
        return json.dumps({"sr": self.sr, "aats_kph": self.aats_kph, "nsi": self.nsi,
                           "ed_s": self.ed_s, "runs": self.runs}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        return cls(sr=doc["sr"], aats_kph=doc["aats_kph"], nsi=doc["nsi"],
                   ed_s=doc["ed_s"], runs=doc["runs"])


class Tracker:
    """Accumulates one episode. Create fresh per episode, finish() to seal."""

    def __init__(self, total_segments: int, t0: float = 0.0, v0: float = 0.0):
        if total_segments < 1:
            raise ValueError("total_segments must be at least 1")
        self.total_segments = int(total_segments)
        self.completed_segments = 0
        self.infractions = []
        self.total_distance = 0.0
        self.total_time = 0.0
        self.speed_trace = [(float(t0), float(v0))]
        self._last_t = float(t0)
        self._closed = False

    def record_step(self, state, ds: float, dt: float, segments_completed: int = 0,
                    infraction: Infraction | None = None):
        """Append one step: distance ds covered over dt, plus any events."""
        if self._closed:
            raise RuntimeError("record_step on a closed episode")
        if dt <= 0 or not math.isfinite(dt):
            raise ValueError(f"dt = {dt} must be positive")
        if state.t <= self._last_t:
            raise ValueError(f"out-of-order step time {state.t} after {self._last_t}")
        self._last_t = state.t
        self.total_distance += ds
        self.total_time += dt
        self.completed_segments += int(segments_completed)
        if infraction is not None:
            self.infractions.append(infraction)
        self.speed_trace.append((float(state.t), float(state.speed)))

    def finish(self) -> EpisodeResult:
        """Seal the episode and return its immutable result."""
        if self._closed:
            raise RuntimeError("episode already finished")
        self._closed = True
        return EpisodeResult(
            completed_segments=self.completed_segments,
            total_segments=self.total_segments,
            infractions=tuple(self.infractions),
            total_distance=self.total_distance,
            total_time=self.total_time,
            speed_trace=tuple(self.speed_trace),
        )


def success_rate(r: EpisodeResult) -> float:
    """Completed segments over total segments."""
    if r.total_segments <= 0:
        raise ValueError("total_segments must be positive")
    return r.completed_segments / r.total_segments


def aats(r: EpisodeResult) -> float:
    """Average adjusted track speed: total distance over total time, in km/h."""
    if r.total_time <= 0:
        raise ValueError("total_time must be positive to compute a speed")
    return r.total_distance / r.total_time * 3.6


def nsi(r: EpisodeResult) -> int:
    """Number of safety infractions in the episode."""
    return len(r.infractions)


def episode_duration(r: EpisodeResult) -> float:
    """Episode duration in seconds."""
    return r.total_time


def aggregate(results) -> MetricsReport:
    """Arithmetic mean of SR, AATS, NSI and ED across runs."""
    results = list(results)
    if not results:
        raise ValueError("aggregate needs at least one episode result")
    totals = {r.total_segments for r in results}
    if len(totals) != 1:
        raise ValueError(f"mismatched total_segments across runs: {sorted(totals)}")
    n = len(results)
    return MetricsReport(
        sr=sum(success_rate(r) for r in results) / n,
        aats_kph=sum(aats(r) for r in results) / n,
        nsi=sum(nsi(r) for r in results) / n,
        ed_s=sum(episode_duration(r) for r in results) / n,
        runs=n,
    )
