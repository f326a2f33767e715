"""Segmented racing environment.

The track is split into equal-length segments. The vehicle starts stationary
at the first segment boundary and earns one completion per boundary it
crosses cleanly. An infraction (leaving the track, hitting an obstacle, or
failing the progress watchdog) consumes the current segment and respawns the
vehicle, stationary, at the start of the next one; an infraction on the last
segment ends the episode. Every segment is therefore resolved exactly once,
as either a completion or an infraction.

Observations are binary occupancy rasters from body-mounted virtual cameras.
In privileged mode the observation additionally carries exact pose, the
track-frame projection, and a ground-truth drivability mask around the
vehicle; in camera_only mode none of that is exposed.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    DEFAULT_VEHICLE,
    Action,
    VehicleParams,
    VehicleState,
    step_dynamics,
    wheel_positions,
)
from .metrics import EpisodeResult, Infraction, Tracker
from .track import Track, TrackFrame, sample

OBSERVATION_MODES = ("privileged", "camera_only")

INFRACTION_REWARD = -10.0

# Raster orientation, shared with every consumer of camera frames:
# row i covers forward distance (i + 0.5) * resolution along the view axis,
# column j sits ((width - 1) / 2 - j) * resolution to the view's left.
# Row 0 is the nearest band, columns run left to right.


class EnvError(ValueError):
    """Invalid environment configuration or misuse of the step protocol."""


@dataclass(frozen=True)
class CameraCalibration:
    """Placement and raster geometry of one virtual camera."""

    view: str
    width: int = 64
    height: int = 64
    resolution: float = 0.5
    mount: tuple[float, float] = (0.0, 0.0)
    yaw: float = 0.0

    def __post_init__(self):
        if not self.view:
            raise EnvError("camera view name must be non-empty")
        if self.width < 16 or self.height < 16:
            raise EnvError(
                f"camera '{self.view}' grid must be at least 16x16 cells, "
                f"got {self.width}x{self.height}"
            )
        if not (np.isfinite(self.resolution) and self.resolution > 0):
            raise EnvError(f"camera '{self.view}' resolution must be positive")
        if len(self.mount) != 2 or not all(map(math.isfinite, self.mount)):
            raise EnvError(f"camera '{self.view}' mount offset must be a finite 2-vector")
        if not math.isfinite(self.yaw):
            raise EnvError(f"camera '{self.view}' yaw must be finite")

    def cell_offsets(self):
        """Vehicle-frame xy of every cell center, row-major (height*width, 2)."""
        i = np.arange(self.height, dtype=float)
        j = np.arange(self.width, dtype=float)
        fwd = (i + 0.5) * self.resolution
        lat = ((self.width - 1) / 2.0 - j) * self.resolution
        x_v = np.repeat(fwd, self.width)
        y_v = np.tile(lat, self.height)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = np.empty((self.height * self.width, 2))
        out[:, 0] = self.mount[0] + c * x_v - s * y_v
        out[:, 1] = self.mount[1] + s * x_v + c * y_v
        return out


DEFAULT_CALIBRATIONS = {
    "front": CameraCalibration("front", yaw=0.0),
    "left": CameraCalibration("left", yaw=0.9),
    "right": CameraCalibration("right", yaw=-0.9),
}

# Ground-truth mask used by privileged observations: a front-style raster whose
# mount sits half a grid behind the vehicle, so the 64x64 footprint is centered
# on the pose instead of extending forward.
GROUND_TRUTH_CALIBRATION = CameraCalibration("ground_truth", mount=(-16.0, 0.0), yaw=0.0)


@dataclass(frozen=True)
class Watchdog:
    """Minimum along-track progress (m) required per rolling window (s)."""

    min_progress: float = 1.0
    window: float = 10.0

    def __post_init__(self):
        if not (math.isfinite(self.min_progress) and self.min_progress > 0):
            raise EnvError("watchdog min_progress must be positive")
        if not (math.isfinite(self.window) and self.window > 0):
            raise EnvError("watchdog window must be positive")


@dataclass(frozen=True)
class EnvConfig:
    track: Track
    dt: float = 0.05
    n_segments: int | None = None
    observation_mode: str = "camera_only"
    cameras: tuple[str, ...] = ("front",)
    watchdog: Watchdog = Watchdog()
    max_episode_time: float | None = None
    vehicle: VehicleParams = DEFAULT_VEHICLE
    calibrations: tuple[CameraCalibration, ...] = tuple(DEFAULT_CALIBRATIONS.values())
    record_trajectory: bool = False


@dataclass(frozen=True)
class PrivilegedView:
    """Exact state the evaluation stage withholds from agents.

    The ground-truth mask is rendered on first access, not at step time, so
    privileged episodes that never read it pay nothing for it.
    """

    pose: tuple[float, float, float]  # x, y, heading
    frame: TrackFrame
    _render: object = field(repr=False, compare=False)
    _cache: list = field(default_factory=list, repr=False, compare=False)

    @property
    def mask(self):
        if not self._cache:
            self._cache.append(self._render())
        return self._cache[0]


@dataclass(frozen=True)
class Observation:
    speed: float
    cameras: dict[str, np.ndarray]
    privileged: PrivilegedView | None = None


@dataclass(frozen=True)
class StepInfo:
    segment: int
    segment_completed: bool
    infraction: Infraction | None
    s: float
    lap_completed: bool
    done_reason: str | None = None


@dataclass(frozen=True)
class StepOutcome:
    observation: Observation
    reward: float
    done: bool
    info: StepInfo


def make(config: EnvConfig, seed: int = 0) -> "RaceEnv":
    """Validate a config and build an environment from it.

    Raises EnvError naming every invalid field. The seed is folded into the
    environment for reproducibility bookkeeping; the simulation itself is
    deterministic given config and actions.
    """
    problems = []
    if not isinstance(config.track, Track):
        problems.append("track: expected a Track instance")
    if not (isinstance(config.dt, float) and 0.0 < config.dt <= 0.1):
        problems.append(f"dt: must be a float in (0, 0.1], got {config.dt!r}")
    if config.n_segments is not None and (
        not isinstance(config.n_segments, int) or config.n_segments < 1
    ):
        problems.append(f"n_segments: must be a positive int or None, got {config.n_segments!r}")
    if config.observation_mode not in OBSERVATION_MODES:
        problems.append(
            f"observation_mode: must be one of {OBSERVATION_MODES}, got {config.observation_mode!r}"
        )
    known = {c.view for c in config.calibrations}
    if len(known) != len(config.calibrations):
        problems.append("calibrations: duplicate view names")
    unknown = [v for v in config.cameras if v not in known]
    if unknown:
        problems.append(f"cameras: no calibration for views {unknown}")
    if len(set(config.cameras)) != len(config.cameras):
        problems.append("cameras: duplicate view names")
    if config.observation_mode == "camera_only" and not config.cameras:
        problems.append("cameras: camera_only mode requires at least one camera")
    if config.max_episode_time is not None and not (
        math.isfinite(config.max_episode_time) and config.max_episode_time > 0
    ):
        problems.append(f"max_episode_time: must be positive or None, got {config.max_episode_time!r}")
    if problems:
        raise EnvError("invalid environment config: " + "; ".join(problems))
    return RaceEnv(config, seed)


class RaceEnv:
    """Stepped simulation of one vehicle on one track. Build via make()."""

    def __init__(self, config: EnvConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        track = config.track
        if config.n_segments is not None and config.n_segments != track.n_segments:
            from .track import with_segments

            track = with_segments(track, config.n_segments)
        self.track = track
        self._calibs = {c.view: c for c in config.calibrations}
        self._grids = {}  # view -> cached cell offsets
        self._state = None
        self._tracker = None
        self._done = True
        self._result = None
        self._rows = []

    # -- episode control -------------------------------------------------

    def reset(self) -> Observation:
        """Place the vehicle stationary at the first segment start."""
        start = self.track.segment_starts[0]
        c = sample(self.track, start)
        self._state = VehicleState(
            x=c.point[0], y=c.point[1], heading=c.heading, speed=0.0, steer=0.0, t=0.0
        )
        self._tracker = Tracker(self.track.n_segments, t0=0.0, v0=0.0)
        self._segment = 0
        self._seg_progress = 0.0
        self._cum_progress = 0.0
        self._s = start
        self._d = 0.0
        self._watch = deque([(0.0, 0.0)])
        self._done = False
        self._result = None
        self._rows = []
        self._log(None, None)
        return self._observe()

    def step(self, action: Action) -> StepOutcome:
        if self._state is None:
            raise EnvError("step before reset")
        if self._done:
            raise EnvError("step after episode done")

        prev = self._state
        state = step_dynamics(prev, action, self.config.dt, self.config.vehicle)
        self._state = state

        # Project position and all four wheels in one batch; the wheels feed
        # the same drivability rule the cameras render with.
        pts = np.empty((5, 2))
        pts[0] = (state.x, state.y)
        pts[1:] = wheel_positions(state, self.config.vehicle)
        s_arr, d_arr, dist, clamped = self.track.project_many(pts)
        drivable = self.track.drivable_rule(pts, s_arr, d_arr, dist, clamped)

        s_new = s_arr[0]
        ds = self._delta_s(self._s, s_new)
        self._s = s_new
        self._d = float(d_arr[0])
        self._cum_progress += ds
        self._seg_progress += ds
        self._watch.append((state.t, self._cum_progress))

        # Trapezoid odometer: path length from the speed trace, decoupled from
        # along-track progress so backtracking still accrues distance.
        ds_path = 0.5 * (prev.speed + state.speed) * self.config.dt

        kind = self._classify(drivable[1:])
        reward: float
        done_reason = None
        if kind is not None:
            infraction = Infraction(kind=kind, s=s_new, t=state.t, segment=self._segment)
            self._tracker.record_step(state, ds_path, self.config.dt, infraction=infraction)
            reward = INFRACTION_REWARD
            self._log(action, kind)
            if self._segment >= self.track.n_segments - 1:
                self._done = True
                done_reason = "final_segment_infraction"
            else:
                self._respawn(self._segment + 1)
            info = StepInfo(
                segment=self._segment,
                segment_completed=False,
                infraction=infraction,
                s=s_new,
                lap_completed=False,
                done_reason=done_reason,
            )
        else:
            completed = 0
            lap = False
            while (
                not self._done
                and self._seg_progress >= self._segment_length(self._segment) - 1e-12
            ):
                self._seg_progress -= self._segment_length(self._segment)
                completed += 1
                if self._segment >= self.track.n_segments - 1:
                    self._done = True
                    lap = True
                    done_reason = "lap_complete"
                else:
                    self._segment += 1
            self._tracker.record_step(
                state, ds_path, self.config.dt, segments_completed=completed
            )
            reward = ds
            self._log(action, None)
            info = StepInfo(
                segment=self._segment,
                segment_completed=completed > 0,
                infraction=None,
                s=s_new,
                lap_completed=lap,
                done_reason=done_reason,
            )

        if (
            not self._done
            and self.config.max_episode_time is not None
            and state.t >= self.config.max_episode_time - 1e-9
        ):
            self._done = True
            info = replace(info, done_reason="timeout")

        if self._done:
            self._result = self._tracker.finish()
        return StepOutcome(self._observe(), reward, self._done, info)

    def _respawn(self, seg: int):
        s0 = self.track.segment_starts[seg]
        c = sample(self.track, s0)
        t = self._state.t
        self._state = VehicleState(
            x=c.point[0], y=c.point[1], heading=c.heading, speed=0.0, steer=0.0, t=t
        )
        self._segment = seg
        self._seg_progress = 0.0
        self._s = s0
        self._d = 0.0
        self._watch = deque([(t, self._cum_progress)])

    def _segment_length(self, seg: int) -> float:
        starts = self.track.segment_starts
        if seg + 1 < len(starts):
            return starts[seg + 1] - starts[seg]
        return self.track.total_length - starts[seg]

    def _delta_s(self, s_old: float, s_new: float) -> float:
        ds = s_new - s_old
        if self.track.closed:
            half = self.track.total_length / 2.0
            while ds > half:
                ds -= self.track.total_length
            while ds < -half:
                ds += self.track.total_length
        return ds

    # -- infraction detection --------------------------------------------

    def _classify(self, wheels_ok) -> str | None:
        # Fixed priority: leaving the track trumps contact, contact trumps
        # the watchdog, so one step reports at most one infraction.
        if int(np.count_nonzero(~wheels_ok)) >= 2:
            return "off_track"
        if self._footprint_hits_obstacle():
            return "collision"
        if self._watchdog_fired():
            return "no_progress"
        return None

    def _footprint_hits_obstacle(self) -> bool:
        obs = self.track.obstacles
        if len(obs) == 0:
            return False
        st = self._state
        p = self.config.vehicle
        hl, hw = p.footprint_length / 2.0, p.footprint_width / 2.0
        cos_h, sin_h = math.cos(st.heading), math.sin(st.heading)
        for cx, cy, r in obs:
            # Disc center in body frame, then point-rectangle distance.
            dx, dy = cx - st.x, cy - st.y
            bx = cos_h * dx + sin_h * dy
            by = -sin_h * dx + cos_h * dy
            qx = min(max(bx, -hl), hl)
            qy = min(max(by, -hw), hw)
            if (bx - qx) ** 2 + (by - qy) ** 2 <= r * r:
                return True
        return False

    def _watchdog_fired(self) -> bool:
        wd = self.config.watchdog
        t = self._state.t
        while len(self._watch) >= 2 and self._watch[1][0] <= t - wd.window:
            self._watch.popleft()
        t0, p0 = self._watch[0]
        return t - t0 >= wd.window - 1e-9 and self._cum_progress - p0 < wd.min_progress

    def detect_infraction(self) -> str | None:
        """Classify the current state without advancing the simulation."""
        if self._state is None:
            raise EnvError("detect_infraction before reset")
        pts = np.asarray(wheel_positions(self._state, self.config.vehicle))
        ok = self.track.drivable_mask(pts)
        return self._classify(ok)

    # -- observations ------------------------------------------------------

    def render_camera(self, view: str) -> np.ndarray:
        """Binary drivability raster for one configured view at the current pose."""
        if self._state is None:
            raise EnvError("render_camera before reset")
        calib = self._calibs.get(view)
        if calib is None:
            raise EnvError(f"no calibration for view {view!r}")
        return self._render(calib)

    def _render(self, calib: CameraCalibration) -> np.ndarray:
        grid = self._grids.get(calib.view)
        if grid is None:
            grid = calib.cell_offsets()
            self._grids[calib.view] = grid
        st = self._state
        c, s = math.cos(st.heading), math.sin(st.heading)
        world = np.empty_like(grid)
        world[:, 0] = st.x + c * grid[:, 0] - s * grid[:, 1]
        world[:, 1] = st.y + s * grid[:, 0] + c * grid[:, 1]
        mask = self.track.drivable_mask(world)
        return mask.reshape(calib.height, calib.width).astype(np.uint8)

    def _observe(self) -> Observation:
        st = self._state
        cams = {v: self._render(self._calibs[v]) for v in self.config.cameras}
        if self.config.observation_mode == "privileged":
            priv = PrivilegedView(
                pose=(st.x, st.y, st.heading),
                frame=TrackFrame(s=self._s, d=self._d),
                _render=lambda: self._render(GROUND_TRUTH_CALIBRATION),
            )
        else:
            priv = None
        return Observation(speed=st.speed, cameras=cams, privileged=priv)

    # -- results and logging ----------------------------------------------

    @property
    def done(self) -> bool:
        return self._done

    @property
    def state(self) -> VehicleState:
        return self._state

    def set_state(self, state: VehicleState):
        """Teleport the vehicle. Scenario and test hook, not part of racing."""
        if self._state is None:
            raise EnvError("set_state before reset")
        if state.t < self._state.t:
            raise EnvError("set_state must not rewind time")
        self._state = state
        s_arr, d_arr, _, _ = self.track.project_many([[state.x, state.y]])
        self._s = float(s_arr[0])
        self._d = float(d_arr[0])

    def episode_result(self) -> EpisodeResult:
        if self._result is None:
            raise EnvError("episode_result before the episode is done")
        return self._result

    def _log(self, action: Action | None, infraction: str | None):
        if not self.config.record_trajectory:
            return
        st = self._state
        self._rows.append(
            (
                st.t,
                st.x,
                st.y,
                st.heading,
                st.speed,
                st.steer,
                action.steering if action else 0.0,
                action.acceleration if action else 0.0,
                self._segment,
                infraction or "",
            )
        )

    def write_trajectory(self, path):
        """Dump the recorded trajectory as CSV.

        Columns: t, x, y, heading, speed, steer, action_steering,
        action_acceleration, segment, infraction. One row per step plus the
        reset pose; infraction is empty on clean rows.
        """
        if not self.config.record_trajectory:
            raise EnvError("trajectory recording was not enabled in the config")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                (
                    "t",
                    "x",
                    "y",
                    "heading",
                    "speed",
                    "steer",
                    "action_steering",
                    "action_acceleration",
                    "segment",
                    "infraction",
                )
            )
            w.writerows(self._rows)
