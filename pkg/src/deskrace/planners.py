"""Baseline driving policies: pure pursuit and a lattice MPC.

The MPC follows the published recipe shape: plan a path inside the perceived
track limits, then assign speeds along it so lateral acceleration stays under
a_lat_max and the vehicle can always brake to a minimum cornering speed by
the end of the horizon. The path search is a dynamic program over lateral
offsets at fixed forward stations, which is deterministic and needs no
external solver; a QP could replace it behind the same interface.

Planners hold no mutable state between calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import polynomial as P

from .dynamics import DEFAULT_VEHICLE, Action, VehicleParams, VehicleState
from .perception import (
    EmptySceneError,
    PerceptionError,
    TrackLimits,
    centerline_curvature,
    extract_boundary_points,
    fit_cubic,
    track_limits,
)

ZONE_LABELS = ("straight", "sweeper", "hairpin")

# zone thresholds on max |curvature| over the horizon, 1/m
STRAIGHT_BELOW = 0.004
HAIRPIN_ABOVE = 0.025


class PlanningError(ValueError):
    """Planner inputs that violate the operation contract."""


@dataclass(frozen=True)
class Zone:
    label: str

    def __post_init__(self):
        if self.label not in ZONE_LABELS:
            raise PlanningError(f"zone label must be one of {ZONE_LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class MpcParams:
    n: int = 30                      # horizon stations beyond the vehicle
    ds: float = 1.0                  # spatial step, m
    a_lat_max: float = 2.0
    v_corner_min: float = 10.0
    a_accel_max: float = 4.0
    a_brake_max: float = 8.0
    margin: float = 0.8              # corridor shrink per side, m
    kappa_floor: float = 1e-4        # caps straight-line speed, avoids 1/0
    lattice_points: int = 11         # lateral samples per station, odd
    offset_weight: float = 2e-3      # pull toward the corridor midline
    curvature_peek: float = 15.0     # speed caps honor peak |curvature| this far ahead
    zone_presets: dict = field(default_factory=dict)  # label -> (a_lat_max, margin)

    def __post_init__(self):
        if self.n < 2:
            raise PlanningError("horizon must span at least 2 stations")
        positive = (
            ("ds", self.ds),
            ("a_lat_max", self.a_lat_max),
            ("v_corner_min", self.v_corner_min),
            ("a_accel_max", self.a_accel_max),
            ("a_brake_max", self.a_brake_max),
            ("margin", self.margin),
            ("kappa_floor", self.kappa_floor),
            ("offset_weight", self.offset_weight),
        )
        for name, v in positive:
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise PlanningError(f"{name} must be positive, got {v!r}")
        if not (math.isfinite(self.curvature_peek) and self.curvature_peek >= 0):
            raise PlanningError(f"curvature_peek must be non-negative, got {self.curvature_peek!r}")
        if self.lattice_points < 3 or self.lattice_points % 2 == 0:
            raise PlanningError("lattice_points must be odd and at least 3")
        for label in self.zone_presets:
            if label not in ZONE_LABELS:
                raise PlanningError(f"unknown zone label {label!r} in presets")

    def for_zone(self, label: str) -> "MpcParams":
        preset = self.zone_presets.get(label)
        if preset is None:
            return self
        a_lat, margin = preset
        return replace(self, a_lat_max=a_lat, margin=margin)


@dataclass(frozen=True)
class PlannedTrajectory:
    """Horizon states (x, y, v, delta) in the vehicle frame at plan time."""

    states: tuple[tuple[float, float, float, float], ...]
    feasible: bool = True


def speed_profile(kappa, params: MpcParams, v0: float):
    """Speeds along a curvature profile sampled at uniform spacing.

    Pointwise the speed respects the lateral-acceleration cap
    sqrt(a_lat_max / |kappa|); a forward pass limits gain from v0 by
    a_accel_max, the terminal speed is held to v_corner_min so excess speed
    is never carried past the horizon, and a backward pass guarantees the
    braking needed between consecutive samples never exceeds a_brake_max.
    """
    if len(kappa) == 0:
        raise PlanningError("speed_profile needs at least one curvature sample")
    if not (math.isfinite(v0) and v0 >= 0):
        raise PlanningError(f"v0 must be a non-negative finite speed, got {v0!r}")
    arr = np.asarray(kappa, dtype=float)
    xs, ks = arr[:, 0], arr[:, 1]
    if len(xs) > 1:
        steps = np.diff(xs)
        if steps.min() <= 0 or steps.max() - steps.min() > 1e-6:
            raise PlanningError("curvature samples must be uniformly spaced and increasing")
        ds = float(steps[0])
    else:
        ds = params.ds

    v = np.sqrt(params.a_lat_max / np.maximum(np.abs(ks), params.kappa_floor))
    v[0] = min(v[0], v0)
    for i in range(len(v) - 1):
        v[i + 1] = min(v[i + 1], math.sqrt(v[i] ** 2 + 2 * params.a_accel_max * ds))
    v[-1] = min(v[-1], params.v_corner_min)
    for i in range(len(v) - 2, -1, -1):
        v[i] = min(v[i], math.sqrt(v[i + 1] ** 2 + 2 * params.a_brake_max * ds))
    return [float(s) for s in v]


def _corridor(limits: TrackLimits, xs, margin):
    x, yl, yr = limits.arrays()
    lo = np.interp(xs, x, yr) + margin
    hi = np.interp(xs, x, yl) - margin
    return lo, hi


def _path_curvature(xs, ys):
    # quartic: a cubic systematically under-reads constant curvature at the
    # near end of the horizon, which the speed profile is most sensitive to
    c = P.polyfit(xs, ys, min(4, len(xs) - 1))
    d1 = P.polyval(xs, P.polyder(c))
    d2 = P.polyval(xs, P.polyder(c, 2))
    return d2 / (1.0 + d1 * d1) ** 1.5


def mpc_plan(
    state: VehicleState,
    limits: TrackLimits,
    params: MpcParams,
    vehicle: VehicleParams = DEFAULT_VEHICLE,
):
    """One planning step: a horizon trajectory and the action toward it.

    The path minimizes summed squared curvature plus a small pull toward the
    corridor midline, over a lateral lattice inside the margin-shrunk limits.
    A horizon shorter than n stations is planned as far as the limits reach.
    A corridor pinched below 2 x margin has no legal lattice anywhere to put
    the vehicle, so the plan degenerates to a safe stop and says so.
    """
    if not math.isfinite(state.speed):
        raise PlanningError("state speed must be finite")
    x_max = limits.samples[-1][0]
    n = min(params.n, int(math.floor(x_max / params.ds + 1e-9)))
    if n < 2:
        return PlannedTrajectory(states=(), feasible=False), Action(0.0, -1.0)

    xs = np.arange(n + 1) * params.ds
    lo, hi = _corridor(limits, xs, params.margin)
    if (lo >= hi).any():
        return PlannedTrajectory(states=(), feasible=False), Action(0.0, -1.0)

    eps = 1e-3
    m = params.lattice_points
    # station 0 is the vehicle itself, clamped into the corridor if need be
    y0 = min(max(0.0, lo[0] + eps), hi[0] - eps)
    lattices = [np.array([y0])]
    for i in range(1, n + 1):
        lattices.append(np.linspace(lo[i] + eps, hi[i] - eps, m))
    mids = (lo + hi) / 2.0

    w = params.offset_weight
    inv_ds2 = 1.0 / (params.ds * params.ds)

    # DP over (previous offset, current offset) pairs; the curvature of the
    # second difference needs two predecessors. A virtual station behind the
    # vehicle at y0 makes the first transition penalize initial slope.
    ys1 = lattices[1]
    cost = ((ys1 - 2 * y0 + y0) * inv_ds2) ** 2 + w * (ys1 - mids[1]) ** 2
    value = cost[np.newaxis, :]  # (len(lat[0]), len(lat[1]))
    parents = []
    for i in range(2, n + 1):
        prev, cur = lattices[i - 1], lattices[i]
        before = lattices[i - 2]
        bend = (cur[np.newaxis, np.newaxis, :]
                - 2 * prev[np.newaxis, :, np.newaxis]
                + before[:, np.newaxis, np.newaxis]) * inv_ds2
        total = value[:, :, np.newaxis] + bend * bend
        best = np.argmin(total, axis=0)
        value = np.take_along_axis(total, best[np.newaxis], axis=0)[0]
        value = value + w * (cur - mids[i]) ** 2
        parents.append(best)

    jp, j = np.unravel_index(np.argmin(value), value.shape)
    idx = [int(j), int(jp)]
    for best in reversed(parents):
        idx.append(int(best[idx[-1], idx[-2]]))
    idx.reverse()  # now one lattice index per station, 0..n
    ys = np.array([lattices[i][idx[i]] for i in range(n + 1)])

    ks = _path_curvature(xs, ys)
    # The boundary fits under-read curvature right in front of the vehicle
    # (cubic end effect), so the speed law sees the peak |curvature| within
    # curvature_peek ahead of each station rather than the raw local value.
    k_env = np.abs(ks).copy()
    steps_ahead = int(round(params.curvature_peek / params.ds))
    for i in range(len(k_env)):
        k_env[i] = np.max(np.abs(ks[i : i + steps_ahead + 1]))
    profile = speed_profile(list(zip(xs, k_env)), params, v0=state.speed)
    deltas = np.clip(np.arctan(vehicle.wheelbase * ks), -vehicle.max_steer, vehicle.max_steer)
    states = tuple(
        (float(a), float(b), float(v), float(d)) for a, b, v, d in zip(xs, ys, profile, deltas)
    )

    # steering: pursue a point on the planned path about 0.4 s of travel out
    look = min(max(0.4 * max(state.speed, 1.0), 3.0), 12.0)
    gx = min(look, float(xs[-1]))
    gy = float(np.interp(gx, xs, ys))
    steering = _pursuit_steer(gx, gy, vehicle)

    # acceleration: track the next station's planned speed; the backward
    # pass already folded every farther constraint into it
    a_des = (profile[1] ** 2 - state.speed**2) / (2 * params.ds)
    if a_des >= 0:
        accel = min(a_des / vehicle.max_accel, 1.0)
    else:
        accel = max(a_des / vehicle.max_brake, -1.0)

    return PlannedTrajectory(states=states), Action(steering, accel)


def _pursuit_steer(gx: float, gy: float, vehicle: VehicleParams) -> float:
    dist = math.hypot(gx, gy)
    if dist < 1e-9:
        return 0.0
    alpha = math.atan2(gy, gx)
    delta = math.atan(2 * vehicle.wheelbase * math.sin(alpha) / dist)
    delta = min(max(delta, -vehicle.max_steer), vehicle.max_steer)
    return delta / vehicle.max_steer


def zone_classify(
    limits: TrackLimits,
    straight_below: float = STRAIGHT_BELOW,
    hairpin_above: float = HAIRPIN_ABOVE,
) -> Zone:
    """Label the horizon by its sharpest curvature."""
    peak = max(abs(k) for _, k in centerline_curvature(limits))
    if peak < straight_below:
        return Zone("straight")
    if peak > hairpin_above:
        return Zone("hairpin")
    return Zone("sweeper")


def pure_pursuit(
    state: VehicleState,
    limits: TrackLimits,
    lookahead: float,
    target_speed: float = 10.0,
    vehicle: VehicleParams = DEFAULT_VEHICLE,
) -> Action:
    """Chase the road midline at a fixed lookahead and a conservative speed.

    A lookahead reaching past the perceived limits shrinks to the horizon
    instead of failing; losing sight of the road entirely is the caller's
    problem (the perception layer raises before this point).
    """
    if lookahead <= 0:
        raise PlanningError("lookahead must be positive")
    x, yl, yr = limits.arrays()
    gx = min(lookahead, float(x[-1]))
    gy = float(np.interp(gx, x, (yl + yr) / 2.0))
    steering = _pursuit_steer(gx, gy, vehicle)
    accel = min(max(0.5 * (target_speed - state.speed), -1.0), 1.0)
    return Action(steering, accel)


def trajectory_text(traj: PlannedTrajectory) -> str:
    """Comma-separated dump of a plan, for the plot tooling."""
    lines = ["x,y,v,delta"]
    for x, y, v, d in traj.states:
        lines.append(f"{x:.3f},{y:.3f},{v:.3f},{d:.5f}")
    return "\n".join(lines) + "\n"


# -- observation-driven agents ---------------------------------------------

class RandomAgent:
    """Uniform random actions; the weakest sensible baseline."""

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)

    def act(self, obs) -> Action:
        steer, accel = self._rng.uniform(-1.0, 1.0, size=2)
        return Action(float(steer), float(accel))


class _CameraPlanner:
    """Shared raster -> track limits plumbing for the camera-driven agents."""

    view = "front"

    def __init__(self, step: float, horizon: float):
        self._step = step
        self._horizon = horizon

    def perceive(self, obs, calib) -> TrackLimits:
        raster = obs.cameras.get(self.view)
        if raster is None:
            raise PerceptionError(f"agent needs the {self.view!r} camera")
        left, right = extract_boundary_points(raster, calib)
        if len(left) < 4 or len(right) < 4:
            raise EmptySceneError("too few boundary points to fit")
        return track_limits(
            fit_cubic(left, "left"),
            fit_cubic(right, "right"),
            step=self._step,
            horizon=self._horizon,
        )


class PurePursuitAgent(_CameraPlanner):
    """Midline follower at a fixed conservative target speed."""

    def __init__(
        self,
        target_speed: float = 10.0,
        calib=None,
        vehicle: VehicleParams = DEFAULT_VEHICLE,
    ):
        super().__init__(step=1.0, horizon=30.0)
        from .env import DEFAULT_CALIBRATIONS

        self._calib = calib or DEFAULT_CALIBRATIONS["front"]
        self._target = target_speed
        self._vehicle = vehicle

    def act(self, obs) -> Action:
        try:
            limits = self.perceive(obs, self._calib)
        except PerceptionError:
            return Action(0.0, -1.0)
        look = min(max(0.4 * obs.speed, 3.0), 12.0)
        state = VehicleState(speed=obs.speed)
        return pure_pursuit(state, limits, look, self._target, self._vehicle)


class MpcAgent(_CameraPlanner):
    """Lattice MPC on the front camera, with zone-based parameter switching."""

    def __init__(
        self,
        params: MpcParams | None = None,
        calib=None,
        vehicle: VehicleParams = DEFAULT_VEHICLE,
    ):
        p = params or MpcParams()
        super().__init__(step=p.ds, horizon=p.n * p.ds)
        from .env import DEFAULT_CALIBRATIONS

        self._calib = calib or DEFAULT_CALIBRATIONS["front"]
        self._params = p
        self._vehicle = vehicle
        self.last_plan: PlannedTrajectory | None = None

    def act(self, obs) -> Action:
        try:
            limits = self.perceive(obs, self._calib)
            params = self._params.for_zone(zone_classify(limits).label)
        except PerceptionError:
            self.last_plan = None
            return Action(0.0, -1.0)
        state = VehicleState(speed=obs.speed)
        traj, action = mpc_plan(state, limits, params, self._vehicle)
        self.last_plan = traj
        return action
