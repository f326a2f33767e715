"""Kinematic bicycle plant driven by a normalized two-channel action.

State advances under x' = v cos(psi), y' = v sin(psi), psi' = v tan(delta)/L,
v' = accel with classic RK4. Steering slews toward the commanded angle at a
fixed rate so a single step can never teleport the wheels, and speed is kept
inside [0, max_speed]. Everything here is a pure function over value types.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class DynamicsFault(RuntimeError):
    """A state or input carried a non-finite component."""


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 3.0
    footprint_length: float = 4.8
    footprint_width: float = 2.0
    max_steer: float = 0.35          # rad
    max_accel: float = 4.0           # m/s^2
    max_brake: float = 8.0           # m/s^2, applied magnitude for negative command
    max_speed: float = 75.0          # m/s
    steer_rate_limit: float = 1.0    # rad/s

    def __post_init__(self):
        for name in ("wheelbase", "footprint_length", "footprint_width", "max_steer",
                     "max_accel", "max_brake", "max_speed", "steer_rate_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_steer >= math.pi / 2:
            raise ValueError("max_steer must be below pi/2")


DEFAULT_VEHICLE = VehicleParams()


@dataclass(frozen=True)
class Action:
    """Normalized control: steering and acceleration, both in [-1, 1]."""

    steering: float
    acceleration: float

    def __post_init__(self):
        for name, value in (("steering", self.steering), ("acceleration", self.acceleration)):
            if not math.isfinite(value):
                raise ValueError(f"{name}: non-finite value")
            if not -1.0 <= value <= 1.0:
                raise ValueError(f"{name} = {value} outside [-1, 1]")


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    steer: float = 0.0
    t: float = 0.0

    @property
    def position(self):
        return (self.x, self.y)


def map_action(a: Action, p: VehicleParams):
    """Scale a normalized action to (target steer angle, acceleration).

    Positive acceleration commands scale by max_accel, negative by max_brake.
    """
    steer = a.steering * p.max_steer
    accel = a.acceleration * (p.max_accel if a.acceleration >= 0 else p.max_brake)
    return steer, accel


def step_dynamics(x: VehicleState, a: Action, dt: float, p: VehicleParams = DEFAULT_VEHICLE) -> VehicleState:
    """Advance the plant one step of length dt.

    The steering angle first slews toward the commanded target at
    steer_rate_limit, then the four-state ODE integrates with RK4 holding that
    angle and the commanded acceleration fixed over the step.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt = {dt} outside (0, 0.1]")
    for name in ("x", "y", "heading", "speed", "steer", "t"):
        if not math.isfinite(getattr(x, name)):
            raise DynamicsFault(f"non-finite state component {name}")

    target, accel = map_action(a, p)
    d_steer = target - x.steer
    max_slew = p.steer_rate_limit * dt
    steer = x.steer + max(-max_slew, min(max_slew, d_steer))
    steer = max(-p.max_steer, min(p.max_steer, steer))

    tan_ratio = math.tan(steer) / p.wheelbase

    def deriv(psi, v):
        # stop accelerating outside the speed envelope so RK4 stages stay honest
        dv = accel
        if (v <= 0.0 and accel < 0.0) or (v >= p.max_speed and accel > 0.0):
            dv = 0.0
        vv = min(max(v, 0.0), p.max_speed)
        return vv * math.cos(psi), vv * math.sin(psi), vv * tan_ratio, dv

    k1 = deriv(x.heading, x.speed)
    k2 = deriv(x.heading + 0.5 * dt * k1[2], x.speed + 0.5 * dt * k1[3])
    k3 = deriv(x.heading + 0.5 * dt * k2[2], x.speed + 0.5 * dt * k2[3])
    k4 = deriv(x.heading + dt * k3[2], x.speed + dt * k3[3])

    sixth = dt / 6.0
    nx = x.x + sixth * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    ny = x.y + sixth * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    nheading = x.heading + sixth * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    nspeed = x.speed + sixth * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
    nspeed = min(max(nspeed, 0.0), p.max_speed)

    out = VehicleState(x=nx, y=ny, heading=nheading, speed=nspeed, steer=steer, t=x.t + dt)
    if not all(math.isfinite(v) for v in (nx, ny, nheading, nspeed)):
        raise DynamicsFault("non-finite state after integration")
    return out


def wheel_positions(x: VehicleState, p: VehicleParams = DEFAULT_VEHICLE):
    """The four footprint corners (FL, FR, RL, RR) in world coordinates."""
    hl = p.footprint_length / 2.0
    hw = p.footprint_width / 2.0
    c = math.cos(x.heading)
    s = math.sin(x.heading)
    corners = []
    for lx, ly in ((hl, hw), (hl, -hw), (-hl, hw), (-hl, -hw)):
        corners.append((x.x + c * lx - s * ly, x.y + s * lx + c * ly))
    return corners


def lateral_acceleration(x: VehicleState, p: VehicleParams = DEFAULT_VEHICLE) -> float:
    """Centripetal acceleration v^2 tan(delta) / L implied by the current state."""
    return x.speed * x.speed * math.tan(x.steer) / p.wheelbase
