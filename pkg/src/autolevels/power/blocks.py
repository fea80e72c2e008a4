"""Control-loop blocks for the breaker switch and the solar array drive."""

from __future__ import annotations

from dataclasses import dataclass

from ..core_loops import register_block
from ..errors import ConfigError
from .physics import POState, perturb_observe_step, solar_current


@dataclass(frozen=True)
class SwitchController:
    """Commands a position correction; zero error confirms the position."""

    name: str = "controller"

    def initial_state(self):
        return None

    def step(self, e_r, state, ctx):
        return max(-1.0, min(1.0, e_r)), state


@dataclass(frozen=True)
class SwitchPlant:
    """Breaker switch position: 1 closed (conducting), 0 open."""

    y0: float = 1.0
    name: str = "plant"

    def initial_state(self):
        return float(self.y0)

    def step(self, u, state, ctx):
        y = state + u + ctx.get("d_p", 0.0)
        y = 1.0 if y > 1.0 else (0.0 if y < 0.0 else y)
        return y, y


@dataclass(frozen=True)
class DrivePlant:
    """Drive motor plus array.  State is the pointing angle; output is panel current."""

    theta0: float = 0.0
    name: str = "plant"

    def initial_state(self):
        return float(self.theta0)

    def initial_output(self):
        return 0.0

    def step(self, u, theta, ctx):
        theta = theta + u + ctx.get("d_p", 0.0)
        return solar_current(theta, ctx["sun_angle"], ctx["illumination"], ctx["i_peak"]), theta


@dataclass(frozen=True)
class DriveController:
    """Perturb-and-observe in TRACK; slew to a commanded angle in CAGE/STOWED.

    In TRACK the measured current is recovered from the error as ``-e_r``
    (the reference is constant between updates, so rises in ``-e_r`` are
    rises in current).  The controller dead-reckons the angle it has
    commanded, which is how CAGE holds a direction without looking at
    current.
    """

    delta: float = 0.01
    slew: float = 0.02
    theta0: float = 0.0
    name: str = "controller"

    def __post_init__(self):
        if self.delta <= 0 or self.slew <= 0:
            raise ConfigError("drive step and slew must be positive")

    def initial_state(self):
        return (POState(), float(self.theta0))

    def step(self, e_r, state, ctx):
        po, theta_cmd = state
        mode = ctx.get("mode") or "TRACK"
        if mode == "TRACK":
            u, po = perturb_observe_step(po, -e_r, self.delta)
        else:
            target = ctx.get("target")
            target = theta_cmd if target is None else target
            u = max(-self.slew, min(self.slew, target - theta_cmd))
            po = POState(po.direction, None)
        return u, (po, theta_cmd + u)


@dataclass(frozen=True)
class SunSensorController:
    """Alternative TRACK law: proportional on the sun-sensor angle error."""

    k: float = 0.5
    slew: float = 0.02
    theta0: float = 0.0
    name: str = "controller"

    def initial_state(self):
        return float(self.theta0)

    def step(self, e_r, theta_cmd, ctx):
        mode = ctx.get("mode") or "TRACK"
        target = ctx["sun_angle"] if mode == "TRACK" else ctx.get("target", theta_cmd)
        u = max(-self.slew, min(self.slew, self.k * (target - theta_cmd)))
        return u, theta_cmd + u


register_block("switch_controller", SwitchController)
register_block("switch", SwitchPlant)
register_block("drive_plant", DrivePlant)
register_block("drive_controller", DriveController)
register_block("sun_sensor_controller", SunSensorController)
