"""Power-mission physics: panel current, battery, perturb-and-observe, degradation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

from ..errors import ConfigError


def solar_current(theta: float, theta_sun: float, illumination: float, i_peak: float) -> float:
    """Generated current [A] for a panel at ``theta`` with the sun at ``theta_sun``."""
    c = math.cos(theta - theta_sun)
    if c <= 0.0 or illumination <= 0.0:
        return 0.0
    return i_peak * illumination * c


@dataclass(frozen=True, slots=True)
class BatteryState:
    soc: float
    capacity: float  # ampere-seconds
    i_charge: float = 0.0
    i_load: float = 0.0
    clamp_residual: float = 0.0  # soc discarded by the last clamp (signed)

    def __post_init__(self):
        if self.capacity <= 0:
            raise ConfigError(f"battery capacity must be positive, got {self.capacity}")


def battery_step(b: BatteryState, i_charge: float, i_load: float, dt: float) -> BatteryState:
    """Coulomb counting with the state of charge clamped to [0, 1]."""
    raw = b.soc + (i_charge - i_load) * dt / b.capacity
    soc = min(1.0, max(0.0, raw))
    return BatteryState(soc, b.capacity, i_charge, i_load, raw - soc)


@dataclass(frozen=True, slots=True)
class DriveState:
    theta: float
    theta_sun: float
    mode: str
    i_panel: float
    i_peak: float

    def __post_init__(self):
        if self.i_panel < 0:
            raise ConfigError("i_panel must be >= 0")


# -- perturb and observe ------------------------------------------------------

@dataclass(frozen=True, slots=True)
class POState:
    direction: float = 1.0
    previous: float | None = None


def perturb_observe_step(state: POState, i_measured: float, delta: float) -> tuple[float, POState]:
    """Hill climbing: keep direction while the measurement rises, else reverse.

    Returns the angle increment ``±delta`` and the new state.
    """
    if delta <= 0:
        raise ConfigError("perturb-and-observe step must be positive")
    direction = state.direction
    if state.previous is not None and not i_measured > state.previous:
        direction = -direction
    return direction * delta, POState(direction, i_measured)


# -- degradation estimate -----------------------------------------------------

@dataclass(frozen=True, slots=True)
class EstimatorState:
    estimate: float
    armed: bool = True
    samples: int = 0


def degradation_estimator_step(est: EstimatorState, i_sample: float, gated: bool, *,
                               nominal: float, window: float = 50.0,
                               rho: float = 0.9) -> tuple[EstimatorState, dict[str, Any] | None]:
    """Exponential average of achievable peak current from aligned, full-sun samples.

    Emits one capability payload when the estimate drops below ``rho*nominal``;
    re-arms once it recovers.
    """
    if not gated:
        return est, None
    alpha = 1.0 / window
    value = est.estimate + alpha * (i_sample - est.estimate)
    threshold = rho * nominal
    if est.armed and value < threshold:
        payload = {"type": "capability", "param": "i_peak", "estimate": value,
                   "nominal": nominal}
        return EstimatorState(value, False, est.samples + 1), payload
    armed = est.armed or value >= threshold
    return EstimatorState(value, armed, est.samples + 1), None

