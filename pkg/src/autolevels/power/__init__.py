"""Reference power mission: breaker, solar array drive, generation, battery."""

from . import blocks, machines  # noqa: F401  (register shipped blocks and machines)
from .machines import make_breaker_machine, make_drive_machine, make_generation_machine
from .physics import (BatteryState, DriveState, EstimatorState, POState, battery_step,
                      degradation_estimator_step, perturb_observe_step, solar_current)

__all__ = [
    "BatteryState", "DriveState", "EstimatorState", "POState", "battery_step",
    "degradation_estimator_step", "make_breaker_machine", "make_drive_machine",
    "make_generation_machine", "perturb_observe_step", "solar_current",
]
