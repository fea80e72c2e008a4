"""Autonomy at every level of a space-system decomposition.

Control loops wrapped by guarded state-machine autonomy loops, attached to a
taxonomy tree and linked by a typed crosstalk bus, plus a deterministic
scheduler and a reference power mission.
"""

from . import power  # noqa: F401  (registers the mission blocks and machines)
from .autonomy import (SSCC, AutonomyBlock, Command, StateMachine, apply_mode_command,
                       builtin_machine, evaluate_transitions, load_machine, make_autonomy_block,
                       override_in_force, sscc_coverage, step_autonomy_loop)
from .bus import Bus, Interaction, Message, Relationship, RelationshipGraph, validate_edge
from .core_loops import (ControlLoop, ControlLoopState, FirstOrderPlant, LoopMetrics, LowpassFilter,
                         PIController, first_order_plant, loop_metrics, lowpass_filter,
                         proportional_integral_controller, step_control_loop)
from .engine import (Scenario, eclipse_forecast, illumination, load_scenario, run,
                     shipped_scenarios)
from .errors import AutolevelsError, ConfigError, LoadError, SimulationFault, UsageError
from .taxonomy import LevelKind, MeasureKind, build_tree, lint_autonomy_coverage, load_model, measure_kind

__version__ = "0.1.0"
