"""Shipped autonomy machines: circuit breaker, solar array drive, generation.

Survival transitions are declared first in every machine so they win ties.
"""

from __future__ import annotations

from ..autonomy import StateMachine, load_machine, register_machine
from ..errors import ConfigError

FAULT_TOPIC = "power/fault"
MODE_TOPIC = "drive/mode"
CAPABILITY_TOPIC = "power/capability"


def make_breaker_machine(trip_current: float = 4.0, soc_full: float = 0.95,
                         soc_low: float = 0.85, fault_topic: str = FAULT_TOPIC) -> StateMachine:
    """CLOSED conducts and charges; OPEN_FULL rests a full battery; OPEN_FAULT is a trip.

    Trip is a strict inequality.  A trip is only cleared by the superior
    setting ``reset`` to 1.
    """
    if trip_current <= 0:
        raise ConfigError(f"trip_current must be positive, got {trip_current}")
    if not 0.0 <= soc_low < soc_full <= 1.0:
        raise ConfigError(f"need 0 <= soc_low < soc_full <= 1, got {soc_low}, {soc_full}")
    return load_machine({
        "name": "breaker_v1",
        "initial": "CLOSED",
        "safe_state": "OPEN_FULL",
        "params": {
            "trip_current": {"value": trip_current, "units": "A"},
            "soc_full": {"value": soc_full, "units": "fraction"},
            "soc_low": {"value": soc_low, "units": "fraction"},
            "reset": {"value": 0.0, "units": "flag"},
            "fault_current": {"value": 0.0, "units": "A"},
        },
        "states": {
            "CLOSED": {"reference": {"setpoint": 1.0, "label": "closed"}},
            "OPEN_FULL": {"reference": {"setpoint": 0.0, "label": "open"}},
            "OPEN_FAULT": {
                "reference": {"setpoint": 0.0, "label": "open"},
                "on_enter": [
                    {"set_param": "fault_current", "value": "@current", "sscc": "ContextualizingSituations"},
                    {"publish": fault_topic, "sscc": "Collective",
                     "payload": {"type": "fault", "fault": "overcurrent", "current": "@current",
                                 "trip_current": "$trip_current"}},
                ],
            },
        },
        "transitions": [
            {"from": "CLOSED", "to": "OPEN_FAULT", "guard": "current > $trip_current", "sscc": "Survival"},
            {"from": "CLOSED", "to": "OPEN_FULL", "guard": "soc >= $soc_full", "sscc": "Success"},
            {"from": "OPEN_FULL", "to": "CLOSED", "guard": "soc <= $soc_low", "sscc": "Success"},
            {"from": "OPEN_FAULT", "to": "CLOSED", "guard": "$reset >= 1", "sscc": "Collective",
             "actions": [{"set_param": "reset", "value": 0.0}]},
        ],
    })


def make_drive_machine(cage_angle: float = 0.0, stow_angle: float = 1.5707963,
                       i_expected: float = 3.0, mode_topic: str = MODE_TOPIC) -> StateMachine:
    """TRACK hill-climbs; CAGE holds ``cage_angle`` in shadow; STOWED rides out flares.

    Overrides freeze every transition, flare stows included.
    """
    def announce(mode):
        return [{"publish": mode_topic, "sscc": "Collective", "payload": {"type": "mode", "mode": mode}}]

    return load_machine({
        "name": "drive_v1",
        "initial": "TRACK",
        "safe_state": "STOWED",
        "params": {
            "cage_angle": {"value": cage_angle, "units": "rad"},
            "stow_angle": {"value": stow_angle, "units": "rad"},
            "i_expected": {"value": i_expected, "units": "A"},
        },
        "states": {
            "TRACK": {"reference": {"setpoint": "$i_expected", "mode": "TRACK"}, "on_enter": announce("TRACK")},
            "CAGE": {"reference": {"setpoint": 0.0, "mode": "CAGE", "target": "$cage_angle"},
                     "on_enter": announce("CAGE")},
            "STOWED": {"reference": {"setpoint": 0.0, "mode": "STOWED", "target": "$stow_angle"},
                       "on_enter": announce("STOWED")},
        },
        "transitions": [
            {"from": ["TRACK", "CAGE"], "to": "STOWED", "guard": "flare >= 0.5", "sscc": "Survival"},
            {"from": "TRACK", "to": "CAGE", "guard": "eclipse >= 0.5", "sscc": "ContextualizingSituations"},
            {"from": "CAGE", "to": "TRACK", "guard": "eclipse < 0.5", "sscc": "Success"},
            {"from": "STOWED", "to": "TRACK", "guard": "flare < 0.5", "sscc": "Success"},
        ],
    })


def make_generation_machine(nominal_trip: float = 4.0, sacrifice_trip: float = 10.0,
                            i_nominal: float = 3.0, drive: str = "./solar_drive",
                            breaker: str = "./solar_drive/breaker", peer: str = "../distribution",
                            capability_topic: str = CAPABILITY_TOPIC) -> StateMachine:
    """Generation assembly: degradation broadcast and sacrifice under critical demand.

    During SACRIFICE the breaker trip is raised past the section's safe
    rating through a Command relayed by the drive.
    """
    def trip(value):
        return {"send": "Command", "to": drive, "sscc": "Collective",
                "payload": {"verb": "set-param", "name": "trip_current", "value": value, "target": breaker}}

    return load_machine({
        "name": "generation_v1",
        "initial": "NOMINAL",
        "safe_state": "NOMINAL",
        "params": {
            "nominal_trip": {"value": nominal_trip, "units": "A"},
            "sacrifice_trip": {"value": sacrifice_trip, "units": "A"},
            "i_nominal": {"value": i_nominal, "units": "A"},
            "critical_demand": {"value": 0.0, "units": "flag"},
            "sacrifice_allowed": {"value": 1.0, "units": "flag"},
        },
        "states": {
            "NOMINAL": {"reference": {"setpoint": 1.0, "label": "charging"}},
            "DEGRADED": {"reference": {"setpoint": 1.0, "label": "charging"}},
            "SACRIFICE": {"reference": {"setpoint": 2.0, "label": "overload"}},
        },
        "transitions": [
            {"from": "SACRIFICE", "to": "NOMINAL", "guard": "$critical_demand < 1", "sscc": "Survival",
             "actions": [trip("$nominal_trip")]},
            {"from": ["NOMINAL", "DEGRADED"], "to": "SACRIFICE", "sscc": "Success",
             "guard": "$critical_demand >= 1 and $sacrifice_allowed >= 1",
             "actions": [trip("$sacrifice_trip"),
                         {"send": "Coordination", "to": peer, "sscc": "Collective",
                          "payload": {"type": "schedule", "plan": "critical_load"}}]},
            {"from": "NOMINAL", "to": "DEGRADED", "guard": "degraded >= 0.5", "sscc": "ContextualizingSituations",
             "actions": [
                 {"publish": capability_topic, "sscc": "Collective",
                  "payload": {"type": "capability", "param": "i_peak", "estimate": "@peak_estimate",
                              "nominal": "$i_nominal"}},
                 {"send": "Command", "to": drive, "sscc": "Collective",
                  "payload": {"verb": "set-param", "name": "i_expected", "value": "@peak_estimate"}},
             ]},
            {"from": "DEGRADED", "to": "NOMINAL", "guard": "degraded < 0.5", "sscc": "Success"},
        ],
    })


register_machine("breaker_v1", make_breaker_machine)
register_machine("drive_v1", make_drive_machine)
register_machine("generation_v1", make_generation_machine)
