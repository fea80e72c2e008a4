"""Power-mission physics evaluated after the control loops each tick.

The engine owns the environment (illumination, sun angle, flares) and the
loops; this module turns loop outputs into circuit current, battery state of
charge and panel health, and exposes the measured quantities that the
environment sensors of the autonomy blocks sample.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, Mapping

from ..errors import ConfigError, LoadError
from .physics import BatteryState, battery_step


@dataclass(frozen=True)
class PowerConfig:
    drive: str = "power/generation/solar_drive"
    breaker: str = "power/generation/solar_drive/breaker"
    storage: str = "power/storage"
    distribution: str = "power/distribution"
    i_peak: float = 3.0
    capacity: float = 20000.0  # A*s
    soc0: float = 0.6
    base_load: float = 1.2
    safe_rating: float = 4.0  # section burnout rating, A
    burnout_ticks: int = 10
    burnout_factor: float = 0.5
    align_tol: float = 0.03
    critical_start: int | None = None
    critical_stop: int | None = None
    critical_amps: float = 0.0

    @classmethod
    def from_mapping(cls, spec: Mapping[str, Any]) -> "PowerConfig":
        spec = dict(spec)
        spec.pop("type", None)
        crit = spec.pop("critical_load", None)
        if crit:
            spec["critical_start"] = int(crit["start"])
            spec["critical_stop"] = int(crit["stop"])
            spec["critical_amps"] = float(crit["amps"])
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(spec) - known)
        if unknown:
            raise LoadError(f"unknown power world settings {unknown}")
        cfg = cls(**spec)
        if cfg.capacity <= 0 or cfg.i_peak < 0 or not 0.0 <= cfg.soc0 <= 1.0:
            raise LoadError("power world needs capacity > 0, i_peak >= 0 and 0 <= soc0 <= 1")
        if cfg.burnout_ticks < 1:
            raise LoadError("burnout_ticks must be >= 1")
        return cfg


class PowerWorld:
    """Mutable per-run physics state; one instance per run."""

    def __init__(self, config: PowerConfig, dt: float, nodes: Mapping[str, Any]):
        for p in (config.drive, config.breaker, config.storage):
            if p not in nodes:
                raise LoadError("power world refers to a node missing from the model", p)
        self.cfg = config
        self.dt = dt
        self.battery = BatteryState(config.soc0, config.capacity)
        self.i_peak = float(config.i_peak)
        self.rate = 0.0
        self.pulses: list[tuple[int, float]] = []  # (end tick exclusive, amps)
        self.over_count = 0
        self.burned = False
        self.ctx: dict[str, float] = {"sun_angle": 0.0, "illumination": 1.0, "i_peak": self.i_peak}
        self.q: dict[str, float] = {
            "i_panel": 0.0, "i_peak": self.i_peak, "circuit_current": 0.0, "soc": config.soc0,
            "theta": 0.0, "alignment": 0.0, "aligned_full_sun": 0.0, "i_charge": 0.0,
            "i_load": config.base_load, "critical_served": 0.0,
        }

    # -- engine hooks -------------------------------------------------------

    def targets(self) -> set[str]:
        return {self.cfg.drive, self.cfg.breaker, self.cfg.storage, self.cfg.distribution}

    def context(self, env: Mapping[str, float]) -> dict[str, float]:
        ctx = self.ctx
        ctx["sun_angle"] = env["sun_angle"]
        ctx["illumination"] = env["illumination"]
        ctx["i_peak"] = self.i_peak
        return ctx

    def quantities(self, env: Mapping[str, float]) -> dict[str, float]:
        q = self.q
        q["illumination"] = env["illumination"]
        q["sun_angle"] = env["sun_angle"]
        q["flare"] = env["flare"]
        return q

    def apply_fault(self, kind: str, target: str, spec: Mapping[str, Any], tick: int) -> dict[str, Any] | None:
        """Apply a world-level fault, returning trace fields, or None if not ours."""
        if kind == "overcurrent":
            if target != self.cfg.breaker:
                raise ConfigError(f"overcurrent targets a circuit breaker, got {target!r}")
            amps = float(spec["magnitude"])
            duration = int(spec.get("duration", 1))
            self.pulses.append((tick + duration, amps))
            return {"magnitude": amps, "duration": duration}
        if kind in ("panel_degradation", "solar_flare"):
            before = self.i_peak
            if "factor" in spec:
                self.i_peak *= float(spec["factor"])
            if kind == "panel_degradation" and "rate" in spec:
                self.rate = float(spec["rate"])
            return {"i_peak_before": before, "i_peak_after": self.i_peak}
        return None

    def begin_tick(self, tick: int) -> None:
        if self.pulses:
            self.pulses = [p for p in self.pulses if p[0] > tick]
        if self.rate:
            self.i_peak *= 1.0 - self.rate

    def step(self, tick: int, env: Mapping[str, float], loops: Mapping[str, Any]):
        """Advance physics; returns (signal rows, events) as (node, name, fields)."""
        cfg = self.cfg
        drive = loops[cfg.drive]
        breaker = loops[cfg.breaker]
        i_panel = drive.y
        theta = drive.block_states[1]
        closed = breaker.y >= 0.5
        window = cfg.critical_start is not None and cfg.critical_start <= tick < cfg.critical_stop
        crit = cfg.critical_amps if window else 0.0
        pulse = sum(a for _, a in self.pulses)
        if closed:
            circuit = i_panel + crit + pulse
            i_charge = i_panel
        else:
            circuit = 0.0
            i_charge = 0.0
        served = closed and window
        i_load = cfg.base_load + env.get("d_load", 0.0) + (crit if served else 0.0)
        self.battery = battery_step(self.battery, i_charge, i_load, self.dt)
        events = []
        residual = self.battery.clamp_residual
        if residual != 0.0:
            events.append((cfg.storage, "soc_clamp", {"residual": residual, "soc": self.battery.soc}))
        if circuit > cfg.safe_rating:
            self.over_count += 1
            if self.over_count >= cfg.burnout_ticks and not self.burned:
                before = self.i_peak
                self.i_peak *= cfg.burnout_factor
                self.burned = True
                events.append((cfg.drive, "burnout", {"current": circuit, "ticks": self.over_count,
                                                      "i_peak_before": before, "i_peak_after": self.i_peak}))
        else:
            self.over_count = 0
        alignment = abs(theta - env["sun_angle"])
        aligned = alignment <= cfg.align_tol and env["illumination"] >= 1.0
        q = self.q
        q.update(i_panel=i_panel, i_peak=self.i_peak, circuit_current=circuit, soc=self.battery.soc,
                 theta=theta, alignment=alignment, aligned_full_sun=1.0 if aligned else 0.0,
                 i_charge=i_charge, i_load=i_load, critical_served=1.0 if served else 0.0)
        rows = [
            (cfg.storage, "battery", (("soc", self.battery.soc), ("i_charge", i_charge),
                                      ("i_load", i_load), ("residual", residual))),
            (cfg.drive, "panel", (("theta", theta), ("theta_sun", env["sun_angle"]),
                                  ("i_panel", i_panel), ("i_peak", self.i_peak))),
            (cfg.breaker, "circuit", (("current", circuit), ("closed", 1 if closed else 0),
                                      ("served", 1 if served else 0))),
        ]
        return rows, events


def make_power_world(spec: Mapping[str, Any], dt: float, nodes: Mapping[str, Any]) -> PowerWorld:
    return PowerWorld(PowerConfig.from_mapping(spec), dt, nodes)
