"""Trace checkers for the power mission's properties.

Each function reads a :class:`~autolevels.trace.Trace` (not the live run),
so the same checks apply to a trace file written by the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..trace import Trace, Violation, iter_rows, state_at, state_timeline

DRIVE = "power/generation/solar_drive"
BREAKER = "power/generation/solar_drive/breaker"
GENERATION = "power/generation"
STORAGE = "power/storage"


def _series(trace: Trace, node: str, name: str, key: str) -> dict[int, float]:
    return {r.tick: r.num(key) for r in iter_rows(trace, "signal", name, node)}


def illumination_series(trace: Trace) -> dict[int, float]:
    return _series(trace, "env", "env", "illumination")


def eclipse_starts(trace: Trace) -> list[int]:
    ill = illumination_series(trace)
    return [k for k in sorted(ill) if k > 0 and ill[k] < 1.0 and ill.get(k - 1, 1.0) >= 1.0]


# -- eclipse response ---------------------------------------------------------

@dataclass(frozen=True)
class EclipseResponse:
    start: int
    cage_tick: int | None  # first tick in or after the forecast window with the drive in CAGE
    overridden: bool


def eclipse_response(trace: Trace, lead: int, override_windows: Sequence[tuple[int, int]] = (),
                     drive: str = DRIVE) -> tuple[list[EclipseResponse], list[Violation]]:
    """Drive must be in CAGE by ``start + lead + 2`` for every eclipse not inside an override."""
    timeline = state_timeline(trace, drive, "TRACK")
    last_tick = int(trace.meta["ticks"]) - 1
    out, bad = [], []
    for start in eclipse_starts(trace):
        deadline = start + lead + 2
        overridden = any(a <= start < b for a, b in override_windows)
        cage = None
        for k, s in timeline:
            if s == "CAGE" and k >= start - lead:
                cage = k
                break
        if cage is None and state_at(timeline, start - lead) == "CAGE":
            cage = start - lead
        out.append(EclipseResponse(start, cage, overridden))
        if overridden or deadline > last_tick:
            continue
        if cage is None or cage > deadline or state_at(timeline, deadline) != "CAGE":
            bad.append(Violation(start, drive, f"not in CAGE by tick {deadline} (entered {cage})"))
    return out, bad


# -- tracking -----------------------------------------------------------------

def full_sun_tracking(trace: Trace, settle: int = 200, drive: str = DRIVE) -> tuple[int, float, float]:
    """Max steady pointing error over full-sun TRACK segments.

    A segment is a maximal run of ticks with illumination 1 and the drive in
    TRACK; its first ``settle`` ticks are acquisition and are skipped.
    Returns (samples checked, max |theta - theta_sun|, sun angle).
    """
    ill = illumination_series(trace)
    timeline = state_timeline(trace, drive, "TRACK")
    panel = {r.tick: (r.num("theta"), r.num("theta_sun")) for r in iter_rows(trace, "signal", "panel", drive)}
    worst, n, run_len, sun = 0.0, 0, 0, 0.0
    ti = 0
    state = timeline[0][1]
    for k in sorted(panel):
        while ti + 1 < len(timeline) and timeline[ti + 1][0] <= k:
            ti += 1
            state = timeline[ti][1]
        if ill.get(k, 0.0) >= 1.0 and state == "TRACK":
            run_len += 1
        else:
            run_len = 0
            continue
        if run_len > settle:
            theta, sun = panel[k]
            worst = max(worst, abs(theta - sun))
            n += 1
    return n, worst, sun


# -- energy -------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyLedger:
    soc_start: float
    soc_end: float
    soc_min: float
    soc_max: float
    integrated: float  # sum (i_charge - i_load) * dt / capacity
    clamped: float     # sum of clamp residuals
    clamp_events: int
    error: float       # |delta soc - (integrated - clamped)|, in units of capacity

    @property
    def relative_error(self) -> float:
        return self.error


def energy_ledger(trace: Trace, capacity: float, soc0: float, storage: str = STORAGE) -> EnergyLedger:
    """Coulomb-counting reconciliation over the battery rows of a trace."""
    dt = float(trace.meta["dt"])
    integrated = 0.0
    clamped = 0.0
    clamps = 0
    lo, hi, soc = soc0, soc0, soc0
    for r in iter_rows(trace, "signal", "battery", storage):
        integrated += (r.num("i_charge") - r.num("i_load")) * dt / capacity
        res = r.num("residual")
        if res != 0.0:
            clamped += res
            clamps += 1
        soc = r.num("soc")
        lo, hi = min(lo, soc), max(hi, soc)
    err = abs((soc - soc0) - (integrated - clamped))
    return EnergyLedger(soc0, soc, lo, hi, integrated, clamped, clamps, err)


# -- breaker safety -----------------------------------------------------------

def breaker_safety(trace: Trace, initial_trip: float, max_ticks: int = 2,
                   breaker: str = BREAKER) -> list[Violation]:
    """No more than ``max_ticks`` consecutive ticks above trip while closed and un-overridden."""
    trip = initial_trip
    changes = {}
    overrides = []
    for r in iter_rows(trace, "event", node=breaker):
        if r.name == "command_applied" and r.text("verb") == "set-param" and r.text("name") == "trip_current":
            changes[r.tick] = r.num("value")
        if r.name == "command_applied" and r.text("verb") == "override":
            overrides.append((r.tick, int(r.fields["expiry"])))
    bad, streak = [], 0
    for r in iter_rows(trace, "signal", "circuit", breaker):
        if r.tick in changes:
            trip = changes[r.tick]
        overridden = any(a <= r.tick < b for a, b in overrides)
        if r.fields["closed"] == "1" and r.num("current") > trip and not overridden:
            streak += 1
            if streak == max_ticks + 1:
                bad.append(Violation(r.tick, breaker, f"current above trip {trip} for {streak} ticks"))
        else:
            streak = 0
    return bad


# -- degradation --------------------------------------------------------------

def capability_messages(trace: Trace, sender: str = GENERATION) -> list[tuple[str, int, str, float]]:
    """(verdict, tick, node, estimate) for every capability message from ``sender``."""
    out = []
    for r in iter_rows(trace, "message"):
        if r.text("ptype") == "capability" and r.text("sender") == sender:
            out.append((r.name, r.tick, r.node, float(r.fields.get("p.estimate", "nan"))))
    return out


def first_capability_report(trace: Trace, after: int, receiver: str = DRIVE,
                            sender: str = GENERATION) -> tuple[int | None, int | None]:
    """(sent tick, tick delivered to ``receiver``) of the first report at or after ``after``."""
    sent = recv = None
    for verdict, tick, node, _ in capability_messages(trace, sender):
        if tick < after:
            continue
        if verdict == "sent" and sent is None:
            sent = tick
        if verdict == "delivered" and node == receiver and recv is None and sent is not None:
            recv = tick
    return sent, recv


def critical_served(trace: Trace, start: int, stop: int, breaker: str = BREAKER) -> float:
    """Fraction of the window ``[start, stop)`` during which the critical load was served."""
    rows = [r for r in iter_rows(trace, "signal", "circuit", breaker) if start <= r.tick < stop]
    if not rows:
        return 0.0
    return sum(r.fields["served"] == "1" for r in rows) / len(rows)


def i_peak_series(trace: Trace, drive: str = DRIVE) -> dict[int, float]:
    return _series(trace, drive, "panel", "i_peak")
