"""Scenario trace: a line-oriented key=value record of one run.

Line 1 is a header::

    # autolevels-trace v1 scenario=nominal_orbit variant=- sha256=<hex> seed=42 ticks=18000 dt=1.0 bus=on

Every other line is one row with a fixed leading field order::

    tick=<k> phase=<1..6> row=<signal|transition|message|event> node=<path> name=<name> [key=value ...]

Floats are written with ``repr`` (shortest round-trip form), so parsing a
value gives back the exact bit pattern the engine computed.  Strings are
percent-quoted so values never contain spaces or ``=``.  Rows within a tick
are ordered by (phase, node path).
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence
from urllib.parse import quote, unquote

from .errors import LoadError

MAGIC = "# autolevels-trace v1"
ROW_KINDS = ("signal", "transition", "message", "event")
LOOP_SIGNALS = ("r", "e_r", "u", "y", "d_p", "s_p", "f_p")
_SAFE = "/:._-@#>+,"


@functools.lru_cache(maxsize=8192)
def _quote(s: str) -> str:
    return quote(s, safe=_SAFE) if s else "%00"


def fmt(v: Any) -> str:
    t = type(v)
    if t is float:
        return repr(v)
    if t is bool:
        return "1" if v else "0"
    if t is int:
        return str(v)
    if v is None:
        return "-"
    if isinstance(v, enum.Enum):
        v = v.value
    elif isinstance(v, (list, tuple)):
        v = ",".join(str(x) for x in v)
    elif not isinstance(v, str):
        v = str(v)
    return _quote(v)


def format_row(tick: int, phase: int, kind: str, node: str, name: str,
               items: Iterable[tuple[str, Any]] = ()) -> str:
    head = f"tick={tick} phase={phase} row={kind} node={_quote(node)} name={_quote(name)}"
    return head + "".join([f" {k}={repr(v) if type(v) is float else fmt(v)}" for k, v in items])


def format_header(scenario: str, digest: str, seed: int, ticks: int, dt: float,
                  variant: str | None = None, bus: bool = True) -> str:
    return (f"{MAGIC} scenario={fmt(scenario)} variant={fmt(variant)} sha256={digest} "
            f"seed={seed} ticks={ticks} dt={fmt(float(dt))} bus={'on' if bus else 'off'}")


@dataclass
class Trace:
    header: str
    lines: list[str] = field(default_factory=list)

    def text(self) -> str:
        return "\n".join([self.header, *self.lines]) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.text(), encoding="utf-8")

    def rows(self) -> list["Row"]:
        return [parse_row(line) for line in self.lines]

    @property
    def meta(self) -> dict[str, str]:
        return parse_header(self.header)


@dataclass(frozen=True)
class Row:
    tick: int
    phase: int
    kind: str
    node: str
    name: str
    fields: Mapping[str, str]

    def num(self, key: str) -> float:
        return float(self.fields[key])

    def text(self, key: str, default: str | None = None) -> str | None:
        v = self.fields.get(key)
        if v is None:
            return default
        return "" if v == "%00" else unquote(v)


def parse_header(line: str) -> dict[str, str]:
    if not line.startswith(MAGIC):
        raise LoadError("not an autolevels trace (bad header)")
    out = {}
    for tok in line[len(MAGIC):].split():
        k, _, v = tok.partition("=")
        out[k] = unquote(v)
    return out


def parse_row(line: str) -> Row:
    parts = line.split(" ")
    try:
        vals = [p.split("=", 1) for p in parts]
        head = {k: v for k, v in vals[:5]}
        fields = {k: v for k, v in vals[5:]}
        return Row(int(head["tick"]), int(head["phase"]), head["row"], unquote(head["node"]),
                   unquote(head["name"]), fields)
    except (KeyError, ValueError) as exc:
        raise LoadError(f"malformed trace row {line[:80]!r}: {exc}") from None


def read_trace(source: str | Path | Trace) -> Trace:
    if isinstance(source, Trace):
        return source
    text = Path(source).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise LoadError("empty trace file", str(source))
    parse_header(lines[0])
    return Trace(lines[0], lines[1:])


def iter_rows(trace: Trace, kind: str | None = None, name: str | None = None,
              node: str | None = None) -> Iterator[Row]:
    """Filter rows cheaply by matching the fixed prefix fields before a full parse."""
    k_tok = f" row={kind} " if kind else None
    n_tok = f" name={quote(name, safe=_SAFE)}" if name else None
    d_tok = f" node={quote(node, safe=_SAFE)} " if node else None
    for line in trace.lines:
        if k_tok and k_tok not in line:
            continue
        if d_tok and d_tok not in line:
            continue
        if n_tok and n_tok + " " not in line and not line.endswith(n_tok):
            continue
        row = parse_row(line)
        if (kind and row.kind != kind) or (name and row.name != name) or (node and row.node != node):
            continue
        yield row


# -- generic checkers ---------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    tick: int
    node: str
    detail: str


def check_ordering(trace: Trace) -> list[Violation]:
    """Rows must be non-decreasing in (tick, phase, node)."""
    out = []
    prev = None
    for line in trace.lines:
        r = parse_row(line)
        key = (r.tick, r.phase, r.node)
        if prev is not None and key < prev:
            out.append(Violation(r.tick, r.node, f"row out of order after {prev}"))
        prev = key
    return out


def check_feedback_law(trace: Trace) -> tuple[int, list[Violation]]:
    """For every loop row after a node's first: ``e_r(k) == r(k) - f_p(k-1)`` bit-exactly.

    Returns (rows checked, violations).  The identity is checked in the same
    floating-point operation the kernel performs, which is what "exact"
    means for a recorded trace.
    """
    last: dict[str, float] = {}
    checked = 0
    bad = []
    for row in iter_rows(trace, "signal", "loop"):
        r, e, f = row.num("r"), row.num("e_r"), row.num("f_p")
        prev = last.get(row.node)
        if prev is not None:
            checked += 1
            if e != r - prev:
                bad.append(Violation(row.tick, row.node, f"e_r={e!r} but r - f_p_prev = {r - prev!r}"))
        last[row.node] = f
    return checked, bad


def message_rows(trace: Trace) -> list[Row]:
    return list(iter_rows(trace, "message"))


def check_command_routing(trace: Trace, is_superior) -> tuple[int, list[Violation]]:
    """Every delivered Command must travel a superior->subordinate edge.

    ``is_superior(a, b)`` is typically ``RelationshipGraph.is_superior``.
    Returns (delivered Command count, violations).
    """
    n = 0
    bad = []
    for row in iter_rows(trace, "message"):
        if row.text("kind") != "Command" or row.text("verdict") != "delivered":
            continue
        n += 1
        sender = row.text("sender")
        if not is_superior(sender, row.node):
            bad.append(Violation(row.tick, row.node, f"Command delivered from non-superior {sender}"))
    return n, bad


def transitions(trace: Trace, node: str | None = None) -> list[Row]:
    return list(iter_rows(trace, "transition", node=node))


def state_timeline(trace: Trace, node: str, initial: str) -> list[tuple[int, str]]:
    """(tick, state entered) pairs, starting with ``(0, initial)``."""
    out = [(0, initial)]
    for row in transitions(trace, node):
        out.append((row.tick, row.text("to")))
    return out


def state_at(timeline: Sequence[tuple[int, str]], tick: int) -> str:
    """State after the autonomy phase of ``tick``."""
    state = timeline[0][1]
    for k, s in timeline:
        if k > tick:
            break
        state = s
    return state


def replay(trace: Trace | str | Path, scenario_source) -> bool:
    """Re-run the scenario named by the trace header and compare byte for byte."""
    from .engine import load_scenario, run

    tr = read_trace(trace)
    meta = tr.meta
    variant = None if meta.get("variant") in (None, "-") else meta["variant"]
    sc = load_scenario(scenario_source, variant=variant)
    if sc.digest != meta["sha256"]:
        return False
    res = run(sc, seed=int(meta["seed"]), ticks=int(meta["ticks"]), bus_enabled=meta.get("bus") != "off",
              allow_lint_failures=True)
    return res.trace.text() == tr.text()
