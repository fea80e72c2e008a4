"""Outer autonomy loop: a guarded finite-state machine wrapped around a control loop.

The machine is declarative.  Guards are conjunctions of comparisons over
named input channels (environment feedback, message-latched virtual sensors,
``f_p``) and ``$parameters``::

    "current > $trip_current"
    "soc <= $soc_low and eclipse < 0.5"

Every transition carries exactly one SSCC tag.  At most one transition fires
per step; the first enabled one in declaration order wins.
"""

from __future__ import annotations

import enum
import math
import operator
import re
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping, Sequence

from .bus import Interaction, Message
from .errors import ConfigError, LoadError


class SSCC(str, enum.Enum):
    SURVIVAL = "Survival"
    SUCCESS = "Success"
    COLLECTIVE = "Collective"
    CONTEXT = "ContextualizingSituations"


NORMAL = "NORMAL"
SAFE = "SAFE"
COMMAND_VERBS = ("set-mode", "set-param", "override", "release-override")


# -- guards -------------------------------------------------------------------

_OPS: dict[str, Callable[[float, float], bool]] = {
    "<=": operator.le, ">=": operator.ge, "==": operator.eq, "!=": operator.ne,
    "<": operator.lt, ">": operator.gt,
}
_CMP = re.compile(r"^\s*(\S+)\s*(<=|>=|==|!=|<|>)\s*(\S+)\s*$")
_NUM = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")


def _operand(tok: str):
    """('num', v) | ('param', name) | ('chan', name)."""
    if _NUM.match(tok):
        return ("num", float(tok))
    if tok.startswith("$"):
        return ("param", tok[1:])
    return ("chan", tok)


@dataclass(frozen=True)
class Guard:
    text: str
    terms: tuple = ()

    @classmethod
    def parse(cls, text: str | None) -> "Guard":
        if text is None or str(text).strip().lower() in ("", "true", "always"):
            return cls("true", ())
        terms = []
        for part in re.split(r"\s+and\s+", str(text).strip()):
            m = _CMP.match(part)
            if not m:
                raise ConfigError(f"cannot parse guard term {part!r} in {text!r}")
            lhs, op, rhs = m.groups()
            terms.append((_operand(lhs), _OPS[op], _operand(rhs)))
        return cls(str(text), tuple(terms))

    @property
    def channels(self) -> set[str]:
        return {o[1] for t in self.terms for o in (t[0], t[2]) if o[0] == "chan"}

    @property
    def params(self) -> set[str]:
        return {o[1] for t in self.terms for o in (t[0], t[2]) if o[0] == "param"}

    def __call__(self, inputs: Mapping[str, float], params: Mapping[str, "Param"]) -> bool:
        for lhs, op, rhs in self.terms:
            if not op(_value(lhs, inputs, params, self.text), _value(rhs, inputs, params, self.text)):
                return False
        return True


def _value(opnd, inputs, params, where):
    kind, v = opnd
    if kind == "num":
        return v
    if kind == "chan":
        try:
            return inputs[v]
        except KeyError:
            raise ConfigError(f"guard {where!r} reads missing input channel {v!r}") from None
    try:
        return params[v].value
    except KeyError:
        raise ConfigError(f"guard {where!r} reads unknown parameter {v!r}") from None


# -- machine definition -------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Param:
    value: float
    units: str = ""


@dataclass(frozen=True)
class Action:
    """publish | send | set_param, optionally tagged with an SSCC."""

    kind: str
    topic: str | None = None
    to: str | None = None
    interaction: Interaction = Interaction.COOPERATION
    payload: Mapping[str, Any] = field(default_factory=dict)
    name: str | None = None
    value: Any = None
    sscc: SSCC | None = None

    @classmethod
    def from_mapping(cls, spec: Mapping[str, Any]) -> "Action":
        tag = SSCC(spec["sscc"]) if spec.get("sscc") else None
        if "publish" in spec:
            return cls("publish", topic=spec["publish"], payload=dict(spec.get("payload", {})), sscc=tag)
        if "send" in spec:
            kind = Interaction(spec["send"])
            if kind is Interaction.COOPERATION:
                raise ConfigError("use 'publish' for Cooperation actions")
            return cls("send", to=spec["to"], interaction=kind,
                       payload=dict(spec.get("payload", {})), sscc=tag)
        if "set_param" in spec:
            return cls("set_param", name=spec["set_param"], value=spec.get("value"), sscc=tag)
        raise ConfigError(f"unknown action {dict(spec)!r}")


@dataclass(frozen=True)
class RefSpec:
    """Template for the reference a state hands to its inner loop."""

    setpoint: Any = 0.0
    mode: str | None = None
    target: Any = None
    label: str | None = None


@dataclass(frozen=True, slots=True)
class Reference:
    """Autonomy output r: loop setpoint plus optional controller mode/target."""

    setpoint: float
    mode: str | None = None
    target: float | None = None
    label: str | None = None


@dataclass(frozen=True)
class StateDef:
    name: str
    reference: RefSpec = RefSpec()
    on_enter: tuple[Action, ...] = ()


@dataclass(frozen=True)
class Transition:
    source: str
    dest: str
    guard: Guard
    sscc: SSCC | None
    actions: tuple[Action, ...] = ()
    index: int = 0

    @property
    def label(self) -> str:
        return f"{self.source}->{self.dest}"


@dataclass(frozen=True)
class StateMachine:
    name: str
    states: Mapping[str, StateDef]
    transitions: tuple[Transition, ...]
    initial: str
    safe_state: str | None = None
    default_params: Mapping[str, Param] = field(default_factory=dict)
    strict: bool = True

    def __post_init__(self):
        if self.initial not in self.states:
            raise ConfigError(f"machine {self.name}: initial state {self.initial!r} not declared")
        if self.safe_state is not None and self.safe_state not in self.states:
            raise ConfigError(f"machine {self.name}: safe state {self.safe_state!r} not declared")
        by_source: dict[str, list[Transition]] = {s: [] for s in self.states}
        for t in self.transitions:
            for s in (t.source, t.dest):
                if s not in self.states:
                    raise ConfigError(f"machine {self.name}: transition {t.label} uses undeclared state {s!r}")
            if self.strict and t.sscc is None:
                raise ConfigError(f"machine {self.name}: transition {t.label} has no SSCC tag")
            by_source[t.source].append(t)
        object.__setattr__(self, "_by_source", {k: tuple(v) for k, v in by_source.items()})

    def outgoing(self, state: str) -> tuple[Transition, ...]:
        return self._by_source[state]

    def actions(self) -> list[Action]:
        acts = [a for t in self.transitions for a in t.actions]
        acts += [a for s in self.states.values() for a in s.on_enter]
        return acts


def evaluate_transitions(machine: StateMachine, current_state: str, inputs: Mapping[str, float],
                         params: Mapping[str, Param],
                         only: SSCC | None = None) -> Transition | None:
    """First enabled transition out of ``current_state`` in declaration order.

    ``only`` restricts candidates to a single SSCC tag (used in SAFE mode).
    """
    for t in machine.outgoing(current_state):
        if only is not None and t.sscc is not only:
            continue
        if t.guard(inputs, params):
            return t
    return None


@dataclass(frozen=True)
class SsccCoverage:
    counts: Mapping[SSCC, int]
    untagged: int = 0

    @property
    def missing(self) -> list[SSCC]:
        return [tag for tag in SSCC if self.counts.get(tag, 0) == 0]

    @property
    def complete(self) -> bool:
        return not self.missing and self.untagged == 0


def sscc_coverage(machine: StateMachine) -> SsccCoverage:
    """Per-tag counts over transitions and tagged actions."""
    counts = {tag: 0 for tag in SSCC}
    untagged = 0
    for t in machine.transitions:
        if t.sscc is None:
            untagged += 1
        else:
            counts[t.sscc] += 1
    for a in machine.actions():
        if a.sscc is not None:
            counts[a.sscc] += 1
    return SsccCoverage(MappingProxyType(counts), untagged)


def load_machine(spec: Mapping[str, Any], strict: bool = True) -> StateMachine:
    """Build a machine from its declarative mapping (as found in model files).

    ``from`` may be a list, which expands into one transition per source.
    With ``strict=False`` untagged transitions are tolerated so that lint can
    report them instead of refusing the file.
    """
    try:
        name = spec.get("name", "inline")
        states: dict[str, StateDef] = {}
        raw_states = spec["states"]
        if isinstance(raw_states, (list, tuple)):
            raw_states = {s: {} for s in raw_states}
        for sname, sdef in raw_states.items():
            sdef = sdef or {}
            ref = sdef.get("reference", {})
            if not isinstance(ref, Mapping):
                ref = {"setpoint": ref}
            states[sname] = StateDef(
                sname, RefSpec(ref.get("setpoint", 0.0), ref.get("mode"), ref.get("target"), ref.get("label")),
                tuple(Action.from_mapping(a) for a in sdef.get("on_enter", ())))
        transitions = []
        for tdef in spec.get("transitions", ()):
            sources = tdef["from"]
            sources = [sources] if isinstance(sources, str) else list(sources)
            tag = tdef.get("sscc")
            for src in sources:
                transitions.append(Transition(
                    src, tdef["to"], Guard.parse(tdef.get("guard")),
                    SSCC(tag) if tag else None,
                    tuple(Action.from_mapping(a) for a in tdef.get("actions", ())),
                    len(transitions)))
        params = {k: _param(v) for k, v in (spec.get("params") or {}).items()}
        return StateMachine(name, states, tuple(transitions), spec.get("initial", next(iter(states))),
                            spec.get("safe_state"), params, strict=strict)
    except (KeyError, ValueError, TypeError) as exc:
        raise LoadError(f"bad machine definition: {exc!r}") from None


def _param(v: Any) -> Param:
    if isinstance(v, Param):
        return v
    if isinstance(v, Mapping):
        return Param(float(v["value"]), str(v.get("units", "")))
    return Param(float(v))


_BUILTINS: dict[str, Callable[..., StateMachine]] = {}


def register_machine(name: str, factory: Callable[..., StateMachine]) -> None:
    _BUILTINS[name] = factory


def builtin_machine(name: str, **kwargs) -> StateMachine:
    if not _BUILTINS:
        from .power import machines  # noqa: F401  (registers the shipped machines)
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise LoadError(f"unknown built-in machine {name!r}") from None
    return factory(**kwargs)


def builtin_names() -> list[str]:
    if not _BUILTINS:
        from .power import machines  # noqa: F401
    return sorted(_BUILTINS)


# -- runtime block ------------------------------------------------------------

@dataclass(frozen=True)
class Command:
    """One autonomy-input command; the same vocabulary travels over Command messages."""

    verb: str
    name: str | None = None
    value: Any = None
    units: str | None = None
    mode: str | None = None
    hold: str | None = None
    expiry: int | None = None
    issuer: str | None = None
    target: str | None = None

    def __post_init__(self):
        if self.verb not in COMMAND_VERBS:
            raise ConfigError(f"unknown command verb {self.verb!r}")

    @classmethod
    def from_mapping(cls, spec: Mapping[str, Any], issuer: str | None = None) -> "Command":
        known = {"verb", "name", "value", "units", "mode", "hold", "expiry", "issuer", "target", "type"}
        extra = set(spec) - known
        if extra:
            raise ConfigError(f"unknown command fields {sorted(extra)}")
        expiry = spec.get("expiry")
        return cls(spec["verb"], spec.get("name"), spec.get("value"), spec.get("units"),
                   spec.get("mode"), spec.get("hold"), None if expiry is None else int(expiry),
                   spec.get("issuer", issuer), spec.get("target"))

    def to_payload(self) -> dict[str, Any]:
        out: dict[str, Any] = {"type": "command", "verb": self.verb}
        for k in ("name", "value", "units", "mode", "hold", "expiry", "target"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out


@dataclass(frozen=True, slots=True)
class Override:
    issuer: str
    expiry: int
    hold: str | None = None
    installed: int = 0


@dataclass(frozen=True, slots=True)
class Latch:
    """Virtual sensor: a channel set/cleared by message payload types."""

    channel: str
    set_on: tuple[str, ...]
    clear_on: tuple[str, ...] = ()
    set_value: float = 1.0
    clear_value: float = 0.0


@dataclass(frozen=True)
class EnvFeedback:
    channels: Mapping[str, float] = field(default_factory=dict)
    staleness: int = 0

    def __post_init__(self):
        if self.staleness < 0:
            raise ConfigError("staleness must be >= 0")


@dataclass(frozen=True, slots=True)
class Outgoing:
    kind: Interaction
    address: str  # topic for Cooperation, node path otherwise
    payload: Mapping[str, Any]


@dataclass(frozen=True, slots=True)
class Event:
    row: str  # "transition" | "event"
    name: str
    fields: Mapping[str, Any]


@dataclass(frozen=True)
class AutonomyBlock:
    path: str
    machine: StateMachine
    current_state: str
    mode: str = NORMAL
    override: Override | None = None
    params: Mapping[str, Param] = field(default_factory=dict)
    superiors: frozenset[str] = frozenset()
    latches: tuple[Latch, ...] = ()
    memory: Mapping[str, float] = field(default_factory=dict)
    subscribes: tuple[str, ...] = ()
    publishes: tuple[str, ...] = ()
    sends_to: tuple[str, ...] = ()
    accepts: tuple[str, ...] = ()
    inputs: tuple[str, ...] = ()
    ack_topic: str | None = None

    def __post_init__(self):
        if self.current_state not in self.machine.states:
            raise ConfigError(f"{self.path}: state {self.current_state!r} not in machine {self.machine.name}")


@dataclass(frozen=True)
class StepResult:
    block: AutonomyBlock
    reference: Reference
    outbox: tuple[Outgoing, ...] = ()
    events: tuple[Event, ...] = ()


def make_autonomy_block(path: str, machine: StateMachine, *, params: Mapping[str, Any] | None = None,
                        superiors: Iterable[str] = (), latches: Iterable[Latch | Mapping] = (),
                        subscribes: Iterable[str] = (), publishes: Iterable[str] = (),
                        sends_to: Iterable[str] = (), accepts: Iterable[str] = COMMAND_VERBS,
                        inputs: Iterable[str] = (), ack_topic: str | None = None) -> AutonomyBlock:
    table = dict(machine.default_params)
    for k, v in (params or {}).items():
        if k not in table:
            raise ConfigError(f"{path}: unknown parameter {k!r} for machine {machine.name}")
        p = _param(v)
        table[k] = Param(p.value, p.units or table[k].units)
    lts = tuple(l if isinstance(l, Latch) else
                Latch(l["channel"], tuple(_aslist(l["set_on"])), tuple(_aslist(l.get("clear_on", ()))),
                      float(l.get("set_value", 1.0)), float(l.get("clear_value", 0.0)))
                for l in latches)
    return AutonomyBlock(path, _bind(machine, path), machine.initial, NORMAL, None,
                         MappingProxyType(table), frozenset(superiors), lts,
                         MappingProxyType({l.channel: l.clear_value for l in lts}),
                         tuple(subscribes), tuple(publishes), tuple(_resolve_path(s, path) for s in sends_to),
                         tuple(accepts), tuple(inputs), ack_topic)


def _aslist(x) -> list:
    return [x] if isinstance(x, str) else list(x)


def _resolve_path(p: str, base: str) -> str:
    """Resolve "./child" and "../peer" against ``base``; absolute paths pass through."""
    if not (p == "." or p.startswith("./") or p.startswith("../") or p == ".."):
        return p
    parts = base.split("/")
    for seg in p.split("/"):
        if seg == "..":
            if not parts:
                raise ConfigError(f"relative path {p!r} climbs above the root from {base!r}")
            parts.pop()
        elif seg not in (".", ""):
            parts.append(seg)
    return "/".join(parts)


def _bind(machine: StateMachine, path: str) -> StateMachine:
    """Resolve relative node addresses ("./child") against the owning node."""

    def fix_action(a: Action) -> Action:
        if a.kind != "send":
            return a
        payload = dict(a.payload)
        if isinstance(payload.get("target"), str):
            payload["target"] = _resolve_path(payload["target"], path)
        return replace(a, to=_resolve_path(a.to, path), payload=payload)

    states = {k: replace(s, on_enter=tuple(fix_action(a) for a in s.on_enter))
              for k, s in machine.states.items()}
    trans = tuple(replace(t, actions=tuple(fix_action(a) for a in t.actions)) for t in machine.transitions)
    return StateMachine(machine.name, states, trans, machine.initial, machine.safe_state,
                        machine.default_params, strict=machine.strict)


def override_in_force(block: AutonomyBlock, tick: int) -> bool:
    """True while an override exists and ``tick < expiry`` (exclusive bound)."""
    return block.override is not None and tick < block.override.expiry


def apply_mode_command(block: AutonomyBlock, command: Command | Mapping[str, Any],
                       tick: int = 0) -> AutonomyBlock:
    """Apply set-mode / set-param / override / release-override.

    Raises :class:`ConfigError` for unknown parameters or mismatched units.
    """
    if not isinstance(command, Command):
        command = Command.from_mapping(command)
    verb = command.verb
    if verb == "set-param":
        if command.name not in block.params:
            raise ConfigError(f"{block.path}: unknown parameter {command.name!r}")
        old = block.params[command.name]
        if command.units is not None and command.units != old.units:
            raise ConfigError(f"{block.path}: parameter {command.name!r} is in {old.units!r}, "
                              f"command gave {command.units!r}")
        try:
            value = float(command.value)
        except (TypeError, ValueError):
            raise ConfigError(f"{block.path}: non-numeric value for {command.name!r}") from None
        if not math.isfinite(value):
            raise ConfigError(f"{block.path}: non-finite value for {command.name!r}")
        params = dict(block.params)
        params[command.name] = Param(value, old.units)
        return replace(block, params=MappingProxyType(params))
    if verb == "set-mode":
        mode = str(command.mode or command.value or "").upper()
        if mode not in (NORMAL, SAFE):
            raise ConfigError(f"{block.path}: unknown mode {mode!r}")
        state = block.current_state
        if mode == SAFE and block.machine.safe_state is not None:
            state = block.machine.safe_state
        return replace(block, mode=mode, current_state=state)
    if verb == "override":
        if command.expiry is None:
            raise ConfigError(f"{block.path}: override needs an expiry tick")
        if command.hold is not None and command.hold not in block.machine.states:
            raise ConfigError(f"{block.path}: override holds unknown state {command.hold!r}")
        ov = Override(command.issuer or "superior", command.expiry, command.hold, tick)
        state = command.hold if command.hold is not None else block.current_state
        return replace(block, override=ov, current_state=state)
    # release-override
    return replace(block, override=None)


def _resolve(value: Any, inputs: Mapping[str, float], params: Mapping[str, Param]) -> Any:
    if isinstance(value, str):
        if value.startswith("$"):
            try:
                return params[value[1:]].value
            except KeyError:
                raise ConfigError(f"unknown parameter {value!r}") from None
        if value.startswith("@"):
            try:
                return inputs[value[1:]]
            except KeyError:
                raise ConfigError(f"missing input channel {value!r}") from None
    return value


def _reference(block: AutonomyBlock, inputs, params) -> Reference:
    ref = block.machine.states[block.current_state].reference
    target = _resolve(ref.target, inputs, params)
    return Reference(float(_resolve(ref.setpoint, inputs, params)), ref.mode,
                     None if target is None else float(target), ref.label)


def _run_actions(actions: Sequence[Action], path: str, inputs, params: dict,
                 outbox: list, events: list) -> None:
    for a in actions:
        if a.kind == "set_param":
            old = params.get(a.name)
            if old is None:
                raise ConfigError(f"{path}: action sets unknown parameter {a.name!r}")
            params[a.name] = Param(float(_resolve(a.value, inputs, params)), old.units)
            continue
        payload = {k: _resolve(v, inputs, params) for k, v in a.payload.items()}
        payload.setdefault("type", "command" if a.interaction is Interaction.COMMAND else "status")
        if a.kind == "publish":
            outbox.append(Outgoing(Interaction.COOPERATION, a.topic, payload))
        else:
            outbox.append(Outgoing(a.interaction, a.to, payload))


def step_autonomy_loop(block: AutonomyBlock, a: Sequence[Command | Mapping] | None = None,
                       inbox: Sequence[Message] = (), f_e: EnvFeedback | None = None,
                       f_p: float | None = None, tick: int = 0) -> StepResult:
    """One step of the A block.

    Order: commands on ``a``, then Command messages from the inbox (relayed
    down the tree when addressed deeper), then virtual-sensor latches, then at
    most one guarded transition unless an override is in force.  Pure: the
    input block is never mutated.
    """
    events: list[Event] = []
    outbox: list[Outgoing] = []
    start_state = block.current_state
    path = block.path

    for cmd in a or ():
        if not isinstance(cmd, Command):
            cmd = Command.from_mapping(cmd)
        if cmd.issuer is not None and block.superiors and cmd.issuer not in block.superiors:
            events.append(Event("event", "command_rejected",
                                {"source": "a", "verb": cmd.verb, "issuer": cmd.issuer,
                                 "reason": "not-superior"}))
            continue
        block = apply_mode_command(block, cmd, tick)
        events.append(Event("event", "command_applied", _cmd_fields(cmd, "a")))

    memory = None
    for msg in inbox:
        if msg.kind is Interaction.COMMAND:
            if msg.sender not in block.superiors:
                events.append(Event("event", "command_rejected",
                                    {"sender": msg.sender, "reason": "not-superior", "seq": msg.seq}))
                continue
            target = msg.payload.get("target")
            if target and target != path:
                if target.startswith(path + "/"):
                    hop = path + "/" + target[len(path) + 1:].split("/", 1)[0]
                    outbox.append(Outgoing(Interaction.COMMAND, hop, dict(msg.payload)))
                    events.append(Event("event", "command_relayed",
                                        {"sender": msg.sender, "to": hop, "target": target}))
                else:
                    events.append(Event("event", "command_rejected",
                                        {"sender": msg.sender, "reason": "misrouted", "target": target}))
                continue
            try:
                cmd = Command.from_mapping(msg.payload, issuer=msg.sender)
                block = apply_mode_command(block, cmd, tick)
            except ConfigError as exc:
                events.append(Event("event", "command_rejected",
                                    {"sender": msg.sender, "reason": "invalid", "detail": str(exc)}))
                continue
            events.append(Event("event", "command_applied", _cmd_fields(cmd, msg.sender)))
            if block.ack_topic:
                outbox.append(Outgoing(Interaction.COOPERATION, block.ack_topic,
                                       {"type": "ack", "verb": cmd.verb, "issuer": msg.sender,
                                        "seq": msg.seq}))
            continue
        ptype = msg.payload.get("type")
        for latch in block.latches:
            if ptype in latch.set_on:
                memory = dict(block.memory) if memory is None else memory
                memory[latch.channel] = latch.set_value
            elif ptype in latch.clear_on:
                memory = dict(block.memory) if memory is None else memory
                memory[latch.channel] = latch.clear_value
    if memory is not None:
        block = replace(block, memory=MappingProxyType(memory))

    inputs: dict[str, float] = dict(f_e.channels) if f_e is not None else {}
    inputs.update(block.memory)
    if f_p is not None:
        inputs["f_p"] = f_p
    if f_e is not None:
        inputs["staleness"] = float(f_e.staleness)

    entered: str | None = None
    if block.current_state != start_state:
        cause = "override" if block.override is not None and block.override.hold == block.current_state \
            else "forced"
        events.append(Event("transition", f"{start_state}->{block.current_state}",
                            {"from": start_state, "to": block.current_state, "sscc": SSCC.SURVIVAL.value
                             if cause == "forced" else SSCC.COLLECTIVE.value, "cause": cause}))
        entered = block.current_state

    if block.override is not None and not override_in_force(block, tick):
        block = replace(block, override=None)
        events.append(Event("event", "override_expired", {"state": block.current_state}))

    params = None
    if not override_in_force(block, tick):
        only = SSCC.SURVIVAL if block.mode == SAFE else None
        t = evaluate_transitions(block.machine, block.current_state, inputs, block.params, only)
        if t is not None:
            params = dict(block.params)
            _run_actions(t.actions, path, inputs, params, outbox, events)
            block = replace(block, current_state=t.dest)
            events.append(Event("transition", t.label, {"from": t.source, "to": t.dest,
                                                        "sscc": t.sscc.value if t.sscc else "none",
                                                        "cause": "guard"}))
            entered = t.dest
    if entered is not None:
        params = dict(block.params) if params is None else params
        _run_actions(block.machine.states[entered].on_enter, path, inputs, params, outbox, events)
    if params is not None and params != dict(block.params):
        block = replace(block, params=MappingProxyType(params))

    return StepResult(block, _reference(block, inputs, block.params), tuple(outbox), tuple(events))


def _cmd_fields(cmd: Command, source: str) -> dict[str, Any]:
    out = {"source": source, "verb": cmd.verb}
    for k in ("name", "value", "mode", "hold", "expiry"):
        v = getattr(cmd, k)
        if v is not None:
            out[k] = v
    return out
