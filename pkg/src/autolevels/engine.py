"""Deterministic fixed-step scheduler for a loaded model and scenario.

Each tick runs the phases in a fixed order:

1. environment update (illumination, sun angle, load disturbance, flares,
   eclipse forecasts, due faults)
2. bus delivery of messages sent last tick
3. scheduled autonomy commands ``a``
4. autonomy blocks, superior first (level rank, then path)
5. control loops
6. world physics, then environment sensors ``s_e`` and filters ``F_e``

and then appends its rows to the trace.  All randomness comes from one seed,
split into an independent stream per ``node:channel`` key.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .autonomy import (AutonomyBlock, Command, EnvFeedback, Reference, make_autonomy_block,
                       step_autonomy_loop)
from .bus import Bus, Interaction, RelationshipGraph
from .core_loops import ControlLoop, ControlLoopState, make_loop, step_control_loop
from .errors import ConfigError, LoadError, SimulationFault, UsageError
from .power.physics import EstimatorState, degradation_estimator_step
from .taxonomy import Finding, Tree, lint_autonomy_coverage, load_model, machine_for, read_document
from .trace import Trace, format_header, format_row

log = logging.getLogger(__name__)

FAULT_KINDS = ("overcurrent", "solar_flare", "sensor_bias", "sensor_dropout",
               "panel_degradation", "inject_message")


# -- environment --------------------------------------------------------------

def illumination(t: float, period: float, eclipse_fraction: float, ramp: float = 0.0) -> float:
    """Square-wave sunlight: 0 during the last ``eclipse_fraction`` of each orbit.

    Negative times extend periodically.  A positive ``ramp`` (seconds) adds
    linear dimming just before the eclipse and brightening just after it.
    """
    if period <= 0:
        raise UsageError(f"orbit period must be positive, got {period}")
    if not 0.0 <= eclipse_fraction < 1.0:
        raise UsageError(f"eclipse fraction must be in [0, 1), got {eclipse_fraction}")
    if eclipse_fraction == 0.0:
        return 1.0
    phase = t % period
    start = period * (1.0 - eclipse_fraction)
    if phase >= start:
        return 0.0
    if ramp > 0.0:
        if phase > start - ramp:
            return (start - phase) / ramp
        if phase < ramp:
            return phase / ramp
    return 1.0


def eclipse_forecast(tick: int, lead: int, *, dt: float, period: float, eclipse_fraction: float,
                     ramp: float = 0.0) -> dict[str, Any] | None:
    """Forecast payload if the shadow state changes exactly ``lead`` ticks from now."""
    if lead < 1:
        raise UsageError(f"forecast lead must be >= 1, got {lead}")
    if eclipse_fraction == 0.0:
        return None
    k = tick + lead
    now = illumination(k * dt, period, eclipse_fraction, ramp) < 1.0
    before = illumination((k - 1) * dt, period, eclipse_fraction, ramp) < 1.0
    if now and not before:
        return {"type": "eclipse_start", "at": k}
    if before and not now:
        return {"type": "eclipse_end", "at": k}
    return None


@dataclass(frozen=True)
class EnvironmentSpec:
    orbit_period: float = 6000.0
    eclipse_fraction: float = 0.0
    ramp: float = 0.0
    sun_angle: float = 0.0
    sun_rate: float = 0.0  # rad/s
    forecast_lead: int | None = None
    forecast_topic: str = "illumination"
    forecast_sender: str = "ephemeris"
    weather_topic: str | None = "space_weather"
    weather_sender: str = "space_weather"

    @classmethod
    def from_mapping(cls, spec: Mapping[str, Any] | None) -> "EnvironmentSpec":
        spec = dict(spec or {})
        fc = spec.pop("forecast", None) or {}
        kw = {}
        for key in ("orbit_period", "eclipse_fraction", "ramp", "sun_angle", "sun_rate"):
            if key in spec:
                kw[key] = float(spec.pop(key))
        if "weather_topic" in spec:
            kw["weather_topic"] = spec.pop("weather_topic")
        if fc:
            kw["forecast_lead"] = int(fc.get("lead", 10))
            kw["forecast_topic"] = fc.get("topic", "illumination")
            kw["forecast_sender"] = fc.get("sender", "ephemeris")
        if spec:
            raise LoadError(f"unknown environment settings {sorted(spec)}")
        env = cls(**kw)
        if env.orbit_period <= 0 or not 0.0 <= env.eclipse_fraction < 1.0:
            raise LoadError("environment needs orbit_period > 0 and 0 <= eclipse_fraction < 1")
        if env.forecast_lead is not None and env.forecast_lead < 1:
            raise LoadError("forecast lead must be >= 1")
        return env

    def eclipse_starts(self, ticks: int, dt: float) -> list[int]:
        """Ticks at which the shadow begins, within ``[1, ticks)``."""
        out = []
        prev = illumination(0.0, self.orbit_period, self.eclipse_fraction, self.ramp) < 1.0
        for k in range(1, ticks):
            now = illumination(k * dt, self.orbit_period, self.eclipse_fraction, self.ramp) < 1.0
            if now and not prev:
                out.append(k)
            prev = now
        return out


# -- seeded streams -----------------------------------------------------------

def _key_words(key: str) -> list[int]:
    h = hashlib.sha256(key.encode("utf-8")).digest()
    return [int.from_bytes(h[i:i + 4], "little") for i in range(0, 16, 4)]


class Stream:
    """Buffered draws for one channel; independent of every other channel."""

    __slots__ = ("_gen", "_buf", "_i", "kind", "amp")
    BLOCK = 2048

    def __init__(self, seed: int, key: str, kind: str, amp: float):
        self._gen = np.random.default_rng(np.random.SeedSequence([seed, *_key_words(key)]))
        self.kind = kind
        self.amp = amp
        self._buf: list[float] = []
        self._i = 0

    def draw(self) -> float:
        if self._i >= len(self._buf):
            if self.kind == "normal":
                self._buf = self._gen.normal(0.0, self.amp, self.BLOCK).tolist()
            else:
                self._buf = self._gen.uniform(-self.amp, self.amp, self.BLOCK).tolist()
            self._i = 0
        v = self._buf[self._i]
        self._i += 1
        return v


# -- scenario -----------------------------------------------------------------

@dataclass(frozen=True)
class ScheduledCommand:
    tick: int
    target: str
    command: Command


@dataclass(frozen=True)
class FaultEvent:
    tick: int
    kind: str
    target: str | None
    spec: Mapping[str, Any]


@dataclass(frozen=True)
class Scenario:
    name: str
    tree: Tree
    graph: RelationshipGraph
    dt: float
    ticks: int
    seed: int
    environment: EnvironmentSpec
    world: Mapping[str, Any]
    noise: Mapping[str, float]
    disturbance: Mapping[str, float]
    commands: tuple[ScheduledCommand, ...]
    faults: tuple[FaultEvent, ...]
    assertions: Mapping[str, Any]
    digest: str
    variant: str | None = None
    source: str | None = None
    description: str = ""


def _merge(base: dict, over: Mapping) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(dict(out[k]), v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def shipped_scenarios() -> list[str]:
    d = resources.files("autolevels").joinpath("data", "scenarios")
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".yaml"))


def scenario_path(source: str | Path) -> Path:
    p = Path(source)
    if p.exists():
        return p
    shipped = resources.files("autolevels").joinpath("data", "scenarios", f"{source}.yaml")
    if shipped.is_file():
        return Path(str(shipped))
    raise LoadError("no such scenario file or shipped scenario", str(source))


def load_scenario(source: str | Path, variant: str | None = None) -> Scenario:
    path = scenario_path(source)
    doc, raw = read_document(path)
    return scenario_from_mapping(doc, raw=raw, base_dir=path.parent, variant=variant, source=str(path))


def scenario_from_mapping(doc: Mapping[str, Any], *, raw: bytes | None = None,
                          base_dir: Path | None = None, variant: str | None = None,
                          source: str | None = None) -> Scenario:
    doc = dict(doc)
    variants = doc.pop("variants", None) or {}
    if variant is not None:
        if variant not in variants:
            raise LoadError(f"scenario has no variant {variant!r} (has {sorted(variants)})", source)
        doc = _merge(doc, variants[variant])
    if raw is None:
        raw = repr(sorted(doc.items(), key=str)).encode()

    model = doc.get("model", "power_demo")
    if isinstance(model, Mapping):
        tree, graph = load_model(model)
        model_bytes = repr(model).encode()
    else:
        mpath = Path(base_dir or ".") / str(model)
        if mpath.is_file():
            mdoc, model_bytes = read_document(mpath)
            tree, graph = load_model(mdoc)
        else:
            tree, graph = load_model(str(model))
            from .taxonomy import shipped_model_path
            model_bytes = Path(str(shipped_model_path(str(model)))).read_bytes()
    digest = hashlib.sha256(raw + b"\0" + model_bytes + b"\0" + str(variant).encode()).hexdigest()

    try:
        dt = float(doc.get("dt", 1.0))
        ticks = int(doc.get("ticks", 1))
        seed = int(doc.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise LoadError(f"bad dt/ticks/seed: {exc}", source) from None
    if not dt > 0 or not math.isfinite(dt):
        raise LoadError(f"dt must be positive, got {dt}", source)
    if ticks < 1:
        raise LoadError(f"ticks must be >= 1, got {ticks}", source)
    if seed < 0:
        raise LoadError("seed must be non-negative", source)
    env = EnvironmentSpec.from_mapping(doc.get("environment"))

    def channel_map(key):
        out = {}
        for k, v in (doc.get(key) or {}).items():
            node, _, chan = str(k).partition(":")
            if not chan:
                raise LoadError(f"{key} key {k!r} must be 'node:channel'", source)
            if node != "env" and node not in tree.nodes:
                raise LoadError(f"{key} refers to unknown node", node)
            if float(v) < 0:
                raise LoadError(f"{key} amplitude for {k!r} must be >= 0", source)
            out[str(k)] = float(v)
        return out

    noise, disturbance = channel_map("noise"), channel_map("disturbance")

    commands = []
    for c in doc.get("commands") or ():
        target = c.get("target")
        node = tree.nodes.get(target)
        if node is None:
            raise LoadError("command targets unknown node", str(target))
        if node.autonomy is None:
            raise LoadError("command targets a node without an autonomy block", target)
        issuer = c.get("issuer", node.parent)
        try:
            cmd = Command.from_mapping(c["command"], issuer=issuer)
        except (ConfigError, KeyError) as exc:
            raise LoadError(f"bad scheduled command: {exc}", target) from None
        if cmd.verb == "set-param":
            machine = machine_for(node.autonomy)
            if cmd.name not in machine.default_params:
                raise LoadError(f"set-param of unknown parameter {cmd.name!r}", target)
        commands.append(ScheduledCommand(int(c["tick"]), target, cmd))

    faults = []
    for f in doc.get("faults") or ():
        kind = f.get("kind")
        if kind not in FAULT_KINDS:
            raise LoadError(f"unknown fault kind {kind!r}", source)
        target = f.get("target")
        check = target
        if kind == "inject_message":
            check = f.get("sender")
        if kind in ("sensor_bias", "sensor_dropout"):
            if not target or ":" not in target:
                raise LoadError(f"{kind} target must be 'node:channel'", str(target))
            check = target.split(":", 1)[0]
        if check is not None and check not in tree.nodes:
            raise LoadError(f"{kind} fault targets unknown node", str(check))
        spec = {k: v for k, v in f.items() if k not in ("tick", "kind", "target")}
        faults.append(FaultEvent(int(f["tick"]), kind, target, spec))

    return Scenario(str(doc.get("name", "scenario")), tree, graph, dt, ticks, seed, env,
                    dict(doc.get("world") or {"type": "none"}), noise, disturbance,
                    tuple(sorted(commands, key=lambda c: c.tick)),
                    tuple(sorted(faults, key=lambda f: f.tick)),
                    dict(doc.get("assertions") or {}), digest, variant, source,
                    str(doc.get("description", "")))


# -- worlds -------------------------------------------------------------------

class NullWorld:
    """No physics: loops run against the bare environment."""

    def __init__(self, spec, dt, nodes):
        self.q: dict[str, float] = {}

    def targets(self):
        return set()

    def context(self, env):
        return dict(env)

    def quantities(self, env):
        q = self.q
        q.update(env)
        return q

    def apply_fault(self, kind, target, spec, tick):
        return None

    def begin_tick(self, tick):
        pass

    def step(self, tick, env, loops):
        return [], []


def _power_world(spec, dt, nodes):
    from .power.world import make_power_world
    return make_power_world(spec, dt, nodes)


WORLDS: dict[str, Callable] = {"none": NullWorld, "power": _power_world}


# -- environment sensors ------------------------------------------------------

@dataclass
class EnvSensor:
    channel: str
    source: str
    kind: str = "passthrough"
    alpha: float = 1.0
    window: float = 50.0
    rho: float = 0.9
    nominal: float = 1.0
    gate: str | None = None
    flag: str | None = None
    value: float = 0.0
    raw: float = 0.0
    staleness: int = 0
    est: EstimatorState | None = None

    @classmethod
    def from_mapping(cls, channel: str, spec: Mapping[str, Any] | str, path: str) -> "EnvSensor":
        if isinstance(spec, str):
            spec = {"source": spec}
        filt = dict(spec.get("filter") or {"type": "passthrough"})
        kind = filt.pop("type", "passthrough")
        s = cls(channel, spec.get("source", channel), kind)
        if kind == "lowpass":
            s.alpha = float(filt.pop("alpha", 0.2))
            if not 0.0 < s.alpha <= 1.0:
                raise LoadError(f"sensor {channel}: alpha must be in (0, 1]", path)
        elif kind == "peak_estimator":
            s.window = float(filt.pop("window", 50.0))
            s.rho = float(filt.pop("rho", 0.9))
            s.nominal = float(filt.pop("nominal", 1.0))
            s.gate = filt.pop("gate", None)
            s.flag = filt.pop("flag", None)
            if s.window < 1:
                raise LoadError(f"sensor {channel}: window must be >= 1", path)
        elif kind != "passthrough":
            raise LoadError(f"sensor {channel}: unknown filter {kind!r}", path)
        if filt:
            raise LoadError(f"sensor {channel}: unknown filter settings {sorted(filt)}", path)
        return s

    def channels(self) -> tuple[str, ...]:
        return (self.channel, self.flag) if self.flag else (self.channel,)

    def reset(self, q: Mapping[str, float]) -> None:
        self.raw = q[self.source]
        if self.kind == "peak_estimator":
            self.est = EstimatorState(self.nominal)
            self.value = self.nominal
        else:
            self.value = self.raw

    def sample(self, raw: float, q: Mapping[str, float], dropout: bool):
        """Update from one raw sample; returns an optional estimator payload."""
        if dropout:
            self.staleness += 1
            return None
        self.staleness = 0
        self.raw = raw
        if self.kind == "lowpass":
            self.value = self.alpha * raw + (1.0 - self.alpha) * self.value
        elif self.kind == "peak_estimator":
            gated = bool(q[self.gate]) if self.gate else True
            self.est, payload = degradation_estimator_step(self.est, raw, gated, nominal=self.nominal,
                                                           window=self.window, rho=self.rho)
            self.value = self.est.estimate
            return payload
        else:
            self.value = raw
        return None

    def write(self, out: dict[str, float]) -> None:
        out[self.channel] = self.value
        if self.flag:
            out[self.flag] = 0.0 if self.est.armed else 1.0


# -- runtime ------------------------------------------------------------------

class LintFailure(ConfigError):
    def __init__(self, findings: Sequence[Finding]):
        self.findings = list(findings)
        super().__init__("model fails lint: " + "; ".join(str(f) for f in self.findings))


@dataclass
class _Node:
    path: str
    loop: ControlLoop | None = None
    state: ControlLoopState | None = None
    fixed_r: float = 0.0
    block: AutonomyBlock | None = None
    reference: Reference | None = None
    sensors: list[EnvSensor] = field(default_factory=list)
    f_e: dict[str, float] = field(default_factory=dict)
    d_stream: Stream | None = None
    n_stream: Stream | None = None


@dataclass
class RunResult:
    scenario: Scenario
    trace: Trace
    blocks: dict[str, AutonomyBlock]
    loops: dict[str, ControlLoopState]
    world: Any
    violations: int
    messages: int


class Simulation:
    """One run's mutable state.  Use :func:`run` unless stepping by hand."""

    def __init__(self, scenario: Scenario, seed: int | None = None, *, bus_enabled: bool = True):
        sc = scenario
        self.sc = sc
        self.seed = sc.seed if seed is None else int(seed)
        if self.seed < 0:
            raise UsageError("seed must be non-negative")
        self.dt = sc.dt
        tree = sc.tree
        topics = set(tree.topics)
        env = sc.environment
        if env.forecast_lead is not None:
            topics.add(env.forecast_topic)
        if env.weather_topic:
            topics.add(env.weather_topic)
        self.bus = Bus(sc.graph, topics, enabled=bus_enabled)
        wtype = sc.world.get("type", "none")
        if wtype not in WORLDS:
            raise LoadError(f"unknown world type {wtype!r}")
        self.world = WORLDS[wtype](sc.world, sc.dt, tree.nodes)

        self.nodes: dict[str, _Node] = {}
        for tn in tree.top_down():
            node = _Node(tn.path)
            ctrl = tn.control
            if ctrl is not None:
                try:
                    node.loop = make_loop(ctrl)
                except KeyError as exc:
                    raise LoadError(f"control loop missing {exc}", tn.path) from None
                node.state = node.loop.initial_state()
                node.fixed_r = float(ctrl.get("r", 0.0))
            auto = tn.autonomy
            if auto is not None:
                machine = machine_for(auto)
                node.block = make_autonomy_block(
                    tn.path, machine, params=auto.get("params"), superiors=tree.ancestors(tn.path),
                    latches=auto.get("latches") or (), subscribes=auto.get("subscribes") or (),
                    publishes=auto.get("publishes") or (), sends_to=auto.get("sends_to") or (),
                    accepts=tuple(auto.get("accepts") or ()), inputs=tuple(auto.get("inputs") or ()),
                    ack_topic=auto.get("ack_topic"))
                for topic in node.block.subscribes:
                    self.bus.subscribe(tn.path, topic)
                for ch, spec in (auto.get("sensors") or {}).items():
                    node.sensors.append(EnvSensor.from_mapping(ch, spec, tn.path))
            self.nodes[tn.path] = node
        self.order = [n for n in self.nodes.values() if n.block is not None]
        self.loop_nodes = sorted((n for n in self.nodes.values() if n.loop is not None), key=lambda n: n.path)
        self.sensor_nodes = sorted((n for n in self.order if n.sensors), key=lambda n: n.path)
        self.blocks_by_path = {n.path: n for n in self.order}

        for key, amp in sc.noise.items():
            node, _, chan = key.partition(":")
            if amp > 0 and node in self.nodes:
                if chan == "s_p":
                    self.nodes[node].n_stream = Stream(self.seed, key, "normal", amp)
        self.sensor_noise = {k: Stream(self.seed, k, "normal", a) for k, a in sc.noise.items()
                             if a > 0 and not k.endswith(":s_p")}
        for key, amp in sc.disturbance.items():
            node, _, chan = key.partition(":")
            if amp > 0 and chan == "d_p" and node in self.nodes:
                self.nodes[node].d_stream = Stream(self.seed, key, "uniform", amp)
        self.env_streams = {k.split(":", 1)[1]: Stream(self.seed, k, "uniform", a)
                            for k, a in sc.disturbance.items() if k.startswith("env:") and a > 0}

        self.commands: dict[int, list[ScheduledCommand]] = {}
        for c in sc.commands:
            self.commands.setdefault(c.tick, []).append(c)
        self.faults: dict[int, list[FaultEvent]] = {}
        for f in sc.faults:
            self.faults.setdefault(f.tick, []).append(f)
        self.expiries: dict[int, list[tuple[str, str, tuple]]] = {}
        self.bias: dict[str, float] = {}
        self.dropout: set[str] = set()
        self.flare_until = -1

        self.env = self._environment(0, draw=False)
        q = self.world.quantities(self.env)
        for n in self.sensor_nodes:
            for s in n.sensors:
                if s.source not in q or (s.gate and s.gate not in q):
                    raise LoadError(f"sensor {s.channel} reads unknown quantity {s.source!r}", n.path)
                s.reset(q)
                s.write(n.f_e)
        self.messages = 0
        self.lines: list[str] = []

    # -- phases -------------------------------------------------------------

    def _environment(self, tick: int, draw: bool = True) -> dict[str, float]:
        e = self.sc.environment
        t = tick * self.dt
        env = {
            "t": t,
            "illumination": illumination(t, e.orbit_period, e.eclipse_fraction, e.ramp),
            "sun_angle": e.sun_angle + e.sun_rate * t,
            "flare": 1.0 if tick < self.flare_until else 0.0,
        }
        for chan, s in self.env_streams.items():
            env[f"d_{chan}"] = s.draw() if draw else 0.0
        return env

    def _message_rows(self, tick: int, phase: int, rows: list) -> None:
        for entry in self.bus.drain_log():
            m = entry.message
            node = entry.recipient if entry.verdict == "delivered" else m.sender
            to = entry.recipient if m.kind is not Interaction.COOPERATION or entry.verdict == "delivered" \
                else m.address
            items = [("kind", m.kind.value), ("verdict", entry.verdict), ("seq", m.seq),
                     ("sent_tick", m.sent_tick), ("sender", m.sender), ("to", to),
                     ("topic", m.address if m.kind is Interaction.COOPERATION else None),
                     ("ptype", m.payload_type)]
            if entry.reason:
                items.append(("reason", entry.reason))
            items.extend((f"p.{k}", v) for k, v in sorted(m.payload.items()))
            if entry.verdict == "delivered":
                self.messages += 1
            rows.append((node, format_row(tick, phase, "message", node, entry.verdict, items)))

    def _apply_fault(self, tick: int, f: FaultEvent, rows: list) -> None:
        items: list[tuple[str, Any]] = [("kind", f.kind), ("target", f.target)]
        spec = f.spec
        node = f.target.split(":", 1)[0] if f.target else "env"
        duration = spec.get("duration")
        end = None if duration is None else tick + int(duration)
        if f.kind == "sensor_bias":
            self.bias[f.target] = self.bias.get(f.target, 0.0) + float(spec["magnitude"])
            items.append(("magnitude", float(spec["magnitude"])))
            if end is not None:
                self.expiries.setdefault(end, []).append(("bias", f.target, (float(spec["magnitude"]),)))
        elif f.kind == "sensor_dropout":
            self.dropout.add(f.target)
            if end is not None:
                self.expiries.setdefault(end, []).append(("dropout", f.target, ()))
        elif f.kind == "solar_flare":
            node = f.target or "env"
            dur = int(spec.get("duration", 1))
            self.flare_until = max(self.flare_until, tick + dur)
            self.env["flare"] = 1.0
            got = self.world.apply_fault(f.kind, f.target, spec, tick) or {}
            items.extend(sorted(got.items()))
            items.append(("duration", dur))
            self.expiries.setdefault(tick + dur, []).append(("flare", node, ()))
            if self.sc.environment.weather_topic:
                self.bus.publish(self.sc.environment.weather_sender, self.sc.environment.weather_topic,
                                 {"type": "flare_start", "until": tick + dur}, tick)
        elif f.kind == "inject_message":
            kind = Interaction(spec.get("interaction", "Command"))
            sender = spec["sender"]
            node = sender
            items.append(("sender", sender))
            payload = dict(spec.get("payload") or {})
            if kind is Interaction.COOPERATION:
                self.bus.publish(sender, spec["topic"], payload, tick)
            else:
                self.bus.send(kind, sender, spec["to"], payload, tick)
        else:
            got = self.world.apply_fault(f.kind, f.target, spec, tick)
            if got is None:
                raise ConfigError(f"world does not support fault kind {f.kind!r}")
            items.extend(sorted(got.items()))
        rows.append((node, format_row(tick, 1, "event", node, "fault", items)))

    def _expire(self, tick: int, rows: list) -> None:
        for what, key, extra in self.expiries.pop(tick, ()):
            node = key.split(":", 1)[0]
            if what == "bias":
                self.bias[key] -= extra[0]
                if self.bias[key] == 0.0:
                    del self.bias[key]
            elif what == "dropout":
                self.dropout.discard(key)
            elif what == "flare":
                if tick < self.flare_until:
                    continue
                if self.sc.environment.weather_topic:
                    self.bus.publish(self.sc.environment.weather_sender, self.sc.environment.weather_topic,
                                     {"type": "flare_clear"}, tick)
            rows.append((node, format_row(tick, 1, "event", node, "fault_cleared",
                                          (("kind", what), ("target", key)))))

    def step(self, tick: int) -> None:
        p1: list = []
        p2: list = []
        p3: list = []
        p4: list = []
        p5: list = []
        p6: list = []
        bus = self.bus
        world = self.world
        sc = self.sc

        # (1) environment
        env = self._environment(tick)
        self.env = env
        world.begin_tick(tick)
        self._expire(tick, p1)
        env["flare"] = 1.0 if tick < self.flare_until else 0.0
        for f in self.faults.get(tick, ()):
            self._apply_fault(tick, f, p1)
        lead = sc.environment.forecast_lead
        if lead is not None and sc.environment.eclipse_fraction > 0 and bus.enabled:
            e = sc.environment
            fc = eclipse_forecast(tick, lead, dt=self.dt, period=e.orbit_period,
                                  eclipse_fraction=e.eclipse_fraction, ramp=e.ramp)
            if fc is not None:
                bus.publish(e.forecast_sender, e.forecast_topic, fc, tick)
        self._message_rows(tick, 1, p1)
        p1.append(("env", format_row(tick, 1, "signal", "env", "env", sorted(env.items()))))

        # (2) delivery
        inboxes = bus.deliver(tick)
        self._message_rows(tick, 2, p2)

        # (3) + (4) commands and autonomy, superior first
        due = self.commands.get(tick, ())
        for node in self.order:
            block = node.block
            a = [c.command for c in due if c.target == node.path]
            fe = EnvFeedback(node.f_e, max((s.staleness for s in node.sensors), default=0))
            f_p = node.state.f_p if node.state is not None else None
            res = step_autonomy_loop(block, a, inboxes.get(node.path, ()), fe, f_p, tick)
            node.block = res.block
            node.reference = res.reference
            for ev in res.events:
                phase = 3 if ev.fields.get("source") == "a" else 4
                (p3 if phase == 3 else p4).append(
                    (node.path, format_row(tick, phase, ev.row, node.path, ev.name, ev.fields.items())))
            for out in res.outbox:
                if out.kind is Interaction.COOPERATION:
                    bus.publish(node.path, out.address, out.payload, tick)
                else:
                    bus.send(out.kind, node.path, out.address, out.payload, tick)
            self._message_rows(tick, 4, p4)

        # (5) control loops
        ctx = world.context(env)
        bias = self.bias
        dropout = self.dropout
        for node in self.loop_nodes:
            ref = node.reference
            if ref is None:
                r, lctx = node.fixed_r, ctx
            else:
                r = ref.setpoint
                lctx = {**ctx, "mode": ref.mode, "target": ref.target} if ref.mode else ctx
            d_p = node.d_stream.draw() if node.d_stream else 0.0
            noise = node.n_stream.draw() if node.n_stream else 0.0
            key = node.path + ":s_p"
            try:
                st = step_control_loop(node.loop, node.state, r, d_p, noise, lctx,
                                       bias=bias.get(key, 0.0) if bias else 0.0,
                                       dropout=key in dropout if dropout else False)
            except SimulationFault as exc:
                raise SimulationFault(str(exc), block=exc.block, node=node.path, tick=tick) from None
            node.state = st
            p5.append((node.path, format_row(tick, 5, "signal", node.path, "loop", (
                ("r", st.r), ("e_r", st.e_r), ("u", st.u), ("y", st.y), ("d_p", st.d_p),
                ("s_p", st.s_p), ("f_p", st.f_p)))))

        # (6) physics and environment sensors
        rows, events = world.step(tick, env, {n.path: n.state for n in self.loop_nodes})
        for node, name, items in rows:
            for _, v in items:
                if type(v) is float and not math.isfinite(v):
                    raise SimulationFault(f"non-finite {name} value", node=node, tick=tick)
            p6.append((node, format_row(tick, 6, "signal", node, name, items)))
        for node, name, items in events:
            p6.append((node, format_row(tick, 6, "event", node, name, items.items())))
        q = world.quantities(env)
        noise = self.sensor_noise
        for node in self.sensor_nodes:
            items = []
            for s in node.sensors:
                key = f"{node.path}:{s.channel}"
                raw = q[s.source]
                st = noise.get(key)
                if st is not None:
                    raw += st.draw()
                if bias:
                    raw += bias.get(key, 0.0)
                payload = s.sample(raw, q, key in dropout)
                if not math.isfinite(s.value):
                    raise SimulationFault(f"non-finite sensor {s.channel}", node=node.path, tick=tick)
                s.write(node.f_e)
                items.append((f"s.{s.channel}", s.raw))
                if payload is not None:
                    p6.append((node.path, format_row(tick, 6, "event", node.path, "estimate_crossing",
                                                     (("channel", s.channel), ("estimate", payload["estimate"]),
                                                      ("nominal", payload["nominal"])))))
            items.extend(sorted(node.f_e.items()))
            items.append(("staleness", max(s.staleness for s in node.sensors)))
            p6.append((node.path, format_row(tick, 6, "signal", node.path, "f_e", items)))

        # (7) trace
        out = self.lines
        for bucket in (p1, p2, p3, p4, p5, p6):
            bucket.sort(key=_node_key)
            out.extend(line for _, line in bucket)


def _node_key(item):
    return item[0]


def lint(tree: Tree) -> list[Finding]:
    return lint_autonomy_coverage(tree)


def run(scenario: Scenario | str | Path, seed: int | None = None, ticks: int | None = None, *,
        bus_enabled: bool = True, allow_lint_failures: bool = False,
        variant: str | None = None) -> RunResult:
    """Run a scenario and return its trace plus the final runtime state.

    ``ticks=0`` yields a header-only trace.  Raises :class:`LintFailure`
    when the model fails lint, unless ``allow_lint_failures`` is set.
    """
    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario, variant=variant)
    findings = lint(sc.tree)
    if findings:
        if not allow_lint_failures:
            raise LintFailure(findings)
        for f in findings:
            log.warning("lint: %s", f)
    n = sc.ticks if ticks is None else int(ticks)
    if n < 0:
        raise UsageError("ticks must be >= 0")
    sim = Simulation(sc, seed, bus_enabled=bus_enabled)
    header = format_header(sc.name, sc.digest, sim.seed, n, sc.dt, sc.variant, bus_enabled)
    for k in range(n):
        sim.step(k)
    return RunResult(sc, Trace(header, sim.lines), {p: m.block for p, m in sim.blocks_by_path.items()},
                     {m.path: m.state for m in sim.loop_nodes}, sim.world, sim.bus.violations, sim.messages)
