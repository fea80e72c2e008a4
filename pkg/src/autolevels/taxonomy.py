"""Space-system decomposition tree: levels, factors, measures and coverage lint.

Parent-child edges become superior-subordinate relationships; declared
interfaces between nodes that are not parent and child become peer edges.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from .autonomy import (COMMAND_VERBS, StateMachine, builtin_machine, load_machine,
                       sscc_coverage)
from .bus import RelationshipGraph, Relationship
from .errors import ConfigError, LoadError


class LevelKind(str, enum.Enum):
    MISSION = "Mission"
    ELEMENT = "Element"
    SEGMENT = "Segment"
    SYSTEM = "System"
    SUBSYSTEM = "Subsystem"
    ASSEMBLY = "Assembly"
    SUBASSEMBLY = "Subassembly"
    COMPONENT = "Component"

    @property
    def rank(self) -> int:
        return _RANK[self]


_RANK = {lvl: i for i, lvl in enumerate(LevelKind)}


class MeasureKind(str, enum.Enum):
    MOO = "MOO"
    MOE = "MOE"
    MOC = "MOC"
    MOP = "MOP"
    TPM = "TPM"


_MEASURES = {
    LevelKind.MISSION: MeasureKind.MOO,
    LevelKind.ELEMENT: MeasureKind.MOE,
    LevelKind.SEGMENT: MeasureKind.MOC,
    LevelKind.SYSTEM: MeasureKind.MOP,
    LevelKind.SUBSYSTEM: MeasureKind.TPM,
}


def measure_kind(level: LevelKind | str) -> MeasureKind | None:
    return _MEASURES.get(LevelKind(level))


@dataclass(frozen=True)
class Factors:
    wbs_pbs: str = ""
    description: str = ""
    measure: MeasureKind | None = None
    interfaces: tuple[str, ...] = ()
    configurational: tuple[str, ...] = ()
    procedural: tuple[str, ...] | None = None  # stored, never executed


@dataclass(frozen=True)
class TaxonomyNode:
    path: str
    level: LevelKind
    factors: Factors = Factors()
    loop: Mapping[str, Any] | None = None  # {"control": {...}, "autonomy": {...}}

    @property
    def parent(self) -> str | None:
        return self.path.rsplit("/", 1)[0] if "/" in self.path else None

    @property
    def name(self) -> str:
        return self.path.rsplit("/", 1)[-1]

    @property
    def control(self) -> Mapping[str, Any] | None:
        return (self.loop or {}).get("control")

    @property
    def autonomy(self) -> Mapping[str, Any] | None:
        return (self.loop or {}).get("autonomy")


@dataclass(frozen=True)
class Tree:
    nodes: Mapping[str, TaxonomyNode]
    root: str
    topics: tuple[str, ...] = ()
    name: str = "model"
    children: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __getitem__(self, path: str) -> TaxonomyNode:
        return self.nodes[path]

    def __iter__(self):
        return iter(self.nodes.values())

    def __len__(self):
        return len(self.nodes)

    def ancestors(self, path: str) -> list[str]:
        out = []
        p = self.nodes[path].parent
        while p is not None:
            out.append(p)
            p = self.nodes[p].parent
        return out

    def top_down(self) -> list[TaxonomyNode]:
        """Nodes ordered superior-first (by level rank, then path)."""
        return sorted(self.nodes.values(), key=lambda n: (n.level.rank, n.path.count("/"), n.path))


def _factors(raw: Mapping[str, Any] | None, level: LevelKind, path: str) -> Factors:
    raw = raw or {}
    functional = raw.get("functional") or {}
    if isinstance(functional, str):
        functional = {"description": functional}
    expected = measure_kind(level)
    given = functional.get("measure")
    if given is not None:
        try:
            given = MeasureKind(given)
        except ValueError:
            raise LoadError(f"unknown measure kind {given!r}", path) from None
        if given is not expected:
            raise LoadError(f"measure {given.value} does not belong to level {level.value}", path)
    proc = raw.get("procedural")
    return Factors(str(raw.get("wbs_pbs", "")), str(functional.get("description", "")), expected,
                   tuple(raw.get("interfaces") or ()), tuple(raw.get("configurational") or ()),
                   None if proc is None else tuple(proc))


def build_tree(spec: Mapping[str, Any]) -> tuple[Tree, RelationshipGraph]:
    """Validate a model document and derive the relationship graph.

    Raises :class:`LoadError` (carrying the offending path) on duplicate
    paths, level skips, missing parents or dangling interfaces.
    """
    raw_nodes = spec.get("nodes")
    if not raw_nodes:
        raise LoadError("model has no nodes")
    allow_skip = bool(spec.get("allow_level_skip", False))
    nodes: dict[str, TaxonomyNode] = {}
    for raw in raw_nodes:
        path = raw.get("path")
        if not path or not isinstance(path, str) or path.startswith("/") or path.endswith("/") or "//" in path:
            raise LoadError(f"bad node path {path!r}", str(path))
        if path in nodes:
            raise LoadError("duplicate path", path)
        try:
            level = LevelKind(raw.get("level"))
        except ValueError:
            raise LoadError(f"unknown level {raw.get('level')!r}", path) from None
        loop = raw.get("loop")
        if loop is not None and not isinstance(loop, Mapping):
            raise LoadError("loop must be a mapping", path)
        nodes[path] = TaxonomyNode(path, level, _factors(raw.get("factors"), level, path), loop)

    roots = [n for n in nodes.values() if n.parent is None]
    children: dict[str, list[str]] = {p: [] for p in nodes}
    for n in nodes.values():
        if n.parent is None:
            continue
        if n.parent not in nodes:
            raise LoadError(f"parent {n.parent!r} is not declared", n.path)
        parent = nodes[n.parent]
        if n.level.rank <= parent.level.rank:
            raise LoadError(f"level {n.level.value} cannot sit under {parent.level.value}", n.path)
        if not allow_skip and n.level.rank != parent.level.rank + 1:
            raise LoadError(f"level skip: {n.level.value} directly under {parent.level.value}", n.path)
        children[n.parent].append(n.path)
    if len(roots) != 1:
        raise LoadError(f"model needs exactly one root, found {sorted(r.path for r in roots)}")

    graph = RelationshipGraph(nodes=nodes)
    for n in sorted(nodes.values(), key=lambda n: n.path):
        if n.parent is not None:
            graph.add_edge(n.parent, n.path, Relationship.SUPERIOR_SUBORDINATE)
    for n in sorted(nodes.values(), key=lambda n: n.path):
        for peer in n.factors.interfaces:
            if peer not in nodes:
                raise LoadError(f"interface to unknown node {peer!r}", n.path)
            if peer == n.path:
                raise LoadError("interface to itself", n.path)
            if graph.edge_between(n.path, peer) is None:
                graph.add_edge(*sorted((n.path, peer)), Relationship.PEER_TO_PEER)

    tree = Tree(nodes, roots[0].path, tuple(spec.get("topics") or ()), str(spec.get("name", "model")),
                {k: tuple(sorted(v)) for k, v in children.items()})
    return tree, graph


# -- model files --------------------------------------------------------------

def _data_file(*parts: str):
    return resources.files("autolevels").joinpath("data", *parts)


def read_document(source: str | Path) -> tuple[dict, bytes]:
    """Parse a YAML model/scenario from a path; returns (mapping, raw bytes)."""
    data = Path(source).read_bytes()
    try:
        doc = yaml.safe_load(data)
    except yaml.YAMLError as exc:
        raise LoadError(f"cannot parse: {exc}", str(source)) from None
    if not isinstance(doc, dict):
        raise LoadError("document is not a mapping", str(source))
    return doc, data


def shipped_model_path(name: str = "power_demo"):
    return _data_file(f"{name}.yaml")


def load_model(source: str | Path | Mapping[str, Any] = "power_demo") -> tuple[Tree, RelationshipGraph]:
    if isinstance(source, Mapping):
        return build_tree(source)
    p = Path(source)
    if not p.exists():
        shipped = shipped_model_path(str(source))
        if not shipped.is_file():
            raise LoadError("no such model file or shipped model", str(source))
        p = Path(str(shipped))
    doc, _ = read_document(p)
    return build_tree(doc)


def machine_for(autonomy: Mapping[str, Any], strict: bool = True) -> StateMachine:
    m = autonomy.get("machine")
    if isinstance(m, str):
        return builtin_machine(m, **(autonomy.get("machine_args") or {}))
    if isinstance(m, Mapping):
        return load_machine(m, strict=strict)
    raise ConfigError("autonomy block names no machine")


# -- lint ---------------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    kind: str  # a: loop without autonomy, b: SSCC gap, c: no crosstalk, d: inputs undeclared
    path: str
    message: str

    def __str__(self):
        return f"({self.kind}) {self.path}: {self.message}"


def lint_autonomy_coverage(tree: Tree) -> list[Finding]:
    """Check every loop against the key-idea checklist; one finding per violation."""
    findings: list[Finding] = []
    for node in sorted(tree.nodes.values(), key=lambda n: n.path):
        auto = node.autonomy
        if node.control is not None and auto is None:
            findings.append(Finding("a", node.path, "control loop has no autonomy block"))
        if auto is None:
            continue
        try:
            machine = machine_for(auto, strict=False)
        except ConfigError as exc:
            findings.append(Finding("b", node.path, f"machine does not load: {exc}"))
            continue
        cov = sscc_coverage(machine)
        if not cov.complete:
            parts = []
            if cov.missing:
                parts.append("missing " + ", ".join(t.value for t in cov.missing))
            if cov.untagged:
                parts.append(f"{cov.untagged} untagged transition(s)")
            findings.append(Finding("b", node.path, "SSCC coverage incomplete: " + "; ".join(parts)))
        declared = set(auto.get("subscribes") or ()) | set(auto.get("publishes") or ())
        sends = list(auto.get("sends_to") or ())
        if not declared and not sends:
            findings.append(Finding("c", node.path, "no crosstalk topics or edges declared"))
        else:
            used = {a.topic for a in machine.actions() if a.kind == "publish"}
            if auto.get("ack_topic"):
                used.add(auto["ack_topic"])
            undeclared = sorted(used - declared)
            if undeclared:
                findings.append(Finding("c", node.path, f"publishes on undeclared topics {undeclared}"))
        inputs = auto.get("inputs")
        accepts = auto.get("accepts")
        if not inputs or not accepts:
            findings.append(Finding("d", node.path, "autonomy inputs or accepted commands undeclared"))
        else:
            bad_verbs = sorted(set(accepts) - set(COMMAND_VERBS))
            latched = {l["channel"] for l in auto.get("latches") or ()}
            needed = set().union(*(t.guard.channels for t in machine.transitions)) if machine.transitions else set()
            missing = sorted(needed - set(inputs) - latched - {"f_p", "staleness"})
            if bad_verbs or missing:
                findings.append(Finding("d", node.path,
                                        f"undeclared inputs {missing}" + (f", unknown verbs {bad_verbs}" if bad_verbs else "")))
    return findings
