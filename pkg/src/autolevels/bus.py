"""Collective crosstalk channel with the four interaction kinds.

Cooperation travels as topic publish/subscribe; Coordination,
Collaboration and Command are addressed to explicit node paths and are
checked against the relationship graph.  Every message is delivered exactly
one tick after it is sent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .errors import ConfigError


class Interaction(str, enum.Enum):
    COOPERATION = "Cooperation"
    COORDINATION = "Coordination"
    COLLABORATION = "Collaboration"
    COMMAND = "Command"


class Relationship(str, enum.Enum):
    SUPERIOR_SUBORDINATE = "SuperiorSubordinate"
    PEER_TO_PEER = "PeerToPeer"


@dataclass(frozen=True, slots=True)
class Edge:
    a: str  # the superior for SuperiorSubordinate edges
    b: str
    kind: Relationship


class RelationshipGraph:
    """Undirected pairs with a recorded direction for superior-subordinate edges."""

    def __init__(self, edges: Iterable[Edge] = (), nodes: Iterable[str] = ()):
        self._edges: dict[frozenset, Edge] = {}
        self.nodes: set[str] = set(nodes)
        for e in edges:
            self.add_edge(e.a, e.b, e.kind)

    def add_node(self, node: str) -> None:
        self.nodes.add(node)

    def add_edge(self, a: str, b: str, kind: Relationship) -> Edge:
        if a == b:
            raise ConfigError(f"self-edge on {a!r}")
        key = frozenset((a, b))
        if key in self._edges:
            raise ConfigError(f"duplicate edge between {a!r} and {b!r}")
        edge = Edge(a, b, Relationship(kind))
        self._edges[key] = edge
        self.nodes.update((a, b))
        return edge

    def edge_between(self, x: str, y: str) -> Edge | None:
        return self._edges.get(frozenset((x, y)))

    def is_superior(self, superior: str, subordinate: str) -> bool:
        e = self._edges.get(frozenset((superior, subordinate)))
        return (e is not None and e.kind is Relationship.SUPERIOR_SUBORDINATE
                and e.a == superior)

    @property
    def edges(self) -> frozenset[Edge]:
        return frozenset(self._edges.values())

    def __eq__(self, other):
        return (isinstance(other, RelationshipGraph) and self.edges == other.edges
                and self.nodes == other.nodes)

    def __len__(self):
        return len(self._edges)


def validate_edge(graph: RelationshipGraph, kind: Interaction, sender: str, addressee: str) -> bool:
    """Legality of one (interaction kind, relationship) pairing.

    Command needs a superior->subordinate edge in that direction; the other
    three kinds need any edge, except Cooperation which also flows over
    topics between unrelated nodes.
    """
    kind = Interaction(kind)
    if kind is Interaction.COMMAND:
        return graph.is_superior(sender, addressee)
    if kind is Interaction.COOPERATION:
        return True
    return graph.edge_between(sender, addressee) is not None


@dataclass(frozen=True, slots=True)
class Message:
    kind: Interaction
    sender: str
    address: str | tuple[str, ...]  # topic for Cooperation, node paths otherwise
    payload: Mapping[str, Any]
    sent_tick: int
    deliver_tick: int
    seq: int
    recipient: str = ""

    @property
    def payload_type(self) -> str:
        return str(self.payload.get("type", "record"))


@dataclass(frozen=True, slots=True)
class LogEntry:
    tick: int
    verdict: str  # sent | delivered | violation
    message: Message
    recipient: str = ""
    reason: str = ""


class Bus:
    """Engine-owned message queue; blocks only ever see delivered snapshots."""

    def __init__(self, graph: RelationshipGraph, topics: Iterable[str] = (), enabled: bool = True):
        self.graph = graph
        self.topics: set[str] = set(topics)
        self.enabled = enabled
        self._subs: dict[str, list[str]] = {t: [] for t in self.topics}
        self._queue: dict[int, list[Message]] = {}
        self._seq = 0
        self._log: list[LogEntry] = []
        self.violations = 0

    def declare_topic(self, topic: str) -> None:
        self.topics.add(topic)
        self._subs.setdefault(topic, [])

    def subscribe(self, node: str, topic: str) -> None:
        if topic not in self.topics:
            raise ConfigError(f"{node} subscribes to undeclared topic {topic!r}")
        subs = self._subs[topic]
        if node not in subs:
            subs.append(node)
            subs.sort()

    def subscribers(self, topic: str) -> list[str]:
        return list(self._subs.get(topic, ()))

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _enqueue(self, msg: Message) -> None:
        self._queue.setdefault(msg.deliver_tick, []).append(msg)

    def publish(self, sender: str, topic: str, payload: Mapping[str, Any], tick: int) -> Message | None:
        """Cooperation: fan the payload out to every current subscriber at ``tick + 1``."""
        if topic not in self.topics:
            raise ConfigError(f"{sender} publishes on undeclared topic {topic!r}")
        if not self.enabled:
            return None
        seq = self._next_seq()
        msg = Message(Interaction.COOPERATION, sender, topic, payload, tick, tick + 1, seq)
        self._log.append(LogEntry(tick, "sent", msg, topic))
        for node in self._subs[topic]:
            if node != sender:
                self._enqueue(Message(Interaction.COOPERATION, sender, topic, payload,
                                      tick, tick + 1, seq, node))
        return msg

    def send(self, kind: Interaction, sender: str, addressees: str | Iterable[str],
             payload: Mapping[str, Any], tick: int) -> bool:
        """Addressed interaction.  Illegal pairings are logged as violations and dropped.

        Returns True when every addressee accepted the message.
        """
        kind = Interaction(kind)
        if kind is Interaction.COOPERATION:
            raise ConfigError("Cooperation goes through publish(), not send()")
        to = (addressees,) if isinstance(addressees, str) else tuple(addressees)
        if kind is Interaction.COMMAND and len(to) != 1:
            raise ConfigError(f"Command from {sender} needs exactly one addressee, got {to}")
        if not to:
            raise ConfigError(f"{kind.value} from {sender} has no addressee")
        for node in to:
            if node not in self.graph.nodes:
                raise ConfigError(f"{kind.value} from {sender} to unknown node {node!r}")
        if sender not in self.graph.nodes:
            raise ConfigError(f"unknown sender {sender!r}")
        if not self.enabled:
            return False
        seq = self._next_seq()
        if kind is not Interaction.COMMAND and "session" not in payload:
            payload = {**payload, "session": f"{sender}#{seq}"}
        msg = Message(kind, sender, to, payload, tick, tick + 1, seq)
        ok = True
        for node in to:
            if validate_edge(self.graph, kind, sender, node):
                self._log.append(LogEntry(tick, "sent", msg, node))
                self._enqueue(Message(kind, sender, to, payload, tick, tick + 1, seq, node))
            else:
                ok = False
                self.violations += 1
                rel = self.graph.edge_between(sender, node)
                reason = "no-edge" if rel is None else (
                    "peer" if rel.kind is Relationship.PEER_TO_PEER else "subordinate-to-superior")
                self._log.append(LogEntry(tick, "violation", msg, node, reason))
        return ok

    def deliver(self, tick: int) -> dict[str, list[Message]]:
        """Drain the messages due at ``tick``, grouped per recipient in canonical order."""
        due = self._queue.pop(tick, [])
        due.sort(key=lambda m: (m.sent_tick, m.sender, m.seq, m.recipient))
        inboxes: dict[str, list[Message]] = {}
        for m in due:
            inboxes.setdefault(m.recipient, []).append(m)
            self._log.append(LogEntry(tick, "delivered", m, m.recipient))
        return inboxes

    def pending(self) -> int:
        return sum(len(v) for v in self._queue.values())

    def drain_log(self) -> list[LogEntry]:
        log, self._log = self._log, []
        return log
