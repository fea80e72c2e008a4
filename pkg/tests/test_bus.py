import pytest
from hypothesis import given
from hypothesis import strategies as st

from autolevels.bus import Bus, Interaction, Relationship, RelationshipGraph, validate_edge
from autolevels.errors import ConfigError

SUP = Relationship.SUPERIOR_SUBORDINATE
PEER = Relationship.PEER_TO_PEER


def graph():
    g = RelationshipGraph()
    g.add_edge("power", "power/generation", SUP)
    g.add_edge("power", "power/storage", SUP)
    g.add_edge("power/generation", "power/storage", PEER)
    g.add_node("power/distribution")
    return g


def bus(**kw):
    return Bus(graph(), topics=["power/fault", "news"], **kw)


# -- publish ------------------------------------------------------------------

def test_publish_without_subscribers():
    b = bus()
    assert b.publish("power/storage", "news", {"type": "status"}, 0) is not None
    assert b.deliver(1) == {}


def test_publish_fans_out():
    b = bus()
    b.subscribe("power", "news")
    b.subscribe("power/storage", "news")
    b.publish("power/generation", "news", {"type": "status", "x": 1}, 3)
    inboxes = b.deliver(4)
    assert sorted(inboxes) == ["power", "power/storage"]
    assert inboxes["power"][0].payload == inboxes["power/storage"][0].payload == {"type": "status", "x": 1}


def test_fault_report_reaches_subscriber_next_tick():
    b = bus()
    b.subscribe("power/generation", "power/fault")
    b.publish("power/storage", "power/fault", {"type": "fault"}, 10)
    assert b.deliver(10) == {}
    [m] = b.deliver(11)["power/generation"]
    assert m.payload_type == "fault" and m.sent_tick == 10 and m.deliver_tick == 11


def test_publish_undeclared_topic():
    with pytest.raises(ConfigError):
        bus().publish("power", "nope", {}, 0)
    with pytest.raises(ConfigError):
        bus().subscribe("power", "nope")


def test_disabled_bus_drops_everything():
    b = bus(enabled=False)
    b.subscribe("power", "news")
    b.publish("power/storage", "news", {}, 0)
    assert not b.send(Interaction.COMMAND, "power", "power/storage", {}, 0)
    assert b.deliver(1) == {} and b.drain_log() == []


# -- send ---------------------------------------------------------------------

def test_command_down_the_hierarchy():
    b = bus()
    assert b.send(Interaction.COMMAND, "power", "power/generation", {"verb": "set-mode"}, 0)
    assert [m.sender for m in b.deliver(1)["power/generation"]] == ["power"]


def test_command_between_peers_is_a_violation():
    b = bus()
    assert not b.send(Interaction.COMMAND, "power/generation", "power/storage", {"verb": "set-mode"}, 0)
    assert b.deliver(1) == {}
    [entry] = b.drain_log()
    assert (entry.verdict, entry.reason) == ("violation", "peer")
    assert b.violations == 1


def test_coordination_between_peers_carries_session():
    b = bus()
    assert b.send(Interaction.COORDINATION, "power/generation", "power/storage", {"type": "schedule"}, 5)
    [m] = b.deliver(6)["power/storage"]
    assert m.payload["session"].startswith("power/generation#")


def test_violation_reasons():
    b = bus()
    b.send(Interaction.COMMAND, "power/generation", "power", {}, 0)
    b.send(Interaction.COORDINATION, "power/distribution", "power", {}, 0)
    assert [e.reason for e in b.drain_log()] == ["subordinate-to-superior", "no-edge"]


def test_send_errors():
    b = bus()
    with pytest.raises(ConfigError):
        b.send(Interaction.COOPERATION, "power", "power/storage", {}, 0)
    with pytest.raises(ConfigError):
        b.send(Interaction.COMMAND, "power", ["power/storage", "power/generation"], {}, 0)
    with pytest.raises(ConfigError):
        b.send(Interaction.COMMAND, "power", "nowhere", {}, 0)


# -- validate_edge -------------------------------------------------------------------

def test_validate_superior_to_subordinate():
    assert validate_edge(graph(), Interaction.COMMAND, "power", "power/storage")


def test_validate_subordinate_to_superior():
    g = graph()
    assert not validate_edge(g, Interaction.COMMAND, "power/storage", "power")
    assert validate_edge(g, Interaction.COOPERATION, "power/storage", "power")


def test_validate_collaboration_between_peers():
    assert validate_edge(graph(), Interaction.COLLABORATION, "power/storage", "power/generation")


def test_validate_no_edge():
    g = graph()
    assert not validate_edge(g, Interaction.COLLABORATION, "power/distribution", "power")
    assert validate_edge(g, Interaction.COOPERATION, "power/distribution", "power")


def test_graph_rejects_self_and_duplicate_edges():
    g = graph()
    with pytest.raises(ConfigError):
        g.add_edge("power", "power", PEER)
    with pytest.raises(ConfigError):
        g.add_edge("power/generation", "power", PEER)


# -- deliver -------------------------------------------------------------------------

def test_deliver_empty():
    assert bus().deliver(0) == {}


def test_deliver_orders_by_sender():
    b = bus()
    b.subscribe("power", "news")
    b.publish("power/storage", "news", {"n": 1}, 0)
    b.publish("power/generation", "news", {"n": 2}, 0)
    assert [m.sender for m in b.deliver(1)["power"]] == ["power/generation", "power/storage"]


def test_latency_law():
    b = bus()
    b.send(Interaction.COMMAND, "power", "power/storage", {}, 7)
    assert b.deliver(7) == {}
    assert len(b.deliver(8)["power/storage"]) == 1
    assert b.pending() == 0


# -- properties ------------------------------------------------------------------------

NODES = ["power", "power/generation", "power/storage", "power/distribution"]
KINDS = [Interaction.COMMAND, Interaction.COORDINATION, Interaction.COLLABORATION]


@given(st.lists(st.tuples(st.sampled_from(KINDS), st.sampled_from(NODES), st.sampled_from(NODES),
                          st.integers(0, 5)), max_size=40))
def test_conservation_and_legality(sends):
    b = bus()
    expected_deliveries = 0
    expected_violations = 0
    for kind, src, dst, tick in sorted(sends, key=lambda s: s[3]):
        if src == dst:
            continue
        if b.send(kind, src, dst, {}, tick):
            expected_deliveries += 1
        else:
            expected_violations += 1
    delivered = []
    for t in range(8):
        for inbox in b.deliver(t).values():
            delivered.extend(inbox)
    assert len(delivered) == expected_deliveries
    assert b.violations == expected_violations
    for m in delivered:
        assert m.deliver_tick == m.sent_tick + 1
        if m.kind is Interaction.COMMAND:
            assert b.graph.is_superior(m.sender, m.recipient)
    log = b.drain_log()
    assert sum(e.verdict == "violation" for e in log) == expected_violations
