import pytest
from hypothesis import given
from hypothesis import strategies as st

from autolevels.errors import LoadError
from autolevels.trace import (Trace, check_command_routing, check_feedback_law, check_ordering, fmt,
                              format_header, format_row, parse_row, read_trace, replay, state_at,
                              state_timeline)
from conftest import shipped_run

HEADER = format_header("unit", "ab" * 32, 7, 3, 1.0)


def trace(*rows):
    return Trace(HEADER, [format_row(*r) for r in rows])


def loop_row(tick, r, e_r, f_p, node="a"):
    return (tick, 5, "signal", node, "loop", [("r", r), ("e_r", e_r), ("f_p", f_p)])


# -- formatting ------------------------------------------------------------------

def test_scalar_formats():
    assert [fmt(v) for v in (True, 3, 0.1, None, "a b", "")] == ["1", "3", "0.1", "-", "a%20b", "%00"]
    assert fmt(("x", "y")) == "x,y"


@given(st.floats(allow_nan=False), st.text(max_size=30))
def test_row_round_trip(x, s):
    row = parse_row(format_row(4, 2, "event", "p/q r", "n=m", [("x", x), ("s", s)]))
    assert (row.tick, row.phase, row.kind, row.node, row.name) == (4, 2, "event", "p/q r", "n=m")
    assert row.num("x") == x and row.text("s") == s


def test_malformed_row():
    with pytest.raises(LoadError):
        parse_row("tick=x phase=1")


def test_header_meta():
    meta = trace().meta
    assert meta["scenario"] == "unit" and meta["seed"] == "7" and meta["bus"] == "on"
    assert meta["variant"] == "-"


def test_header_is_required(tmp_path):
    p = tmp_path / "t.trace"
    p.write_text("tick=0 phase=1 row=event node=a name=b\n")
    with pytest.raises(LoadError):
        read_trace(p)


def test_write_and_read(tmp_path):
    tr = trace(loop_row(0, 1.0, 1.0, 0.5))
    tr.write(tmp_path / "t.trace")
    assert read_trace(tmp_path / "t.trace").text() == tr.text()


# -- checkers ------------------------------------------------------------------------

def test_ordering():
    assert check_ordering(trace(loop_row(0, 1, 1, 0), loop_row(1, 1, 1, 0))) == []
    [v] = check_ordering(trace(loop_row(1, 1, 1, 0), loop_row(0, 1, 1, 0)))
    assert v.tick == 0


def test_feedback_law():
    good = trace(loop_row(0, 1.0, 1.0, 0.4), loop_row(1, 1.0, 0.6, 0.5))
    assert check_feedback_law(good) == (1, [])
    bad = trace(loop_row(0, 1.0, 1.0, 0.4), loop_row(1, 1.0, 0.5, 0.5))
    n, v = check_feedback_law(bad)
    assert n == 1 and v[0].tick == 1


def test_feedback_law_is_per_node():
    tr = trace(loop_row(0, 1.0, 1.0, 0.4, "a"), loop_row(0, 2.0, 2.0, 9.0, "b"),
               loop_row(1, 1.0, 0.6, 0.4, "a"), loop_row(1, 2.0, -7.0, 9.0, "b"))
    assert check_feedback_law(tr) == (2, [])


def test_command_routing():
    row = (1, 2, "message", "p/c", "delivered", [("kind", "Command"), ("sender", "p"), ("verdict", "delivered")])
    peer = (1, 2, "message", "p/c", "delivered", [("kind", "Command"), ("sender", "p/d"), ("verdict", "delivered")])
    sup = lambda a, b: b.startswith(a + "/")
    assert check_command_routing(trace(row), sup) == (1, [])
    n, bad = check_command_routing(trace(row, peer), sup)
    assert n == 2 and [v.detail.split()[-1] for v in bad] == ["p/d"]


def test_state_timeline():
    tr = trace((5, 4, "transition", "a", "transition", [("from", "X"), ("to", "Y")]),
               (9, 4, "transition", "a", "transition", [("from", "Y"), ("to", "X")]))
    tl = state_timeline(tr, "a", "X")
    assert tl == [(0, "X"), (5, "Y"), (9, "X")]
    assert [state_at(tl, k) for k in (4, 5, 8, 9)] == ["X", "Y", "Y", "X"]


# -- replay -----------------------------------------------------------------------------

def test_replay_reproduces_shipped_trace(tmp_path):
    tr = shipped_run("overcurrent").trace
    tr.write(tmp_path / "o.trace")
    assert replay(tmp_path / "o.trace", "overcurrent")
    tampered = Trace(tr.header, tr.lines[:-1])
    assert not replay(tampered, "overcurrent")
