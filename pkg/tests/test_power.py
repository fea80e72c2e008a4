import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from autolevels.autonomy import (Command, EnvFeedback, evaluate_transitions,
                                 make_autonomy_block, step_autonomy_loop)
from autolevels.bus import Interaction, Message
from autolevels.core_loops import ControlLoop, PassThroughFilter, step_control_loop
from autolevels.errors import ConfigError
from autolevels.power import (BatteryState, EstimatorState, POState, battery_step,
                              degradation_estimator_step, make_breaker_machine, make_drive_machine,
                              perturb_observe_step, solar_current)
from autolevels.power.blocks import DriveController, DrivePlant
from autolevels.power.checks import (BREAKER, DRIVE, GENERATION, critical_served,
                                     first_capability_report, i_peak_series)
from autolevels.trace import iter_rows, transitions
from conftest import shipped_run
from oracles import FROZEN, sweep_optimum

SUN = 0.3


# -- solar_current --------------------------------------------------------------

def test_aligned_gives_peak():
    assert solar_current(SUN, SUN, 1.0, 3.0) == 3.0


def test_quarter_turn_gives_zero():
    assert solar_current(SUN + math.pi / 2, SUN, 1.0, 3.0) == pytest.approx(0.0, abs=1e-15)
    assert solar_current(SUN + math.pi, SUN, 1.0, 3.0) == 0.0


def test_current_peaks_at_sun_angle():
    assert abs(sweep_optimum(SUN) - SUN) <= FROZEN["sweep_optimum_err_max"]


def test_eclipse_gives_zero():
    assert all(solar_current(t / 10, SUN, 0.0, 3.0) == 0.0 for t in range(-40, 40))


# -- perturb and observe ------------------------------------------------------------

def test_rising_current_keeps_direction():
    s = POState()
    u1, s = perturb_observe_step(s, 1.0, 0.01)
    u2, s = perturb_observe_step(s, 1.1, 0.01)
    u3, s = perturb_observe_step(s, 1.2, 0.01)
    assert u1 == u2 == u3 == 0.01


def test_hill_climb_from_half_radian_off():
    theta, s, thetas = SUN - 0.5, POState(), []
    for _ in range(200):
        u, s = perturb_observe_step(s, solar_current(theta, SUN, 1.0, 3.0), 0.01)
        theta += u
        thetas.append(theta)
    settle = FROZEN["po_settle_tick"]
    assert all(abs(t - SUN) <= 2 * 0.01 + 1e-12 for t in thetas[settle - 1:])
    assert max(abs(t - SUN) for t in thetas[settle:]) == pytest.approx(FROZEN["po_max_late_err"], abs=1e-12)
    # still oscillating, never parked
    assert len({round(t, 9) for t in thetas[-20:]}) > 1


def test_eclipse_makes_direction_flip_every_tick():
    theta, s, us = 0.0, POState(), []
    for _ in range(50):
        u, s = perturb_observe_step(s, solar_current(theta, SUN, 0.0, 3.0), 0.01)
        theta += u
        us.append(u)
    assert all(us[k] == -us[k + 1] for k in range(49))
    assert abs(theta) <= FROZEN["eclipse_walk_max_excursion"] + 1e-15


def test_step_must_be_positive():
    with pytest.raises(ConfigError):
        perturb_observe_step(POState(), 1.0, 0.0)


def test_drive_loop_tracks_in_kernel():
    loop = ControlLoop(DriveController(delta=0.01, slew=0.02), DrivePlant(theta0=SUN - 0.5), PassThroughFilter())
    st_ = loop.initial_state()
    ctx = {"sun_angle": SUN, "illumination": 1.0, "i_peak": 3.0, "mode": "TRACK", "target": None}
    for _ in range(300):
        st_ = step_control_loop(loop, st_, 3.0, ctx=ctx)
    assert abs(st_.block_states[1] - SUN) <= 0.02 + 1e-12


def test_cage_slews_to_target():
    loop = ControlLoop(DriveController(delta=0.01, slew=0.02, theta0=SUN), DrivePlant(theta0=SUN),
                       PassThroughFilter())
    st_ = loop.initial_state()
    ctx = {"sun_angle": SUN, "illumination": 0.0, "i_peak": 3.0, "mode": "CAGE", "target": 0.0}
    for _ in range(30):
        st_ = step_control_loop(loop, st_, 0.0, ctx=ctx)
    assert st_.block_states[1] == pytest.approx(0.0, abs=1e-12)


# -- battery ----------------------------------------------------------------------------

def test_balanced_currents_hold_soc():
    b = BatteryState(0.42, 1000.0)
    assert battery_step(b, 2.0, 2.0, 1.0).soc == 0.42


def test_coulomb_counting():
    b = BatteryState(0.5, 1000.0)
    for _ in range(100):
        b = battery_step(b, 1.5, 0.5, 1.0)
    assert b.soc == pytest.approx(FROZEN["battery_soc_after_100"], abs=1e-12)


def test_full_battery_clamps():
    b = battery_step(BatteryState(1.0, 1000.0), 5.0, 0.0, 1.0)
    assert b.soc == 1.0 and b.clamp_residual == pytest.approx(0.005)


def test_capacity_must_be_positive():
    with pytest.raises(ConfigError):
        BatteryState(0.5, 0.0)


@given(st.floats(0.0, 1.0), st.lists(st.tuples(st.floats(0.0, 50.0), st.floats(0.0, 50.0)), max_size=60))
def test_battery_clamp_invariant(soc, currents):
    b = BatteryState(soc, 100.0)
    for c, l in currents:
        raw = b.soc + (c - l) / 100.0
        b = battery_step(b, c, l, 1.0)
        assert 0.0 <= b.soc <= 1.0
        assert b.soc + b.clamp_residual == pytest.approx(raw, abs=1e-12)


# -- breaker machine -----------------------------------------------------------------------

def breaker(trip=4.0):
    return make_autonomy_block(BREAKER, make_breaker_machine(trip), superiors=["power", GENERATION, DRIVE])


def test_trip_is_strict():
    res = step_autonomy_loop(breaker(), f_e=EnvFeedback({"current": 4.0, "soc": 0.5}))
    assert res.block.current_state == "CLOSED"


def test_full_battery_opens():
    b = breaker()
    for soc in (0.90, 0.94, 0.95):
        b = step_autonomy_loop(b, f_e=EnvFeedback({"current": 1.0, "soc": soc})).block
    assert b.current_state == "OPEN_FULL"
    b = step_autonomy_loop(b, f_e=EnvFeedback({"current": 0.0, "soc": 0.9})).block
    assert b.current_state == "OPEN_FULL"  # hysteresis band
    b = step_autonomy_loop(b, f_e=EnvFeedback({"current": 0.0, "soc": 0.85})).block
    assert b.current_state == "CLOSED"


def test_reset_from_power_subsystem():
    b = step_autonomy_loop(breaker(), f_e=EnvFeedback({"current": 6.0, "soc": 0.5})).block
    assert b.current_state == "OPEN_FAULT"
    # a tripped breaker stays open on its own
    b = step_autonomy_loop(b, f_e=EnvFeedback({"current": 0.0, "soc": 0.1}), tick=1).block
    assert b.current_state == "OPEN_FAULT"
    res = step_autonomy_loop(b, a=[Command("set-param", name="reset", value=1.0, issuer="power")],
                             f_e=EnvFeedback({"current": 0.0, "soc": 0.5}), tick=2)
    assert res.block.current_state == "CLOSED" and res.block.params["reset"].value == 0.0


def test_breaker_threshold_validation():
    with pytest.raises(ConfigError):
        make_breaker_machine(trip_current=0.0)
    with pytest.raises(ConfigError):
        make_breaker_machine(soc_full=0.8, soc_low=0.9)


# -- drive machine ----------------------------------------------------------------------------

def drive():
    return make_autonomy_block(DRIVE, make_drive_machine(), superiors=["power", GENERATION],
                               latches=[{"channel": "eclipse", "set_on": "eclipse_start", "clear_on": "eclipse_end"},
                                        {"channel": "flare", "set_on": "flare_start", "clear_on": "flare_clear"}])


def note(ptype, tick):
    return Message(Interaction.COOPERATION, "ephemeris", "illumination", {"type": ptype}, tick - 1, tick, tick, DRIVE)


def test_eclipse_cages_at_cage_angle():
    res = step_autonomy_loop(drive(), inbox=[note("eclipse_start", 1)], tick=1)
    assert res.block.current_state == "CAGE" and res.reference.target == 0.0
    [out] = res.outbox
    assert out.address == "drive/mode" and out.payload["mode"] == "CAGE"


def test_flare_while_caged_stows():
    m = make_drive_machine()
    order = [t.dest for t in m.outgoing("CAGE")]
    assert order[0] == "STOWED"
    t = evaluate_transitions(m, "CAGE", {"eclipse": 0.0, "flare": 1.0}, m.default_params)
    assert t.dest == "STOWED"


def test_override_window_holds_track():
    b = step_autonomy_loop(drive(), a=[Command("override", hold="TRACK", expiry=200, issuer=GENERATION)],
                           tick=100).block
    for t in range(101, 200):
        inbox = [note("eclipse_start", t)] if t == 120 else ()
        b = step_autonomy_loop(b, inbox=inbox, tick=t).block
        assert b.current_state == "TRACK"
    assert step_autonomy_loop(b, tick=200).block.current_state == "CAGE"


def test_eclipse_end_returns_to_track():
    b = step_autonomy_loop(drive(), inbox=[note("eclipse_start", 1)], tick=1).block
    b = step_autonomy_loop(b, inbox=[note("eclipse_end", 2)], tick=2).block
    assert b.current_state == "TRACK"


# -- degradation estimator ------------------------------------------------------------------

def test_constant_peak_converges_silently():
    est, msgs = EstimatorState(3.0), []
    for _ in range(500):
        est, m = degradation_estimator_step(est, 3.0, True, nominal=3.0)
        msgs.append(m)
    assert est.estimate == pytest.approx(3.0) and not any(msgs)


def test_step_degradation_crossing_time():
    est, n = EstimatorState(3.0), 0
    while True:
        n += 1
        est, m = degradation_estimator_step(est, 2.4, True, nominal=3.0, window=50, rho=0.9)
        if m is not None:
            break
    assert n == FROZEN["ema_crossing_samples"] <= 200
    assert m["type"] == "capability" and m["estimate"] < 2.7
    # one message only until it recovers
    for _ in range(100):
        est, m = degradation_estimator_step(est, 2.4, True, nominal=3.0)
        assert m is None
    assert not est.armed


def test_eclipse_samples_are_gated_out():
    est = EstimatorState(2.9, samples=10)
    for _ in range(100):
        est2, m = degradation_estimator_step(est, 0.0, False, nominal=3.0)
        assert est2 == est and m is None


# -- sacrifice flow ------------------------------------------------------------------------------

def test_without_sacrifice_breaker_trips():
    tr = shipped_run("sacrifice", "A").trace
    trips = [r.tick for r in transitions(tr, BREAKER) if r.text("to") == "OPEN_FAULT"]
    assert trips and 2000 <= trips[0] <= 2002
    assert critical_served(tr, 2000, 2300) < 0.01
    assert i_peak_series(tr)[2999] == 3.0


def test_with_sacrifice_load_served_and_section_burns():
    tr = shipped_run("sacrifice", "B").trace
    assert critical_served(tr, 2000, 2300) == 1.0
    peak = i_peak_series(tr)
    assert peak[1999] == 3.0 and peak[2999] == 1.5
    assert not [r for r in transitions(tr, BREAKER) if r.text("to") == "OPEN_FAULT"]
    applied = [r for r in iter_rows(tr, "event", "command_applied", BREAKER) if r.text("name") == "trip_current"]
    assert [r.num("value") for r in applied] == [10.0, 4.0]


def test_post_window_degradation_broadcast():
    tr = shipped_run("sacrifice", "B").trace
    sent, recv = first_capability_report(tr, after=2300)
    assert sent is not None and recv == sent + 1
    states = [(r.tick, r.text("to")) for r in transitions(tr, GENERATION)]
    assert states[-1][1] == "DEGRADED" and states[-1][0] == sent
