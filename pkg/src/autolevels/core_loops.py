"""Discrete-time inner control loop: controller, plant, sensor and filter.

One call to :func:`step_control_loop` advances the loop by a single tick::

    e_r = r - f_p(previous tick)
    u   = C(e_r)
    y   = P(u, d_p)
    s_p = y + noise          (sensor; noise injected by the caller)
    f_p = F(s_p)

Feedback carries a one-tick delay, the forward path evaluates within the
tick.  Blocks are small objects with ``initial_state()`` and
``step(x, state, ctx) -> (out, state')``; block state is always an immutable
value so a :class:`ControlLoopState` can be copied or shared freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from .errors import ConfigError, SimulationFault, UsageError

EMPTY_CTX: Mapping[str, Any] = {}


class Block(Protocol):
    name: str

    def initial_state(self) -> Any: ...

    def step(self, x: float, state: Any, ctx: Mapping[str, Any]) -> tuple[float, Any]: ...


@dataclass(frozen=True, slots=True)
class ControlLoopState:
    """All loop signals for one tick plus the opaque per-block states."""

    r: float = 0.0
    e_r: float = 0.0
    u: float = 0.0
    y: float = 0.0
    d_p: float = 0.0
    s_p: float = 0.0
    f_p: float = 0.0
    # (controller, plant, filter)
    block_states: tuple = ()

    def signals(self) -> tuple[float, ...]:
        return (self.r, self.e_r, self.u, self.y, self.d_p, self.s_p, self.f_p)


SIGNAL_NAMES = ("r", "e_r", "u", "y", "d_p", "s_p", "f_p")


@dataclass(frozen=True, slots=True)
class LoopMetrics:
    max_abs_error: float
    settled_bound: float
    settle_tick: int | None
    disturbance_rejection_ratio: float | None = None


# -- pure block kernels -------------------------------------------------------

def proportional_integral_controller(e_r: float, integral: float, kp: float, ki: float,
                                     dt: float, bounds: tuple[float, float] = (-math.inf, math.inf)
                                     ) -> tuple[float, float]:
    """Return ``(u, integral')``; the integral is clamped to ``bounds`` (anti-windup)."""
    integral = integral + e_r * dt
    lo, hi = bounds
    if integral < lo:
        integral = lo
    elif integral > hi:
        integral = hi
    return kp * e_r + ki * integral, integral


def first_order_plant(u: float, d_p: float, y_prev: float, a: float, b: float) -> float:
    """``y_k = a*y_{k-1} + b*(u + d_p)``."""
    return a * y_prev + b * (u + d_p)


def lowpass_filter(s_p: float, f_prev: float, alpha: float) -> float:
    """Exponential smoothing ``alpha*s_p + (1 - alpha)*f_prev``."""
    if alpha == 1.0:
        return s_p
    return alpha * s_p + (1.0 - alpha) * f_prev


# -- block objects ------------------------------------------------------------

@dataclass(frozen=True)
class PIController:
    kp: float = 1.0
    ki: float = 0.5
    dt: float = 1.0
    integral_min: float = -10.0
    integral_max: float = 10.0
    name: str = "controller"

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ConfigError(f"PI gains must be non-negative (kp={self.kp}, ki={self.ki})")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.integral_min > self.integral_max:
            raise ConfigError("integral_min exceeds integral_max")

    def initial_state(self) -> float:
        return 0.0

    def step(self, e_r, state, ctx):
        return proportional_integral_controller(
            e_r, state, self.kp, self.ki, self.dt, (self.integral_min, self.integral_max))


def ProportionalController(k: float = 1.0, name: str = "controller") -> PIController:
    return PIController(kp=k, ki=0.0, name=name)


@dataclass(frozen=True)
class FirstOrderPlant:
    a: float = 0.9
    b: float = 0.1
    y0: float = 0.0
    name: str = "plant"

    def __post_init__(self):
        if not 0.0 <= self.a < 1.0:
            raise ConfigError(f"discrete pole must satisfy 0 <= a < 1, got {self.a}")

    @classmethod
    def from_time_constant(cls, tau: float, dt: float, gain: float = 1.0, **kw) -> "FirstOrderPlant":
        """Zero-order-hold discretisation of ``tau*dy/dt = -y + gain*u``."""
        if tau <= 0 or dt <= 0:
            raise ConfigError("tau and dt must be positive")
        a = math.exp(-dt / tau)
        return cls(a=a, b=gain * (1.0 - a), **kw)

    def initial_state(self) -> float:
        return float(self.y0)

    def step(self, u, state, ctx):
        y = first_order_plant(u, ctx.get("d_p", 0.0), state, self.a, self.b)
        return y, y


@dataclass(frozen=True)
class LowpassFilter:
    """``f0=None`` starts the estimate at the plant's initial output."""

    alpha: float = 0.2
    f0: float | None = None
    name: str = "filter"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"filter alpha must be in (0, 1], got {self.alpha}")

    def initial_state(self) -> float | None:
        return None if self.f0 is None else float(self.f0)

    def step(self, s_p, state, ctx):
        f = lowpass_filter(s_p, state, self.alpha)
        return f, f


def PassThroughFilter(name: str = "filter", f0: float | None = None) -> LowpassFilter:
    return LowpassFilter(alpha=1.0, f0=f0, name=name)


# -- the loop -----------------------------------------------------------------

@dataclass(frozen=True)
class ControlLoop:
    """The C, P and F_p blocks of one loop.  The sensor is additive noise/bias."""

    controller: Block
    plant: Block
    filter: Block = field(default_factory=PassThroughFilter)

    def initial_state(self) -> ControlLoopState:
        p0 = self.plant.initial_state()
        f0 = self.filter.initial_state()
        initial_output = getattr(self.plant, "initial_output", None)
        y0 = initial_output() if initial_output else (p0 if isinstance(p0, float) else 0.0)
        if f0 is None:
            f0 = y0
        fv = f0 if isinstance(f0, float) else y0
        return ControlLoopState(y=y0, s_p=fv, f_p=fv,
                                block_states=(self.controller.initial_state(), p0, f0))

    def step(self, state: ControlLoopState, r: float, d_p: float = 0.0, noise: float = 0.0,
             ctx: Mapping[str, Any] | None = None, *, bias: float = 0.0,
             dropout: bool = False) -> ControlLoopState:
        return step_control_loop(self, state, r, d_p, noise, ctx, bias=bias, dropout=dropout)


def _check(value: float, what: str, block: str | None = None) -> None:
    if not math.isfinite(value):
        raise SimulationFault(f"non-finite {what} ({value!r})", block=block)


def step_control_loop(loop: ControlLoop, state: ControlLoopState, r: float, d_p: float = 0.0,
                      noise: float = 0.0, ctx: Mapping[str, Any] | None = None, *,
                      bias: float = 0.0, dropout: bool = False) -> ControlLoopState:
    """Advance ``loop`` one tick from ``state``; see the module docstring for the order.

    With ``dropout`` the sensor delivers no sample: ``s_p`` repeats its last
    value and the filter holds its estimate.
    """
    # isfinite on the sum is cheaper than four calls and still catches nan/inf
    if not math.isfinite(r + d_p + noise + bias):
        for v, what in ((r, "reference r"), (d_p, "disturbance d_p"),
                        (noise, "sensor noise"), (bias, "sensor bias")):
            _check(v, what, "input")
    c_state, p_state, f_state = state.block_states
    if ctx is None:
        ctx = {"d_p": d_p} if d_p else EMPTY_CTX
    elif d_p:
        ctx = {**ctx, "d_p": d_p}
    e_r = r - state.f_p
    u, c_state = loop.controller.step(e_r, c_state, ctx)
    if not math.isfinite(u):
        _check(u, "controller output u", loop.controller.name)
    y, p_state = loop.plant.step(u, p_state, ctx)
    if not math.isfinite(y):
        _check(y, "plant output y", loop.plant.name)
    if dropout:
        s_p = state.s_p
        f_p = state.f_p
    else:
        s_p = y + noise + bias
        f_p, f_state = loop.filter.step(s_p, f_state, ctx)
        if not math.isfinite(f_p):
            _check(f_p, "filter output f_p", loop.filter.name)
    return ControlLoopState(r, e_r, u, y, d_p, s_p, f_p, (c_state, p_state, f_state))


def simulate(loop: ControlLoop, r: float | Sequence[float] | Callable[[int], float], ticks: int,
             disturbance: Sequence[float] | Callable[[int], float] | None = None,
             noise: Sequence[float] | Callable[[int], float] | None = None,
             state: ControlLoopState | None = None) -> list[ControlLoopState]:
    """Run ``ticks`` steps and return every state (the initial state excluded)."""

    def as_fn(x, default=0.0):
        if x is None:
            return lambda k: default
        if callable(x):
            return x
        if isinstance(x, (int, float)):
            return lambda k: float(x)
        return lambda k: x[k]

    r_fn, d_fn, n_fn = as_fn(r), as_fn(disturbance), as_fn(noise)
    state = loop.initial_state() if state is None else state
    out = []
    for k in range(ticks):
        state = step_control_loop(loop, state, r_fn(k), d_fn(k), n_fn(k))
        out.append(state)
    return out


def _field(row: Any, name: str) -> float:
    if isinstance(row, Mapping):
        return float(row[name])
    return float(getattr(row, name))


def loop_metrics(trace: Sequence[Any], settled_bound: float = 0.05,
                 disturbance_window: tuple[int, int] | None = None) -> LoopMetrics:
    """Summarise a loop trace (states or mapping rows carrying ``e_r`` and ``d_p``).

    ``settle_tick`` is the first index from which ``|e_r| <= settled_bound``
    holds to the end of the trace.  The disturbance-rejection ratio is
    ``|e_r| / |d_p|`` at the last sample of ``disturbance_window`` (a
    half-open ``(start, stop)`` index range).
    """
    if len(trace) == 0:
        raise UsageError("loop_metrics needs a non-empty trace")
    if settled_bound < 0:
        raise UsageError("settled_bound must be >= 0")
    errors = [abs(_field(row, "e_r")) for row in trace]
    settle: int | None = None
    for k in range(len(errors) - 1, -1, -1):
        if errors[k] > settled_bound:
            break
        settle = k
    ratio = None
    if disturbance_window is not None:
        start, stop = disturbance_window
        if not 0 <= start < stop <= len(trace):
            raise UsageError(f"disturbance window {disturbance_window} outside trace")
        d = _field(trace[stop - 1], "d_p")
        if d == 0:
            raise UsageError("disturbance is zero at the end of the window")
        ratio = errors[stop - 1] / abs(d)
    return LoopMetrics(max(errors), settled_bound, settle, ratio)


# -- block registry used by model files ---------------------------------------

BLOCK_TYPES: dict[str, Callable[..., Block]] = {
    "pi": PIController,
    "proportional": ProportionalController,
    "first_order": FirstOrderPlant,
    "lowpass": LowpassFilter,
    "passthrough": PassThroughFilter,
}


def register_block(kind: str, factory: Callable[..., Block]) -> None:
    BLOCK_TYPES[kind] = factory


def make_block(spec: Mapping[str, Any], role: str) -> Block:
    params = dict(spec)
    kind = params.pop("type", None)
    if kind is None:
        raise ConfigError(f"{role} block has no 'type'")
    if kind == "first_order" and "tau" in params:
        return FirstOrderPlant.from_time_constant(name=role, **params)
    try:
        factory = BLOCK_TYPES[kind]
    except KeyError:
        raise ConfigError(f"unknown {role} block type {kind!r}") from None
    try:
        return factory(name=role, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {role} block {kind!r}: {exc}") from None


def make_loop(spec: Mapping[str, Any]) -> ControlLoop:
    """Build a loop from ``{"controller": {...}, "plant": {...}, "filter": {...}}``."""
    filt = spec.get("filter") or {"type": "passthrough"}
    return ControlLoop(make_block(spec["controller"], "controller"),
                       make_block(spec["plant"], "plant"),
                       make_block(filt, "filter"))


def iter_signals(states: Iterable[ControlLoopState], name: str) -> list[float]:
    return [getattr(s, name) for s in states]
