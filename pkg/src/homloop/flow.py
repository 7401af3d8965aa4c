"""Event-driven integration of piecewise-smooth planar systems.

The integrator advances one smooth side at a time with an embedded high-order
Runge-Kutta stepper (dense output), watches the switching function along every
accepted step, localizes sign changes on the step's interpolant, and restarts
exactly at the crossing point on the new side.  Crossings whose continuation is
ambiguous (the receiving field pushes back into the switching curve) abort the
integration: sliding solutions are outside this package's solution notion.

Backward runs integrate dx/ds = -F(tau - s, x) on an internal clock s >= 0,
so a single code path serves both directions; reported event times are always
system times.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import DOP853
from scipy.optimize import brentq

from .psys import PiecewiseSystem, Side, as_point

Array = np.ndarray

try:  # numpy >= 2
    _trapz = np.trapezoid
except AttributeError:  # pragma: no cover
    _trapz = np.trapz


class Direction(enum.Enum):
    FWD = "fwd"
    BWD = "bwd"

    @property
    def sign(self) -> float:
        return 1.0 if self is Direction.FWD else -1.0


class StepFailure(RuntimeError):
    """Step size underflow or stepper failure."""


class SlidingDetected(RuntimeError):
    """Continuation through a switching-curve contact is ambiguous."""

    def __init__(self, t: float, point):
        super().__init__(f"sliding at t={t:.6g}, point={np.asarray(point)}")
        self.t = float(t)
        self.point = np.array(point, dtype=float)


class IntervalOutOfRange(ValueError):
    """Requested evaluation outside a trajectory's time span."""


@dataclass(frozen=True)
class Tolerances:
    rtol: float = 1e-12
    atol: float = 1e-14
    crossing: float = 1e-12
    transversality_floor: float = 1e-8
    max_step: float = np.inf


# -- stop conditions ---------------------------------------------------------


@dataclass(frozen=True)
class Section:
    """Affine section: points base + s*tangent with |s| <= half_width.

    Crossing detection uses the signed distance to the full line; membership
    in the finite segment is recorded with each hit.  ``direction`` restricts
    accepted crossings to signed-distance increasing (+1), decreasing (-1) or
    either (0), measured in the trajectory's internal clock.
    """

    base: Array
    tangent: Array
    half_width: float = np.inf
    direction: int = 0
    label: str = "section"

    def __post_init__(self):
        t = as_point(self.tangent)
        object.__setattr__(self, "base", as_point(self.base))
        object.__setattr__(self, "tangent", t / np.linalg.norm(t))

    @property
    def normal(self) -> Array:
        t = self.tangent
        return np.array([-t[1], t[0]])

    def signed_dist(self, x) -> float:
        return float(self.normal @ (np.asarray(x) - self.base))

    def coordinate(self, x) -> float:
        return float(self.tangent @ (np.asarray(x) - self.base))

    def within_segment(self, x) -> bool:
        return abs(self.coordinate(x)) <= self.half_width


@dataclass(frozen=True)
class StopAtTime:
    horizon: float  # internal elapsed time, > 0


@dataclass(frozen=True)
class StopAtSection:
    section: Section
    min_crossings: int = 0  # arm only after this many switching-curve transits


@dataclass(frozen=True)
class StopAtSwitchCrossing:
    """Stop at the n-th switching-curve crossing (1-based)."""

    count: int = 1
    label: str = "switch"


@dataclass(frozen=True)
class StopNormBelow:
    threshold: float


@dataclass(frozen=True)
class StopBall:
    center: Array
    radius: float
    on_exit: bool = False


StopCondition = StopAtTime | StopAtSection | StopAtSwitchCrossing | StopNormBelow | StopBall


class Termination(enum.Enum):
    TIME_HORIZON = "TimeHorizon"
    HIT_TARGET = "HitTarget"
    SLIDING = "SlidingDetected"
    LEFT_DOMAIN = "LeftDomain"
    CONVERGED = "Converged"


@dataclass(frozen=True)
class CrossingEvent:
    t: float  # system time
    point: Array
    transversality: float  # gradG . F at the event, incoming side's field
    from_side: Side
    to_side: Side


@dataclass
class SectionHit:
    label: str
    t: float  # system time
    point: Array
    within_segment: bool
    rate: float  # d/ds signed distance at the hit (internal clock)


@dataclass
class _Segment:
    side: Side
    s0: float
    s1: float
    interps: list = field(default_factory=list)

    def __call__(self, s: float) -> Array:
        for d in self.interps:
            if s <= d.t_max + 1e-14:
                return np.asarray(d(min(max(s, d.t_min), d.t_max)))
        d = self.interps[-1]
        return np.asarray(d(d.t_max))


@dataclass
class Trajectory:
    """Dense piecewise orbit.

    Internal clock s runs forward from 0; system time is
    t = t_start + direction.sign * s.  Events are reported in system time.
    """

    direction: Direction
    t_start: float
    t_end: float
    segments: list[_Segment]
    crossings: list[CrossingEvent]
    termination: Termination
    hit_label: Optional[str] = None
    hit_point: Optional[Array] = None
    hit_time: Optional[float] = None
    section_hits: list[SectionHit] = field(default_factory=list)

    @property
    def span(self) -> float:
        return abs(self.t_end - self.t_start)

    def _internal(self, t_sys: float) -> float:
        s = self.direction.sign * (t_sys - self.t_start)
        if s < -1e-9 or s > self.span * (1 + 1e-12) + 1e-9:
            raise IntervalOutOfRange(
                f"t={t_sys} outside [{self.t_start}, {self.t_end}] ({self.direction.value})"
            )
        return min(max(s, 0.0), self.span)

    def _segment_at(self, s: float) -> _Segment:
        for seg in self.segments:
            if s <= seg.s1 + 1e-14:
                return seg
        return self.segments[-1]

    def __call__(self, t_sys: float) -> Array:
        s = self._internal(t_sys)
        return self._segment_at(s)(s)

    def side_at(self, t_sys: float) -> Side:
        return self._segment_at(self._internal(t_sys)).side

    def endpoint(self) -> Array:
        return self.segments[-1](self.segments[-1].s1)

    def sample(self, n: int = 257) -> tuple[Array, Array]:
        """(system times, points) on a uniform grid over the span."""
        ss = np.linspace(0.0, self.span, n)
        pts = np.array([self._segment_at(s)(s) for s in ss])
        return self.t_start + self.direction.sign * ss, pts


# -- integration core --------------------------------------------------------

_CHECK_OFFSETS = np.linspace(0.0, 1.0, 9)[1:]


def _locate_zero(fun, lo: float, hi: float) -> float:
    return float(brentq(fun, lo, hi, xtol=1e-15 * max(1.0, abs(hi)), rtol=1e-15))


def _scan_sign_change(fun, s0: float, s1: float, f0: float | None = None):
    """First zero of fun on [s0, s1] detected on a 9-point scan, or None."""
    fp = fun(s0) if f0 is None else f0
    sp = s0
    for c in _CHECK_OFFSETS:
        sn = s0 + (s1 - s0) * c
        fn = fun(sn)
        if fp == 0.0:
            sp, fp = sn, fn
            continue
        if fn == 0.0:
            return sn
        if (fn > 0) != (fp > 0):
            return _locate_zero(fun, sp, sn)
        sp, fp = sn, fn
    return None


def _entry_side(system: PiecewiseSystem, sgn: float, t_sys: float, x: Array) -> Side:
    """Side entered by the orbit leaving a switching-curve point.

    Works in the internal clock: the effective field is sgn * F.
    """
    n = system.gradG(x)
    vp = sgn * float(n @ system.rhs(Side.PLUS, t_sys, x))
    vm = sgn * float(n @ system.rhs(Side.MINUS, t_sys, x))
    if vp > 0 and vm > 0:
        return Side.PLUS
    if vp < 0 and vm < 0:
        return Side.MINUS
    if vp <= 0 <= vm:
        raise SlidingDetected(t_sys, x)
    # repelling contact: take the faster-escaping side
    return Side.PLUS if vp >= -vm else Side.MINUS


def integrate(
    system: PiecewiseSystem,
    tau: float,
    P,
    direction: Direction = Direction.FWD,
    stops: Sequence[StopCondition] = (),
    tol: Tolerances = Tolerances(),
    horizon: float = 200.0,
) -> Trajectory:
    """Integrate from x(tau) = P until the first satisfied stop condition.

    ``horizon`` caps the internal elapsed time unconditionally.  Switching
    crossings are localized on each step's interpolant and re-anchored
    exactly; crossings below the transversality floor raise SlidingDetected.
    """
    P = as_point(P)
    sgn = direction.sign

    def sys_time(s: float) -> float:
        return tau + sgn * s

    stops = list(stops)
    s_cap = horizon
    for st in stops:
        if isinstance(st, StopAtTime):
            s_cap = min(s_cap, st.horizon)
    if s_cap <= 0:
        raise ValueError("horizon must be positive")

    g_scale = max(1.0, abs(system.G(P)))
    cross_tol = tol.crossing * g_scale

    side = system.side_of(P, tol=cross_tol)
    if side is None:
        side = _entry_side(system, sgn, tau, P)

    segments: list[_Segment] = []
    crossings: list[CrossingEvent] = []
    section_hits: list[SectionHit] = []
    termination = Termination.TIME_HORIZON
    hit_label: Optional[str] = None
    hit_point: Optional[Array] = None
    hit_time: Optional[float] = None
    switch_count = 0
    finished = False
    # a segment that starts on the switching curve must move clearly into its
    # side before crossing detection arms, else G-noise at the anchor point
    # would retrigger the event just handled
    g_armed = abs(system.G(P)) > cross_tol

    seg = _Segment(side=side, s0=0.0, s1=0.0)
    segments.append(seg)

    def scan_G(dense, s0: float, s1: float):
        nonlocal g_armed
        fun = lambda s: system.G(dense(s))
        sp = fp = None
        for c in np.linspace(0.0, 1.0, 9):
            s = s0 + (s1 - s0) * c
            v = fun(s)
            if not g_armed:
                if v * seg.side.sign > cross_tol:
                    g_armed = True
                    sp, fp = s, v
                continue
            if sp is None or fp == 0.0:
                sp, fp = s, v
                continue
            if v == 0.0:
                return s
            if (v > 0) != (fp > 0):
                return _locate_zero(fun, sp, s)
            sp, fp = s, v
        return None

    def rhs(s, y):
        return sgn * system.rhs(seg.side, sys_time(s), y)

    def make_stepper(s_from: float, x_from: Array) -> DOP853:
        return DOP853(
            rhs, s_from, x_from, t_bound=s_cap, rtol=tol.rtol, atol=tol.atol,
            max_step=tol.max_step,
        )

    stepper = make_stepper(0.0, P.copy())

    def finish(term: Termination, s_end: float, label=None, point=None):
        nonlocal termination, hit_label, hit_point, hit_time, finished
        termination = term
        hit_label = label
        if point is not None:
            hit_point = np.array(point)
            hit_time = sys_time(s_end)
        seg.s1 = s_end
        finished = True

    while not finished:
        if stepper.status == "finished":
            termination = Termination.TIME_HORIZON
            break
        msg = stepper.step()
        if stepper.status == "failed":
            raise StepFailure(msg or "stepper failed")
        dense = stepper.dense_output()
        s0, s1 = dense.t_min, dense.t_max
        seg.interps.append(dense)
        seg.s1 = s1

        s_cross = scan_G(dense, s0, s1)
        s_stop = s1 if s_cross is None else s_cross

        # stop conditions on [s0, s_stop]
        best: tuple[float, Termination, str | None, Array] | None = None

        def offer(s_e, term, label, pt):
            nonlocal best
            if best is None or s_e < best[0] - 1e-15:
                best = (s_e, term, label, np.asarray(pt))

        for st in stops:
            if isinstance(st, StopAtSection):
                sec = st.section
                sc = _scan_sign_change(lambda s: sec.signed_dist(dense(s)), s0, s_stop)
                if sc is not None:
                    pt = np.asarray(dense(sc))
                    rate = float(sec.normal @ rhs(sc, pt))
                    if sec.direction == 0 or np.sign(rate) == sec.direction:
                        section_hits.append(
                            SectionHit(sec.label, sys_time(sc), pt, sec.within_segment(pt), rate)
                        )
                        if switch_count >= st.min_crossings:
                            offer(sc, Termination.HIT_TARGET, sec.label, pt)
            elif isinstance(st, StopNormBelow):
                fun = lambda s: float(np.linalg.norm(dense(s))) - st.threshold
                if fun(s_stop) <= 0.0:
                    sc = s0 if fun(s0) <= 0.0 else _locate_zero(fun, s0, s_stop)
                    offer(sc, Termination.CONVERGED, "norm", dense(sc))
            elif isinstance(st, StopBall):
                c = as_point(st.center)
                fun = lambda s: float(np.linalg.norm(np.asarray(dense(s)) - c)) - st.radius
                v0, v1 = fun(s0), fun(s_stop)
                if st.on_exit and v1 >= 0.0 and v0 < 0.0:
                    sc = _locate_zero(fun, s0, s_stop)
                    offer(sc, Termination.LEFT_DOMAIN, "ball-exit", dense(sc))
                elif (not st.on_exit) and v1 <= 0.0 and v0 > 0.0:
                    sc = _locate_zero(fun, s0, s_stop)
                    offer(sc, Termination.HIT_TARGET, "ball-entry", dense(sc))

        if best is not None and (s_cross is None or best[0] <= s_cross + 1e-15):
            finish(best[1], best[0], label=best[2], point=best[3])
            break

        if s_cross is not None:
            x_c = np.asarray(dense(s_cross))
            t_c = sys_time(s_cross)
            n = system.gradG(x_c)
            v_in = float(n @ system.rhs(seg.side, t_c, x_c))  # real-time field
            if abs(v_in) < tol.transversality_floor:
                raise SlidingDetected(t_c, x_c)
            new_side = Side.PLUS if sgn * v_in > 0 else Side.MINUS
            v_out = float(n @ system.rhs(new_side, t_c, x_c))
            if v_in * v_out <= 0 or abs(v_out) < tol.transversality_floor:
                raise SlidingDetected(t_c, x_c)
            crossings.append(
                CrossingEvent(
                    t=t_c, point=x_c, transversality=v_in,
                    from_side=seg.side, to_side=new_side,
                )
            )
            switch_count += 1
            seg.s1 = s_cross

            for st in stops:
                if isinstance(st, StopAtSwitchCrossing) and switch_count >= st.count:
                    finish(Termination.HIT_TARGET, s_cross, label=st.label, point=x_c)
                    break
            if finished:
                break

            seg = _Segment(side=new_side, s0=s_cross, s1=s_cross)
            segments.append(seg)
            g_armed = False
            stepper = make_stepper(s_cross, x_c)

    segments = [s for s in segments if s.interps]
    if not segments:

        class _Const:
            t_min = 0.0
            t_max = 0.0

            def __call__(self, s):
                return P

        seg0 = _Segment(side=side, s0=0.0, s1=0.0)
        seg0.interps.append(_Const())
        segments = [seg0]

    s_end = segments[-1].s1
    return Trajectory(
        direction=direction,
        t_start=tau,
        t_end=sys_time(s_end),
        segments=segments,
        crossings=crossings,
        termination=termination,
        hit_label=hit_label,
        hit_point=hit_point,
        hit_time=hit_time,
        section_hits=section_hits,
    )


def flow_map(
    system: PiecewiseSystem,
    tau1: float,
    tau2: float,
    Q,
    tol: Tolerances = Tolerances(),
) -> Array:
    """Point at time tau2 of the orbit passing through Q at time tau1."""
    if tau1 == tau2:
        return as_point(Q)
    direction = Direction.FWD if tau2 > tau1 else Direction.BWD
    traj = integrate(
        system, tau1, Q, direction,
        stops=[StopAtTime(abs(tau2 - tau1))], tol=tol, horizon=abs(tau2 - tau1),
    )
    return traj.endpoint()


# -- variational flow --------------------------------------------------------


def _matrix_leg(
    system: PiecewiseSystem, base: Trajectory, t0: float, t1: float,
    rtol: float, atol: float,
) -> Array:
    """Transition matrix of the linearization along base from t0 to t1.

    The interval must not contain a switching crossing of the base orbit in
    its interior (callers split at crossing times).
    """
    if t1 == t0:
        return np.eye(2)
    sgn = 1.0 if t1 > t0 else -1.0
    t_mid = 0.5 * (t0 + t1)
    side = base.side_at(t_mid)

    def rhs(s, y):
        t = t0 + sgn * s
        J = system.rhs_jac(side, t, base(t))
        return sgn * (J @ y.reshape(2, 2)).reshape(4)

    stepper = DOP853(rhs, 0.0, np.eye(2).reshape(4), t_bound=abs(t1 - t0), rtol=rtol, atol=atol)
    while stepper.status == "running":
        msg = stepper.step()
        if stepper.status == "failed":
            raise StepFailure(msg or "variational stepper failed")
    return stepper.y.reshape(2, 2)


def variational_flow(
    system: PiecewiseSystem,
    base: Trajectory,
    rtol: float = 1e-12,
    atol: float = 1e-14,
) -> Callable[[float, float], Array]:
    """Evaluator (t, s) -> X(t, s) of the linearized flow along ``base``.

    X(s, s) = I and X(t, r) X(r, s) = X(t, s) by construction.  At each
    transversal crossing of the base orbit the matrix continues with the
    receiving side's Jacobian (the matrix itself is continuous).  Intended
    for the moderate spans of loop orbits; entries grow like exp of the
    unstable rate times the span.
    """
    lo = min(base.t_start, base.t_end)
    hi = max(base.t_start, base.t_end)
    knots = sorted({lo, hi, *(c.t for c in base.crossings)})
    ts = np.array(knots)
    mats = [np.eye(2)]
    for a, b in zip(knots, knots[1:]):
        mats.append(_matrix_leg(system, base, a, b, rtol, atol) @ mats[-1])
    mats_arr = np.stack(mats)  # X(knot_j, lo)

    def X_of(t: float) -> Array:
        if t < lo - 1e-9 or t > hi + 1e-9:
            raise IntervalOutOfRange(f"t={t} outside [{lo}, {hi}]")
        t = min(max(t, lo), hi)
        j = int(np.searchsorted(ts, t, side="right") - 1)
        j = max(0, min(j, len(ts) - 1))
        if abs(ts[j] - t) < 1e-13:
            return mats_arr[j]
        return _matrix_leg(system, base, ts[j], t, rtol, atol) @ mats_arr[j]

    def transition(t: float, s: float) -> Array:
        if abs(t - s) < 1e-15:
            return np.eye(2)
        return X_of(t) @ np.linalg.inv(X_of(s))

    return transition


def trajectory_csv(traj: Trajectory, n: int = 1001) -> str:
    """Sampled orbit as CSV rows t, x1, x2, side."""
    ts, pts = traj.sample(n)
    lines = ["t,x1,x2,side"]
    for t, p in zip(ts, pts):
        lines.append(f"{t:.16e},{p[0]:.16e},{p[1]:.16e},{traj.side_at(t).value}")
    return "\n".join(lines) + "\n"


def crossings_json(traj: Trajectory) -> list[dict]:
    """Crossing events as JSON-able records (sidecar for trajectory_csv)."""
    return [
        {
            "t": c.t,
            "point": [float(c.point[0]), float(c.point[1])],
            "transversality": c.transversality,
            "from_side": c.from_side.value,
            "to_side": c.to_side.value,
        }
        for c in traj.crossings
    ]


def liouville_residual(
    system: PiecewiseSystem,
    base: Trajectory,
    t: float,
    s: float,
    transition: Callable[[float, float], Array] | None = None,
    n_quad: int = 4001,
) -> float:
    """Relative mismatch between det X(t, s) and exp of the integrated trace."""
    if transition is None:
        transition = variational_flow(system, base)
    X = transition(t, s)
    lo, hi = (s, t) if t >= s else (t, s)
    ts = np.linspace(lo, hi, n_quad)
    vals = np.array([np.trace(system.rhs_jac(base.side_at(u), u, base(u))) for u in ts])
    integral = float(_trapz(vals, ts))
    if t < s:
        integral = -integral
    expected = math.exp(integral)
    return abs(float(np.linalg.det(X)) - expected) / max(abs(expected), 1e-300)
