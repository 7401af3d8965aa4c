"""Directed section coordinates, trapping barriers, and the loop maps.

The switching curve carries an arc-length coordinate increasing from the
origin toward the loop's crossing point.  Around the loop two pairs of
auxiliary curves (orbits of the rotated-blend fields) wall in a forward and a
backward trapping region; orbits started slightly inside the stable anchor
complete one circuit inside the forward region and return to the switching
curve, and the loop maps measure every intermediate time and displacement of
that circuit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .flow import (
    Direction,
    Section,
    StopAtSection,
    StopAtSwitchCrossing,
    Termination,
    Tolerances,
    integrate,
)
from .leaves import Homoclinic, LeafAnchors, LeafSide, saddle_transversal
from .psys import PiecewiseSystem, RateConstants, SaddleSpectrum, Side, as_point

Array = np.ndarray

LOOP_TOL = Tolerances(rtol=3e-14, atol=1e-16)


class OffSection(ValueError):
    """Point not on the switching curve within tolerance."""


class OutOfChart(ValueError):
    """Requested arc coordinate outside the traced chart range."""


class LeftRegion(RuntimeError):
    """Loop orbit escaped the trapping region."""


class NonTransversalCrossing(RuntimeError):
    pass


class BandViolation(RuntimeError):
    """Barrier endpoint left its prescribed norm band."""


# -- directed chart ----------------------------------------------------------


class DirectedChart:
    """Arc-length coordinate on the switching curve.

    The curve {G = 0} is traced from the origin by the unit-speed tangent
    ODE, oriented so the coordinate increases toward the loop crossing point.
    """

    def __init__(
        self,
        system: PiecewiseSystem,
        gamma0: Array,
        span_factor: float = 2.4,
        on_tol: float = 1e-7,
    ):
        self.system = system
        self.gamma0 = as_point(gamma0)
        self.on_tol = on_tol
        L_euclid = float(np.linalg.norm(self.gamma0))

        def tangent(x):
            g = system.gradG(x)
            t = np.array([-g[1], g[0]])
            return t / np.linalg.norm(t)

        sign = 1.0 if float(tangent(np.zeros(2)) @ self.gamma0) >= 0 else -1.0

        def rhs(s, x):
            return sign * tangent(x)

        s_hi = span_factor * L_euclid
        s_lo = -0.4 * L_euclid
        sol_p = solve_ivp(
            rhs, (0.0, s_hi), np.zeros(2), rtol=1e-12, atol=1e-14, dense_output=True
        )
        sol_m = solve_ivp(
            rhs, (0.0, s_lo), np.zeros(2), rtol=1e-12, atol=1e-14, dense_output=True
        )
        if not (sol_p.success and sol_m.success):
            raise OutOfChart("switching-curve trace failed")
        self._sol_p, self._sol_m = sol_p, sol_m
        self.s_range = (s_lo, s_hi)
        # arc coordinate of the loop crossing point
        self.ell_gamma0 = self.ell(self.gamma0)

    def point_at(self, s: float) -> Array:
        lo, hi = self.s_range
        if s < lo - 1e-12 or s > hi + 1e-12:
            raise OutOfChart(f"arc coordinate {s:.6g} outside [{lo:.6g}, {hi:.6g}]")
        sol = self._sol_p if s >= 0 else self._sol_m
        return np.asarray(sol.sol(np.clip(s, lo, hi)))

    def ell(self, Q) -> float:
        """Arc coordinate of a switching-curve point (OffSection otherwise)."""
        Q = as_point(Q)
        if abs(self.system.G(Q)) > self.on_tol * (1.0 + np.linalg.norm(Q)):
            raise OffSection(f"G(Q) = {self.system.G(Q):.3g} at {Q}")
        lo, hi = self.s_range
        grid = np.linspace(lo, hi, 257)
        pts = np.array([self.point_at(s) for s in grid])
        i = int(np.argmin(np.linalg.norm(pts - Q, axis=1)))
        s = grid[i]

        # Newton on the tangential defect
        def defect(si):
            p = self.point_at(si)
            g = self.system.gradG(p)
            t = np.array([-g[1], g[0]])
            t /= np.linalg.norm(t)
            return float(t @ (p - Q))

        for _ in range(60):
            d0 = defect(s)
            if abs(d0) < 1e-14:
                break
            h = 1e-7
            d1 = (defect(s + h) - defect(s - h)) / (2 * h)
            if d1 == 0.0:
                break
            step = d0 / d1
            s = float(np.clip(s - step, lo, hi))
            if abs(step) < 1e-15:
                break
        if np.linalg.norm(self.point_at(s) - Q) > 10 * self.on_tol * (1 + np.linalg.norm(Q)):
            raise OffSection(f"projection residual too large for {Q}")
        return s

    def directed_distance(self, Q, P) -> float:
        """ell(P) - ell(Q); positive when Q sits between the origin and P."""
        return self.ell(P) - self.ell(Q)

    def point_at_distance(self, anchor, d: float, toward_origin: bool = True) -> Array:
        """Section point at directed distance d on the enclosed side of anchor."""
        if d <= 0:
            raise ValueError("directed distance must be positive")
        s = self.ell(anchor) + (-d if toward_origin else d)
        return self.point_at(s)


# -- session parameter cascade ------------------------------------------------


@dataclass(frozen=True)
class ParamCascade:
    """Resolved small-parameter cascade for one experiment session.

    mu (band half-width) splits into the per-leg budgets mu1, mu2 through the
    eigenvalue-dependent constant c_mu; beta sizes the barriers, varpi the
    near-saddle transversals, delta the admissible displacement range.  The
    sufficient-condition thresholds on varpi from the contraction estimates
    are reported (satisfied or not) but do not drive the choice: desk-scale
    systems sit far outside them, and the geometric requirement is the
    opposite one (transversals must stay outside the closest approach of the
    widest admissible loop).
    """

    mu: float
    mu1: float
    mu2: float
    c_mu: float
    beta: float
    varpi: float
    delta: float
    D0: float
    M0: float
    epsilon: float
    kappa: float = 0.0
    varpi_threshold_ok: bool = False

    @property
    def log_varpi(self) -> float:
        return abs(math.log(self.varpi))


def make_cascade(
    rates: RateConstants,
    epsilon: float = 0.0,
    mu: Optional[float] = None,
    beta: Optional[float] = None,
    varpi: Optional[float] = None,
    kappa: float = 0.0,
    holder_alpha: float = 1.0,
    n_alpha: float = 1.0,
) -> ParamCascade:
    mu0 = rates.mu0
    mu = mu0 if mu is None else float(mu)
    # tolerate eigendecomposition noise at the mu = mu0 boundary
    if not 0 < mu <= mu0 * (1.0 + 1e-9):
        raise ValueError(f"mu must lie in (0, {mu0:.6g}]")
    ratio = rates.lambda_hi / rates.lambda_lo
    c_d = 7.0 * ratio**3
    c_T = 1.0 / 6.0 + 1.0 / (2.0 * rates.lambda_lo)
    c_mu = c_T + c_d + 1.0 / 6.0
    mu2 = mu / c_mu
    mu1 = 0.5 * mu2

    if beta is None:
        beta = max(0.02, 2.0 * epsilon ** (rates.sigma_fb / 2.0) if epsilon > 0 else 0.0)
        beta = max(beta, 0.02)
    if epsilon > 0 and beta < epsilon ** (rates.sigma_fb / 2.0):
        raise ValueError("beta below the admissible floor for this epsilon")
    if varpi is None:
        varpi = beta / 2.0

    delta = min(varpi / 2.0, beta / 4.0)
    log_delta = abs(math.log(delta))
    D0 = 1.0 / log_delta**2
    M0 = 2.0 * log_delta / rates.lambda_lo

    # sufficient-condition threshold from the contraction estimates (audit only)
    c_s_est = 4.0
    k1, k2 = 1.5, 2.5
    a = holder_alpha
    C_thr = (2.0 * c_s_est**a + 1.0) * n_alpha * 2.0 * k2 * k1 ** (2 + 2 * a) * (a + 1) / (
        rates.lambda_lo * a
    )
    thr = max((2.0 * C_thr) ** (2.0 / a), 4.0)
    varpi_ok = abs(math.log(varpi)) >= thr
    return ParamCascade(
        mu=mu, mu1=mu1, mu2=mu2, c_mu=c_mu, beta=beta, varpi=varpi, delta=delta,
        D0=D0, M0=M0, epsilon=epsilon, kappa=kappa, varpi_threshold_ok=varpi_ok,
    )


# -- barriers -----------------------------------------------------------------


def _rot90(v: Array) -> Array:
    return np.array([-v[1], v[0]])


def _blend_system(system: PiecewiseSystem, coef: float, orientation: int) -> PiecewiseSystem:
    """Autonomous system f + coef * rot90(f) per side (switching kept)."""
    fp, fm = system.f_plus, system.f_minus

    def plus(x):
        v = fp(x)
        return v + coef * orientation * _rot90(v)

    def minus(x):
        v = fm(x)
        return v + coef * orientation * _rot90(v)

    return replace(
        system,
        f_plus=plus,
        f_minus=minus,
        jac_plus=None,
        jac_minus=None,
        g=None,
        g_jac=None,
        epsilon=0.0,
        name=(system.name or "sys") + f"~blend{coef:+.2g}",
    )


@dataclass
class BandCheck:
    name: str
    value: float
    lo: float
    hi: float

    @property
    def ok(self) -> bool:
        return self.lo <= self.value <= self.hi


@dataclass
class BarrierSet:
    """Trapping curves and regions around the loop for one (beta, mu, eps)."""

    beta: float
    mu: float
    epsilon: float
    kappa: float
    curves: dict[str, Array]
    endpoints: dict[str, Array]
    zeta: dict[str, Array]
    band_checks: list[BandCheck]
    blend_coef: dict[str, float] = field(default_factory=dict)
    perp_orientation: int = 1
    _outer_fwd: Array = field(repr=False, default=None)
    _inner_fwd: Array = field(repr=False, default=None)
    _outer_bwd: Array = field(repr=False, default=None)
    _inner_bwd: Array = field(repr=False, default=None)

    @property
    def bands_ok(self) -> bool:
        return all(c.ok for c in self.band_checks)

    @staticmethod
    def _poly_contains(poly: Array, P: Array) -> bool:
        x, y = P
        xs, ys = poly[:-1, 0], poly[:-1, 1]
        xe, ye = poly[1:, 0], poly[1:, 1]
        cond = (ys <= y) != (ye <= y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = xs + (y - ys) / (ye - ys) * (xe - xs)
        return bool(np.count_nonzero(cond & (x < xi)) % 2 == 1)

    def contains_fwd(self, P) -> bool:
        P = as_point(P)
        return self._poly_contains(self._outer_fwd, P) and not self._poly_contains(
            self._inner_fwd, P
        )

    def contains_bwd(self, P) -> bool:
        P = as_point(P)
        return self._poly_contains(self._outer_bwd, P) and not self._poly_contains(
            self._inner_bwd, P
        )


def _first_manifold_crossing(
    sysb: PiecewiseSystem,
    gamma: Homoclinic,
    stable: bool,
    tol: Tolerances,
) -> Array:
    """First switching-curve hit of the blend system's local manifold branch."""
    from .leaves import _manifold_quadratic
    from .psys import compute_spectrum

    spec = compute_spectrum(sysb, gamma.orientation_hint())
    side = Side.PLUS if stable else Side.MINUS
    lam = spec.lam(side, stable)
    v = spec.vec(side, stable)
    w2 = _manifold_quadratic(sysb, side, lam, v)
    eta = 1e-7
    traj = integrate(
        sysb, 0.0, eta * v + eta * eta * w2,
        Direction.BWD if stable else Direction.FWD,
        stops=[StopAtSwitchCrossing(1)], horizon=300.0, tol=tol,
    )
    if traj.termination is not Termination.HIT_TARGET:
        raise BandViolation("blend-system manifold missed the switching curve")
    return traj.hit_point


def _start_on_section(
    chart: DirectedChart, zeta: Array, beta: float, gamma0: Array, inside: bool
) -> Array:
    """Section point at Euclidean distance beta from the loop crossing, on the
    requested side of the zeta anchor."""
    ell_z = chart.ell(zeta)

    def defect(D):
        s = ell_z + (-D if inside else D)
        return float(np.linalg.norm(chart.point_at(s) - gamma0)) - beta

    lo, hi = 1e-12, 2.5 * beta
    if defect(lo) > 0 or defect(hi) < 0:
        raise BandViolation("no section start point at the requested distance")
    D = brentq(defect, lo, hi, xtol=1e-14)
    return chart.point_at(ell_z + (-D if inside else D))


def _band(value: float, base: float, expo: float, mu: float, name: str) -> BandCheck:
    return BandCheck(name=name, value=value, lo=base ** (expo + mu), hi=base ** (expo - mu))


def build_barriers(
    system: PiecewiseSystem,
    gamma: Homoclinic,
    chart: DirectedChart,
    rates: RateConstants,
    cascade: ParamCascade,
    perp_orientation: int = 1,
    tol: Tolerances = Tolerances(),
    n_poly: int = 600,
    strict: bool = False,
) -> BarrierSet:
    """Construct the four trapping curves and their endpoint band report.

    The curves are orbits of the rotated-blend fields f +/- eps*kappa*rot(f),
    started on the switching curve at Euclidean distance beta from the loop
    crossing (inside/outside per curve) and run to their terminal sections.
    ``strict`` turns an out-of-band endpoint into an error instead of a
    report entry, signalling (beta, eps, mu) outside the admissible range.
    """
    beta, mu, eps = cascade.beta, cascade.mu, cascade.epsilon
    coef = eps * cascade.kappa
    gamma0 = gamma.crossing_point
    spec = gamma.spectrum

    sys_a = _blend_system(system, +coef, perp_orientation)
    sys_b = _blend_system(system, -coef, perp_orientation)

    if eps == 0.0 or coef == 0.0:
        zeta = {k: gamma0.copy() for k in ("u_a", "u_b", "s_a", "s_b")}
    else:
        zeta = {
            "u_a": _first_manifold_crossing(sys_a, gamma, stable=False, tol=tol),
            "u_b": _first_manifold_crossing(sys_b, gamma, stable=False, tol=tol),
            "s_a": _first_manifold_crossing(sys_a, gamma, stable=True, tol=tol),
            "s_b": _first_manifold_crossing(sys_b, gamma, stable=True, tol=tol),
        }

    out_minus = Section(
        base=np.zeros(2),
        tangent=spec.v_u_minus + spec.v_s_minus,
        half_width=np.inf,
        label="L-out",
    )
    out_plus = Section(
        base=np.zeros(2),
        tangent=spec.v_u_plus + spec.v_s_plus,
        half_width=np.inf,
        label="L+out",
    )

    curves: dict[str, Array] = {}
    endpoints: dict[str, Array] = {}

    # forward-in: f_a orbit, inside, one full circuit
    P_fi = _start_on_section(chart, zeta["s_a"], beta, gamma0, inside=True)
    tr = integrate(
        sys_a, 0.0, P_fi, Direction.FWD, stops=[StopAtSwitchCrossing(2)],
        horizon=400.0, tol=tol,
    )
    if tr.termination is not Termination.HIT_TARGET or len(tr.crossings) < 2:
        raise BandViolation("forward-in barrier did not complete its circuit")
    endpoints["P_fwd_in"] = P_fi
    endpoints["Q_fwd_in"] = tr.crossings[0].point
    endpoints["R_fwd_in"] = tr.endpoint()
    curves["fwd_in"] = tr.sample(n_poly)[1]

    # forward-out: f_b orbit through the outside start, both directions
    P_fo = _start_on_section(chart, zeta["u_b"], beta, gamma0, inside=False)
    trb = integrate(
        sys_b, 0.0, P_fo, Direction.BWD, stops=[StopAtSection(out_minus)],
        horizon=400.0, tol=tol,
    )
    trf = integrate(
        sys_b, 0.0, P_fo, Direction.FWD, stops=[StopAtSection(out_plus)],
        horizon=400.0, tol=tol,
    )
    if trb.termination is not Termination.HIT_TARGET or trf.termination is not Termination.HIT_TARGET:
        raise BandViolation("forward-out barrier missed its terminal rays")
    endpoints["P_fwd_out"] = P_fo
    endpoints["O_fwd_out"] = trb.hit_point
    endpoints["Q_fwd_out"] = trf.hit_point
    curves["fwd_out"] = np.vstack([trb.sample(n_poly // 2)[1][::-1], trf.sample(n_poly // 2)[1]])

    # backward-in: f_b orbit, inside, one full backward circuit
    P_bi = _start_on_section(chart, zeta["u_b"], beta, gamma0, inside=True)
    trb2 = integrate(
        sys_b, 0.0, P_bi, Direction.BWD, stops=[StopAtSwitchCrossing(2)],
        horizon=400.0, tol=tol,
    )
    if trb2.termination is not Termination.HIT_TARGET or len(trb2.crossings) < 2:
        raise BandViolation("backward-in barrier did not complete its circuit")
    endpoints["P_bwd_in"] = P_bi
    endpoints["Q_bwd_in"] = trb2.crossings[0].point
    endpoints["R_bwd_in"] = trb2.endpoint()
    curves["bwd_in"] = trb2.sample(n_poly)[1]

    # backward-out: f_a orbit through the outside start
    P_bo = _start_on_section(chart, zeta["s_a"], beta, gamma0, inside=False)
    trb3 = integrate(
        sys_a, 0.0, P_bo, Direction.BWD, stops=[StopAtSection(out_minus)],
        horizon=400.0, tol=tol,
    )
    trf3 = integrate(
        sys_a, 0.0, P_bo, Direction.FWD, stops=[StopAtSection(out_plus)],
        horizon=400.0, tol=tol,
    )
    if trb3.termination is not Termination.HIT_TARGET or trf3.termination is not Termination.HIT_TARGET:
        raise BandViolation("backward-out barrier missed its terminal rays")
    endpoints["P_bwd_out"] = P_bo
    endpoints["O_bwd_out"] = trb3.hit_point
    endpoints["Q_bwd_out"] = trf3.hit_point
    curves["bwd_out"] = np.vstack([trb3.sample(n_poly // 2)[1][::-1], trf3.sample(n_poly // 2)[1]])

    checks = [
        BandCheck("P_fwd_in", float(np.linalg.norm(P_fi - gamma0)), beta - 1e-9, beta + 1e-9),
        BandCheck("P_fwd_out", float(np.linalg.norm(P_fo - gamma0)), beta - 1e-9, beta + 1e-9),
        _band(float(np.linalg.norm(endpoints["Q_fwd_in"])), beta, rates.sigma_fwd_plus, mu, "Q_fwd_in"),
        _band(float(np.linalg.norm(endpoints["Q_fwd_out"])), beta, rates.sigma_fwd_plus, mu, "Q_fwd_out"),
        _band(
            float(np.linalg.norm(endpoints["R_fwd_in"] - gamma0)), beta, rates.sigma_fwd, mu, "R_fwd_in"
        ),
        _band(float(np.linalg.norm(endpoints["O_fwd_out"])), beta, rates.sigma_bwd_minus, mu, "O_fwd_out"),
        BandCheck("P_bwd_in", float(np.linalg.norm(P_bi - gamma0)), beta - 1e-9, beta + 1e-9),
        BandCheck("P_bwd_out", float(np.linalg.norm(P_bo - gamma0)), beta - 1e-9, beta + 1e-9),
        _band(float(np.linalg.norm(endpoints["Q_bwd_in"])), beta, rates.sigma_bwd_minus, mu, "Q_bwd_in"),
        _band(float(np.linalg.norm(endpoints["Q_bwd_out"])), beta, rates.sigma_fwd_plus, mu, "Q_bwd_out"),
        _band(
            float(np.linalg.norm(endpoints["R_bwd_in"] - gamma0)), beta, rates.sigma_bwd, mu, "R_bwd_in"
        ),
        _band(float(np.linalg.norm(endpoints["O_bwd_out"])), beta, rates.sigma_bwd_minus, mu, "O_bwd_out"),
    ]
    if strict:
        bad = [c for c in checks if not c.ok]
        if bad:
            raise BandViolation(
                "; ".join(f"{c.name}={c.value:.4g} outside [{c.lo:.4g},{c.hi:.4g}]" for c in bad)
            )

    def closed_outer(curve_out: Array) -> Array:
        # O -> P -> Q polyline, closed through the origin corner
        return np.vstack([[0.0, 0.0], curve_out, [0.0, 0.0]])

    def closed_inner(curve_in: Array, a: Array, b: Array) -> Array:
        # P -> Q -> R polyline, closed along the switching-curve arc R -> P
        arc = np.array(
            [chart.point_at(s) for s in np.linspace(chart.ell(b), chart.ell(a), 64)]
        )
        return np.vstack([curve_in, arc, curve_in[:1]])

    bset = BarrierSet(
        beta=beta, mu=mu, epsilon=eps, kappa=cascade.kappa,
        curves=curves, endpoints=endpoints, zeta=zeta, band_checks=checks,
        blend_coef={"fwd_in": +coef, "fwd_out": -coef, "bwd_in": -coef, "bwd_out": +coef},
        perp_orientation=perp_orientation,
        _outer_fwd=closed_outer(curves["fwd_out"]),
        _inner_fwd=closed_inner(curves["fwd_in"], endpoints["P_fwd_in"], endpoints["R_fwd_in"]),
        _outer_bwd=closed_outer(curves["bwd_out"]),
        _inner_bwd=closed_inner(curves["bwd_in"], endpoints["P_bwd_in"], endpoints["R_bwd_in"]),
    )
    return bset


def flow_direction_report(
    system: PiecewiseSystem,
    gamma: Homoclinic,
    barriers: BarrierSet,
    n_samples: int = 32,
    n_times: int = 8,
    tangency_tol: float = 1e-9,
) -> dict:
    """Sign of the true field across each barrier curve at sampled points.

    Forward curves must be crossed toward the loop, backward curves away from
    it, at every sampled time; with the perturbation off the curves are true
    orbits and only tangency is required.
    """
    eps = system.epsilon
    period = system.g_period or (8.0 * math.pi)
    times = np.linspace(0.0, period, n_times, endpoint=False)
    out = {}
    all_ok = True
    for name, curve in barriers.curves.items():
        want = +1 if name.startswith("fwd") else -1
        coef = barriers.blend_coef.get(name, 0.0)
        orient = barriers.perp_orientation
        idx = np.linspace(5, len(curve) - 6, n_samples).astype(int)
        worst = math.inf
        ok = True
        for i in idx:
            x = curve[i]
            side = system.side_of(x)
            if side is None:
                continue
            # the curve is an orbit of the blend field, so its exact tangent
            # is the blend vector; the normal needs no polyline differencing
            f = system.field(side)(x)
            t_vec = f + coef * orient * _rot90(f)
            nt = np.linalg.norm(t_vec)
            if nt < 1e-12:
                continue
            n_hat = _rot90(t_vec) / nt
            # orient the normal toward the loop
            h = 1e-4 * (1.0 + gamma.diameter)
            if gamma.distance_to_loop(x + h * n_hat) > gamma.distance_to_loop(x - h * n_hat):
                n_hat = -n_hat
            for t in times:
                F = system.rhs(side, float(t), x)
                val = want * float(n_hat @ F)
                worst = min(worst, val)
                if eps == 0.0:
                    ok = ok and bool(abs(val) <= tangency_tol * (1.0 + float(np.linalg.norm(F))))
                else:
                    ok = ok and val > 0.0
        out[name] = {"ok": ok, "worst_signed_rate": worst}
        all_ok = all_ok and ok
    out["all_ok"] = all_ok
    return out


# -- loop maps ----------------------------------------------------------------


@dataclass
class LoopResult:
    d: float
    tau: float
    direction: str  # "fwd" | "bwd"
    T_half: float
    T_one: float
    P_half: Array
    P_one: Array
    D_one: float
    segment_times: tuple[float, float, float, float]
    segment_disps: tuple[float, float, float, float]
    sup_dev_first_half: float
    sup_dev_second_half: float
    crossing_times: tuple[float, float]  # system times of the two crossings
    transversal_hits_in_segment: bool
    contained: Optional[bool] = None

    @property
    def D_half(self) -> float:
        return float(np.linalg.norm(self.P_half))


@dataclass
class LoopContext:
    """Shared immutable inputs for loop-map runs."""

    system: PiecewiseSystem
    spectrum: SaddleSpectrum
    rates: RateConstants
    gamma: Homoclinic
    chart: DirectedChart
    anchors: LeafAnchors
    cascade: ParamCascade
    barriers: Optional[BarrierSet] = None
    tol: Tolerances = LOOP_TOL


def _sup_deviation(traj_a, traj_b, t_lo: float, t_hi: float, n: int = 129) -> float:
    sup = 0.0
    for t in np.linspace(t_lo, t_hi, n):
        sup = max(sup, float(np.linalg.norm(traj_a(t) - traj_b(t))))
    return sup


def _coeff_along(P: Array, anchor: Array, v_main: Array, v_other: Array) -> float:
    """Coefficient of v_main in P - anchor within the basis (v_main, v_other)."""
    M = np.column_stack([v_main, v_other])
    return float(np.linalg.solve(M, P - anchor)[0])


def loop_forward(ctx: LoopContext, d: float, tau: float) -> LoopResult:
    return _loop(ctx, d, tau, Direction.FWD)


def loop_backward(ctx: LoopContext, d: float, tau: float) -> LoopResult:
    return _loop(ctx, d, tau, Direction.BWD)


def _loop(ctx: LoopContext, d: float, tau: float, direction: Direction) -> LoopResult:
    casc = ctx.cascade
    if not 0 < d <= casc.delta:
        raise ValueError(f"d = {d:.4g} outside the admissible range (0, {casc.delta:.4g}]")
    spec = ctx.spectrum
    varpi = casc.varpi
    fwd = direction is Direction.FWD

    anchor_start = ctx.anchors.P_s(tau) if fwd else ctx.anchors.P_u(tau)
    Q = ctx.chart.point_at_distance(anchor_start, d, toward_origin=True)

    sec_stable = saddle_transversal(spec, varpi, LeafSide.STABLE)
    sec_unstable = saddle_transversal(spec, varpi, LeafSide.UNSTABLE)
    horizon = 3.0 * ctx.rates.Sigma_hi * abs(math.log(d)) + 60.0
    traj = integrate(
        ctx.system, tau, Q, direction,
        stops=[
            StopAtSwitchCrossing(2),
            StopAtSection(sec_stable, min_crossings=99),
            StopAtSection(sec_unstable, min_crossings=99),
        ],
        horizon=horizon, tol=ctx.tol,
    )
    if traj.termination is not Termination.HIT_TARGET or len(traj.crossings) < 2:
        raise LeftRegion(
            f"loop did not return to the switching curve ({traj.termination.value})"
        )
    c_half, c_one = traj.crossings[0], traj.crossings[1]
    P_half, P_one = c_half.point, c_one.point
    if not ctx.gamma.contains(P_half):
        raise LeftRegion("mid-loop crossing landed outside the enclosed region")
    if min(abs(c_half.transversality), abs(c_one.transversality)) < ctx.tol.transversality_floor:
        raise NonTransversalCrossing("loop crossing below the transversality floor")
    # side pattern: plus branch first on forward loops, minus first backward
    first_side = traj.side_at(tau + direction.sign * 1e-9)
    if fwd and first_side is not Side.PLUS or (not fwd and first_side is not Side.MINUS):
        raise LeftRegion("loop started on the wrong side of the switching curve")

    T_half = abs(c_half.t - tau)
    T_one = abs(c_one.t - tau)

    # transversal hits in the expected sub-legs
    first_lab = "S+" if fwd else "S-"
    second_lab = "S-" if fwd else "S+"

    def pick_hit(label: str, t_lo: float, t_hi: float):
        for h in traj.section_hits:
            if h.label == label and min(t_lo, t_hi) - 1e-12 <= h.t <= max(t_lo, t_hi) + 1e-12:
                return h
        return None

    h1 = pick_hit(first_lab, tau, c_half.t)
    h2 = pick_hit(second_lab, c_half.t, c_one.t)
    if h1 is None or h2 is None:
        raise LeftRegion("loop missed a near-saddle transversal")
    in_segment = h1.within_segment and h2.within_segment

    T1 = abs(h1.t - tau)
    T2 = abs(c_half.t - h1.t)
    T3 = abs(h2.t - c_half.t)
    T4 = abs(c_one.t - h2.t)

    # displacement ladder
    if fwd:
        pi_first = ctx.anchors.pi_s(h1.t, varpi)
        D1 = -_coeff_along(h1.point, pi_first, spec.v_u_plus, spec.v_s_plus)
        pi_second = ctx.anchors.pi_u(h2.t, varpi)
        D3 = -_coeff_along(h2.point, pi_second, spec.v_s_minus, spec.v_u_minus)
        anchor_end = ctx.anchors.P_u(c_one.t)
    else:
        pi_first = ctx.anchors.pi_u(h1.t, varpi)
        D1 = -_coeff_along(h1.point, pi_first, spec.v_s_minus, spec.v_u_minus)
        pi_second = ctx.anchors.pi_s(h2.t, varpi)
        D3 = -_coeff_along(h2.point, pi_second, spec.v_u_plus, spec.v_s_plus)
        anchor_end = ctx.anchors.P_s(c_one.t)
    D2 = float(np.linalg.norm(P_half))
    D_one = ctx.chart.directed_distance(P_one, anchor_end)
    D4 = D_one

    # deviations from the anchor orbits over the two halves
    first_anchor_traj = integrate(
        ctx.system, tau, anchor_start, direction, stops=[], horizon=T_half, tol=ctx.tol
    )
    second_anchor_traj = integrate(
        ctx.system, c_one.t, anchor_end,
        Direction.BWD if fwd else Direction.FWD,
        stops=[], horizon=T_one - T_half, tol=ctx.tol,
    )
    sup1 = _sup_deviation(traj, first_anchor_traj, tau, c_half.t)
    sup2 = _sup_deviation(traj, second_anchor_traj, c_half.t, c_one.t)

    contained = None
    if ctx.barriers is not None:
        member = ctx.barriers.contains_fwd if fwd else ctx.barriers.contains_bwd
        _, pts = traj.sample(256)
        contained = all(member(p) for p in pts)
        if not contained:
            raise LeftRegion("loop orbit left the trapping region")

    return LoopResult(
        d=d, tau=tau, direction=direction.value,
        T_half=T_half, T_one=T_one, P_half=P_half, P_one=P_one, D_one=D_one,
        segment_times=(T1, T2, T3, T4), segment_disps=(D1, D2, D3, D4),
        sup_dev_first_half=sup1, sup_dev_second_half=sup2,
        crossing_times=(c_half.t, c_one.t),
        transversal_hits_in_segment=in_segment,
        contained=contained,
    )


def roundtrip_check(ctx: LoopContext, d: float, tau: float) -> float:
    """Residual of the forward loop composed with its backward integration."""
    res = loop_forward(ctx, d, tau)
    t_one = tau + res.T_one
    Q = ctx.chart.point_at_distance(ctx.anchors.P_s(tau), d, toward_origin=True)
    back = integrate(
        ctx.system, t_one, res.P_one, Direction.BWD,
        stops=[], horizon=res.T_one, tol=ctx.tol,
    )
    return float(np.linalg.norm(back.endpoint() - Q))
