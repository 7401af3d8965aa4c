"""Aggregation of loop batches into fitted scaling laws and stability probes.

Displacement exponents come from least-squares slopes of log displacement
against log d, time slopes from return time against |log d|; each fitted
value is compared against its closed-form counterpart within the session
band (widened by the fit's own standard error, so statistical noise cannot
masquerade as a band violation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.stats import linregress

from .flow import Direction, StopAtSection, Termination, integrate
from .leaves import Homoclinic
from .loopmap import LoopContext, LoopResult, loop_backward, loop_forward
from .psys import PiecewiseSystem, RateConstants, Side

Array = np.ndarray


class InsufficientGrid(ValueError):
    """Displacement grid too small or too narrow for a slope fit."""


@dataclass(frozen=True)
class FittedSlope:
    name: str
    value: float
    half_width: float  # 2 x standard error
    theory: float
    mu_used: float

    @property
    def mu_effective(self) -> float:
        return max(self.mu_used, 1.5 * self.half_width)  # 3 x standard error

    @property
    def passed(self) -> bool:
        return abs(self.value - self.theory) <= self.mu_effective


@dataclass
class ScalingReport:
    d_grid: list[float]
    tau_grid: list[float]
    mu_used: float
    slopes: list[FittedSlope]
    theory: RateConstants

    @property
    def all_passed(self) -> bool:
        return all(s.passed for s in self.slopes)

    def slope(self, name: str) -> FittedSlope:
        for s in self.slopes:
            if s.name == name:
                return s
        raise KeyError(name)


def run_batch(
    ctx: LoopContext,
    d_grid: Sequence[float],
    tau_grid: Sequence[float] = (0.0,),
    directions: tuple[str, ...] = ("fwd", "bwd"),
) -> list[LoopResult]:
    out = []
    for tau in tau_grid:
        for d in d_grid:
            if "fwd" in directions:
                out.append(loop_forward(ctx, d, tau))
            if "bwd" in directions:
                out.append(loop_backward(ctx, d, tau))
    return out


def _fit(xs, ys, name, theory, mu) -> FittedSlope:
    if len(xs) < 3:
        raise InsufficientGrid(f"{name}: need at least 3 grid points")
    res = linregress(xs, ys)
    return FittedSlope(
        name=name,
        value=float(res.slope),
        half_width=2.0 * float(res.stderr),
        theory=theory,
        mu_used=mu,
    )


def fit_exponents(
    batch: Sequence[LoopResult],
    rates: RateConstants,
    mu: float,
    d_max: float = 1e-2,
) -> ScalingReport:
    """Slope fits of the displacement and time laws over a loop batch.

    Only loops with d <= d_max enter the fits (asymptotic regime); forward
    and backward runs produce separate slope entries when both are present.
    """
    batch = [r for r in batch if r.d <= d_max * (1 + 1e-12)]
    ds = sorted({r.d for r in batch})
    if len(ds) < 5 or math.log10(ds[-1] / ds[0]) < 1.5 - 1e-9:
        raise InsufficientGrid(
            f"need >= 5 displacement values spanning >= 1.5 decades, got {len(ds)}"
        )
    taus = sorted({r.tau for r in batch})
    slopes: list[FittedSlope] = []
    for direction, tag_sigma, tag_sigma_half, tag_Sigma, tag_Sigma_half in (
        ("fwd", "sigma_fwd", "sigma_fwd_plus", "Sigma_fwd", "Sigma_fwd_plus"),
        ("bwd", "sigma_bwd", "sigma_bwd_minus", "Sigma_bwd", "Sigma_bwd_minus"),
    ):
        rows = [r for r in batch if r.direction == direction]
        if not rows:
            continue
        ln_d = [math.log(r.d) for r in rows]
        abs_ln_d = [abs(math.log(r.d)) for r in rows]
        slopes.append(
            _fit(ln_d, [math.log(r.D_one) for r in rows], tag_sigma,
                 getattr(rates, tag_sigma), mu)
        )
        slopes.append(
            _fit(ln_d, [math.log(r.D_half) for r in rows], tag_sigma_half,
                 getattr(rates, tag_sigma_half), mu)
        )
        slopes.append(
            _fit(abs_ln_d, [r.T_one for r in rows], tag_Sigma, getattr(rates, tag_Sigma), mu)
        )
        slopes.append(
            _fit(abs_ln_d, [r.T_half for r in rows], tag_Sigma_half,
                 getattr(rates, tag_Sigma_half), mu)
        )
    return ScalingReport(
        d_grid=ds, tau_grid=taus, mu_used=mu, slopes=slopes, theory=rates
    )


def keymissed_suite(
    batch: Sequence[LoopResult], rates: RateConstants, mu: float
) -> dict:
    """Per-loop check of the anchored deviation bounds.

    Forward loops: both half-leg sup deviations below d^(sigma_fwd_plus - mu);
    backward loops: below d^(sigma_bwd_minus - mu).  Reports the worst margin
    (bound/measured, > 1 means pass) and any violations.
    """
    rows = []
    worst = math.inf
    for r in batch:
        expo = rates.sigma_fwd_plus if r.direction == "fwd" else rates.sigma_bwd_minus
        bound = r.d ** (expo - mu)
        for which, dev in (
            ("first_half", r.sup_dev_first_half),
            ("second_half", r.sup_dev_second_half),
        ):
            margin = bound / dev if dev > 0 else math.inf
            worst = min(worst, margin)
            rows.append(
                {
                    "d": r.d, "tau": r.tau, "direction": r.direction, "leg": which,
                    "deviation": dev, "bound": bound, "ok": dev <= bound,
                }
            )
    return {
        "rows": rows,
        "violations": [row for row in rows if not row["ok"]],
        "worst_margin": worst,
        "all_ok": all(row["ok"] for row in rows),
    }


# -- stability probe -----------------------------------------------------------


@dataclass
class StabilityProbe:
    div_at_origin_plus: float
    div_at_origin_minus: float
    div_integral_along_gamma: float
    prediction: str  # "StableInside" | "UnstableInside" | "Indeterminate"
    empirical_contraction: float
    return_displacements: list[float] = field(default_factory=list)
    escaped: bool = False


def _divergence(system: PiecewiseSystem, side: Side, x: Array) -> float:
    return float(np.trace(system.jac(side, x)))


def dulac_prediction(
    div_plus: float, div_minus: float, integral: float, zero_tol: float = 1e-9
) -> str:
    """Inside-stability sign rule of the loop from divergence data.

    Strictly negative divergence at the saddle (both sides) forces inside
    stability regardless of the loop integral, strictly positive forces
    instability; with vanishing divergence the sign of the integral decides,
    and the doubly borderline case stays indeterminate.
    """
    scale = max(abs(div_plus), abs(div_minus))
    if div_plus < -zero_tol and div_minus < -zero_tol:
        return "StableInside"
    if div_plus > zero_tol and div_minus > zero_tol:
        return "UnstableInside"
    if scale <= zero_tol:
        if integral < -zero_tol:
            return "StableInside"
        if integral > zero_tol:
            return "UnstableInside"
        return "Indeterminate"
    return "Indeterminate"


def dulac_probe(
    system: PiecewiseSystem,
    gamma: Homoclinic,
    ctx: LoopContext,
    n_loops: int = 6,
    d0: float = 1e-3,
    T_int: float = 40.0,
    zero_tol: float = 1e-9,
) -> StabilityProbe:
    """Divergence sign rules at the saddle plus an empirical return-map probe.

    Prediction: negative divergence at the origin (both sides) forces inside
    stability regardless of the loop integral; with vanishing divergence the
    sign of the divergence integral along the loop orbit decides; the doubly
    borderline case stays indeterminate.  The probe then iterates the
    unperturbed return map from d0 and reports the geometric contraction
    ratio of successive displacements.
    """
    if system.epsilon != 0.0:
        raise ValueError("stability probe is defined for the unperturbed system")
    zero = np.zeros(2)
    div_p = _divergence(system, Side.PLUS, zero)
    div_m = _divergence(system, Side.MINUS, zero)

    def integrand(t: float) -> float:
        side = Side.MINUS if t < 0 else Side.PLUS
        return _divergence(system, side, gamma(t))

    I1, _ = quad(integrand, -T_int, 0.0, epsabs=1e-12, epsrel=1e-12, limit=400)
    I2, _ = quad(integrand, 0.0, T_int, epsabs=1e-12, epsrel=1e-12, limit=400)
    I = I1 + I2
    prediction = dulac_prediction(div_p, div_m, I, zero_tol)

    # iterate the return map
    ds = [d0]
    escaped = False
    try:
        for _ in range(n_loops):
            res = loop_forward(ctx, ds[-1], 0.0)
            ds.append(res.D_one)
    except Exception:
        escaped = True
    ratios = [b / a for a, b in zip(ds, ds[1:]) if a > 0]
    contraction = float(np.exp(np.mean(np.log(ratios)))) if ratios else math.inf
    return StabilityProbe(
        div_at_origin_plus=div_p,
        div_at_origin_minus=div_m,
        div_integral_along_gamma=I,
        prediction=prediction,
        empirical_contraction=contraction,
        return_displacements=ds,
        escaped=escaped,
    )


# -- first-arc mismatch reports -------------------------------------------------


def ell_mismatch_suite(
    ctx: LoopContext,
    d_grid: Sequence[float],
    tau: float = 0.0,
    n_sup: int = 81,
) -> dict:
    """First-arc displacement of loop orbits from the stable-anchor orbit.

    Measures the junction gap at the stable transversal and the sup deviation
    over the first arc, against both the finite-size bound
    2 |ln varpi|^(8 lambda_hi/lambda_lo) * d and its asymptotic simplification
    d * delta^(-mu1/2) (the latter only binds for astronomically small delta,
    so at desk scale it is reported, not asserted).  A linear fit of the gap
    against d checks the first-order vanishing.
    """
    from .leaves import LeafSide, saddle_transversal

    casc = ctx.cascade
    rates = ctx.rates
    log_varpi = casc.log_varpi
    coarse = 2.0 * log_varpi ** (8.0 * rates.lambda_hi / rates.lambda_lo)
    rows = []
    for d in d_grid:
        sec = saddle_transversal(ctx.spectrum, casc.varpi, LeafSide.STABLE)
        Q = ctx.chart.point_at_distance(ctx.anchors.P_s(tau), d, toward_origin=True)
        traj = integrate(
            ctx.system, tau, Q, Direction.FWD,
            stops=[StopAtSection(sec)], horizon=200.0, tol=ctx.tol,
        )
        if traj.termination is not Termination.HIT_TARGET:
            raise InsufficientGrid("first arc missed the stable transversal")
        T1 = traj.hit_time - tau
        anchor_traj = integrate(
            ctx.system, tau, ctx.anchors.P_s(tau), Direction.FWD,
            stops=[], horizon=T1, tol=ctx.tol,
        )
        gap = float(np.linalg.norm(traj.hit_point - anchor_traj(tau + T1)))
        sup = max(
            float(np.linalg.norm(traj(tau + th) - anchor_traj(tau + th)))
            for th in np.linspace(0.0, T1, n_sup)
        )
        rows.append(
            {
                "d": d, "T1": T1, "gap": gap, "sup_first_arc": sup,
                "finite_bound": coarse * d,
                "asymptotic_bound": d * casc.delta ** (-casc.mu1 / 2.0),
                "gap_ok_finite": gap <= coarse * d,
                "sup_ok_finite": sup <= coarse * d,
            }
        )
    ds = np.array([r["d"] for r in rows])
    gaps = np.array([r["gap"] for r in rows])
    slope = float(linregress(np.log(ds), np.log(gaps)).slope) if len(rows) >= 3 else math.nan
    return {
        "rows": rows,
        "gap_slope_vs_d": slope,
        "gap_slope_ok": (slope >= 0.9) if math.isfinite(slope) else False,
        "all_finite_bounds_ok": all(r["gap_ok_finite"] and r["sup_ok_finite"] for r in rows),
    }
