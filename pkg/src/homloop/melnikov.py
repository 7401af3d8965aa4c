"""First-order splitting of the loop under the time-dependent perturbation.

The splitting integrand is the wedge product of the side field with the
perturbation along the loop orbit, damped by the exponential of the
integrated Jacobian trace; the two half-line integrals (one per side) are
evaluated separately because the integrand is only piecewise smooth at the
switching time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, solve_ivp

from .leaves import Homoclinic, LeafAnchors
from .psys import PiecewiseSystem, Side

Array = np.ndarray


class WeightOverflow(RuntimeError):
    """Trace weight grew beyond representable range on the tail."""


class DegenerateZero(RuntimeError):
    """A located zero has slope below the nondegeneracy floor."""


def _wedge(a: Array, b: Array) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _trace_weight(system: PiecewiseSystem, gamma: Homoclinic, T: float):
    """Evaluator t -> exp(-int_0^t tr J(gamma(s)) ds), built per side."""

    def tr(t: float) -> float:
        side = Side.MINUS if t < 0 else Side.PLUS
        return -float(np.trace(system.jac(side, gamma(t))))

    sol_p = solve_ivp(
        lambda t, w: [tr(t) * w[0]], (0.0, T), [1.0],
        rtol=1e-12, atol=1e-300, dense_output=True,
    )
    sol_m = solve_ivp(
        lambda t, w: [tr(t) * w[0]], (0.0, -T), [1.0],
        rtol=1e-12, atol=1e-300, dense_output=True,
    )
    if not (sol_p.success and sol_m.success):
        raise WeightOverflow("trace-weight integration failed")
    if max(np.max(np.abs(sol_p.y)), np.max(np.abs(sol_m.y))) > 1e280:
        raise WeightOverflow("trace weight exceeds representable range")

    def w(t: float) -> float:
        sol = sol_p if t >= 0 else sol_m
        return float(sol.sol(np.clip(t, -T, T))[0])

    return w


def melnikov_value(
    system: PiecewiseSystem,
    gamma: Homoclinic,
    alpha: float,
    T_mel: float = 40.0,
    quad_tol: float = 1e-12,
    weight: Optional[Callable[[float], float]] = None,
) -> float:
    """Splitting integral at phase alpha.

    The half-line integrals are truncated at |t| = T_mel, chosen so the
    integrand bound (orbit decay times perturbation size times weight) is
    below 1e-14 there; built-in desk-scale systems satisfy this comfortably.
    """
    if system.g is None:
        return 0.0
    w = weight if weight is not None else _trace_weight(system, gamma, T_mel)

    def integrand_minus(t: float) -> float:
        x = gamma(t)
        return w(t) * _wedge(system.f_minus(x), system.g(t + alpha, x, 0.0))

    def integrand_plus(t: float) -> float:
        x = gamma(t)
        return w(t) * _wedge(system.f_plus(x), system.g(t + alpha, x, 0.0))

    m1, _ = quad(integrand_minus, -T_mel, 0.0, epsabs=quad_tol, epsrel=quad_tol, limit=400)
    m2, _ = quad(integrand_plus, 0.0, T_mel, epsabs=quad_tol, epsrel=quad_tol, limit=400)
    return m1 + m2


@dataclass
class MelnikovProfile:
    alphas: Array
    values: Array
    zeros: list[tuple[float, float]] = field(default_factory=list)
    weight: Optional[Callable[[float], float]] = None
    degenerate: list[float] = field(default_factory=list)

    def as_rows(self):
        return list(zip(self.alphas.tolist(), self.values.tolist()))


def melnikov_profile(
    system: PiecewiseSystem,
    gamma: Homoclinic,
    alphas,
    T_mel: float = 40.0,
    quad_tol: float = 1e-12,
) -> MelnikovProfile:
    alphas = np.asarray(alphas, dtype=float)
    weight = _trace_weight(system, gamma, T_mel) if system.g is not None else (lambda t: 1.0)
    vals = np.array(
        [melnikov_value(system, gamma, a, T_mel, quad_tol, weight) for a in alphas]
    )
    prof = MelnikovProfile(alphas=alphas, values=vals, weight=weight)
    find_zeros(
        prof,
        refine=lambda a: melnikov_value(system, gamma, a, T_mel, quad_tol, weight),
    )
    return prof


def find_zeros(
    profile: MelnikovProfile,
    refine: Callable[[float], float] | None = None,
    zero_tol: float = 1e-10,
    slope_floor_rel: float = 1e-6,
) -> list[tuple[float, float]]:
    """Zeros of the sampled profile, refined and classified by slope.

    Sign changes between grid points are sharpened by bisection/secant on
    ``refine`` (grid interpolation when absent); zeros whose central-difference
    slope falls below the floor are reported separately as degenerate.
    """
    a, v = profile.alphas, profile.values
    scale = float(np.max(np.abs(v))) if len(v) else 0.0
    floor = slope_floor_rel * max(scale, 1e-300)
    zeros: list[tuple[float, float]] = []
    degenerate: list[float] = []
    fun = refine

    for i in range(len(a) - 1):
        va, vb = v[i], v[i + 1]
        if va == 0.0:
            lo = hi = a[i]
        elif (va > 0) == (vb > 0) or vb == 0.0:
            continue
        else:
            lo, hi = a[i], a[i + 1]
        if fun is not None and lo != hi:
            flo = fun(lo)
            fhi = fun(hi)
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                fm = fun(mid)
                if abs(fm) < zero_tol or hi - lo < 1e-14:
                    break
                if (fm > 0) == (flo > 0):
                    lo, flo = mid, fm
                else:
                    hi, fhi = mid, fm
            # one secant polish
            if fhi != flo:
                cand = hi - fhi * (hi - lo) / (fhi - flo)
                if lo <= cand <= hi and abs(fun(cand)) <= abs(fm):
                    mid = cand
            alpha0 = mid
        else:
            alpha0 = lo if lo == hi else lo + (hi - lo) * abs(va) / (abs(va) + abs(vb))
        h = max(1e-5, 1e-4 * (a[-1] - a[0]) / max(len(a) - 1, 1))
        if fun is not None:
            slope = (fun(alpha0 + h) - fun(alpha0 - h)) / (2 * h)
        else:
            slope = (vb - va) / (a[i + 1] - a[i])
        if abs(slope) <= floor:
            degenerate.append(float(alpha0))
        else:
            zeros.append((float(alpha0), float(slope)))

    profile.zeros = zeros
    profile.degenerate = degenerate
    return zeros


def splitting_check(
    system_at: Callable[[float], PiecewiseSystem],
    gamma: Homoclinic,
    chart,
    tau_grid,
    eps_grid,
    anchors_factory: Callable[[PiecewiseSystem], LeafAnchors],
    T_mel: float = 40.0,
) -> dict:
    """Measured leaf splitting against the first-order prediction.

    For each (tau, eps) the directed distance between the unstable and stable
    anchors is compared with eps * M(tau); the report carries the measured
    ratios, whose constancy across the grid (away from zeros of M) and sign
    agreement with the orientation constant are the artifact's contract.
    """
    base = system_at(0.0)
    rows = []
    for eps in eps_grid:
        syse = system_at(eps)
        anchors = anchors_factory(syse)
        for tau in tau_grid:
            Pu = anchors.P_u(tau)
            Ps = anchors.P_s(tau)
            D = chart.directed_distance(Pu, Ps)
            M = melnikov_value(base, gamma, tau, T_mel)
            ratio = D / (eps * M) if eps != 0.0 and M != 0.0 else math.nan
            rows.append(
                {
                    "tau": float(tau),
                    "eps": float(eps),
                    "D": float(D),
                    "M": float(M),
                    "ratio": float(ratio),
                }
            )
    ratios = [r["ratio"] for r in rows if math.isfinite(r["ratio"])]
    spread = (max(ratios) - min(ratios)) / abs(np.mean(ratios)) if ratios else math.nan
    return {
        "rows": rows,
        "ratio_mean": float(np.mean(ratios)) if ratios else math.nan,
        "ratio_rel_spread": float(spread),
        "sign_consistent": all(
            (r["D"] == 0 and r["M"] == 0) or (r["D"] * r["M"] != 0) for r in rows
        ),
    }
