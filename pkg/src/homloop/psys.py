"""Planar piecewise-smooth systems with a saddle on the switching curve.

A system is two smooth planar fields f_plus / f_minus glued along the zero set
of a switching function G, plus a small time-dependent perturbation eps*g.
This module holds the system container, validation of the standing structural
assumptions (saddle on the switching curve, non-tangent eigenvectors, absence
of sliding near the origin), the spectral data of the saddle and every rate
constant derived from it, and a handful of geometric helpers (rotated fields,
perturbation-to-field ratio bound).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .fields import (
    DUFFING_FIELD,
    SWITCH_NEG_X2,
    ZERO_PERTURBATION,
    Perturbation,
    PolyField,
    PolyScalar,
    TimeFactor,
)

Array = np.ndarray

_EPS = np.finfo(float).eps
_FD_STEP = _EPS ** (1.0 / 3.0)


class Side(enum.Enum):
    PLUS = "+"
    MINUS = "-"

    @property
    def sign(self) -> int:
        return 1 if self is Side.PLUS else -1

    @property
    def other(self) -> "Side":
        return Side.MINUS if self is Side.PLUS else Side.PLUS


class Scenario(enum.Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    UNDETERMINED = "Undetermined"


class NotASaddle(ValueError):
    """An eigenvalue pair of a one-sided Jacobian is not of saddle type."""


class TangentEigenvector(ValueError):
    """An eigenvector is (numerically) tangent to the switching curve."""


class ProbeAmbiguous(ValueError):
    """Scenario probe point too close to the loop for a membership decision."""


class ZeroField(ValueError):
    """Field vanishes at the requested point; rotation direction undefined."""


class FieldVanishesOnGrid(ValueError):
    """f vanishes on a ratio-bound grid point where g does not."""


def as_point(p) -> Array:
    q = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(q)):
        raise ValueError(f"non-finite point {p!r}")
    return q


def fd_jacobian(f: Callable[[Array], Array], x: Array, step: float | None = None) -> Array:
    """4th-order central-difference Jacobian of a planar field."""
    x = as_point(x)
    h = step if step is not None else _FD_STEP * (1.0 + float(np.linalg.norm(x)))
    J = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        J[:, j] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return J


def fd_gradient(G: Callable[[Array], float], x: Array, step: float | None = None) -> Array:
    x = as_point(x)
    h = step if step is not None else _FD_STEP * (1.0 + float(np.linalg.norm(x)))
    g = np.empty(2)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        g[j] = (-G(x + 2 * e) + 8 * G(x + e) - 8 * G(x - e) + G(x - 2 * e)) / (12 * h)
    return g


@dataclass(frozen=True)
class PiecewiseSystem:
    """Two-sided planar field with switching function and perturbation.

    The plus field governs {G > 0}, the minus field {G < 0}; both extend
    continuously to {G = 0}.  The perturbation g(t, x, eps) is switched on
    with amplitude ``epsilon``.  Jacobians/gradients default to high-order
    central differences when not supplied analytically.
    """

    f_plus: Callable[[Array], Array]
    f_minus: Callable[[Array], Array]
    G: Callable[[Array], float]
    jac_plus: Optional[Callable[[Array], Array]] = None
    jac_minus: Optional[Callable[[Array], Array]] = None
    grad_G: Optional[Callable[[Array], Array]] = None
    g: Optional[Callable[[float, Array, float], Array]] = None
    g_jac: Optional[Callable[[float, Array, float], Array]] = None
    g_period: Optional[float] = None
    epsilon: float = 0.0
    holder_alpha: float = 1.0
    r_order: float = 2.0
    name: str = ""

    # -- accessors ---------------------------------------------------------

    def field(self, side: Side) -> Callable[[Array], Array]:
        return self.f_plus if side is Side.PLUS else self.f_minus

    def jac(self, side: Side, x: Array) -> Array:
        fn = self.jac_plus if side is Side.PLUS else self.jac_minus
        if fn is not None:
            return fn(x)
        return fd_jacobian(self.field(side), x)

    def gradG(self, x: Array) -> Array:
        if self.grad_G is not None:
            return self.grad_G(x)
        return fd_gradient(self.G, x)

    def perturbation(self, t: float, x: Array) -> Array:
        if self.g is None:
            return np.zeros(2)
        return self.g(t, x, self.epsilon)

    def perturbation_jac(self, t: float, x: Array) -> Array:
        if self.g is None:
            return np.zeros((2, 2))
        if self.g_jac is not None:
            return self.g_jac(t, x, self.epsilon)
        return fd_jacobian(lambda q: self.g(t, q, self.epsilon), x)

    def rhs(self, side: Side, t: float, x: Array) -> Array:
        """Full right-hand side f_side(x) + eps*g(t,x,eps)."""
        v = self.field(side)(x)
        if self.epsilon != 0.0 and self.g is not None:
            v = v + self.epsilon * self.g(t, x, self.epsilon)
        return v

    def rhs_jac(self, side: Side, t: float, x: Array) -> Array:
        J = self.jac(side, x)
        if self.epsilon != 0.0 and self.g is not None:
            J = J + self.epsilon * self.perturbation_jac(t, x)
        return J

    def side_of(self, x: Array, tol: float = 0.0) -> Side | None:
        """Side containing x, or None when |G(x)| <= tol (on the switch curve)."""
        v = self.G(x)
        if abs(v) <= tol:
            return None
        return Side.PLUS if v > 0 else Side.MINUS

    def with_epsilon(self, epsilon: float) -> "PiecewiseSystem":
        return replace(self, epsilon=float(epsilon))

    def time_reversed(self) -> "PiecewiseSystem":
        """System whose solutions are t -> x(-t) for solutions x of self.

        Fields flip sign (sides keep their G-labels); the perturbation becomes
        -g(-t, x, eps).
        """
        g = self.g
        g_jac = self.g_jac
        rg = None if g is None else (lambda t, x, e: -g(-t, x, e))
        rg_jac = None if g_jac is None else (lambda t, x, e: -g_jac(-t, x, e))
        fp, fm = self.f_plus, self.f_minus
        jp, jm = self.jac_plus, self.jac_minus
        return replace(
            self,
            f_plus=lambda x: -fp(x),
            f_minus=lambda x: -fm(x),
            jac_plus=None if jp is None else (lambda x: -jp(x)),
            jac_minus=None if jm is None else (lambda x: -jm(x)),
            g=rg,
            g_jac=rg_jac,
            name=self.name + "~rev" if self.name else "",
        )

    # -- validation --------------------------------------------------------

    def validate(self, jac_tol: float = 1e-6) -> None:
        """Check the structural invariants; raise ValueError on violation."""
        zero = np.zeros(2)
        if abs(self.G(zero)) > 1e-12:
            raise ValueError("switching function does not vanish at the origin")
        if np.linalg.norm(self.gradG(zero)) < 1e-10:
            raise ValueError("0 is not a regular value of the switching function")
        for side in Side:
            if np.linalg.norm(self.field(side)(zero)) > 1e-12:
                raise ValueError(f"f_{side.value} does not vanish at the origin")
        if self.g is not None:
            for t in (0.0, 1.0, math.pi, 10.0):
                if np.linalg.norm(self.g(t, zero, self.epsilon)) > 1e-12:
                    raise ValueError("perturbation does not vanish at the origin")
        # analytic Jacobians must agree with finite differences
        rng = np.random.default_rng(0)
        for side, fn in ((Side.PLUS, self.jac_plus), (Side.MINUS, self.jac_minus)):
            if fn is None:
                continue
            for _ in range(3):
                x = rng.uniform(-1.0, 1.0, size=2)
                if np.max(np.abs(fn(x) - fd_jacobian(self.field(side), x))) > jac_tol:
                    raise ValueError(f"jac_{side.value} disagrees with finite differences")


@dataclass(frozen=True)
class SaddleSpectrum:
    """Eigendata of the two one-sided Jacobians at the origin.

    Eigenvectors are unit vectors with signs normalized so that the switching
    gradient pairings c_*_perp have the standard sign pattern
    (c_u_perp_minus < 0 < c_u_perp_plus, c_s_perp_minus < 0 < c_s_perp_plus)
    and the unstable minus / stable plus vectors match the departure/arrival
    directions of the saddle connection when orientation data is available.
    """

    lambda_s_plus: float
    lambda_u_plus: float
    lambda_s_minus: float
    lambda_u_minus: float
    v_s_plus: Array
    v_u_plus: Array
    v_s_minus: Array
    v_u_minus: Array
    c_u_perp_plus: float
    c_u_perp_minus: float
    c_s_perp_plus: float
    c_s_perp_minus: float

    def lam(self, side: Side, stable: bool) -> float:
        if side is Side.PLUS:
            return self.lambda_s_plus if stable else self.lambda_u_plus
        return self.lambda_s_minus if stable else self.lambda_u_minus

    def vec(self, side: Side, stable: bool) -> Array:
        if side is Side.PLUS:
            return self.v_s_plus if stable else self.v_u_plus
        return self.v_s_minus if stable else self.v_u_minus


@dataclass(frozen=True)
class RateConstants:
    """All saddle-rate constants entering the loop time/displacement laws."""

    sigma_fwd_plus: float
    sigma_fwd_minus: float
    sigma_fwd: float
    sigma_bwd_plus: float
    sigma_bwd_minus: float
    sigma_bwd: float
    sigma_lo: float
    sigma_hi: float
    Sigma_fwd_plus: float
    Sigma_bwd_minus: float
    Sigma_fwd: float
    Sigma_bwd: float
    Sigma_lo: float
    Sigma_hi: float
    lambda_lo: float
    lambda_hi: float
    mu0: float
    sigma_fb: float


@dataclass(frozen=True)
class AssumptionReport:
    f0_ok: bool
    f1_ok: bool
    f2_ok: bool
    g_ok: bool
    k_transversality: float
    scenario: Scenario
    sliding_near_origin: bool


def _eig_saddle(J: Array, side_label: str) -> tuple[float, Array, float, Array]:
    """(lambda_s, v_s, lambda_u, v_u) of a 2x2 real matrix; saddle required."""
    w, V = np.linalg.eig(J)
    if np.iscomplexobj(w) and np.max(np.abs(w.imag)) > 1e-12:
        raise NotASaddle(f"complex eigenvalues on side {side_label}: {w}")
    w = w.real
    V = V.real
    order = np.argsort(w)
    lam_s, lam_u = float(w[order[0]]), float(w[order[1]])
    if not (lam_s < 0.0 < lam_u):
        raise NotASaddle(f"eigenvalues {lam_s:.6g}, {lam_u:.6g} on side {side_label}")
    v_s = V[:, order[0]] / np.linalg.norm(V[:, order[0]])
    v_u = V[:, order[1]] / np.linalg.norm(V[:, order[1]])
    return lam_s, v_s, lam_u, v_u


def compute_spectrum(
    system: PiecewiseSystem,
    homoclinic_hint: tuple[Array, Array] | None = None,
    tangency_tol: float = 1e-9,
) -> SaddleSpectrum:
    """Eigendata at the origin with orientation-normalized eigenvector signs.

    ``homoclinic_hint`` is a pair (departure, arrival) of unit vectors: the
    limits of the normalized velocity of the saddle connection as t -> -inf
    and t -> +inf.  When given, v_u_minus is aligned with the departure and
    v_s_plus with minus the arrival; the remaining two signs (and all four
    when the hint is absent) come from the sign pattern of the pairings with
    the switching gradient.
    """
    zero = np.zeros(2)
    ls_p, vs_p, lu_p, vu_p = _eig_saddle(system.jac(Side.PLUS, zero), "+")
    ls_m, vs_m, lu_m, vu_m = _eig_saddle(system.jac(Side.MINUS, zero), "-")
    n = system.gradG(zero)

    def pairing(v: Array, label: str) -> float:
        c = float(n @ v)
        if abs(c) <= tangency_tol * np.linalg.norm(n):
            raise TangentEigenvector(f"{label} is tangent to the switching curve")
        return c

    # sign normalization: pairings then optional orientation data
    if homoclinic_hint is not None:
        dep = as_point(homoclinic_hint[0])
        arr = as_point(homoclinic_hint[1])
        dep = dep / np.linalg.norm(dep)
        arr = arr / np.linalg.norm(arr)
        if abs(dep @ vu_m) < 0.9:
            raise ValueError("departure direction is not along the minus-side unstable axis")
        if abs(arr @ vs_p) < 0.9:
            raise ValueError("arrival direction is not along the plus-side stable axis")
        vu_m = vu_m if dep @ vu_m > 0 else -vu_m
        vs_p = vs_p if arr @ vs_p < 0 else -vs_p  # arrival = -v_s_plus
    else:
        vu_m = vu_m if n @ vu_m < 0 else -vu_m
        vs_p = vs_p if n @ vs_p > 0 else -vs_p
    vu_p = vu_p if n @ vu_p > 0 else -vu_p
    vs_m = vs_m if n @ vs_m < 0 else -vs_m

    c_u_p = pairing(vu_p, "v_u_plus")
    c_u_m = pairing(vu_m, "v_u_minus")
    c_s_p = pairing(vs_p, "v_s_plus")
    c_s_m = pairing(vs_m, "v_s_minus")
    if not (c_u_m < 0 < c_u_p and c_s_m < 0 < c_s_p):
        raise TangentEigenvector(
            "pairing sign pattern unreachable; orientation data inconsistent "
            f"(c_u={c_u_m:.3g},{c_u_p:.3g} c_s={c_s_m:.3g},{c_s_p:.3g})"
        )
    return SaddleSpectrum(
        lambda_s_plus=ls_p,
        lambda_u_plus=lu_p,
        lambda_s_minus=ls_m,
        lambda_u_minus=lu_m,
        v_s_plus=vs_p,
        v_u_plus=vu_p,
        v_s_minus=vs_m,
        v_u_minus=vu_m,
        c_u_perp_plus=c_u_p,
        c_u_perp_minus=c_u_m,
        c_s_perp_plus=c_s_p,
        c_s_perp_minus=c_s_m,
    )


def rate_constants(spec: SaddleSpectrum) -> RateConstants:
    """Closed-form rate constants from the saddle eigenvalues."""
    as_p = abs(spec.lambda_s_plus)
    as_m = abs(spec.lambda_s_minus)
    au_p = spec.lambda_u_plus
    au_m = spec.lambda_u_minus

    sigma_fwd_plus = as_p / (au_p + as_p)
    sigma_fwd_minus = (au_m + as_m) / au_m
    sigma_fwd = sigma_fwd_plus * sigma_fwd_minus
    sigma_bwd_plus = 1.0 / sigma_fwd_plus
    sigma_bwd_minus = 1.0 / sigma_fwd_minus
    sigma_bwd = sigma_bwd_plus * sigma_bwd_minus
    sigma_lo = min(sigma_fwd_plus, sigma_bwd_minus)
    sigma_hi = max(sigma_fwd_plus, sigma_bwd_minus)

    Sigma_fwd_plus = 1.0 / (au_p + as_p)
    Sigma_bwd_minus = 1.0 / (au_m + as_m)
    Sigma_fwd = (au_m + as_p) / (au_m * (au_p + as_p))
    Sigma_bwd = (au_m + as_p) / (as_p * (au_m + as_m))
    Sigma_lo = min(Sigma_fwd, Sigma_bwd)
    Sigma_hi = max(Sigma_fwd, Sigma_bwd)

    lambda_lo = min(au_m, au_p, as_m, as_p)
    lambda_hi = max(au_m, au_p, as_m, as_p)
    mu0 = 0.25 * min(Sigma_fwd_plus, Sigma_bwd_minus, sigma_lo**2)
    sigma_fb = min(sigma_fwd, sigma_bwd)
    return RateConstants(
        sigma_fwd_plus=sigma_fwd_plus,
        sigma_fwd_minus=sigma_fwd_minus,
        sigma_fwd=sigma_fwd,
        sigma_bwd_plus=sigma_bwd_plus,
        sigma_bwd_minus=sigma_bwd_minus,
        sigma_bwd=sigma_bwd,
        sigma_lo=sigma_lo,
        sigma_hi=sigma_hi,
        Sigma_fwd_plus=Sigma_fwd_plus,
        Sigma_bwd_minus=Sigma_bwd_minus,
        Sigma_fwd=Sigma_fwd,
        Sigma_bwd=Sigma_bwd,
        Sigma_lo=Sigma_lo,
        Sigma_hi=Sigma_hi,
        lambda_lo=lambda_lo,
        lambda_hi=lambda_hi,
        mu0=mu0,
        sigma_fb=sigma_fb,
    )


def _ray_sector_side(v: Array, ray_a: Array, ray_b: Array) -> int:
    """Which of the two components cut by rays {t*ray_a} U {t*ray_b} holds v.

    Returns +1 for the sector swept counterclockwise from ray_a to ray_b,
    -1 for the complement.  v must not lie on either ray.
    """
    ta = math.atan2(ray_a[1], ray_a[0])
    tb = math.atan2(ray_b[1], ray_b[0])
    tv = math.atan2(v[1], v[0])
    width = (tb - ta) % (2 * math.pi)
    pos = (tv - ta) % (2 * math.pi)
    if min(abs(pos), abs(pos - width), abs(pos - 2 * math.pi)) < 1e-12:
        raise TangentEigenvector("stable eigenvector lies on the unstable ray pair")
    return 1 if pos < width else -1


def f2_condition(spec: SaddleSpectrum) -> bool:
    """True when the two stable eigenvectors straddle the unstable ray pair."""
    side_p = _ray_sector_side(spec.v_s_plus, spec.v_u_plus, spec.v_u_minus)
    side_m = _ray_sector_side(spec.v_s_minus, spec.v_u_plus, spec.v_u_minus)
    return side_p != side_m


def classify_scenario(
    spec: SaddleSpectrum,
    gamma=None,
    system: PiecewiseSystem | None = None,
    probe_rel: float = 1e-4,
    max_halvings: int = 8,
) -> AssumptionReport:
    """Eigenvector-configuration scenario of the saddle connection.

    ``gamma`` is a saddle-connection geometry object exposing ``diameter``,
    ``contains(P)`` (membership in the open region enclosed by the loop) and
    ``distance_to_loop(P)``; only the sector condition and sliding flag are
    reported when it is absent.
    """
    f2 = f2_condition(spec)
    sliding = not f2
    k_trans = math.nan
    g_ok = True
    if system is not None:
        if system.g is not None:
            zero = np.zeros(2)
            g_ok = all(
                np.linalg.norm(system.g(t, zero, system.epsilon)) <= 1e-12
                for t in (0.0, 1.0, math.pi)
            )
        if gamma is not None:
            p0 = gamma.crossing_point
            n = system.gradG(p0)
            k_trans = min(
                float(n @ system.f_plus(p0)), float(n @ system.f_minus(p0))
            )

    scenario = Scenario.UNDETERMINED
    if gamma is not None:
        d = probe_rel * gamma.diameter
        u_in = s_in = None
        for _ in range(max_halvings + 1):
            pu = d * spec.v_u_plus
            ps = d * spec.v_s_minus
            if min(gamma.distance_to_loop(pu), gamma.distance_to_loop(ps)) < 1e-3 * d:
                d /= 2.0
                continue
            u_in = gamma.contains(pu)
            s_in = gamma.contains(ps)
            break
        if u_in is None:
            raise ProbeAmbiguous("probe points stayed within tolerance of the loop")
        if not u_in and not s_in:
            scenario = Scenario.S1
        elif u_in and s_in:
            scenario = Scenario.S2
        elif u_in and not s_in:
            scenario = Scenario.S3
        else:
            scenario = Scenario.S4
        if scenario in (Scenario.S1, Scenario.S2) and not f2:
            raise ProbeAmbiguous(
                "sector condition and loop-membership classification disagree"
            )
    return AssumptionReport(
        f0_ok=True,
        f1_ok=True,
        f2_ok=f2,
        g_ok=g_ok,
        k_transversality=k_trans,
        scenario=scenario,
        sliding_near_origin=sliding,
    )


def perp_field(
    system: PiecewiseSystem, side: Side, x: Array, orientation: int = 1, tol: float = 1e-12
) -> Array:
    """Quarter-turn rotation of the side field, equal norm.

    ``orientation=+1`` rotates counterclockwise; the sign making the rotated
    field point into the region enclosed by the loop is system-dependent and
    is determined once via :func:`infer_perp_orientation`.
    """
    v = system.field(side)(as_point(x))
    if np.linalg.norm(v) < tol:
        raise ZeroField(f"field vanishes at {x}; rotation direction undefined")
    return orientation * np.array([-v[1], v[0]])


def infer_perp_orientation(system: PiecewiseSystem, gamma) -> int:
    """Sign s such that gamma(t) + c * s * rot90(f(gamma(t))) enters the loop.

    The probe offset must clear the loop polyline's chord resolution, so it
    scales with the loop diameter rather than machine precision.
    """
    for t in (1.0, -1.0, 0.5, -0.5):
        p = gamma(t)
        side = system.side_of(p)
        if side is None:
            continue
        w = perp_field(system, side, p, orientation=1)
        c = 2e-3 * gamma.diameter / max(np.linalg.norm(w), 1e-300)
        plus_in = gamma.contains(p + c * w)
        minus_in = gamma.contains(p - c * w)
        if plus_in and not minus_in:
            return 1
        if minus_in and not plus_in:
            return -1
    raise ProbeAmbiguous("could not orient the rotated field against the loop")


def kappa_bound(
    system: PiecewiseSystem,
    gamma,
    n_curve: int = 64,
    n_offsets: int = 16,
    n_times: int = 32,
    field_floor: float = 1e-9,
    collar: float | None = None,
) -> float:
    """2x the sup of |g|/|f| on a deterministic grid around the loop.

    The grid is n_curve points along the loop x n_offsets normal offsets
    within the collar x n_times time samples over one period of g (or a
    fixed window when g is aperiodic).  The collar defaults to a quarter of
    the loop diameter, capped at one: the ratio only has to dominate where
    the trapping curves live, and a wider collar can swallow interior
    equilibria of the core field where the ratio is unbounded.  Grid points
    where the side field vanishes are skipped when g vanishes there too,
    and rejected otherwise.
    """
    if system.g is None:
        return 0.0
    if collar is None:
        collar = min(1.0, 0.25 * gamma.diameter)
    T = system.g_period if system.g_period else 8.0 * math.pi
    times = np.linspace(0.0, T, n_times, endpoint=False)
    span = gamma.time_span
    ts = np.linspace(span[0], span[1], n_curve)
    offsets = np.linspace(-collar, collar, n_offsets)
    worst = 0.0
    for tc in ts:
        p = gamma(tc)
        side0 = system.side_of(p)
        if side0 is None:
            side0 = Side.PLUS
        v = system.field(side0)(p)
        nv = np.linalg.norm(v)
        if nv < field_floor:
            continue
        normal = np.array([-v[1], v[0]]) / nv
        for r in offsets:
            x = p + r * normal
            side = system.side_of(x)
            if side is None:
                side = side0
            fx = np.linalg.norm(system.field(side)(x))
            gx = max(np.linalg.norm(system.g(t, x, 0.0)) for t in times)
            if fx < field_floor:
                if gx < field_floor:
                    continue
                raise FieldVanishesOnGrid(f"f vanishes at grid point {x} but g does not")
            worst = max(worst, gx / fx)
    return 2.0 * worst


# -- built-in systems -------------------------------------------------------

_BUILTIN_PERTURBATIONS: dict[str, Perturbation] = {
    "damping": Perturbation(spatial=PolyField(f1={}, f2={(0, 1): -1.0})),
    "forcing": Perturbation(
        spatial=PolyField(f1={}, f2={(1, 0): 1.0}),
        time_factor=TimeFactor(a_cos=1.0, b_sin=0.0, const=0.0, omega=1.0),
    ),
}


def builtin_perturbation(name: str) -> Perturbation:
    """Named perturbations: 'damping' g=(0,-x2), 'forcing' g=(0, x1*cos t)."""
    try:
        return _BUILTIN_PERTURBATIONS[name]
    except KeyError:
        raise KeyError(f"unknown perturbation {name!r}; have {sorted(_BUILTIN_PERTURBATIONS)}")


def make_system(
    f_plus: PolyField,
    f_minus: PolyField,
    G: PolyScalar,
    perturbation: Perturbation | None = None,
    epsilon: float = 0.0,
    holder_alpha: float = 1.0,
    r_order: float = 2.0,
    name: str = "",
) -> PiecewiseSystem:
    pert = perturbation if perturbation is not None else ZERO_PERTURBATION
    return PiecewiseSystem(
        f_plus=f_plus,
        f_minus=f_minus,
        G=G,
        jac_plus=f_plus.jacobian,
        jac_minus=f_minus.jacobian,
        grad_G=G.gradient,
        g=pert,
        g_jac=pert.jacobian,
        g_period=pert.period,
        epsilon=epsilon,
        holder_alpha=holder_alpha,
        r_order=r_order,
        name=name,
    )


def builtin_system(
    name: str,
    epsilon: float = 0.0,
    perturbation: Perturbation | str | None = None,
) -> PiecewiseSystem:
    """Built-in systems: 'duffing', 'duffing-rescaled', 'sliding-demo'."""
    if isinstance(perturbation, str):
        perturbation = builtin_perturbation(perturbation)
    if name == "duffing":
        return make_system(
            DUFFING_FIELD, DUFFING_FIELD, SWITCH_NEG_X2, perturbation, epsilon, name=name
        )
    if name == "duffing-rescaled":
        return make_system(
            DUFFING_FIELD,
            DUFFING_FIELD.scaled(2.0),
            SWITCH_NEG_X2,
            perturbation,
            epsilon,
            name=name,
        )
    if name == "duffing-dulac":
        # Duffing core plus c*H*grad(H) with H the Duffing first integral:
        # the loop orbit is untouched (H=0 level is invariant) while the
        # divergence integral along it becomes c * integral |grad H|^2 < 0,
        # making the loop attracting from inside for c < 0.
        c = -0.05
        f1 = {
            (0, 1): 1.0,
            (3, 0): 0.5 * c, (4, 0): -5.0 / 6.0 * c, (5, 0): c / 3.0,
            (1, 2): -0.5 * c, (2, 2): 0.5 * c,
        }
        f2 = {
            (1, 0): 1.0, (2, 0): -1.0,
            (2, 1): -0.5 * c, (3, 1): c / 3.0, (0, 3): 0.5 * c,
        }
        fd = PolyField(f1=f1, f2=f2)
        return make_system(fd, fd, SWITCH_NEG_X2, perturbation, epsilon, name=name)
    if name == "sliding-demo":
        # linear saddles whose stable axes sit on the same side of the
        # unstable ray pair, so the sector condition fails near the origin
        vu = np.array([1.0, -1.0]) / math.sqrt(2)  # pairing with (0,-1) positive
        vs = np.array([-1.0, -1.0]) / math.sqrt(2)
        V = np.column_stack([vu, vs])
        Jp = V @ np.diag([1.0, -1.0]) @ np.linalg.inv(V)
        f_plus = PolyField(
            f1={(1, 0): Jp[0, 0], (0, 1): Jp[0, 1]}, f2={(1, 0): Jp[1, 0], (0, 1): Jp[1, 1]}
        )
        # minus side: the plain rotated saddle (v_u=(1,1), v_s=(-1,1))
        f_minus = PolyField(f1={(0, 1): 1.0}, f2={(1, 0): 1.0})
        return make_system(f_plus, f_minus, SWITCH_NEG_X2, perturbation, epsilon, name=name)
    raise KeyError(f"unknown built-in system {name!r}")
