"""Saddle connection geometry and perturbed stable/unstable leaf anchors.

The unperturbed system carries a loop: an orbit leaving the origin into the
minus region, crossing the switching curve once transversally, and returning
to the origin through the plus region.  Under the time-dependent perturbation
the loop breaks into a stable and an unstable leaf; their first intersections
with the reference section on the switching curve (the anchors) and with two
short transversals near the saddle are the base points of every loop-map
measurement.

Anchors are found by shooting: a seed is planted on the local invariant
manifold near the origin (with a quadratic manifold correction) and carried
to the section; the seed offset is Richardson-extrapolated and, for
time-dependent perturbations, the seed time is adjusted so the section
crossing happens at the requested time.
"""
from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fields import duffing_homoclinic
from .flow import (
    Direction,
    Section,
    StopAtSection,
    StopAtSwitchCrossing,
    Termination,
    Tolerances,
    integrate,
)
from .psys import PiecewiseSystem, SaddleSpectrum, Side, as_point, compute_spectrum

Array = np.ndarray


class NoConnection(RuntimeError):
    """Bidirectional shooting found no matching switching-curve crossing."""


class NotConverged(RuntimeError):
    """Richardson extrapolation stages disagree beyond tolerance."""


class WrongSection(RuntimeError):
    """An orbit missed the reference section window."""


class MissedTransversal(RuntimeError):
    """An orbit missed the near-saddle transversal segment."""


class LeafSide(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"


# -- loop geometry -----------------------------------------------------------


def _point_segment_dist(P: Array, A: Array, B: Array) -> Array:
    """Distances from P to segments A[i]B[i] (vectorized over i)."""
    AB = B - A
    denom = np.einsum("ij,ij->i", AB, AB)
    denom[denom == 0.0] = 1.0
    t = np.clip(np.einsum("ij,ij->i", P[None, :] - A, AB) / denom, 0.0, 1.0)
    proj = A + t[:, None] * AB
    return np.linalg.norm(P[None, :] - proj, axis=1)


@dataclass
class Homoclinic:
    """Loop orbit of the unperturbed system with geometry queries.

    ``gamma`` evaluates the orbit at any time (exponential tails included);
    the polyline closes the loop through the origin for membership tests.
    """

    gamma: Callable[[float], Array]
    crossing_point: Array
    decay_c0: float
    loop_polyline: Array  # (N, 2), closed: first == last
    time_span: tuple[float, float]
    spectrum: SaddleSpectrum
    name: str = ""
    shoot_mismatch: float = 0.0

    _diameter: float = field(default=0.0, repr=False)

    def __call__(self, t):
        return self.gamma(t)

    @property
    def diameter(self) -> float:
        if self._diameter == 0.0:
            pts = self.loop_polyline[:: max(1, len(self.loop_polyline) // 256)]
            d = 0.0
            for p in pts:
                d = max(d, float(np.max(np.linalg.norm(pts - p, axis=1))))
            self._diameter = d
        return self._diameter

    def contains(self, P) -> bool:
        """Membership in the open region enclosed by the loop (ray casting)."""
        P = as_point(P)
        poly = self.loop_polyline
        x, y = P
        xs, ys = poly[:-1, 0], poly[:-1, 1]
        xe, ye = poly[1:, 0], poly[1:, 1]
        cond = (ys <= y) != (ye <= y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = xs + (y - ys) / (ye - ys) * (xe - xs)
        hits = cond & (x < xi)
        return bool(np.count_nonzero(hits) % 2 == 1)

    def distance_to_loop(self, P) -> float:
        P = as_point(P)
        return float(np.min(_point_segment_dist(P, self.loop_polyline[:-1], self.loop_polyline[1:])))

    def orientation_hint(self) -> tuple[Array, Array]:
        """(departure, arrival) unit velocity limits of the loop orbit."""
        t0, t1 = self.time_span
        h = 1e-4
        dep = (self.gamma(t0 + h) - self.gamma(t0)) / h
        arr = (self.gamma(t1) - self.gamma(t1 - h)) / h
        return dep / np.linalg.norm(dep), arr / np.linalg.norm(arr)


def _close_polyline(pts: Array) -> Array:
    origin = np.zeros((1, 2))
    return np.vstack([origin, pts, origin])


def _polyline_from_gamma(gamma, t_lo: float, t_hi: float, n: int) -> Array:
    ts = np.linspace(t_lo, t_hi, n)
    pts = np.array([gamma(t) for t in ts])
    return _close_polyline(pts)


def _fit_decay_c0(gamma, spectrum: SaddleSpectrum) -> float:
    sup = 0.0
    for t in np.linspace(-20.0, -3.0, 40):
        sup = max(sup, np.linalg.norm(gamma(t)) * math.exp(-spectrum.lambda_u_minus * t))
    for t in np.linspace(3.0, 20.0, 40):
        sup = max(sup, np.linalg.norm(gamma(t)) * math.exp(-spectrum.lambda_s_plus * t))
    return 4.0 * sup


def _manifold_quadratic(system: PiecewiseSystem, side: Side, lam: float, v: Array) -> Array:
    """Second-order coefficient of the local invariant-manifold graph.

    The manifold through the origin tangent to v admits x(eta) = eta v +
    eta^2 w + O(eta^3); w solves (J - 2 lam I) w - b v = -Q(v), w . v = 0,
    with Q the quadratic part of the field.
    """
    f = system.field(side)
    J = system.jac(side, np.zeros(2))
    h = 1e-3
    Qv = (f(h * v) + f(-h * v)) / (2.0 * h * h)
    M = np.zeros((3, 3))
    M[:2, :2] = J - 2.0 * lam * np.eye(2)
    M[:2, 2] = -v
    M[2, :2] = v
    rhs = np.array([-Qv[0], -Qv[1], 0.0])
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return np.zeros(2)
    return sol[:2]


def homoclinic_orbit(
    system: PiecewiseSystem,
    spectrum: SaddleSpectrum | None = None,
    eta: float = 1e-8,
    mismatch_tol: float = 1e-9,
    n_polyline: int = 2048,
    tol: Tolerances = Tolerances(),
) -> Homoclinic:
    """Loop orbit of the unperturbed system.

    Built-in systems use their closed-form orbit; otherwise both invariant
    manifolds are shot from quadratically corrected seeds at offset ``eta``
    and matched on the switching curve.  The departure/arrival transversality
    of the crossing is verified.
    """
    name = system.name.split("~")[0]
    if name in ("duffing", "duffing-rescaled", "duffing-dulac"):
        if name == "duffing-rescaled":

            def gamma(t: float) -> Array:
                return duffing_homoclinic(2.0 * t if t < 0 else t)

        else:
            gamma = duffing_homoclinic
        span = (-25.0, 25.0) if name != "duffing-rescaled" else (-12.5, 25.0)
        hint_spec = spectrum or compute_spectrum(
            system,
            (np.array([1.0, 1.0]) / math.sqrt(2), -np.array([1.0, -1.0]) / math.sqrt(2)),
        )
        hom = Homoclinic(
            gamma=gamma,
            crossing_point=np.array([1.5, 0.0]),
            decay_c0=0.0,
            loop_polyline=_polyline_from_gamma(gamma, span[0], span[1], n_polyline),
            time_span=span,
            spectrum=hint_spec,
            name=name,
        )
        hom.decay_c0 = _fit_decay_c0(gamma, hint_spec)
        _check_crossing_transversality(system, hom)
        return hom

    # generic bidirectional shooting at eps = 0
    base = system.with_epsilon(0.0)
    spec = spectrum or compute_spectrum(base)
    lam_u, v_u = spec.lambda_u_minus, spec.v_u_minus
    lam_s, v_s = spec.lambda_s_plus, spec.v_s_plus
    w_u = _manifold_quadratic(base, Side.MINUS, lam_u, v_u)
    w_s = _manifold_quadratic(base, Side.PLUS, lam_s, v_s)

    fwd = integrate(
        base, 0.0, eta * v_u + eta * eta * w_u, Direction.FWD,
        stops=[StopAtSwitchCrossing(1)], horizon=200.0, tol=tol,
    )
    bwd = integrate(
        base, 0.0, eta * v_s + eta * eta * w_s, Direction.BWD,
        stops=[StopAtSwitchCrossing(1)], horizon=200.0, tol=tol,
    )
    if fwd.termination is not Termination.HIT_TARGET or bwd.termination is not Termination.HIT_TARGET:
        raise NoConnection("a manifold branch missed the switching curve")
    Pu, Ps = fwd.hit_point, bwd.hit_point
    mismatch = float(np.linalg.norm(Pu - Ps))
    scale = max(1.0, np.linalg.norm(Pu))
    if mismatch > mismatch_tol * scale:
        raise NoConnection(f"manifold mismatch {mismatch:.3g} on the switching curve")
    P0 = 0.5 * (Pu + Ps)
    T_fwd = abs(fwd.t_end)  # time from seed to crossing, unstable branch
    T_bwd = abs(bwd.t_end)

    def gamma(t: float) -> Array:
        if t < -T_fwd:
            return eta * v_u * math.exp(lam_u * (t + T_fwd))
        if t < 0.0:
            return fwd(T_fwd + t)  # fwd ran over [0, T_fwd] from the seed
        if t <= T_bwd:
            return bwd(t - T_bwd)
        return eta * v_s * math.exp(lam_s * (t - T_bwd))

    span = (-(T_fwd + 30.0), T_bwd + 30.0)
    hom = Homoclinic(
        gamma=gamma,
        crossing_point=P0,
        decay_c0=0.0,
        loop_polyline=_polyline_from_gamma(gamma, -T_fwd, T_bwd, n_polyline),
        time_span=span,
        spectrum=spec,
        name=system.name or "custom",
        shoot_mismatch=mismatch,
    )
    hom.decay_c0 = _fit_decay_c0(gamma, spec)
    _check_crossing_transversality(system, hom)
    return hom


def _check_crossing_transversality(system: PiecewiseSystem, hom: Homoclinic) -> None:
    p0 = hom.crossing_point
    n = system.gradG(p0)
    for side in Side:
        if float(n @ system.field(side)(p0)) <= 0.0:
            raise NoConnection(
                "loop crossing is not transversal with positive switching speed"
            )


# -- leaf anchors ------------------------------------------------------------


def _richardson3(values: list[Array]) -> Array:
    """Limit of v(eta) = v0 + a eta + b eta^2 from samples at eta0, eta0/2, eta0/4."""
    v1, v2, v4 = values  # eta0, eta0/2, eta0/4
    # eliminate the linear term pairwise, then the quadratic one
    a12 = 2.0 * v2 - v1  # v0 - (b/2) eta0^2 ... actually v0 + b*(eta0^2/2 - ...)
    a24 = 2.0 * v4 - v2
    return (4.0 * a24 - a12) / 3.0


@dataclass
class LeafAnchors:
    """Anchor evaluators for one system at fixed perturbation amplitude.

    P_s / P_u are the section anchors of the stable/unstable leaves; pi_s /
    pi_u their first hits on the near-saddle transversals at logarithmic
    offset 1/|ln(varpi)|.  Results are cached per requested time.
    """

    system: PiecewiseSystem
    spectrum: SaddleSpectrum
    gamma: Homoclinic
    eta0: float = 1e-4
    T_horizon: float = 30.0
    tol: Tolerances = Tolerances()
    eta_shoot: float = 0.0
    cbar_est: float = 0.0
    principal_dirs: Optional[Callable[[Side, bool, float], Array]] = None
    _cache: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        lam_lo = min(
            self.spectrum.lambda_u_minus,
            self.spectrum.lambda_u_plus,
            -self.spectrum.lambda_s_minus,
            -self.spectrum.lambda_s_plus,
        )
        self.T_horizon = max(30.0, 8.0 / lam_lo)

    # seed direction at a given time: perturbed principal direction when
    # available, static eigenvector otherwise
    def _dir(self, side: Side, stable: bool, t: float) -> Array:
        if self.principal_dirs is not None and self.system.epsilon != 0.0:
            return self.principal_dirs(side, stable, t)
        return self.spectrum.vec(side, stable)

    @property
    def autonomous(self) -> bool:
        return self.system.epsilon == 0.0 or self.system.g is None

    def _key_tau(self, tau: float) -> float:
        # anchors of autonomous systems do not depend on the base time
        return 0.0 if self.autonomous else round(tau, 12)

    def P_s(self, tau: float) -> Array:
        return self._anchor(tau, LeafSide.STABLE)

    def P_u(self, tau: float) -> Array:
        return self._anchor(tau, LeafSide.UNSTABLE)

    def _anchor(self, tau: float, which: LeafSide) -> Array:
        key = (which, self._key_tau(tau))
        with self._lock:
            if key in self._cache:
                return self._cache[key]
            val = leaf_anchor_on_L0(
                self.system, self.spectrum, self.gamma, tau, which,
                eta0=self.eta0, T_horizon=self.T_horizon, tol=self.tol,
                seed_dir=lambda t, s=which: self._dir(
                    Side.PLUS if s is LeafSide.STABLE else Side.MINUS,
                    s is LeafSide.STABLE,
                    t,
                ),
            )
            self._cache[key] = val
            return val

    def pi_s(self, tau: float, varpi: float) -> Array:
        return self._pi(tau, varpi, LeafSide.STABLE)

    def pi_u(self, tau: float, varpi: float) -> Array:
        return self._pi(tau, varpi, LeafSide.UNSTABLE)

    def _pi(self, tau: float, varpi: float, which: LeafSide) -> Array:
        key = (f"pi_{which.value}", self._key_tau(tau), varpi)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        val = leaf_anchor_on_S(
            self.system, self.spectrum, self, tau, varpi, which, tol=self.tol
        )
        with self._lock:
            self._cache[key] = val
        return val


def leaf_anchor_on_L0(
    system: PiecewiseSystem,
    spectrum: SaddleSpectrum,
    gamma: Homoclinic,
    tau: float,
    which: LeafSide,
    eta0: float = 1e-4,
    T_horizon: float = 30.0,
    tol: Tolerances = Tolerances(),
    seed_dir: Callable[[float], Array] | None = None,
    richardson_rtol: float = 5e-4,
) -> Array:
    """Leaf anchor on the reference section at time tau.

    Stable leaf: seed at eta * v_s(+quadratic correction) near the origin at a
    late time, integrate backward to the first switching-curve crossing near
    the loop's crossing point.  For time-dependent perturbations the seed time
    is adjusted (secant on the crossing-time defect) so the crossing happens
    at tau; autonomous runs skip the timing loop.  The seed offset is
    Richardson-extrapolated over eta0, eta0/2, eta0/4.
    """
    stable = which is LeafSide.STABLE
    side = Side.PLUS if stable else Side.MINUS
    lam = spectrum.lam(side, stable)
    v_static = spectrum.vec(side, stable)
    w2 = _manifold_quadratic(system.with_epsilon(0.0), side, lam, v_static)
    direction = Direction.BWD if stable else Direction.FWD
    autonomous = system.epsilon == 0.0 or system.g is None
    delta_L = 0.1 * gamma.diameter

    def one_shot(eta: float, t_seed: float) -> tuple[Array, float]:
        v = seed_dir(t_seed) if seed_dir is not None else v_static
        seed = eta * v + eta * eta * w2
        traj = integrate(
            system, t_seed, seed, direction,
            stops=[StopAtSwitchCrossing(1)], horizon=4.0 * T_horizon, tol=tol,
        )
        if traj.termination is not Termination.HIT_TARGET:
            raise WrongSection(f"{which.value} shot missed the switching curve")
        P, t_hit = traj.hit_point, traj.hit_time
        if np.linalg.norm(P - gamma.crossing_point) > delta_L:
            raise WrongSection(
                f"{which.value} anchor landed {np.linalg.norm(P - gamma.crossing_point):.3g} "
                f"from the loop crossing (window {delta_L:.3g})"
            )
        return P, t_hit

    sgn = -1.0 if stable else 1.0  # seed sits in the orbit's future (stable leaf)

    values = []
    for k in range(3):
        eta = eta0 / 2.0**k
        if autonomous:
            P, _ = one_shot(eta, tau - sgn * 0.0)
            values.append(P)
            continue
        # timing loop: land the crossing at tau
        t_seed = tau - sgn * (math.log(max(gamma.diameter, 1.0) / eta) / abs(lam))
        P, t_hit = one_shot(eta, t_seed)
        for _ in range(6):
            defect = t_hit - tau
            if abs(defect) < 1e-10:
                break
            t_seed -= defect
            P, t_hit = one_shot(eta, t_seed)
        else:
            raise NotConverged("seed-time iteration did not land the crossing at tau")
        values.append(P)

    out = _richardson3(values)
    # compare against the linear-only extrapolation of the two finest stages;
    # the difference estimates the removed quadratic term
    linear_only = 2.0 * values[2] - values[1]
    disagreement = float(np.linalg.norm(out - linear_only))
    if disagreement > richardson_rtol * (1.0 + gamma.diameter):
        raise NotConverged(f"extrapolation stages disagree by {disagreement:.3g}")
    return out


def saddle_transversal(spectrum: SaddleSpectrum, varpi: float, which: LeafSide) -> Section:
    """Near-saddle transversal at offset 1/|ln varpi| with matching half-width."""
    L = abs(math.log(varpi))
    if which is LeafSide.STABLE:
        return Section(
            base=spectrum.v_s_plus / L,
            tangent=spectrum.v_u_plus,
            half_width=1.0 / L,
            label="S+",
        )
    return Section(
        base=spectrum.v_u_minus / L,
        tangent=spectrum.v_s_minus,
        half_width=1.0 / L,
        label="S-",
    )


def leaf_anchor_on_S(
    system: PiecewiseSystem,
    spectrum: SaddleSpectrum,
    anchors: LeafAnchors,
    tau: float,
    varpi: float,
    which: LeafSide,
    tol: Tolerances = Tolerances(),
) -> Array:
    """First hit of the leaf orbit through its section anchor on the
    near-saddle transversal."""
    sec = saddle_transversal(spectrum, varpi, which)
    if which is LeafSide.STABLE:
        P = anchors.P_s(tau)
        direction = Direction.FWD
    else:
        P = anchors.P_u(tau)
        direction = Direction.BWD
    traj = integrate(
        system, tau, P, direction,
        stops=[StopAtSection(sec)], horizon=200.0, tol=tol,
    )
    if traj.termination is not Termination.HIT_TARGET:
        raise MissedTransversal(f"{which.value} leaf orbit missed {sec.label}")
    return traj.hit_point


def shadowing_error(
    system: PiecewiseSystem,
    anchors: LeafAnchors,
    gamma: Homoclinic,
    tau: float,
    window: float = 20.0,
    n: int = 81,
    tol: Tolerances = Tolerances(),
) -> tuple[float, float]:
    """(sup_unstable, sup_stable) deviation of leaf orbits from the loop orbit.

    Unstable: sup over t in [tau-window, tau] of |x(t; P_u(tau)) - gamma(t-tau)|;
    stable: mirrored forward.
    """
    Pu, Ps = anchors.P_u(tau), anchors.P_s(tau)
    back = integrate(
        system, tau, Pu, Direction.BWD, stops=[], horizon=window, tol=tol
    )
    fwd = integrate(
        system, tau, Ps, Direction.FWD, stops=[], horizon=window, tol=tol
    )
    sup_u = max(
        float(np.linalg.norm(back(tau - s) - gamma(-s)))
        for s in np.linspace(0.0, window, n)
    )
    sup_s = max(
        float(np.linalg.norm(fwd(tau + s) - gamma(s)))
        for s in np.linspace(0.0, window, n)
    )
    return sup_u, sup_s
