"""Polynomial vector fields and separable time-periodic perturbations.

Planar fields are given by bivariate polynomial coefficient tables, which keeps
system definitions declarative (config-file friendly) while still providing
exact Jacobians for the variational and linearized flows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Coeffs = dict[tuple[int, int], float]


def _poly_eval(coeffs: Coeffs, x1: float, x2: float) -> float:
    return sum(c * x1**i * x2**j for (i, j), c in coeffs.items())


def _poly_dx1(coeffs: Coeffs) -> Coeffs:
    out: Coeffs = {}
    for (i, j), c in coeffs.items():
        if i > 0:
            out[(i - 1, j)] = out.get((i - 1, j), 0.0) + i * c
    return out


def _poly_dx2(coeffs: Coeffs) -> Coeffs:
    out: Coeffs = {}
    for (i, j), c in coeffs.items():
        if j > 0:
            out[(i, j - 1)] = out.get((i, j - 1), 0.0) + j * c
    return out


@dataclass(frozen=True)
class PolyField:
    """Polynomial planar vector field (f1(x), f2(x)) with exact Jacobian."""

    f1: Coeffs
    f2: Coeffs
    scale: float = 1.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x1, x2 = float(x[0]), float(x[1])
        return self.scale * np.array(
            [_poly_eval(self.f1, x1, x2), _poly_eval(self.f2, x1, x2)]
        )

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x1, x2 = float(x[0]), float(x[1])
        return self.scale * np.array(
            [
                [_poly_eval(_poly_dx1(self.f1), x1, x2), _poly_eval(_poly_dx2(self.f1), x1, x2)],
                [_poly_eval(_poly_dx1(self.f2), x1, x2), _poly_eval(_poly_dx2(self.f2), x1, x2)],
            ]
        )

    def scaled(self, c: float) -> "PolyField":
        return PolyField(self.f1, self.f2, self.scale * c)


@dataclass(frozen=True)
class PolyScalar:
    """Polynomial scalar function (switching functions) with exact gradient."""

    c: Coeffs

    def __call__(self, x: np.ndarray) -> float:
        return _poly_eval(self.c, float(x[0]), float(x[1]))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x1, x2 = float(x[0]), float(x[1])
        return np.array(
            [_poly_eval(_poly_dx1(self.c), x1, x2), _poly_eval(_poly_dx2(self.c), x1, x2)]
        )


@dataclass(frozen=True)
class TimeFactor:
    """Scalar factor a*cos(omega*t) + b*sin(omega*t) + const."""

    a_cos: float = 0.0
    b_sin: float = 0.0
    const: float = 1.0
    omega: float = 1.0

    def __call__(self, t: float) -> float:
        if self.a_cos == 0.0 and self.b_sin == 0.0:
            return self.const
        wt = self.omega * t
        return self.a_cos * np.cos(wt) + self.b_sin * np.sin(wt) + self.const

    @property
    def period(self) -> float | None:
        """Period in t, or None when the factor is constant."""
        if self.a_cos == 0.0 and self.b_sin == 0.0:
            return None
        return 2.0 * np.pi / abs(self.omega)


@dataclass(frozen=True)
class Perturbation:
    """Separable perturbation g(t, x, eps) = time_factor(t) * spatial(x).

    The eps argument is accepted for interface uniformity; built-in
    perturbations do not depend on it.
    """

    spatial: PolyField
    time_factor: TimeFactor = field(default_factory=TimeFactor)

    def __call__(self, t: float, x: np.ndarray, eps: float = 0.0) -> np.ndarray:
        return self.time_factor(t) * self.spatial(x)

    def jacobian(self, t: float, x: np.ndarray, eps: float = 0.0) -> np.ndarray:
        return self.time_factor(t) * self.spatial.jacobian(x)

    @property
    def period(self) -> float | None:
        return self.time_factor.period


ZERO_PERTURBATION = Perturbation(spatial=PolyField(f1={}, f2={}), time_factor=TimeFactor())

# Duffing-type core field (x1' = x2, x2' = x1 - x1^2); the workhorse example:
# it has the explicit saddle connection used throughout the test-suite.
DUFFING_FIELD = PolyField(f1={(0, 1): 1.0}, f2={(1, 0): 1.0, (2, 0): -1.0})

SWITCH_NEG_X2 = PolyScalar(c={(0, 1): -1.0})


def duffing_homoclinic(t: float | np.ndarray) -> np.ndarray:
    """Saddle connection of the Duffing core field, crossing {x2=0} at t=0.

    x1(t) = (3/2) sech^2(t/2), x2 = dx1/dt; satisfies x1'' = x1 - x1^2.
    """
    s = 1.0 / np.cosh(np.asarray(t) / 2.0)
    x1 = 1.5 * s * s
    x2 = -1.5 * s * s * np.tanh(np.asarray(t) / 2.0)
    return np.array([x1, x2]) if np.isscalar(t) else np.stack([x1, x2], axis=-1)
