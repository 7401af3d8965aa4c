import math

import numpy as np
import pytest
from scipy.integrate import quad

from homloop.melnikov import (
    MelnikovProfile,
    find_zeros,
    melnikov_profile,
    melnikov_value,
)
from homloop.psys import builtin_perturbation, builtin_system

# closed form for the forcing amplitude: (9/8) * int sech^4(t/2) cos t dt
_FORCING_AMPLITUDE = 9.0 / 8.0 * quad(
    lambda t: math.cos(t) / math.cosh(t / 2.0) ** 4, -60.0, 60.0, limit=400
)[0]


@pytest.fixture(scope="module")
def damped():
    return builtin_system("duffing", perturbation="damping")


@pytest.fixture(scope="module")
def forced():
    return builtin_system("duffing", perturbation="forcing")


class TestMelnikovValue:
    def test_damping_closed_form(self, damped, duffing_hom):
        # M = -int gamma_dot_1^2 dt = -6/5, independent of the phase
        for alpha in (0.0, 1.0, 2.5):
            assert melnikov_value(damped, duffing_hom, alpha) == pytest.approx(
                -6.0 / 5.0, abs=1e-9
            )

    def test_forcing_sinusoid(self, forced, duffing_hom):
        A = _FORCING_AMPLITUDE
        for alpha in (0.0, 0.7, math.pi / 2, 4.0):
            expect = A * math.sin(alpha)
            assert melnikov_value(forced, duffing_hom, alpha) == pytest.approx(
                expect, abs=1e-9
            )

    def test_zero_perturbation(self, duffing, duffing_hom):
        assert melnikov_value(duffing, duffing_hom, 0.3) == 0.0

    def test_truncation_control(self, forced, duffing_hom):
        a = melnikov_value(forced, duffing_hom, 0.9, T_mel=40.0)
        b = melnikov_value(forced, duffing_hom, 0.9, T_mel=80.0)
        assert abs(a - b) < 1e-12

    def test_linearity_in_perturbation(self, duffing_hom):
        import dataclasses

        damped = builtin_system("duffing", perturbation="damping")
        forced = builtin_system("duffing", perturbation="forcing")
        gd = builtin_perturbation("damping")
        gf = builtin_perturbation("forcing")

        def g_sum(t, x, e):
            return gd(t, x, e) + gf(t, x, e)

        both = dataclasses.replace(damped, g=g_sum)
        for alpha in (0.0, 1.3):
            lhs = melnikov_value(both, duffing_hom, alpha)
            rhs = melnikov_value(damped, duffing_hom, alpha) + melnikov_value(
                forced, duffing_hom, alpha
            )
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_weight_rescaled_sides(self):
        # two-speed system with damping: the minus-side half-integral picks up
        # a factor 2 from the field and 1/2 from the reparametrized clock
        # (u = 2t), so each half contributes -3/5 and the total stays -6/5
        sysr = builtin_system("duffing-rescaled", perturbation="damping")
        from homloop.leaves import homoclinic_orbit

        homr = homoclinic_orbit(builtin_system("duffing-rescaled"))
        got = melnikov_value(sysr, homr, 0.0)
        assert got == pytest.approx(-6.0 / 5.0, abs=1e-9)


class TestProfileAndZeros:
    def test_periodic_profile_zeros(self, forced, duffing_hom):
        prof = melnikov_profile(
            forced, duffing_hom, np.linspace(0.0, 2 * math.pi, 41)
        )
        A = _FORCING_AMPLITUDE
        resid = prof.values - A * np.sin(prof.alphas)
        assert np.max(np.abs(resid)) < 1e-6 * abs(A)
        zs = sorted(a for a, _ in prof.zeros)
        assert len(zs) == 2
        assert zs[0] == pytest.approx(0.0, abs=1e-6)
        assert zs[1] == pytest.approx(math.pi, abs=1e-6)
        slopes = dict(prof.zeros)
        assert slopes[zs[0]] == pytest.approx(A, rel=1e-4)
        assert slopes[zs[1]] == pytest.approx(-A, rel=1e-4)

    def test_wraparound_periodicity(self, forced, duffing_hom):
        a = melnikov_value(forced, duffing_hom, 0.37)
        b = melnikov_value(forced, duffing_hom, 0.37 + 2 * math.pi)
        assert abs(a - b) < 1e-10

    def test_constant_profile_no_zeros(self, damped, duffing_hom):
        prof = melnikov_profile(damped, duffing_hom, np.linspace(0.0, 5.0, 11))
        assert np.max(prof.values) - np.min(prof.values) < 1e-10
        assert prof.zeros == []

    def test_degenerate_zero_cubic(self):
        alphas = np.linspace(-1.0, 1.0, 41)
        prof = MelnikovProfile(alphas=alphas, values=alphas**3)
        find_zeros(prof, refine=lambda a: a**3)
        assert prof.zeros == []
        assert len(prof.degenerate) == 1
        assert prof.degenerate[0] == pytest.approx(0.0, abs=1e-3)

    def test_weight_overflow_detected(self, duffing_hom):
        import dataclasses

        from homloop.melnikov import WeightOverflow, _trace_weight

        # a strongly expanding side makes the backward weight blow up
        base = builtin_system("duffing")
        blowup = dataclasses.replace(
            base,
            jac_plus=lambda x: np.array([[25.0, 0.0], [0.0, 25.0]]),
            jac_minus=lambda x: np.array([[25.0, 0.0], [0.0, 25.0]]),
        )
        with pytest.raises(WeightOverflow):
            _trace_weight(blowup, duffing_hom, T=40.0)
