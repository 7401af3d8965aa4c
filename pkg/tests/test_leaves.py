import dataclasses
import math

import numpy as np
import pytest

from homloop.fields import duffing_homoclinic
from homloop.leaves import (
    LeafAnchors,
    LeafSide,
    NoConnection,
    homoclinic_orbit,
    saddle_transversal,
    shadowing_error,
)
from homloop.melnikov import melnikov_value
from homloop.psys import builtin_system, compute_spectrum


class TestHomoclinic:
    def test_duffing_satisfies_ode(self, duffing_hom):
        # x1'' = x1 - x1^2 via high-order central differences
        h = 1e-3
        for t in np.linspace(-6.0, 6.0, 25):
            vals = [duffing_hom(t + k * h)[0] for k in (-2, -1, 0, 1, 2)]
            acc = (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (
                12 * h * h
            )
            x = vals[2]
            assert abs(acc - (x - x * x)) < 1e-9

    def test_crossing_point(self, duffing_hom):
        np.testing.assert_allclose(duffing_hom.crossing_point, [1.5, 0.0], atol=1e-12)
        np.testing.assert_allclose(duffing_hom(0.0), [1.5, 0.0], atol=1e-12)

    def test_side_pattern(self, duffing, duffing_hom):
        for t in np.linspace(-15.0, -0.5, 15):
            assert duffing.G(duffing_hom(t)) < 0  # minus region before the crossing
        for t in np.linspace(0.5, 15.0, 15):
            assert duffing.G(duffing_hom(t)) > 0

    def test_decay_envelope(self, duffing_hom):
        c = duffing_hom.decay_c0
        assert c > 0
        for t in np.linspace(5.0, 20.0, 16):
            assert np.linalg.norm(duffing_hom(t)) <= (c / 4) * math.exp(-t)
            assert np.linalg.norm(duffing_hom(-t)) <= (c / 4) * math.exp(-t)

    def test_rescaled_reparametrization(self):
        hom = homoclinic_orbit(builtin_system("duffing-rescaled"))
        for t in np.linspace(-5.0, -0.2, 12):
            np.testing.assert_allclose(hom(t), duffing_homoclinic(2 * t), atol=1e-12)
        for t in np.linspace(0.2, 5.0, 12):
            np.testing.assert_allclose(hom(t), duffing_homoclinic(t), atol=1e-12)

    def test_generic_shooting_matches_analytic(self):
        sysd = builtin_system("duffing-dulac")
        anon = dataclasses.replace(sysd, name="anon")
        hom = homoclinic_orbit(anon)
        assert hom.shoot_mismatch < 1e-9
        for t in np.linspace(-8.0, 8.0, 33):
            assert np.linalg.norm(hom(t) - duffing_homoclinic(t)) < 1e-9

    def test_no_connection_for_plain_saddle(self):
        # a linear saddle has manifolds that never meet away from the origin
        sysl = builtin_system("sliding-demo")
        anon = dataclasses.replace(sysl, name="anon-linear")
        with pytest.raises(NoConnection):
            homoclinic_orbit(anon)

    def test_containment_geometry(self, duffing_hom):
        assert duffing_hom.contains([0.75, 0.0])
        assert duffing_hom.contains([1.2, 0.2])
        assert not duffing_hom.contains([1.7, 0.0])
        assert not duffing_hom.contains([-0.2, 0.0])
        assert not duffing_hom.contains([0.75, 1.0])
        assert duffing_hom.diameter == pytest.approx(1.5, abs=0.01)


class TestAnchors:
    def test_unperturbed_coincidence(self, duffing, duffing_spectrum, duffing_hom):
        anch = LeafAnchors(system=duffing, spectrum=duffing_spectrum, gamma=duffing_hom)
        g0 = duffing_hom.crossing_point
        for tau in (0.0, 1.0, 10.0):
            Ps, Pu = anch.P_s(tau), anch.P_u(tau)
            assert np.linalg.norm(Ps - Pu) < 1e-8
            assert np.linalg.norm(Ps - g0) < 1e-8
            assert np.linalg.norm(Pu - g0) < 1e-8

    def test_horizon_halving_stability(self, duffing, duffing_spectrum, duffing_hom):
        a30 = LeafAnchors(
            system=duffing, spectrum=duffing_spectrum, gamma=duffing_hom
        )
        a30.T_horizon = 30.0
        a15 = LeafAnchors(
            system=duffing, spectrum=duffing_spectrum, gamma=duffing_hom
        )
        a15.T_horizon = 15.0
        assert np.linalg.norm(a30.P_s(0.0) - a15.P_s(0.0)) < 1e-6

    def test_splitting_first_order(self, duffing_hom):
        # |P_u - P_s| should agree with eps |M| / |f(gamma(0))| to ~10%
        base = builtin_system("duffing", perturbation="forcing")
        spec = compute_spectrum(base, duffing_hom.orientation_hint())
        eps = 1e-3
        syse = builtin_system("duffing", epsilon=eps, perturbation="forcing")
        anch = LeafAnchors(system=syse, spectrum=spec, gamma=duffing_hom)
        tau = 0.5
        gap = np.linalg.norm(anch.P_u(tau) - anch.P_s(tau))
        M = melnikov_value(base, duffing_hom, tau)
        predicted = eps * abs(M) / 0.75  # |f(gamma(0))| = 3/4
        assert gap == pytest.approx(predicted, rel=0.10)

    def test_anchor_epsilon_scaling(self, duffing_hom):
        # fitted leaf-to-loop constant stays stable under halving eps
        base = builtin_system("duffing", perturbation="damping")
        spec = compute_spectrum(base, duffing_hom.orientation_hint())
        g0 = duffing_hom.crossing_point
        cbars = []
        for eps in (1e-3, 5e-4):
            syse = builtin_system("duffing", epsilon=eps, perturbation="damping")
            anch = LeafAnchors(system=syse, spectrum=spec, gamma=duffing_hom)
            cbars.append(np.linalg.norm(anch.P_s(0.0) - g0) / eps)
        assert cbars[0] == pytest.approx(cbars[1], rel=0.05)
        assert 0.0 < cbars[0] < 100.0

    def test_shadowing_bound(self, duffing_hom):
        base = builtin_system("duffing", perturbation="forcing")
        spec = compute_spectrum(base, duffing_hom.orientation_hint())
        eps = 1e-3
        syse = builtin_system("duffing", epsilon=eps, perturbation="forcing")
        anch = LeafAnchors(system=syse, spectrum=spec, gamma=duffing_hom)
        sup_u, sup_s = shadowing_error(syse, anch, duffing_hom, tau=0.7)
        cbar = max(sup_u, sup_s) / eps
        assert cbar < 100.0
        # halve eps: the fitted constant is stable
        sys2 = builtin_system("duffing", epsilon=eps / 2, perturbation="forcing")
        anch2 = LeafAnchors(system=sys2, spectrum=spec, gamma=duffing_hom)
        sup_u2, sup_s2 = shadowing_error(sys2, anch2, duffing_hom, tau=0.7)
        cbar2 = max(sup_u2, sup_s2) / (eps / 2)
        assert cbar == pytest.approx(cbar2, rel=0.2)


class TestSaddleTransversalAnchors:
    def test_pi_s_location(self, duffing, duffing_spectrum, duffing_hom):
        anch = LeafAnchors(system=duffing, spectrum=duffing_spectrum, gamma=duffing_hom)
        varpi = 0.025
        L = abs(math.log(varpi))
        pi = anch.pi_s(0.0, varpi)
        # on the loop orbit and roughly at the logarithmic offset
        from scipy.optimize import minimize_scalar

        res = minimize_scalar(
            lambda t: np.linalg.norm(pi - duffing_hom(t)), bounds=(3.0, 9.0),
            method="bounded", options={"xatol": 1e-12},
        )
        assert res.fun < 1e-8
        assert np.linalg.norm(pi) == pytest.approx(1.0 / L, rel=0.15)
        # deviation from the tangent-line point is second order in the offset
        assert np.linalg.norm(pi - duffing_spectrum.v_s_plus / L) < 3.0 / L**2

    def test_pi_s_tau_independent_unperturbed(
        self, duffing, duffing_spectrum, duffing_hom
    ):
        anch = LeafAnchors(system=duffing, spectrum=duffing_spectrum, gamma=duffing_hom)
        vals = [
            leafpi
            for tau in (0.0, 1.0, 10.0)
            for leafpi in [
                LeafAnchors(
                    system=duffing, spectrum=duffing_spectrum, gamma=duffing_hom
                ).pi_s(tau, 0.025)
            ]
        ]
        for v in vals[1:]:
            assert np.linalg.norm(v - vals[0]) < 1e-9

    def test_transversal_segments(self, duffing_spectrum):
        sec = saddle_transversal(duffing_spectrum, 0.025, LeafSide.STABLE)
        L = abs(math.log(0.025))
        np.testing.assert_allclose(sec.base, duffing_spectrum.v_s_plus / L, atol=1e-14)
        assert sec.half_width == pytest.approx(1.0 / L)
