import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homloop.fields import PolyField, PolyScalar
from homloop.psys import (
    NotASaddle,
    Scenario,
    Side,
    builtin_perturbation,
    builtin_system,
    compute_spectrum,
    f2_condition,
    fd_jacobian,
    make_system,
    perp_field,
    rate_constants,
)
from tests.conftest import DUFFING_HINT

SQ2 = math.sqrt(2.0)


class TestSpectrum:
    def test_duffing_eigendata(self, duffing_spectrum):
        s = duffing_spectrum
        assert s.lambda_s_plus == pytest.approx(-1.0, abs=1e-12)
        assert s.lambda_u_plus == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(s.v_u_minus, [1 / SQ2, 1 / SQ2], atol=1e-12)
        np.testing.assert_allclose(s.v_s_plus, [1 / SQ2, -1 / SQ2], atol=1e-12)
        assert s.c_u_perp_minus == pytest.approx(-1 / SQ2, abs=1e-12)

    def test_sign_pattern(self, duffing_spectrum):
        s = duffing_spectrum
        assert s.c_u_perp_minus < 0 < s.c_u_perp_plus
        assert s.c_s_perp_minus < 0 < s.c_s_perp_plus

    def test_diagonal_fields_axes(self):
        # fields (x1, -x2) with a rotated switching line x1 - x2
        f = PolyField(f1={(1, 0): 1.0}, f2={(0, 1): -1.0})
        G = PolyScalar(c={(1, 0): 1.0, (0, 1): -1.0})
        sysd = make_system(f, f, G, name="diag")
        spec = compute_spectrum(sysd)
        for v in (spec.v_u_plus, spec.v_u_minus):
            np.testing.assert_allclose(np.abs(v), [1.0, 0.0], atol=1e-12)
        for v in (spec.v_s_plus, spec.v_s_minus):
            np.testing.assert_allclose(np.abs(v), [0.0, 1.0], atol=1e-12)

    def test_rescaled_minus_side(self, rescaled_spectrum):
        s = rescaled_spectrum
        assert s.lambda_u_minus == pytest.approx(2.0, abs=1e-12)
        assert s.lambda_s_minus == pytest.approx(-2.0, abs=1e-12)
        np.testing.assert_allclose(s.v_u_minus, [1 / SQ2, 1 / SQ2], atol=1e-12)

    def test_orientation_idempotent(self, duffing, duffing_spectrum):
        again = compute_spectrum(duffing, DUFFING_HINT)
        for a, b in (
            (again.v_u_plus, duffing_spectrum.v_u_plus),
            (again.v_s_minus, duffing_spectrum.v_s_minus),
        ):
            np.testing.assert_array_equal(a, b)

    def test_not_a_saddle(self):
        f = PolyField(f1={(0, 1): 1.0}, f2={(1, 0): -1.0})  # center
        G = PolyScalar(c={(0, 1): -1.0})
        with pytest.raises(NotASaddle):
            compute_spectrum(make_system(f, f, G))


class TestRateConstants:
    def test_symmetric_unit_saddle(self, duffing_rates):
        rc = duffing_rates
        assert rc.sigma_fwd == pytest.approx(1.0, abs=1e-12)
        assert rc.sigma_bwd == pytest.approx(1.0, abs=1e-12)
        assert rc.Sigma_fwd == pytest.approx(1.0, abs=1e-12)
        assert rc.Sigma_bwd == pytest.approx(1.0, abs=1e-12)
        assert rc.mu0 == pytest.approx(1.0 / 16.0, abs=1e-14)

    def test_two_speed_saddle(self, rescaled_spectrum):
        rc = rate_constants(rescaled_spectrum)
        assert rc.sigma_fwd_plus == pytest.approx(0.5, abs=1e-12)
        assert rc.sigma_fwd_minus == pytest.approx(2.0, abs=1e-12)
        assert rc.sigma_fwd == pytest.approx(1.0, abs=1e-12)
        assert rc.Sigma_fwd == pytest.approx(0.75, abs=1e-12)
        assert rc.Sigma_bwd == pytest.approx(0.75, abs=1e-12)
        assert rc.mu0 == pytest.approx(1.0 / 16.0, abs=1e-14)

    @given(
        lu_p=st.floats(0.1, 10.0),
        ls_p=st.floats(0.1, 10.0),
        lu_m=st.floats(0.1, 10.0),
        ls_m=st.floats(0.1, 10.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_reciprocal_identities(self, lu_p, ls_p, lu_m, ls_m):
        from homloop.psys import SaddleSpectrum

        e = np.eye(2)
        spec = SaddleSpectrum(
            lambda_s_plus=-ls_p, lambda_u_plus=lu_p,
            lambda_s_minus=-ls_m, lambda_u_minus=lu_m,
            v_s_plus=e[1], v_u_plus=e[0], v_s_minus=-e[1], v_u_minus=-e[0],
            c_u_perp_plus=1, c_u_perp_minus=-1, c_s_perp_plus=1, c_s_perp_minus=-1,
        )
        rc = rate_constants(spec)
        assert rc.sigma_fwd_plus * rc.sigma_bwd_plus == pytest.approx(1.0, rel=1e-12)
        assert rc.sigma_fwd_minus * rc.sigma_bwd_minus == pytest.approx(1.0, rel=1e-12)
        assert rc.sigma_lo <= rc.sigma_hi
        assert rc.Sigma_lo <= rc.Sigma_hi
        assert rc.lambda_lo <= rc.lambda_hi
        assert rc.mu0 > 0


class TestScenario:
    def test_sector_condition_smooth(self, duffing_spectrum):
        assert f2_condition(duffing_spectrum)

    def test_duffing_scenario_s1(self, duffing, duffing_spectrum, duffing_hom):
        from homloop.psys import classify_scenario

        rep = classify_scenario(duffing_spectrum, gamma=duffing_hom, system=duffing)
        assert rep.scenario is Scenario.S1
        assert rep.f2_ok and not rep.sliding_near_origin
        assert rep.k_transversality == pytest.approx(0.75, abs=1e-10)

    def test_probe_halving_invariance(self, duffing, duffing_spectrum, duffing_hom):
        from homloop.psys import classify_scenario

        base = classify_scenario(
            duffing_spectrum, gamma=duffing_hom, system=duffing, probe_rel=1e-4
        )
        halved = classify_scenario(
            duffing_spectrum, gamma=duffing_hom, system=duffing, probe_rel=5e-5
        )
        assert base.scenario is halved.scenario

    def test_sliding_demo(self):
        sysd = builtin_system("sliding-demo")
        spec = compute_spectrum(sysd)
        from homloop.psys import classify_scenario

        rep = classify_scenario(spec, system=sysd)
        assert not rep.f2_ok
        assert rep.sliding_near_origin
        assert rep.scenario in (Scenario.S3, Scenario.S4, Scenario.UNDETERMINED)


class TestPerpField:
    def test_quarter_turn(self, duffing):
        x = np.array([1.0, 0.5])
        v = duffing.f_plus(x)
        w = perp_field(duffing, Side.PLUS, x, orientation=1)
        assert abs(v @ w) < 1e-14
        assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(v), rel=1e-14)

    @given(x1=st.floats(-2, 2), x2=st.floats(-2, 2))
    @settings(max_examples=100, deadline=None)
    def test_isometry(self, duffing, x1, x2):
        x = np.array([x1, x2])
        v = duffing.f_plus(x)
        if np.linalg.norm(v) < 1e-9:
            return
        w = perp_field(duffing, Side.PLUS, x, orientation=-1)
        assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(v), rel=1e-12)


class TestJacobians:
    def test_fd_matches_analytic(self, duffing):
        rng = np.random.default_rng(7)
        for _ in range(5):
            x = rng.uniform(-1.5, 1.5, 2)
            J_fd = fd_jacobian(duffing.f_plus, x)
            J_an = duffing.jac_plus(x)
            np.testing.assert_allclose(J_fd, J_an, atol=1e-9)

    def test_validate_passes(self, duffing):
        duffing.validate()

    def test_validate_with_perturbations(self):
        for pname in ("damping", "forcing"):
            builtin_system("duffing", epsilon=1e-3, perturbation=pname).validate()

    def test_forcing_period(self):
        g = builtin_perturbation("forcing")
        assert g.period == pytest.approx(2 * math.pi)
        x = np.array([0.7, -0.3])
        np.testing.assert_allclose(g(0.0, x), [0.0, 0.7], atol=1e-15)
        np.testing.assert_allclose(g(math.pi / 2, x), [0.0, 0.0], atol=1e-12)


class TestKappaBound:
    def test_zero_perturbation(self, duffing):
        from homloop.leaves import homoclinic_orbit
        from homloop.psys import kappa_bound

        hom = homoclinic_orbit(duffing)
        assert kappa_bound(duffing, hom) == 0.0

    def test_same_field_ratio_two(self, duffing):
        import dataclasses

        from homloop.leaves import homoclinic_orbit
        from homloop.psys import kappa_bound

        hom = homoclinic_orbit(duffing)
        fp = duffing.f_plus
        clone = dataclasses.replace(duffing, g=lambda t, x, e: fp(x), g_period=None)
        assert kappa_bound(clone, hom) == pytest.approx(2.0, abs=1e-12)

    def test_damping_grid_refinement_stable(self, duffing):
        from homloop.leaves import homoclinic_orbit
        from homloop.psys import builtin_system, kappa_bound

        sysd = builtin_system("duffing", perturbation="damping")
        hom = homoclinic_orbit(sysd)
        k1 = kappa_bound(sysd, hom)
        k2 = kappa_bound(sysd, hom, n_curve=128, n_offsets=32, n_times=64)
        assert k1 > 0
        assert abs(k2 - k1) / k1 < 0.01
