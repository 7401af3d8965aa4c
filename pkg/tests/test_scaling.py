import numpy as np
import pytest

from homloop.scaling import (
    InsufficientGrid,
    dulac_probe,
    ell_mismatch_suite,
    fit_exponents,
    keymissed_suite,
    run_batch,
)
from tests.conftest import ACCEPTANCE_D_GRID, MU, make_context


class TestFits:
    def test_duffing_slopes(self, duffing_batch, duffing_rates):
        rep = fit_exponents(duffing_batch, duffing_rates, mu=MU)
        assert rep.all_passed
        assert rep.slope("sigma_fwd").value == pytest.approx(1.0, abs=1e-4)
        assert rep.slope("Sigma_fwd").value == pytest.approx(1.0, abs=MU)
        assert rep.slope("Sigma_fwd_plus").value == pytest.approx(0.5, abs=MU / 2)
        assert rep.slope("sigma_fwd_plus").value == pytest.approx(0.5, abs=MU)

    def test_rescaled_slopes(self, rescaled_batch, rescaled_ctx):
        rep = fit_exponents(rescaled_batch, rescaled_ctx.rates, mu=MU)
        assert rep.all_passed
        assert rep.slope("Sigma_fwd").value == pytest.approx(0.75, abs=MU)
        assert rep.slope("Sigma_bwd").value == pytest.approx(0.75, abs=MU)
        assert rep.slope("sigma_fwd").value == pytest.approx(1.0, abs=MU)
        assert rep.slope("sigma_bwd").value == pytest.approx(1.0, abs=MU)

    def test_time_unit_rescale_halves_time_slopes(self):
        # doubling both side fields leaves displacement exponents alone and
        # halves the time slopes
        from homloop.fields import DUFFING_FIELD, SWITCH_NEG_X2
        from homloop.leaves import LeafAnchors, homoclinic_orbit
        from homloop.loopmap import DirectedChart, LoopContext, make_cascade
        from homloop.psys import compute_spectrum, make_system, rate_constants
        import dataclasses

        fast = make_system(
            DUFFING_FIELD.scaled(2.0), DUFFING_FIELD.scaled(2.0), SWITCH_NEG_X2,
            name="duffing",  # reuse the closed-form orbit, reparametrized below
        )
        fast = dataclasses.replace(fast, name="anon-fast")
        hom = homoclinic_orbit(fast)
        spec = compute_spectrum(fast, hom.orientation_hint())
        rates = rate_constants(spec)
        assert rates.Sigma_fwd == pytest.approx(0.5)
        assert rates.sigma_fwd == pytest.approx(1.0)
        ctx = LoopContext(
            system=fast, spectrum=spec, rates=rates, gamma=hom,
            chart=DirectedChart(fast, hom.crossing_point),
            anchors=LeafAnchors(system=fast, spectrum=spec, gamma=hom),
            cascade=make_cascade(rates, 0.0, mu=1 / 16, beta=0.05),
        )
        batch = run_batch(ctx, ACCEPTANCE_D_GRID, [0.0], directions=("fwd",))
        rep = fit_exponents(batch, rates, mu=MU)
        assert rep.slope("Sigma_fwd").value == pytest.approx(0.5, abs=MU / 2)
        assert rep.slope("sigma_fwd").value == pytest.approx(1.0, abs=1e-4)

    def test_insufficient_grid(self, duffing_batch, duffing_rates):
        small = [r for r in duffing_batch if r.d >= 1e-3]
        with pytest.raises(InsufficientGrid):
            fit_exponents(small, duffing_rates, mu=MU)

    def test_mu_monotonicity(self, duffing_batch, duffing_rates):
        rep_small = fit_exponents(duffing_batch, duffing_rates, mu=MU / 2)
        rep_big = fit_exponents(duffing_batch, duffing_rates, mu=MU)
        for s_small, s_big in zip(rep_small.slopes, rep_big.slopes):
            if s_small.passed:
                assert s_big.passed


class TestKeymissed:
    def test_duffing_bounds(self, duffing_batch, duffing_rates):
        rep = keymissed_suite(duffing_batch, duffing_rates, mu=MU)
        assert rep["all_ok"]
        assert rep["worst_margin"] > 1.0

    def test_rescaled_bounds(self, rescaled_batch, rescaled_ctx):
        rep = keymissed_suite(rescaled_batch, rescaled_ctx.rates, mu=MU)
        assert rep["all_ok"]

    def test_bound_shrinks_with_d(self, duffing_batch, duffing_rates):
        rep = keymissed_suite(duffing_batch, duffing_rates, mu=MU)
        rows = [r for r in rep["rows"] if r["direction"] == "fwd"]
        by_d = sorted(rows, key=lambda r: r["d"])
        devs = [r["deviation"] for r in by_d]
        assert devs == sorted(devs)


class TestDulac:
    def test_neutral_loop(self, duffing_ctx):
        probe = dulac_probe(duffing_ctx.system, duffing_ctx.gamma, duffing_ctx, n_loops=4)
        assert probe.prediction == "Indeterminate"
        assert probe.empirical_contraction == pytest.approx(1.0, abs=0.05)

    def test_contracting_loop(self):
        ctx = make_context("duffing-dulac")
        probe = dulac_probe(ctx.system, ctx.gamma, ctx, n_loops=5)
        assert probe.div_at_origin_plus == pytest.approx(0.0, abs=1e-12)
        assert probe.div_integral_along_gamma < -1e-3
        assert probe.prediction == "StableInside"
        assert probe.empirical_contraction < 1.0
        ds = probe.return_displacements
        assert all(b < a for a, b in zip(ds, ds[1:]))

    def test_sign_rules(self):
        from homloop.scaling import dulac_prediction

        # strictly negative divergence decides regardless of the integral
        assert dulac_prediction(-0.3, -0.1, +5.0) == "StableInside"
        assert dulac_prediction(+0.3, +0.1, -5.0) == "UnstableInside"
        # trace-free saddle: the loop integral decides
        assert dulac_prediction(0.0, 0.0, -0.1) == "StableInside"
        assert dulac_prediction(0.0, 0.0, +0.1) == "UnstableInside"
        # doubly borderline and mixed-sign cases stay open
        assert dulac_prediction(0.0, 0.0, 0.0) == "Indeterminate"
        assert dulac_prediction(-0.3, +0.1, -5.0) == "Indeterminate"

    def test_probe_rejects_perturbed(self):
        ctx = make_context("duffing", eps=1e-4, pert="forcing")
        with pytest.raises(ValueError):
            dulac_probe(ctx.system, ctx.gamma, ctx)


class TestEllMismatch:
    def test_report(self, duffing_ctx):
        rep = ell_mismatch_suite(duffing_ctx, [1e-2, 3e-3, 1e-3, 3e-4, 1e-4], tau=0.0)
        assert rep["gap_slope_ok"]
        assert rep["gap_slope_vs_d"] == pytest.approx(1.0, abs=0.1)
        assert rep["all_finite_bounds_ok"]
        # gap vanishes linearly: smallest d gives the smallest gap
        gaps = [r["gap"] for r in rep["rows"]]
        assert gaps[-1] < gaps[0]
        # the asymptotic simplification of the bound does not bind at desk
        # scale; it is reported for audit only
        assert all(r["finite_bound"] >= r["asymptotic_bound"] for r in rep["rows"])
