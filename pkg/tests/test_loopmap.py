import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from homloop.fields import PolyField, PolyScalar
from homloop.loopmap import (
    DirectedChart,
    OffSection,
    flow_direction_report,
    loop_forward,
    make_cascade,
    roundtrip_check,
)
from homloop.psys import make_system
from tests.conftest import ACCEPTANCE_D_GRID, MU


def duffing_energy(p):
    return p[1] ** 2 / 2 - p[0] ** 2 / 2 + p[0] ** 3 / 3


class TestDirectedChart:
    def test_flat_section(self, duffing_ctx):
        chart = duffing_ctx.chart
        assert chart.directed_distance([1.0, 0.0], [1.5, 0.0]) == pytest.approx(0.5, abs=1e-10)
        assert chart.directed_distance([1.5, 0.0], [1.0, 0.0]) == pytest.approx(-0.5, abs=1e-10)

    def test_antisymmetry(self, duffing_ctx):
        chart = duffing_ctx.chart
        rng = np.random.default_rng(5)
        for _ in range(10):
            a, b = rng.uniform(0.05, 2.0, 2)
            P, Q = np.array([a, 0.0]), np.array([b, 0.0])
            assert chart.directed_distance(P, Q) == pytest.approx(
                -chart.directed_distance(Q, P), abs=1e-12
            )

    def test_point_at_distance_roundtrip(self, duffing_ctx):
        chart = duffing_ctx.chart
        anchor = np.array([1.5, 0.0])
        for d in (0.01, 0.1, 0.37):
            Q = chart.point_at_distance(anchor, d)
            assert chart.directed_distance(Q, anchor) == pytest.approx(d, abs=1e-10)

    def test_off_section_rejected(self, duffing_ctx):
        with pytest.raises(OffSection):
            duffing_ctx.chart.ell([1.0, 0.3])

    def test_curved_section_against_quadrature(self):
        # switching curve x2 = x1^2/10: arc length from an independent quadrature
        f = PolyField(f1={(0, 1): 1.0}, f2={(1, 0): 1.0})
        G = PolyScalar(c={(0, 1): -1.0, (2, 0): 0.1})  # -(x2 - x1^2/10)
        sysc = make_system(f, f, G, name="curved")
        chart = DirectedChart(sysc, gamma0=np.array([1.2, 0.144]))
        for x1 in (0.4, 0.9, 1.2):
            Q = np.array([x1, 0.1 * x1 * x1])
            oracle, _ = quad(
                lambda u: math.sqrt(1.0 + (0.2 * u) ** 2), 0.0, x1, epsabs=1e-13
            )
            assert chart.ell(Q) == pytest.approx(oracle, abs=1e-9)
        # inverse consistency on the curved chart
        anchor = np.array([1.2, 0.144])
        Q = chart.point_at_distance(anchor, 0.2)
        assert chart.directed_distance(Q, anchor) == pytest.approx(0.2, abs=1e-9)


class TestCascade:
    def test_duffing_cascade(self, duffing_rates):
        c = make_cascade(duffing_rates, epsilon=0.0, mu=1 / 16, beta=0.05)
        assert c.mu == pytest.approx(1 / 16)
        assert c.c_mu == pytest.approx(7.0 + 2 / 3 + 1 / 6)
        assert c.c_mu > 7.0
        assert c.mu2 == pytest.approx(c.mu / c.c_mu)
        assert c.mu1 == pytest.approx(c.mu2 / 2)
        assert c.varpi == pytest.approx(0.025)
        assert c.delta == pytest.approx(0.0125)
        assert c.delta < c.varpi < c.beta

    def test_mu_cap(self, duffing_rates):
        with pytest.raises(ValueError):
            make_cascade(duffing_rates, mu=0.2, beta=0.05)


class TestBarriers:
    def test_unperturbed_endpoints_energy_oracle(self, duffing_ctx):
        # with the perturbation off the curves are true orbits: every endpoint
        # norm follows from energy conservation
        bars = duffing_ctx.barriers
        beta = bars.beta
        E_in = duffing_energy([1.5 - beta, 0.0])
        q_in = brentq(lambda q: duffing_energy([q, 0.0]) - E_in, 0.05, 0.8, xtol=1e-14)
        np.testing.assert_allclose(
            np.linalg.norm(bars.endpoints["Q_fwd_in"]), q_in, atol=1e-8
        )
        E_out = duffing_energy([1.5 + beta, 0.0])
        y_out = math.sqrt(2.0 * E_out)
        np.testing.assert_allclose(
            np.linalg.norm(bars.endpoints["Q_fwd_out"]), y_out, atol=1e-8
        )
        np.testing.assert_allclose(
            np.linalg.norm(bars.endpoints["O_fwd_out"]), y_out, atol=1e-8
        )
        # full-circuit return lands back at the start by energy symmetry
        np.testing.assert_allclose(
            bars.endpoints["R_fwd_in"], bars.endpoints["P_fwd_in"], atol=1e-8
        )

    def test_band_report_small_beta(self, duffing):
        # the norm bands are asymptotic in beta: they hold at beta = 3e-4
        ctx = _small_beta_context(duffing)
        assert ctx.barriers.bands_ok, [
            (c.name, c.value, c.lo, c.hi) for c in ctx.barriers.band_checks if not c.ok
        ]

    def test_flow_direction_unperturbed_tangent(self, duffing_ctx):
        rep = flow_direction_report(
            duffing_ctx.system, duffing_ctx.gamma, duffing_ctx.barriers
        )
        assert rep["all_ok"]

    def test_flow_direction_perturbed_strict(self):
        from tests.conftest import make_context

        ctx = make_context(
            "duffing", eps=1e-4, pert="forcing", mu=1 / 32, with_barriers=True
        )
        rep = flow_direction_report(ctx.system, ctx.gamma, ctx.barriers)
        assert rep["all_ok"]
        for name in ("fwd_in", "fwd_out", "bwd_in", "bwd_out"):
            assert rep[name]["worst_signed_rate"] > 0.0

    def test_region_membership(self, duffing_ctx, duffing_hom):
        bars = duffing_ctx.barriers
        assert bars.contains_fwd(duffing_hom(1.0))
        assert bars.contains_fwd(duffing_hom(-2.0))
        assert not bars.contains_fwd([3.0, 0.0])
        assert not bars.contains_fwd([0.9, 0.05])  # deep inside the loop
        assert bars.contains_bwd(duffing_hom(1.0))


def _small_beta_context(duffing):
    from tests.conftest import make_context

    return make_context("duffing", mu=1 / 32, beta=3e-4, with_barriers=True)


class TestLoops:
    def test_side_pattern_and_crossings(self, duffing_ctx, duffing_batch):
        for r in duffing_batch:
            t_half, t_one = r.crossing_times
            if r.direction == "fwd":
                assert r.tau < t_half < t_one
            else:
                assert t_one < t_half < r.tau
            assert abs(duffing_ctx.system.G(r.P_half)) < 1e-10
            assert abs(duffing_ctx.system.G(r.P_one)) < 1e-10

    def test_times_add_up(self, duffing_batch):
        for r in duffing_batch:
            assert sum(r.segment_times) == pytest.approx(r.T_one, rel=1e-8)

    def test_monotone_bracketing(self, duffing_batch):
        fwd = sorted(
            (r for r in duffing_batch if r.direction == "fwd"), key=lambda r: r.d
        )
        times = [r.T_one for r in fwd]
        assert times == sorted(times, reverse=True)

    def test_return_displacement_exact_energy(self, duffing_batch):
        # energy-conserving loop: the return displacement reproduces d
        for r in duffing_batch:
            assert r.D_one == pytest.approx(r.d, rel=1e-6)

    def test_half_displacement_band(self, duffing_batch, duffing_rates):
        lo_e = duffing_rates.sigma_fwd_plus + MU
        hi_e = duffing_rates.sigma_fwd_plus - MU
        for r in duffing_batch:
            assert r.d**lo_e <= r.D_half <= r.d**hi_e

    def test_full_displacement_band(self, duffing_batch, duffing_rates):
        for r in duffing_batch:
            expo = (
                duffing_rates.sigma_fwd if r.direction == "fwd" else duffing_rates.sigma_bwd
            )
            assert r.d ** (expo + MU) <= r.D_one <= r.d ** (expo - MU)

    def test_reversibility_symmetry(self, duffing_batch):
        # the duffing loop is reversible: backward times mirror forward ones
        fwd = {r.d: r for r in duffing_batch if r.direction == "fwd"}
        bwd = {r.d: r for r in duffing_batch if r.direction == "bwd"}
        for d in fwd:
            assert fwd[d].T_one == pytest.approx(bwd[d].T_one, abs=1e-6)

    def test_rejects_large_d(self, duffing_ctx):
        with pytest.raises(ValueError):
            loop_forward(duffing_ctx, 2.0 * duffing_ctx.cascade.delta, 0.0)

    def test_containment(self, duffing_batch):
        for r in duffing_batch:
            assert r.contained is True

    def test_autonomy_tau_shift(self, duffing_ctx):
        a = loop_forward(duffing_ctx, 1e-3, 0.0)
        b = loop_forward(duffing_ctx, 1e-3, 5.0)
        assert a.T_one == pytest.approx(b.T_one, abs=1e-9)
        assert a.D_one == pytest.approx(b.D_one, abs=1e-9)

    def test_loop_example_times(self, duffing_ctx):
        # measured return-time offset for the energy loop: T_one = |ln d| + C
        # with C ~ 4.6 (fast-sweep transit); the slope is tested in scaling
        r = loop_forward(duffing_ctx, 1e-3, 0.0)
        assert r.T_one == pytest.approx(abs(math.log(1e-3)) + 4.57, abs=0.2)

    def test_halving_d_increments_time(self, duffing_ctx, duffing_rates):
        r1 = loop_forward(duffing_ctx, 2e-3, 0.0)
        r2 = loop_forward(duffing_ctx, 1e-3, 0.0)
        inc = r2.T_one - r1.T_one
        assert inc == pytest.approx(duffing_rates.Sigma_fwd * math.log(2.0), abs=0.05)


class TestRoundtrip:
    def test_residual_bound(self, duffing_ctx):
        for d in ACCEPTANCE_D_GRID:
            res = roundtrip_check(duffing_ctx, d, 0.0)
            assert res < 1e-6 * d

    def test_residual_growth_mild(self, duffing_ctx):
        r2 = roundtrip_check(duffing_ctx, 1e-2, 0.0)
        r4 = roundtrip_check(duffing_ctx, 1e-4, 0.0)
        # two decades of d: residual grows far less than the 1e4 worst case
        assert r4 / max(r2, 1e-300) < 1e3
