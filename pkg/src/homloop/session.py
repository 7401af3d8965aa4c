"""Experiment orchestration: one resolved session per configuration.

A session owns the system, its loop geometry, spectral data, parameter
cascade and caches (anchors, barriers, dichotomy data); the run_* functions
each produce a JSON-able report embedding the full resolved cascade so every
output is auditable, plus CSV payloads for the row-oriented artifacts.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .flow import Tolerances
from .leaves import Homoclinic, LeafAnchors
from .loopmap import (
    BarrierSet,
    DirectedChart,
    LoopContext,
    LoopResult,
    ParamCascade,
    build_barriers,
    flow_direction_report,
    loop_backward,
    loop_forward,
    make_cascade,
)
from .melnikov import melnikov_profile
from .psys import (
    classify_scenario,
    compute_spectrum,
    infer_perp_orientation,
    kappa_bound,
    rate_constants,
)
from .scaling import dulac_probe, fit_exponents, keymissed_suite


def fmt(x: float) -> str:
    """17-significant-digit decimal rendering for deterministic artifacts."""
    return f"{float(x):.16e}"


def csv_block(header: list[str], rows: list[list[float]]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if isinstance(v, (int, float)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


@dataclass
class Session:
    config: ExperimentConfig
    system: object
    gamma: Homoclinic
    spectrum: object
    rates: object
    chart: DirectedChart
    anchors: LeafAnchors
    cascade: ParamCascade
    tol: Tolerances
    threads: int = 1
    _barriers: Optional[BarrierSet] = None
    _dichotomy: dict = field(default_factory=dict)

    @property
    def barriers(self) -> BarrierSet:
        if self._barriers is None:
            self._barriers = build_barriers(
                self.system, self.gamma, self.chart, self.rates, self.cascade,
                perp_orientation=infer_perp_orientation(self.system, self.gamma),
            )
        return self._barriers

    def loop_context(self, with_barriers: bool = False) -> LoopContext:
        return LoopContext(
            system=self.system,
            spectrum=self.spectrum,
            rates=self.rates,
            gamma=self.gamma,
            chart=self.chart,
            anchors=self.anchors,
            cascade=self.cascade,
            barriers=self.barriers if with_barriers else None,
            tol=self.tol,
        )

    def cascade_info(self) -> dict:
        c = self.cascade
        return {
            "mu": c.mu, "mu1": c.mu1, "mu2": c.mu2, "c_mu": c.c_mu,
            "beta": c.beta, "varpi": c.varpi, "delta": c.delta,
            "D0": c.D0, "M0": c.M0, "epsilon": c.epsilon, "kappa": c.kappa,
            "varpi_threshold_ok": c.varpi_threshold_ok,
        }

    def rates_info(self) -> dict:
        r = self.rates
        return {
            k: getattr(r, k)
            for k in (
                "sigma_fwd_plus", "sigma_fwd_minus", "sigma_fwd",
                "sigma_bwd_plus", "sigma_bwd_minus", "sigma_bwd",
                "sigma_lo", "sigma_hi",
                "Sigma_fwd_plus", "Sigma_bwd_minus", "Sigma_fwd", "Sigma_bwd",
                "Sigma_lo", "Sigma_hi", "lambda_lo", "lambda_hi", "mu0", "sigma_fb",
            )
        }


def build_session(cfg: ExperimentConfig, threads: int = 1) -> Session:
    cfg.validate()
    system = cfg.build_system()
    system.validate()
    base = cfg.build_system(epsilon=0.0)
    gamma = homoclinic_for(base)
    spectrum = compute_spectrum(system, gamma.orientation_hint())
    rates = rate_constants(spectrum)
    chart = DirectedChart(system, gamma.crossing_point)
    tol = Tolerances(
        rtol=cfg.rtol, atol=cfg.atol, crossing=cfg.crossing_tol,
        transversality_floor=cfg.transversality_floor,
    )
    anchors = LeafAnchors(system=system, spectrum=spectrum, gamma=gamma, tol=tol)
    kappa = kappa_bound(system, gamma) if system.g is not None else 0.0
    cascade = make_cascade(
        rates, epsilon=cfg.epsilon, mu=cfg.mu, beta=cfg.beta, varpi=cfg.varpi,
        kappa=kappa, holder_alpha=system.holder_alpha,
    )
    return Session(
        config=cfg, system=system, gamma=gamma, spectrum=spectrum, rates=rates,
        chart=chart, anchors=anchors, cascade=cascade, tol=tol, threads=threads,
    )


def homoclinic_for(base_system) -> Homoclinic:
    from .leaves import homoclinic_orbit

    return homoclinic_orbit(base_system)


# -- experiment runners -------------------------------------------------------


def run_classify(sess: Session) -> dict:
    rep = classify_scenario(sess.spectrum, gamma=sess.gamma, system=sess.system)
    spec = sess.spectrum
    return {
        "kind": "classify",
        "cascade": sess.cascade_info(),
        "rates": sess.rates_info(),
        "report": {
            "f0_ok": rep.f0_ok, "f1_ok": rep.f1_ok, "f2_ok": rep.f2_ok,
            "g_ok": rep.g_ok,
            "k_transversality": rep.k_transversality,
            "scenario": rep.scenario.value,
            "sliding_near_origin": rep.sliding_near_origin,
        },
        "spectrum": {
            "lambda_s_plus": spec.lambda_s_plus, "lambda_u_plus": spec.lambda_u_plus,
            "lambda_s_minus": spec.lambda_s_minus, "lambda_u_minus": spec.lambda_u_minus,
            "v_s_plus": spec.v_s_plus.tolist(), "v_u_plus": spec.v_u_plus.tolist(),
            "v_s_minus": spec.v_s_minus.tolist(), "v_u_minus": spec.v_u_minus.tolist(),
            "c_u_perp_plus": spec.c_u_perp_plus, "c_u_perp_minus": spec.c_u_perp_minus,
            "c_s_perp_plus": spec.c_s_perp_plus, "c_s_perp_minus": spec.c_s_perp_minus,
        },
        "contract_ok": rep.f0_ok and rep.f1_ok and rep.g_ok,
    }


def run_melnikov(sess: Session) -> dict:
    cfg = sess.config
    base = cfg.build_system(epsilon=0.0)
    alphas = np.linspace(cfg.alpha_span[0], cfg.alpha_span[1], cfg.alpha_grid_n)
    prof = melnikov_profile(base, sess.gamma, alphas)
    csv = csv_block(
        ["alpha", "M"], [[a, v] for a, v in zip(prof.alphas, prof.values)]
    )
    out = {
        "kind": "melnikov",
        "cascade": sess.cascade_info(),
        "zeros": [{"alpha0": a, "slope": s} for a, s in prof.zeros],
        "degenerate": prof.degenerate,
        "profile_csv": csv,
        "contract_ok": True,
    }
    if cfg.eps_grid:
        from .melnikov import splitting_check

        split = splitting_check(
            system_at=lambda e: cfg.build_system(epsilon=e),
            gamma=sess.gamma,
            chart=sess.chart,
            tau_grid=cfg.tau_grid,
            eps_grid=cfg.eps_grid,
            anchors_factory=lambda s: LeafAnchors(
                system=s, spectrum=sess.spectrum, gamma=sess.gamma, tol=sess.tol
            ),
        )
        out["splitting"] = {
            "ratio_mean": split["ratio_mean"],
            "ratio_rel_spread": split["ratio_rel_spread"],
            "sign_consistent": split["sign_consistent"],
        }
        out["splitting_csv"] = csv_block(
            ["tau", "eps", "D", "M", "ratio"],
            [[r["tau"], r["eps"], r["D"], r["M"], r["ratio"]] for r in split["rows"]],
        )
        out["contract_ok"] = bool(
            split["sign_consistent"] and split["ratio_rel_spread"] < 0.15
        )
    return out


def run_leaves(sess: Session) -> dict:
    cfg = sess.config
    rows = []
    varpi = sess.cascade.varpi
    for tau in cfg.tau_grid:
        Ps = sess.anchors.P_s(tau)
        Pu = sess.anchors.P_u(tau)
        pis = sess.anchors.pi_s(tau, varpi)
        piu = sess.anchors.pi_u(tau, varpi)
        rows.append([tau, Ps[0], Ps[1], Pu[0], Pu[1], pis[0], pis[1], piu[0], piu[1]])
    csv = csv_block(
        ["tau", "P_s_x1", "P_s_x2", "P_u_x1", "P_u_x2",
         "pi_s_x1", "pi_s_x2", "pi_u_x1", "pi_u_x2"],
        rows,
    )
    g0 = sess.gamma.crossing_point
    cbar = 0.0
    if sess.system.epsilon > 0:
        for row in rows:
            cbar = max(
                cbar,
                float(np.hypot(row[1] - g0[0], row[2] - g0[1])) / sess.system.epsilon,
                float(np.hypot(row[3] - g0[0], row[4] - g0[1])) / sess.system.epsilon,
            )
    return {
        "kind": "leaves",
        "cascade": sess.cascade_info(),
        "anchors_csv": csv,
        "cbar_est": cbar,
        "contract_ok": True,
    }


def run_barriers(sess: Session) -> dict:
    bars = sess.barriers
    fdr = flow_direction_report(sess.system, sess.gamma, bars)
    curves_csv = {}
    for name, poly in bars.curves.items():
        curves_csv[name] = csv_block(["x1", "x2"], [[p[0], p[1]] for p in poly])
    return {
        "kind": "barriers",
        "cascade": sess.cascade_info(),
        "band_checks": [
            {"name": c.name, "value": c.value, "lo": c.lo, "hi": c.hi, "ok": c.ok}
            for c in bars.band_checks
        ],
        "bands_ok": bars.bands_ok,
        "flow_direction": {
            k: v for k, v in fdr.items() if k != "all_ok"
        },
        "flow_direction_ok": fdr["all_ok"],
        "endpoints": {k: v.tolist() for k, v in bars.endpoints.items()},
        "curves_csv": curves_csv,
        "contract_ok": bars.bands_ok and fdr["all_ok"],
    }


def _loop_rows(batch: list[LoopResult]) -> str:
    header = [
        "d", "tau", "direction", "T_half", "T_one", "D_half", "D_one",
        "T1", "T2", "T3", "T4", "D1", "D2", "D3", "D4",
        "sup_dev_first_half", "sup_dev_second_half", "in_segment", "status",
    ]
    rows = []
    for r in batch:
        rows.append(
            [r.d, r.tau, r.direction, r.T_half, r.T_one, r.D_half, r.D_one,
             *r.segment_times, *r.segment_disps,
             r.sup_dev_first_half, r.sup_dev_second_half,
             str(bool(r.transversal_hits_in_segment)), "ok"]
        )
    return csv_block(header, rows)


def _run_grid(sess: Session, ctx, cells) -> list[LoopResult]:
    def one(cell):
        d, tau, direction = cell
        fn = loop_forward if direction == "fwd" else loop_backward
        return fn(ctx, d, tau)

    if sess.threads > 1:
        with ThreadPoolExecutor(max_workers=sess.threads) as ex:
            return list(ex.map(one, cells))
    return [one(c) for c in cells]


def run_loop(sess: Session, with_barriers: bool = True) -> dict:
    cfg = sess.config
    ctx = sess.loop_context(with_barriers=with_barriers)
    cells = [
        (d, tau, direction)
        for tau in cfg.tau_grid
        for d in cfg.d_grid
        for direction in cfg.directions
    ]
    batch = _run_grid(sess, ctx, cells)
    return {
        "kind": "loop",
        "cascade": sess.cascade_info(),
        "rates": sess.rates_info(),
        "rows_csv": _loop_rows(batch),
        "n_loops": len(batch),
        "contract_ok": all(r.contained is not False for r in batch),
    }


def run_scaling(sess: Session) -> dict:
    cfg = sess.config
    ctx = sess.loop_context(with_barriers=False)
    cells = [
        (d, tau, direction)
        for tau in cfg.tau_grid
        for d in cfg.d_grid
        for direction in cfg.directions
    ]
    batch = _run_grid(sess, ctx, cells)
    rep = fit_exponents(batch, sess.rates, mu=sess.cascade.mu)
    km = keymissed_suite(batch, sess.rates, mu=sess.cascade.mu)
    return {
        "kind": "scaling",
        "cascade": sess.cascade_info(),
        "rates": sess.rates_info(),
        "slopes": [
            {
                "name": s.name, "fitted": s.value, "half_width": s.half_width,
                "theory": s.theory, "mu_effective": s.mu_effective, "pass": s.passed,
            }
            for s in rep.slopes
        ],
        "keymissed": {
            "all_ok": km["all_ok"],
            "worst_margin": km["worst_margin"],
            "n_checks": len(km["rows"]),
        },
        "rows_csv": _loop_rows(batch),
        "contract_ok": rep.all_passed and km["all_ok"],
    }


def run_stability(sess: Session) -> dict:
    cfg = sess.config
    base_cfg_system = cfg.build_system(epsilon=0.0)
    ctx = sess.loop_context(with_barriers=False)
    probe = dulac_probe(base_cfg_system, sess.gamma, ctx, n_loops=cfg.n_loops)
    consistent = True
    if probe.prediction == "StableInside":
        consistent = probe.empirical_contraction < 1.0 * 1.05
    elif probe.prediction == "UnstableInside":
        consistent = probe.empirical_contraction > 1.0 / 1.05 or probe.escaped
    return {
        "kind": "stability",
        "cascade": sess.cascade_info(),
        "probe": {
            "div_at_origin_plus": probe.div_at_origin_plus,
            "div_at_origin_minus": probe.div_at_origin_minus,
            "div_integral_along_gamma": probe.div_integral_along_gamma,
            "prediction": probe.prediction,
            "empirical_contraction": probe.empirical_contraction,
            "return_displacements": probe.return_displacements,
            "escaped": probe.escaped,
        },
        "contract_ok": consistent,
    }


RUNNERS = {
    "classify": run_classify,
    "melnikov": run_melnikov,
    "leaves": run_leaves,
    "barriers": run_barriers,
    "loop": run_loop,
    "scaling": run_scaling,
    "stability": run_stability,
}
