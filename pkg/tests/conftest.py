import warnings

import numpy as np
import pytest

from homloop.psys import builtin_system, compute_spectrum, rate_constants

warnings.filterwarnings("ignore", message=".*rtol.*")

DUFFING_HINT = (
    np.array([1.0, 1.0]) / np.sqrt(2.0),
    -np.array([1.0, -1.0]) / np.sqrt(2.0),
)

ACCEPTANCE_D_GRID = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
MU = 1.0 / 16.0
BETA = 0.05


def make_context(name, eps=0.0, pert=None, mu=MU, beta=BETA, with_barriers=False):
    from homloop.leaves import LeafAnchors, homoclinic_orbit
    from homloop.loopmap import (
        DirectedChart,
        LoopContext,
        build_barriers,
        make_cascade,
    )
    from homloop.psys import infer_perp_orientation, kappa_bound

    sysx = builtin_system(name, epsilon=eps, perturbation=pert)
    hom = homoclinic_orbit(sysx)
    spec = compute_spectrum(sysx, hom.orientation_hint())
    rates = rate_constants(spec)
    chart = DirectedChart(sysx, hom.crossing_point)
    anch = LeafAnchors(system=sysx, spectrum=spec, gamma=hom)
    kappa = kappa_bound(sysx, hom) if sysx.g is not None else 0.0
    casc = make_cascade(rates, epsilon=eps, mu=mu, beta=beta, kappa=kappa)
    bars = None
    if with_barriers:
        bars = build_barriers(
            sysx, hom, chart, rates, casc,
            perp_orientation=infer_perp_orientation(sysx, hom),
        )
    return LoopContext(
        system=sysx, spectrum=spec, rates=rates, gamma=hom, chart=chart,
        anchors=anch, cascade=casc, barriers=bars,
    )


@pytest.fixture(scope="session")
def duffing():
    return builtin_system("duffing")


@pytest.fixture(scope="session")
def duffing_spectrum(duffing):
    return compute_spectrum(duffing, DUFFING_HINT)


@pytest.fixture(scope="session")
def duffing_rates(duffing_spectrum):
    return rate_constants(duffing_spectrum)


@pytest.fixture(scope="session")
def rescaled():
    return builtin_system("duffing-rescaled")


@pytest.fixture(scope="session")
def rescaled_spectrum(rescaled):
    return compute_spectrum(rescaled, DUFFING_HINT)


@pytest.fixture(scope="session")
def duffing_hom(duffing):
    from homloop.leaves import homoclinic_orbit

    return homoclinic_orbit(duffing)


@pytest.fixture(scope="session")
def duffing_ctx():
    return make_context("duffing", with_barriers=True)


@pytest.fixture(scope="session")
def rescaled_ctx():
    return make_context("duffing-rescaled")


@pytest.fixture(scope="session")
def duffing_batch(duffing_ctx):
    from homloop.scaling import run_batch

    return run_batch(duffing_ctx, ACCEPTANCE_D_GRID, [0.0])


@pytest.fixture(scope="session")
def rescaled_batch(rescaled_ctx):
    from homloop.scaling import run_batch

    return run_batch(rescaled_ctx, ACCEPTANCE_D_GRID, [0.0])
