"""FastAPI service exposing the experiment runners.

Each endpoint accepts a full experiment request (system + parameters +
tolerances), builds a session, runs one experiment kind, and returns the
report with the resolved parameter cascade embedded.  Operational failures
map to 422/400, contract violations stay in-band as ``contract_ok`` flags so
clients can distinguish "could not run" from "ran and the bound failed".
"""
from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..config import ConfigParse, ExperimentConfig
from ..session import RUNNERS, Session, build_session
from .schemas import (
    BarriersResponse,
    ClassifyResponse,
    ExperimentRequest,
    LeavesResponse,
    LoopResponse,
    MelnikovResponse,
    ScalingResponse,
    StabilityResponse,
)

app = FastAPI(
    title="homloop",
    description="Loop maps, splitting integrals and scaling laws for planar "
    "piecewise-smooth systems with a saddle on the switching curve",
    version="0.1.0",
)


def _config_from_request(req: ExperimentRequest) -> ExperimentConfig:
    cfg = ExperimentConfig(
        system_name=req.system.name,
        perturbation=req.system.perturbation,
        epsilon=req.system.epsilon,
        mu=req.params.mu,
        beta=req.params.beta,
        varpi=req.params.varpi,
        d_grid=list(req.params.d_grid),
        tau_grid=list(req.params.tau_grid),
        eps_grid=list(req.params.eps_grid),
        directions=list(req.params.directions),
        alpha_grid_n=req.params.alpha_grid_n,
        alpha_span=list(req.params.alpha_span),
        n_loops=req.params.n_loops,
        seed=req.params.seed,
        rtol=req.tolerances.rtol,
        atol=req.tolerances.atol,
        crossing_tol=req.tolerances.crossing,
        transversality_floor=req.tolerances.transversality_floor,
    )
    cfg.validate()
    return cfg


def _session(req: ExperimentRequest) -> Session:
    try:
        cfg = _config_from_request(req)
        return build_session(cfg, threads=req.threads)
    except (ConfigParse, KeyError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def _run(kind: str, req: ExperimentRequest) -> dict:
    sess = _session(req)
    try:
        return RUNNERS[kind](sess)
    except (ValueError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    except RuntimeError as exc:
        raise HTTPException(
            status_code=400, detail=f"{type(exc).__name__}: {exc}"
        ) from exc


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "service": "homloop"}


@app.post("/classify", response_model=ClassifyResponse)
def classify(req: ExperimentRequest):
    return _run("classify", req)


@app.post("/melnikov", response_model=MelnikovResponse)
def melnikov(req: ExperimentRequest):
    return _run("melnikov", req)


@app.post("/leaves", response_model=LeavesResponse)
def leaves(req: ExperimentRequest):
    return _run("leaves", req)


@app.post("/barriers", response_model=BarriersResponse)
def barriers(req: ExperimentRequest):
    return _run("barriers", req)


@app.post("/loop", response_model=LoopResponse)
def loop(req: ExperimentRequest):
    return _run("loop", req)


@app.post("/scaling", response_model=ScalingResponse)
def scaling(req: ExperimentRequest):
    return _run("scaling", req)


@app.post("/stability", response_model=StabilityResponse)
def stability(req: ExperimentRequest):
    return _run("stability", req)
