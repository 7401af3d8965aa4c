"""Pydantic request/response models for the experiment service."""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field, field_validator


class SystemSpec(BaseModel):
    name: str = "duffing"
    perturbation: Optional[str] = None
    epsilon: float = Field(default=0.0, ge=0.0)


class ParamsSpec(BaseModel):
    mu: Optional[float] = Field(default=None, gt=0.0)
    beta: Optional[float] = Field(default=None, gt=0.0)
    varpi: Optional[float] = Field(default=None, gt=0.0)
    d_grid: list[float] = Field(default=[1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
    tau_grid: list[float] = Field(default=[0.0])
    eps_grid: list[float] = Field(default_factory=list)
    directions: list[str] = Field(default=["fwd", "bwd"])
    alpha_grid_n: int = Field(default=64, ge=4)
    alpha_span: list[float] = Field(default=[0.0, 6.283185307179586])
    n_loops: int = Field(default=6, ge=1)
    seed: int = 0

    @field_validator("d_grid")
    @classmethod
    def _positive_d(cls, v):
        if not v or any(d <= 0 for d in v):
            raise ValueError("d_grid entries must be positive")
        return v

    @field_validator("directions")
    @classmethod
    def _known_directions(cls, v):
        bad = [x for x in v if x not in ("fwd", "bwd")]
        if bad:
            raise ValueError(f"unknown directions {bad}")
        return v


class ToleranceSpec(BaseModel):
    rtol: float = Field(default=3e-14, gt=0.0)
    atol: float = Field(default=1e-16, gt=0.0)
    crossing: float = Field(default=1e-12, gt=0.0)
    transversality_floor: float = Field(default=1e-8, gt=0.0)


class ExperimentRequest(BaseModel):
    system: SystemSpec = Field(default_factory=SystemSpec)
    params: ParamsSpec = Field(default_factory=ParamsSpec)
    tolerances: ToleranceSpec = Field(default_factory=ToleranceSpec)
    threads: int = Field(default=1, ge=1, le=64)


class CascadeInfo(BaseModel):
    mu: float
    mu1: float
    mu2: float
    c_mu: float
    beta: float
    varpi: float
    delta: float
    D0: float
    M0: float
    epsilon: float
    kappa: float
    varpi_threshold_ok: bool


class ClassifyResponse(BaseModel):
    kind: str
    cascade: CascadeInfo
    rates: dict[str, float]
    report: dict
    spectrum: dict
    contract_ok: bool


class MelnikovResponse(BaseModel):
    kind: str
    cascade: CascadeInfo
    zeros: list[dict]
    degenerate: list[float]
    profile_csv: str
    contract_ok: bool
    splitting: Optional[dict] = None
    splitting_csv: Optional[str] = None


class LeavesResponse(BaseModel):
    kind: str
    cascade: CascadeInfo
    anchors_csv: str
    cbar_est: float
    contract_ok: bool


class BarriersResponse(BaseModel):
    kind: str
    cascade: CascadeInfo
    band_checks: list[dict]
    bands_ok: bool
    flow_direction: dict
    flow_direction_ok: bool
    endpoints: dict[str, list[float]]
    curves_csv: dict[str, str]
    contract_ok: bool


class LoopResponse(BaseModel):
    kind: str
    cascade: CascadeInfo
    rates: dict[str, float]
    rows_csv: str
    n_loops: int
    contract_ok: bool


class ScalingResponse(BaseModel):
    kind: str
    cascade: CascadeInfo
    rates: dict[str, float]
    slopes: list[dict]
    keymissed: dict
    rows_csv: str
    contract_ok: bool


class StabilityResponse(BaseModel):
    kind: str
    cascade: CascadeInfo
    probe: dict
    contract_ok: bool


class ErrorResponse(BaseModel):
    detail: str
    error_type: str
