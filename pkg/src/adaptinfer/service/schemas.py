"""Request/response bodies for the analysis service.

Requests reference inputs by path (the service is a stateless wrapper over
the engine; it holds no model registry), and responses carry the analysis
data itself so clients decide what to persist.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    error: str
    detail: str
    best_achievable_bytes: int | None = None


# --- inspect ---------------------------------------------------------------------

class InspectRequest(BaseModel):
    model: str = Field(description="Manifest path or builtin descriptor name")


class LayerRow(BaseModel):
    id: str
    kind: str
    output_shape: list[int]
    param_count: int
    activation_elements: int
    activation_bytes: int
    macs: int


class InspectResponse(BaseModel):
    name: str
    layer_count: int
    param_bytes: int
    activation_bytes: int
    total_bytes: int
    total_mib: float
    latency_proxy: float
    layers: list[LayerRow]


# --- inference + evaluation ------------------------------------------------------

class InferRequest(BaseModel):
    model: str
    images: str = Field(description="Path to an .aat image stack (N,C,H,W)")
    plan: str | None = Field(default=None, description="Plan JSON to apply")


class InferResponse(BaseModel):
    predictions: list[int]
    outputs: list[list[float]]


class EvaluateRequest(BaseModel):
    model: str
    dataset: str = Field(description=".aat images with a .labels.json sidecar")
    plan: str | None = None
    subset: int | None = None


class EvaluateResponse(BaseModel):
    accuracy: float
    sample_count: int


# --- calibration -----------------------------------------------------------------

class CalibrateRequest(BaseModel):
    model: str
    calib: str
    seed: int = 0
    bins: int = Field(default=64, ge=1)


class HistogramBin(BaseModel):
    lo: float
    hi: float
    count: int


class LayerProfile(BaseModel):
    layer_id: str
    quantiles: list[float]
    baseline_zero_fraction: float
    sample_count: int
    histogram: list[HistogramBin]


class CalibrateResponse(BaseModel):
    profiles: list[LayerProfile]


# --- sensitivity -----------------------------------------------------------------

class SensitivityRequest(BaseModel):
    model: str
    dataset: str
    calib: str | None = None
    sparsity_levels: list[float] | None = None
    precisions: list[str] | None = None
    subset: int | None = None
    seed: int = 0


class SensitivityRow(BaseModel):
    layer_id: str
    sparsity_level: float
    threshold: float
    q_bits: int
    q_kind: str
    accuracy: float
    memory_bytes: int


class SensitivityResponse(BaseModel):
    records: list[SensitivityRow]


# --- planning --------------------------------------------------------------------

class PlanRequest(BaseModel):
    model: str
    table: str = Field(description="Sensitivity CSV produced by /sensitivity")
    budget_bytes: int = Field(gt=0)
    latency_budget: float | None = Field(default=None, gt=0)
    joint_eval: str | None = Field(
        default=None, description="Dataset path for post-hoc plan accuracy")
    subset: int | None = None


class PlanResponse(BaseModel):
    plan: dict
    joint_accuracy: float | None = None


class SweepRequest(BaseModel):
    model: str
    table: str
    budgets: list[int]
    joint_eval: str | None = None
    subset: int | None = None


class SweepPoint(BaseModel):
    budget_bytes: int
    memory_bytes: int
    latency_proxy: float
    accuracy: float


class SweepResponse(BaseModel):
    points: list[SweepPoint]
    skipped_infeasible: list[int]


# --- controller ------------------------------------------------------------------

class SimulateRequest(BaseModel):
    model: str
    table: str
    trace: str
    workload: str | None = None


class SimulateResponse(BaseModel):
    entries: list[dict]
