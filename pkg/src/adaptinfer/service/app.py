"""FastAPI wrapper over the engine.

Stateless by design: every request names its inputs by path, the service
loads them, runs the engine, and returns the analysis data. Error mapping
is part of the contract: invalid input -> 400, infeasible budget -> 409,
numeric failure -> 500; bodies carry the error class and detail.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..activation import aa_relu, calibrate_all
from ..controller import read_budget_trace, run_adaptive
from ..errors import InfeasibleBudgetError, InvalidInputError, NumericError
from ..descriptors import builtin_manifest, builtin_names
from ..graph import (
    Dataset,
    LayerRuntimeConfig,
    Model,
    evaluate_accuracy,
    forward_batch,
    layer_macs,
    layer_param_count,
    load_model,
    model_from_manifest,
)
from ..planner import (
    Baseline,
    Budget,
    Plan,
    build_ranklist,
    greedy_select,
    latency_proxy,
    memory_cost,
    plan_to_config,
)
from ..sensitivity import (
    DEFAULT_PRECISIONS,
    DEFAULT_SPARSITY_LEVELS,
    read_records_csv,
)
from ..sensitivity import analyze as sensitivity_analyze
from ..tensor import Precision, Tensor, histogram, read_aat
from . import schemas


def resolve_model(spec: str) -> Model:
    """A builtin descriptor name or a manifest path."""
    if spec in builtin_names():
        return model_from_manifest(builtin_manifest(spec))
    return load_model(spec)


def config_from_plan_doc(model: Model, doc: dict) -> dict[str, LayerRuntimeConfig]:
    """Rebuild the runtime config a saved Plan JSON describes."""
    try:
        assignments = doc["assignments"]
    except (TypeError, KeyError):
        raise InvalidInputError("plan JSON has no assignments list") from None
    config = {layer.id: LayerRuntimeConfig() for layer in model.activation_layers}
    for a in assignments:
        try:
            config[str(a["layer_id"])] = LayerRuntimeConfig(
                threshold=float(a["threshold"]),
                precision=Precision.parse(a["precision"]),
                sparsity_level=float(a["sparsity_level"]))
        except KeyError as exc:
            raise InvalidInputError(f"plan assignment missing key {exc}") from None
    strays = set(config) - {layer.id for layer in model.activation_layers}
    if strays:
        raise InvalidInputError(
            f"plan names non-activation layers: {', '.join(sorted(strays))}")
    return config


def _load_plan_config(model: Model, plan_path: str | None):
    if plan_path is None:
        return None
    path = Path(plan_path)
    if not path.exists():
        raise InvalidInputError(f"plan file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"plan file is not valid JSON: {exc}") from None
    return config_from_plan_doc(model, doc)


def _baseline_from_table(model: Model, records, *, with_latency: bool) -> Baseline:
    row = next((r for r in records
                if r.sparsity_level == 0.0 and r.precision is Precision.FP32),
               None)
    if row is None:
        raise InvalidInputError("table holds no baseline (s=0, fp32) row")
    return Baseline(
        memory_bytes=memory_cost(model).total_bytes,
        accuracy=row.accuracy,
        latency_proxy=latency_proxy(model) if with_latency else None)


def _parse_precisions(labels: list[str] | None):
    if labels is None:
        return DEFAULT_PRECISIONS
    return tuple(Precision.parse(label) for label in labels)


def _plan_points(model: Model, plan: Plan, joint: str | None,
                 subset: int | None) -> tuple[float, float]:
    """(latency_proxy, accuracy) of a plan's installed config."""
    config = plan_to_config(model, plan)
    lat = latency_proxy(model, config)
    if joint is not None:
        acc = evaluate_accuracy(model, Dataset.load(joint), config,
                                subset=subset)
    else:
        acc = min(1.0, max(0.0, plan.baseline.accuracy
                           - plan.projected_accuracy_drop))
    return lat, acc


def create_app() -> FastAPI:
    app = FastAPI(title="adaptinfer", version=__version__)

    @app.exception_handler(InvalidInputError)
    async def _invalid(request: Request, exc: InvalidInputError):
        return JSONResponse(status_code=400, content={
            "error": "invalid_input", "detail": str(exc)})

    @app.exception_handler(InfeasibleBudgetError)
    async def _infeasible(request: Request, exc: InfeasibleBudgetError):
        return JSONResponse(status_code=409, content={
            "error": "infeasible_budget", "detail": str(exc),
            "best_achievable_bytes": exc.best_achievable_bytes})

    @app.exception_handler(NumericError)
    async def _numeric(request: Request, exc: NumericError):
        return JSONResponse(status_code=500, content={
            "error": "numeric_failure", "detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    async def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/inspect", response_model=schemas.InspectResponse)
    async def inspect(req: schemas.InspectRequest):
        model = resolve_model(req.model)
        cost = memory_cost(model)
        shapes = model.output_shapes
        rows = [
            schemas.LayerRow(
                id=layer.id,
                kind=layer.kind,
                output_shape=list(shapes[layer.id]),
                param_count=layer_param_count(layer),
                activation_elements=int(np.prod(shapes[layer.id], dtype=np.int64)),
                activation_bytes=cost.per_layer_activation_bytes[layer.id],
                macs=layer_macs(layer, shapes),
            )
            for layer in model.layers
        ]
        return schemas.InspectResponse(
            name=model.name,
            layer_count=len(model.layers),
            param_bytes=cost.param_bytes,
            activation_bytes=cost.activation_bytes,
            total_bytes=cost.total_bytes,
            total_mib=cost.total_mib,
            latency_proxy=latency_proxy(model),
            layers=rows,
        )

    @app.post("/infer", response_model=schemas.InferResponse)
    async def infer_endpoint(req: schemas.InferRequest):
        model = resolve_model(req.model)
        images = read_aat(req.images)
        config = _load_plan_config(model, req.plan)
        out, _ = forward_batch(model, images, config)
        return schemas.InferResponse(
            predictions=[int(p) for p in out.argmax(axis=1)],
            outputs=[[float(v) for v in row] for row in out],
        )

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    async def evaluate(req: schemas.EvaluateRequest):
        model = resolve_model(req.model)
        dataset = Dataset.load(req.dataset)
        config = _load_plan_config(model, req.plan)
        count = len(dataset) if req.subset is None else min(req.subset,
                                                            len(dataset))
        return schemas.EvaluateResponse(
            accuracy=evaluate_accuracy(model, dataset, config,
                                       subset=req.subset),
            sample_count=count,
        )

    @app.post("/calibrate", response_model=schemas.CalibrateResponse)
    async def calibrate(req: schemas.CalibrateRequest):
        model = resolve_model(req.model)
        dataset = Dataset.load(req.calib)
        profiles = calibrate_all(model, dataset, seed=req.seed)
        out = []
        for layer in model.activation_layers:
            profile = profiles[layer.id]
            outputs = aa_relu(profile.samples, 0.0)
            bins = histogram(Tensor(outputs), req.bins)
            out.append(schemas.LayerProfile(
                **profile.to_json_dict(),
                histogram=[schemas.HistogramBin(lo=lo, hi=hi, count=count)
                           for (lo, hi), count in bins],
            ))
        return schemas.CalibrateResponse(profiles=out)

    @app.post("/sensitivity", response_model=schemas.SensitivityResponse)
    async def sensitivity(req: schemas.SensitivityRequest):
        model = resolve_model(req.model)
        dataset = Dataset.load(req.dataset)
        calib = Dataset.load(req.calib) if req.calib else dataset
        profiles = calibrate_all(model, calib, seed=req.seed)
        levels = (DEFAULT_SPARSITY_LEVELS if req.sparsity_levels is None
                  else tuple(req.sparsity_levels))
        records = sensitivity_analyze(
            model, dataset, profiles, levels,
            _parse_precisions(req.precisions), subset=req.subset)
        return schemas.SensitivityResponse(records=[
            schemas.SensitivityRow(
                layer_id=r.layer_id, sparsity_level=r.sparsity_level,
                threshold=r.threshold, q_bits=r.precision.bits,
                q_kind=r.precision.kind, accuracy=r.accuracy,
                memory_bytes=r.memory_bytes)
            for r in records
        ])

    @app.post("/plan", response_model=schemas.PlanResponse)
    async def plan_endpoint(req: schemas.PlanRequest):
        model = resolve_model(req.model)
        records = read_records_csv(req.table)
        has_latency = req.latency_budget is not None
        candidates = build_ranklist(model, records,
                                    budget_has_latency=has_latency)
        baseline = _baseline_from_table(model, records,
                                        with_latency=has_latency)
        plan = greedy_select(candidates, baseline,
                             Budget(memory_bytes=req.budget_bytes,
                                    latency_proxy=req.latency_budget))
        joint = None
        if req.joint_eval is not None:
            joint = evaluate_accuracy(model, Dataset.load(req.joint_eval),
                                      plan_to_config(model, plan),
                                      subset=req.subset)
        return schemas.PlanResponse(plan=plan.to_json_dict(),
                                    joint_accuracy=joint)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    async def sweep(req: schemas.SweepRequest):
        if not req.budgets:
            raise InvalidInputError("budget list is empty")
        model = resolve_model(req.model)
        records = read_records_csv(req.table)
        candidates = build_ranklist(model, records)
        baseline = _baseline_from_table(model, records, with_latency=False)
        points, skipped = [], []
        for budget in req.budgets:
            try:
                plan = greedy_select(candidates, baseline, Budget(budget))
            except InfeasibleBudgetError:
                skipped.append(budget)
                continue
            lat, acc = _plan_points(model, plan, req.joint_eval, req.subset)
            points.append(schemas.SweepPoint(
                budget_bytes=budget,
                memory_bytes=plan.projected_memory_bytes,
                latency_proxy=lat,
                accuracy=acc))
        return schemas.SweepResponse(points=points, skipped_infeasible=skipped)

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    async def simulate(req: schemas.SimulateRequest):
        model = resolve_model(req.model)
        records = read_records_csv(req.table)
        events = read_budget_trace(req.trace)
        has_latency = any(e.budget.latency_proxy is not None for e in events)
        candidates = build_ranklist(model, records,
                                    budget_has_latency=has_latency)
        baseline = _baseline_from_table(model, records,
                                        with_latency=has_latency)
        workload = Dataset.load(req.workload) if req.workload else None
        entries = run_adaptive(model, events, candidates, baseline,
                               workload=workload)
        return schemas.SimulateResponse(entries=entries)

    return app


__all__ = ["create_app", "resolve_model", "config_from_plan_doc"]
