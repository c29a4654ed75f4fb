"""Cost model and budget planners.

Memory: parameters at 4 bytes each, plus every layer output once, at the
output's storage width. Only activation layers have configurable width;
everything else stores 32-bit. Residual merges are fused into the consuming
conv and add no tensor of their own.

Latency proxy: per-layer MACs, discounted by the width and the announced
sparsity level of the layer's direct producer when that producer is an
activation. Unitless; only ratios against the baseline are meaningful.

Planners consume per-layer sensitivity candidates and pick at most one
(sparsity, precision) assignment per activation layer. The greedy planner
walks a score-ranked list with a reachability guard: a candidate is skipped
when locking in its (small) saving would leave the budget unreachable even
with the best remaining savings of every other still-open layer. With that
guard, the walk reaches the budget whenever any assignment can, so greedy
and exhaustive search agree on feasibility.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import InfeasibleBudgetError, InvalidInputError
from .graph import (
    INPUT_ID,
    LayerRuntimeConfig,
    Model,
    layer_macs,
    layer_param_count,
)
from .tensor import Precision

__all__ = [
    "CostReport",
    "memory_cost",
    "latency_proxy",
    "Candidate",
    "Baseline",
    "Budget",
    "Plan",
    "build_ranklist",
    "greedy_select",
    "brute_force_select",
    "floor_select",
    "plan_to_config",
]

SCORE_DROP_FLOOR = 1e-4  # avoids dividing by ~zero accuracy drops
BRUTE_FORCE_LIMIT = 1_000_000


@dataclass(frozen=True)
class CostReport:
    """Memory breakdown for one model configuration, in bytes."""

    param_bytes: int
    activation_bytes: int
    per_layer_activation_bytes: Mapping[str, int]

    @property
    def total_bytes(self) -> int:
        return self.param_bytes + self.activation_bytes

    @property
    def total_mib(self) -> float:
        return self.total_bytes / 2 ** 20

    def to_json_dict(self) -> dict:
        return {
            "param_bytes": self.param_bytes,
            "activation_bytes": self.activation_bytes,
            "total_bytes": self.total_bytes,
            "total_mib": self.total_mib,
            "per_layer_activation_bytes": dict(self.per_layer_activation_bytes),
        }


def _elements(shape: tuple[int, ...]) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


def _activation_bytes(elements: int, bits: int) -> int:
    return math.ceil(elements * bits / 8)


def memory_cost(model: Model,
                config: Mapping[str, LayerRuntimeConfig] | None = None,
                ) -> CostReport:
    """Inference memory for batch size 1 under the given (or current) config."""
    cfg = model.config if config is None else config
    shapes = model.output_shapes
    per_layer: dict[str, int] = {}
    for layer in model.layers:
        bits = 32
        if layer.kind == "aa_relu":
            entry = cfg.get(layer.id)
            if entry is not None:
                bits = entry.precision.bits
        per_layer[layer.id] = _activation_bytes(_elements(shapes[layer.id]), bits)
    params = sum(layer_param_count(l) for l in model.layers) * 4
    return CostReport(
        param_bytes=params,
        activation_bytes=sum(per_layer.values()),
        per_layer_activation_bytes=per_layer,
    )


def latency_proxy(model: Model,
                  config: Mapping[str, LayerRuntimeConfig] | None = None,
                  ) -> float:
    """Sparsity- and width-discounted MAC count for one sample."""
    cfg = model.config if config is None else config
    shapes = model.output_shapes
    total = 0.0
    prev = INPUT_ID
    by_id = {l.id: l for l in model.layers}
    for layer in model.layers:
        macs = layer_macs(layer, shapes)
        if macs:
            src = layer.input or prev
            producer = by_id.get(src)
            factor = 1.0
            if producer is not None and producer.kind == "aa_relu":
                entry = cfg.get(producer.id)
                if entry is not None:
                    factor = (entry.precision.bits / 32.0) \
                        * (1.0 - entry.sparsity_level)
            total += macs * factor
        prev = layer.id
    return total


# --- planning ---------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    """One (layer, sparsity level, precision) option from the sensitivity
    table, with its measured accuracy and modeled savings."""

    layer_id: str
    sparsity_level: float
    threshold: float
    precision: Precision
    accuracy: float
    accuracy_drop: float
    memory_saved_bytes: int
    latency_saved: float = 0.0

    @property
    def score(self) -> float:
        return self.memory_saved_bytes / max(self.accuracy_drop, SCORE_DROP_FLOOR)


@dataclass(frozen=True)
class Baseline:
    memory_bytes: int
    accuracy: float
    latency_proxy: float | None = None


@dataclass(frozen=True)
class Budget:
    memory_bytes: int
    latency_proxy: float | None = None

    def __post_init__(self):
        if self.memory_bytes <= 0:
            raise InvalidInputError(
                f"memory budget must be positive, got {self.memory_bytes}")
        if self.latency_proxy is not None and self.latency_proxy <= 0:
            raise InvalidInputError("latency budget must be positive")


@dataclass(frozen=True)
class Plan:
    budget: Budget
    baseline: Baseline
    assignments: tuple[Candidate, ...]
    projected_memory_bytes: int
    projected_accuracy_drop: float
    projected_latency: float | None = None
    provenance: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        doc = {
            "budget": {"memory_bytes": self.budget.memory_bytes},
            "baseline": {"memory_bytes": self.baseline.memory_bytes,
                         "accuracy": self.baseline.accuracy},
            "assignments": [
                {"layer_id": a.layer_id,
                 "sparsity_level": a.sparsity_level,
                 "threshold": a.threshold,
                 "precision": a.precision.label}
                for a in self.assignments
            ],
            "projected": {"memory_bytes": self.projected_memory_bytes,
                          "accuracy_drop_sum": self.projected_accuracy_drop},
            "provenance": list(self.provenance),
        }
        if self.budget.latency_proxy is not None:
            doc["budget"]["latency_proxy"] = self.budget.latency_proxy
        if self.baseline.latency_proxy is not None:
            doc["baseline"]["latency_proxy"] = self.baseline.latency_proxy
        if self.projected_latency is not None:
            doc["projected"]["latency_proxy"] = self.projected_latency
        return doc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


def plan_to_config(model: Model, plan: Plan) -> dict[str, LayerRuntimeConfig]:
    """Full runtime config for a plan: planned layers get their assignment,
    every other activation stays at baseline."""
    cfg = {l.id: LayerRuntimeConfig() for l in model.layers if l.kind == "aa_relu"}
    for a in plan.assignments:
        if a.layer_id not in cfg:
            raise InvalidInputError(
                f"plan assigns {a.layer_id!r}, which is not an activation layer")
        cfg[a.layer_id] = LayerRuntimeConfig(
            threshold=a.threshold, precision=a.precision,
            sparsity_level=a.sparsity_level)
    return cfg


def build_ranklist(model: Model, records: Iterable, *,
                   budget_has_latency: bool = False) -> list[Candidate]:
    """Candidates from a sensitivity table, best score first.

    Each record carries (layer_id, sparsity_level, threshold, precision,
    accuracy, memory_bytes). Baseline rows and rows that save nothing are
    dropped; with a latency budget, rows that only save latency stay in.
    Ties break toward smaller accuracy drop, earlier layer, higher sparsity
    level, then narrower precision.
    """
    baseline_report = memory_cost(model)
    baseline_memory = baseline_report.total_bytes
    baseline_latency = latency_proxy(model)
    layer_order = {l.id: i for i, l in enumerate(model.layers)}

    baseline_accuracy = None
    for r in records:
        if r.sparsity_level == 0.0 and r.precision is Precision.FP32:
            baseline_accuracy = r.accuracy
            break
    if baseline_accuracy is None:
        raise InvalidInputError(
            "sensitivity table has no baseline (s=0, fp32) row")

    candidates = []
    for r in records:
        if r.layer_id not in layer_order:
            raise InvalidInputError(f"sensitivity row names unknown layer "
                                    f"{r.layer_id!r}")
        if r.sparsity_level == 0.0 and r.precision is Precision.FP32:
            continue
        saved = baseline_memory - r.memory_bytes
        cfg = {r.layer_id: LayerRuntimeConfig(
            threshold=r.threshold, precision=r.precision,
            sparsity_level=r.sparsity_level)}
        lat_saved = baseline_latency - latency_proxy(model, {
            **{l.id: LayerRuntimeConfig() for l in model.layers
               if l.kind == "aa_relu"}, **cfg})
        if saved <= 0 and not (budget_has_latency and lat_saved > 0):
            continue
        candidates.append(Candidate(
            layer_id=r.layer_id,
            sparsity_level=r.sparsity_level,
            threshold=r.threshold,
            precision=r.precision,
            accuracy=r.accuracy,
            accuracy_drop=max(0.0, baseline_accuracy - r.accuracy),
            memory_saved_bytes=max(0, saved),
            latency_saved=max(0.0, lat_saved),
        ))
    candidates.sort(key=lambda c: (
        -c.score, c.accuracy_drop, layer_order[c.layer_id],
        -c.sparsity_level, c.precision.bits))
    return candidates


def _per_layer_max_savings(candidates: Sequence[Candidate]) -> dict[str, int]:
    best: dict[str, int] = {}
    for c in candidates:
        best[c.layer_id] = max(best.get(c.layer_id, 0), c.memory_saved_bytes)
    return best


def _floor(baseline: Baseline, candidates: Sequence[Candidate]) -> int:
    return baseline.memory_bytes - sum(_per_layer_max_savings(candidates).values())


def _latency_floor(baseline: Baseline,
                   candidates: Sequence[Candidate]) -> float | None:
    if baseline.latency_proxy is None:
        return None
    best: dict[str, float] = {}
    for c in candidates:
        best[c.layer_id] = max(best.get(c.layer_id, 0.0), c.latency_saved)
    return baseline.latency_proxy - sum(best.values())


def floor_select(candidates: Sequence[Candidate], baseline: Baseline,
                 budget: Budget | None = None) -> Plan:
    """The minimum-memory assignment: per layer, the candidate with the
    largest saving (ties toward smaller accuracy drop). This is what an
    infeasible budget degrades to; ``budget``, when given, records the
    request the plan failed to meet."""
    best: dict[str, Candidate] = {}
    for c in candidates:
        cur = best.get(c.layer_id)
        if cur is None or (c.memory_saved_bytes, -c.accuracy_drop) > \
                (cur.memory_saved_bytes, -cur.accuracy_drop):
            best[c.layer_id] = c
    taken = tuple(sorted(best.values(), key=lambda c: c.layer_id))
    memory = baseline.memory_bytes - sum(c.memory_saved_bytes for c in taken)
    latency = None if baseline.latency_proxy is None else \
        baseline.latency_proxy - sum(c.latency_saved for c in taken)
    return Plan(
        budget=budget if budget is not None else Budget(max(1, memory)),
        baseline=baseline,
        assignments=taken,
        projected_memory_bytes=memory,
        projected_accuracy_drop=sum(c.accuracy_drop for c in taken),
        projected_latency=latency,
        provenance=("minimum-memory configuration",),
    )


def greedy_select(candidates: Sequence[Candidate], baseline: Baseline,
                  budget: Budget) -> Plan:
    """Walk the rank list, taking at most one candidate per layer, until the
    budget is met.

    Raises InfeasibleBudgetError (with the best achievable footprint) when
    even the per-layer maximum savings cannot reach the budget.
    """
    floor = _floor(baseline, candidates)
    lat_floor = _latency_floor(baseline, candidates)
    provenance = [
        f"baseline memory {baseline.memory_bytes} B, "
        f"budget {budget.memory_bytes} B",
        f"best achievable {floor} B over {len(candidates)} candidates",
    ]
    if floor > budget.memory_bytes:
        raise InfeasibleBudgetError(
            budget_bytes=budget.memory_bytes,
            best_achievable_bytes=floor,
            best_achievable_latency=lat_floor)
    if (budget.latency_proxy is not None
            and baseline.latency_proxy is not None
            and lat_floor is not None and lat_floor > budget.latency_proxy):
        raise InfeasibleBudgetError(
            budget_bytes=budget.memory_bytes,
            best_achievable_bytes=floor,
            best_achievable_latency=lat_floor)

    memory = baseline.memory_bytes
    latency = baseline.latency_proxy
    taken: dict[str, Candidate] = {}

    def met() -> bool:
        if memory > budget.memory_bytes:
            return False
        if budget.latency_proxy is not None and latency is not None:
            return latency <= budget.latency_proxy
        return True

    for i, cand in enumerate(candidates):
        if met():
            break
        if cand.layer_id in taken:
            continue
        if memory > budget.memory_bytes:
            # reachability guard: best remaining savings of the other
            # still-open layers, looking only down the list
            rest = _per_layer_max_savings(
                [c for c in candidates[i + 1:]
                 if c.layer_id not in taken and c.layer_id != cand.layer_id])
            after = memory - cand.memory_saved_bytes
            if after - sum(rest.values()) > budget.memory_bytes:
                provenance.append(
                    f"skip {cand.layer_id} s={cand.sparsity_level} "
                    f"{cand.precision.label}: saving too small to keep the "
                    f"budget reachable")
                continue
        taken[cand.layer_id] = cand
        memory -= cand.memory_saved_bytes
        if latency is not None:
            latency -= cand.latency_saved
        provenance.append(
            f"take {cand.layer_id} s={cand.sparsity_level} "
            f"{cand.precision.label}: saves {cand.memory_saved_bytes} B, "
            f"drop {cand.accuracy_drop:.4f}, projected {memory} B")

    if not met():
        # only reachable through an unmet latency budget; memory feasibility
        # is guaranteed by the floor check plus the guard
        raise InfeasibleBudgetError(
            budget_bytes=budget.memory_bytes,
            best_achievable_bytes=memory,
            best_achievable_latency=latency)

    assignments = tuple(sorted(taken.values(), key=lambda c: c.layer_id))
    return Plan(
        budget=budget,
        baseline=baseline,
        assignments=assignments,
        projected_memory_bytes=memory,
        projected_accuracy_drop=sum(c.accuracy_drop for c in taken.values()),
        projected_latency=latency,
        provenance=tuple(provenance),
    )


def brute_force_select(candidates: Sequence[Candidate], baseline: Baseline,
                       budget: Budget) -> Plan:
    """Exhaustive reference planner: minimal summed accuracy drop subject to
    the budget; ties prefer lower memory, then the lexicographically first
    assignment vector. Only usable for small tables."""
    layers = sorted({c.layer_id for c in candidates})
    by_layer: dict[str, list[Candidate | None]] = {
        lid: [None] + sorted(
            (c for c in candidates if c.layer_id == lid),
            key=lambda c: (c.sparsity_level, c.precision.bits))
        for lid in layers
    }
    combos = 1
    for lid in layers:
        combos *= len(by_layer[lid])
        if combos > BRUTE_FORCE_LIMIT:
            raise InvalidInputError(
                f"brute force table too large (> {BRUTE_FORCE_LIMIT} assignments)")

    best: tuple | None = None
    best_assign: list[Candidate] | None = None

    def search(idx: int, chosen: list[Candidate], memory: int,
               latency: float | None, drop: float):
        nonlocal best, best_assign
        if idx == len(layers):
            if memory > budget.memory_bytes:
                return
            if (budget.latency_proxy is not None and latency is not None
                    and latency > budget.latency_proxy):
                return
            key = (drop, memory,
                   tuple((c.layer_id, c.sparsity_level, c.precision.bits)
                         for c in chosen))
            if best is None or key < best:
                best = key
                best_assign = list(chosen)
            return
        for option in by_layer[layers[idx]]:
            if option is None:
                search(idx + 1, chosen, memory, latency, drop)
            else:
                search(idx + 1, chosen + [option],
                       memory - option.memory_saved_bytes,
                       None if latency is None else latency - option.latency_saved,
                       drop + option.accuracy_drop)

    search(0, [], baseline.memory_bytes, baseline.latency_proxy, 0.0)
    if best_assign is None:
        raise InfeasibleBudgetError(
            budget_bytes=budget.memory_bytes,
            best_achievable_bytes=_floor(baseline, candidates),
            best_achievable_latency=_latency_floor(baseline, candidates))
    memory = baseline.memory_bytes - sum(c.memory_saved_bytes for c in best_assign)
    latency = None if baseline.latency_proxy is None else \
        baseline.latency_proxy - sum(c.latency_saved for c in best_assign)
    return Plan(
        budget=budget,
        baseline=baseline,
        assignments=tuple(sorted(best_assign, key=lambda c: c.layer_id)),
        projected_memory_bytes=memory,
        projected_accuracy_drop=sum(c.accuracy_drop for c in best_assign),
        projected_latency=latency,
        provenance=(f"exhaustive search over {combos} assignments",),
    )
