"""Runtime budget controller: replay a budget trace, re-plan from the cached
sensitivity table, and swap configs atomically between inference chunks.

Re-planning never re-measures accuracy; it only re-ranks the table captured
offline. Config swaps go through Model.publish_config, whose single
reference assignment guarantees in-flight readers see a complete config.
An event whose budget cannot be met installs the minimum-memory
configuration and is logged as infeasible with the shortfall.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InfeasibleBudgetError, InvalidInputError
from .graph import Dataset, Model, forward_batch
from .planner import (
    Baseline,
    Budget,
    Candidate,
    Plan,
    floor_select,
    greedy_select,
    plan_to_config,
)

__all__ = [
    "BudgetEvent",
    "read_budget_trace",
    "swap_config",
    "run_adaptive",
    "write_log_jsonl",
    "read_log_jsonl",
]


@dataclass(frozen=True)
class BudgetEvent:
    timestamp_ms: int
    budget: Budget


def read_budget_trace(path: str | Path) -> list[BudgetEvent]:
    """Parse a budget trace CSV: ``timestamp_ms,memory_budget_bytes`` with an
    optional third ``latency_budget_proxy`` column. Timestamps must be
    strictly increasing."""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"budget trace not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["timestamp_ms", "memory_budget_bytes"]:
            raise InvalidInputError(
                f"{path}: expected header timestamp_ms,memory_budget_bytes"
                f"[,latency_budget_proxy], got {header!r}")
        has_latency = len(header) == 3 and header[2] == "latency_budget_proxy"
        if len(header) > 2 and not has_latency:
            raise InvalidInputError(f"{path}: unexpected columns {header[2:]!r}")
        events = []
        last_ts = None
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidInputError(f"{path}: malformed row {row!r}")
            try:
                ts = int(row[0])
                mem = int(row[1])
                lat = float(row[2]) if has_latency and row[2].strip() else None
            except ValueError as exc:
                raise InvalidInputError(f"{path}: bad row {row!r}: {exc}") from None
            if last_ts is not None and ts <= last_ts:
                raise InvalidInputError(
                    f"{path}: timestamps must be strictly increasing "
                    f"({ts} after {last_ts})")
            last_ts = ts
            events.append(BudgetEvent(timestamp_ms=ts,
                                      budget=Budget(memory_bytes=mem,
                                                    latency_proxy=lat)))
    if not events:
        raise InvalidInputError(f"{path}: trace holds no events")
    return events


def _chunk_bounds(total: int, chunks: int) -> list[tuple[int, int]]:
    """Split ``total`` items into ``chunks`` contiguous, near-equal spans."""
    base = total // chunks
    bounds = []
    start = 0
    for i in range(chunks):
        end = start + base + (1 if i < total % chunks else 0)
        bounds.append((start, end))
        start = end
    return bounds


def swap_config(model: Model, plan: Plan) -> None:
    """Install ``plan`` on ``model`` as one unit: readers see either the old
    config or the new one, never a blend. A plan naming an unknown or
    non-activation layer raises and leaves the config unchanged; a plan with
    no assignments resets the model to baseline."""
    model.publish_config(plan_to_config(model, plan))


def _check_table(model: Model, candidates: Sequence[Candidate]) -> None:
    activations = {layer.id for layer in model.activation_layers}
    strays = sorted({c.layer_id for c in candidates} - activations)
    if strays:
        raise InvalidInputError(
            "table/model mismatch: candidate rows name layers that are not "
            f"activation layers of {model.name}: {', '.join(strays)}")


def run_adaptive(model: Model, events: Sequence[BudgetEvent],
                 candidates: Sequence[Candidate], baseline: Baseline,
                 workload: Dataset | None = None) -> list[dict]:
    """Replay budget events against the model, one log entry per event.

    The candidate table is checked against the model before any inference.
    Each entry records the re-plan wall time and, with a workload, the
    number of inferences served under the installed plan: the workload runs
    in equal chunks, one chunk after each event's config lands, and chunk
    accuracy is logged. Chunk accuracy is computed inline so planner
    instrumentation (eval pass counting) stays untouched by the controller.
    Infeasible events install the minimum-memory configuration and log the
    shortfall.
    """
    if not events:
        raise InvalidInputError("no budget events to process")
    _check_table(model, candidates)
    bounds = _chunk_bounds(len(workload), len(events)) if workload is not None \
        else [(0, 0)] * len(events)

    entries = []
    for event, (lo, hi) in zip(events, bounds):
        entry = {
            "timestamp_ms": event.timestamp_ms,
            "budget": {"memory_bytes": event.budget.memory_bytes},
            "feasible": True,
        }
        if event.budget.latency_proxy is not None:
            entry["budget"]["latency_proxy"] = event.budget.latency_proxy
        started = time.perf_counter()
        try:
            plan = greedy_select(candidates, baseline, event.budget)
        except InfeasibleBudgetError as exc:
            plan = floor_select(candidates, baseline, event.budget)
            entry["feasible"] = False
            entry["best_achievable_bytes"] = exc.best_achievable_bytes
            entry["shortfall_bytes"] = \
                exc.best_achievable_bytes - event.budget.memory_bytes
            entry["note"] = "budget unreachable; minimum-memory config installed"
        entry["replan_ms"] = (time.perf_counter() - started) * 1e3
        swap_config(model, plan)
        entry["assignments"] = [
            {"layer_id": a.layer_id, "sparsity_level": a.sparsity_level,
             "threshold": a.threshold, "precision": a.precision.label}
            for a in plan.assignments
        ]
        entry["projected_memory_bytes"] = plan.projected_memory_bytes
        entry["projected_accuracy_drop"] = plan.projected_accuracy_drop
        entry["inferences"] = hi - lo
        if workload is not None and hi > lo:
            images = workload.images[lo:hi]
            labels = workload.labels[lo:hi]
            out, _ = forward_batch(model, images)
            entry["chunk"] = {
                "start": lo, "stop": hi,
                "accuracy": float(np.mean(out.argmax(axis=1) == labels)),
            }
        entries.append(entry)
    return entries


def write_log_jsonl(entries: Sequence[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")


def read_log_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"controller log not found: {path}")
    return [json.loads(line) for line in path.read_text().splitlines() if line]
