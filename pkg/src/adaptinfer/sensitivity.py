"""One-at-a-time sensitivity analysis over (layer, sparsity level, precision).

Each grid point reconfigures a single activation layer, leaves every other
layer at baseline, and measures top-1 accuracy plus modeled memory. The
(s=0, fp32) point is the baseline itself and is recorded once per layer
with the baseline accuracy, so downstream consumers always find an exact
anchor row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .activation import CalibrationProfile, threshold_for_sparsity
from .errors import InvalidInputError
from .graph import Dataset, LayerRuntimeConfig, Model, evaluate_accuracy
from .planner import memory_cost
from .tensor import Precision

__all__ = [
    "SensitivityRecord",
    "DEFAULT_SPARSITY_LEVELS",
    "DEFAULT_PRECISIONS",
    "analyze",
    "write_records_csv",
    "read_records_csv",
]

DEFAULT_SPARSITY_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)
DEFAULT_PRECISIONS = (Precision.FP32, Precision.FP16, Precision.FP8,
                      Precision.INT4, Precision.INT2)

_CSV_HEADER = ["layer_id", "sparsity_level", "threshold",
               "q_bits", "q_kind", "accuracy", "memory_bytes"]


@dataclass(frozen=True)
class SensitivityRecord:
    layer_id: str
    sparsity_level: float
    threshold: float
    precision: Precision
    accuracy: float
    memory_bytes: int


def analyze(model: Model, dataset: Dataset,
            profiles: Mapping[str, CalibrationProfile],
            sparsity_levels: Sequence[float] = DEFAULT_SPARSITY_LEVELS,
            precisions: Sequence[Precision] = DEFAULT_PRECISIONS,
            *, subset: int | None = None) -> list[SensitivityRecord]:
    """Sensitivity table for every activation layer in the model.

    Evaluations pass the perturbed config explicitly; the model's published
    config is never touched. The baseline grid point is always included
    even if the given grids omit it.
    """
    levels = list(dict.fromkeys([0.0, *sparsity_levels]))
    precs = list(dict.fromkeys([Precision.FP32, *precisions]))
    for s in levels:
        if not (0.0 <= s <= 1.0):
            raise InvalidInputError(f"sparsity level {s} outside [0,1]")
    act_layers = model.activation_layers
    if not act_layers:
        raise InvalidInputError("model has no activation layers to analyze")
    missing = [l.id for l in act_layers if l.id not in profiles]
    if missing:
        raise InvalidInputError(
            "missing calibration profiles for: " + ", ".join(missing))

    published = model.config
    baseline_cfg = {l.id: LayerRuntimeConfig() for l in act_layers}
    baseline_acc = evaluate_accuracy(model, dataset, baseline_cfg, subset=subset)
    baseline_mem = memory_cost(model, baseline_cfg).total_bytes

    records = []
    for layer in act_layers:
        profile = profiles[layer.id]
        for s in levels:
            threshold = threshold_for_sparsity(profile, s)
            for prec in precs:
                if s == 0.0 and prec is Precision.FP32:
                    acc, mem = baseline_acc, baseline_mem
                else:
                    entry = LayerRuntimeConfig(
                        threshold=threshold, precision=prec, sparsity_level=s)
                    cfg = {**baseline_cfg, layer.id: entry}
                    acc = evaluate_accuracy(model, dataset, cfg, subset=subset)
                    mem = memory_cost(model, cfg).total_bytes
                records.append(SensitivityRecord(
                    layer_id=layer.id, sparsity_level=s, threshold=threshold,
                    precision=prec, accuracy=acc, memory_bytes=mem))
    assert model.config is published, "analysis must not republish config"
    return records


def write_records_csv(records: Iterable[SensitivityRecord],
                      path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for r in records:
            writer.writerow([
                r.layer_id, repr(r.sparsity_level), repr(r.threshold),
                r.precision.bits, r.precision.kind,
                repr(r.accuracy), r.memory_bytes,
            ])


def _precision_from_csv(bits: str, kind: str) -> Precision:
    for p in Precision:
        if p.bits == int(bits) and p.kind == kind:
            return p
    raise InvalidInputError(f"no precision with bits={bits} kind={kind!r}")


def read_records_csv(path: str | Path) -> list[SensitivityRecord]:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"sensitivity table not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise InvalidInputError(
                f"{path}: unexpected header {header!r}")
        records = []
        for row in reader:
            if len(row) != len(_CSV_HEADER):
                raise InvalidInputError(f"{path}: malformed row {row!r}")
            records.append(SensitivityRecord(
                layer_id=row[0],
                sparsity_level=float(row[1]),
                threshold=float(row[2]),
                precision=_precision_from_csv(row[3], row[4]),
                accuracy=float(row[5]),
                memory_bytes=int(row[6]),
            ))
    return records
