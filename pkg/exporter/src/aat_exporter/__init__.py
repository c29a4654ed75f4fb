"""Checkpoint exporter: converts trained torch models into the engine's
manifest + ".aat" blob format, folds batch-norm, and emits fixture datasets
and golden reference outputs."""

from .aat import read_aat, write_aat
from .convert import (
    ExportError,
    ExportReport,
    export_dataset,
    export_goldens,
    export_model,
    load_checkpoint,
)
from .data import make_datasets, pattern_dataset

__version__ = "0.1.0"

__all__ = [
    "ExportError",
    "ExportReport",
    "export_dataset",
    "export_goldens",
    "export_model",
    "load_checkpoint",
    "make_datasets",
    "pattern_dataset",
    "read_aat",
    "write_aat",
    "__version__",
]
