"""Threshold-shifted ReLU and the sparsity-level -> threshold calibration.

The activation computes y = x - T when x > T, else 0. Raising T zeroes a
growing share of outputs; calibration records the pre-activation value
distribution per layer so an abstract sparsity level s in [0,1] can be
turned into the concrete threshold that zeroes that extra fraction.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "aa_relu",
    "CalibrationProfile",
    "calibrate",
    "calibrate_all",
    "threshold_for_sparsity",
]

DEFAULT_SAMPLE_CAP = 1_000_000
DEFAULT_MIN_SAMPLES = 1000
QUANTILE_GRID_POINTS = 1001


def aa_relu(x, threshold: float):
    """Shifted ReLU: x - T for x > T, else 0. Scalar or ndarray."""
    if threshold < 0:
        raise InvalidInputError(f"threshold must be >= 0, got {threshold}")
    arr = np.asarray(x, dtype=np.float64)
    out = np.where(arr > threshold, arr - threshold, 0.0)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


@dataclass(frozen=True)
class CalibrationProfile:
    """Sorted sample of a layer's pre-activation values.

    `baseline_zero_fraction` is the share the plain ReLU already zeroes
    (values <= 0); requested sparsity is measured on top of it.
    """

    layer_id: str
    samples: np.ndarray          # sorted ascending, float64
    sample_count: int            # observed before any subsampling
    baseline_zero_fraction: float

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.size < 1:
            raise InvalidInputError("calibration profile needs at least one sample")
        arr = np.sort(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def quantiles(self, points: int = QUANTILE_GRID_POINTS) -> np.ndarray:
        q = np.linspace(0.0, 1.0, points)
        return np.quantile(self.samples, q)

    def to_json_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "quantiles": [float(v) for v in self.quantiles()],
            "baseline_zero_fraction": self.baseline_zero_fraction,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CalibrationProfile":
        return cls(
            layer_id=doc["layer_id"],
            samples=np.asarray(doc["quantiles"], dtype=np.float64),
            sample_count=int(doc["sample_count"]),
            baseline_zero_fraction=float(doc["baseline_zero_fraction"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationProfile":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _profile_from_values(layer_id: str, values: np.ndarray, *,
                         sample_cap: int, min_samples: int,
                         seed: int) -> CalibrationProfile:
    flat = np.asarray(values, dtype=np.float64).ravel()
    observed = int(flat.size)
    if observed == 0:
        raise InvalidInputError(f"calibration for {layer_id}: no samples collected")
    if observed < min_samples:
        warnings.warn(
            f"calibration profile for {layer_id} is degenerate: "
            f"{observed} samples (< {min_samples})", RuntimeWarning)
    zero_fraction = float(np.count_nonzero(flat <= 0.0)) / observed
    if observed > sample_cap:
        rng = np.random.default_rng(seed)
        flat = rng.choice(flat, size=sample_cap, replace=False)
    return CalibrationProfile(
        layer_id=layer_id,
        samples=flat,
        sample_count=observed,
        baseline_zero_fraction=zero_fraction,
    )


def calibrate_all(model, dataset, *, sample_cap: int = DEFAULT_SAMPLE_CAP,
                  min_samples: int = DEFAULT_MIN_SAMPLES,
                  seed: int = 0) -> dict[str, CalibrationProfile]:
    """Profile every activation layer in one pass over the dataset.

    Runs the model in its baseline configuration and captures the input
    (the pre-activation x) of each activation layer.
    """
    from .graph import baseline_config, forward_batch  # local import: graph imports us

    if dataset.images.shape[0] == 0:
        raise InvalidInputError("calibration dataset is empty")
    act_ids = [layer.id for layer in model.layers if layer.kind == "aa_relu"]
    if not act_ids:
        raise InvalidInputError("model has no activation layers to calibrate")
    _, captured = forward_batch(model, dataset.images, baseline_config(model),
                                capture_inputs_of=set(act_ids))
    return {
        lid: _profile_from_values(lid, captured[lid], sample_cap=sample_cap,
                                  min_samples=min_samples, seed=seed)
        for lid in act_ids
    }


def calibrate(model, dataset, layer_id: str, *,
              sample_cap: int = DEFAULT_SAMPLE_CAP,
              min_samples: int = DEFAULT_MIN_SAMPLES,
              seed: int = 0) -> CalibrationProfile:
    """Profile one activation layer's pre-activation distribution."""
    layer = next((l for l in model.layers if l.id == layer_id), None)
    if layer is None:
        raise InvalidInputError(f"layer {layer_id!r} not found")
    if layer.kind != "aa_relu":
        raise InvalidInputError(f"layer {layer_id!r} is {layer.kind}, not an activation")
    profiles = calibrate_all(model, dataset, sample_cap=sample_cap,
                             min_samples=min_samples, seed=seed)
    return profiles[layer_id]


def threshold_for_sparsity(profile: CalibrationProfile, s: float) -> float:
    """Smallest threshold T >= 0 that zeroes fraction s of the values the
    baseline ReLU keeps.

    Targets cumulative fraction z0 + s*(1-z0) of the profile samples at or
    below T; s=0 gives T=0, s=1 gives the sample maximum.
    """
    if not (0.0 <= s <= 1.0):
        raise InvalidInputError(f"sparsity level must be in [0,1], got {s}")
    if s == 0.0:
        return 0.0
    samples = profile.samples
    n = samples.size
    z0 = profile.baseline_zero_fraction
    target = z0 + s * (1.0 - z0)
    k = int(np.ceil(target * n))
    k = min(max(k, 1), n)
    return float(max(samples[k - 1], 0.0))
