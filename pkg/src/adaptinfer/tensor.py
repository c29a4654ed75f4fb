"""Dense tensors, storage precisions, and simulated precision casts.

Values always compute in float64 ("working precision"); a cast is a
round-trip through the target format. The storage precision only matters
for memory accounting -- nothing here packs bits.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, NumericError

__all__ = [
    "Precision",
    "QuantParams",
    "Tensor",
    "cast",
    "cast_array",
    "derive_quant_params",
    "measure_sparsity",
    "histogram",
    "read_aat",
    "write_aat",
]

# FP16 / FP8-E4M3 saturation points (largest finite magnitude; casts
# saturate instead of producing inf).
_FP16_MAX = 65504.0
_FP8_MAX = 448.0
_FP8_MIN_NORMAL_EXP = -6  # below this the E4M3 grid is subnormal
_FP8_MANTISSA_BITS = 3


class Precision(enum.Enum):
    """Activation storage formats supported by the cast operator."""

    FP32 = ("fp32", 32, "float")
    FP16 = ("fp16", 16, "float")
    FP8 = ("fp8", 8, "float")
    INT4 = ("int4", 4, "integer")
    INT2 = ("int2", 2, "integer")

    def __init__(self, label: str, bits: int, kind: str):
        self.label = label
        self.bits = bits
        self.kind = kind

    @property
    def is_integer(self) -> bool:
        return self.kind == "integer"

    @property
    def max_level(self) -> int:
        """Largest integer level for integer formats: 2^(b-1) - 1."""
        if not self.is_integer:
            raise ValueError(f"{self.label} has no integer level range")
        return 2 ** (self.bits - 1) - 1

    @classmethod
    def parse(cls, text: str) -> "Precision":
        key = text.strip().lower()
        for p in cls:
            if p.label == key or p.name.lower() == key:
                return p
        raise InvalidInputError(f"unknown precision {text!r}; expected one of "
                                + ", ".join(p.label for p in cls))

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.label


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor symmetric quantization parameters.

    Levels span [-(2^(b-1)-1), +(2^(b-1)-1)]; there is no zero-point, so
    zero always maps to zero and existing sparsity survives quantization.
    """

    scale: float
    bits: int

    def __post_init__(self):
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise InvalidInputError(f"scale must be positive and finite, got {self.scale}")
        if self.bits not in (4, 2):
            raise InvalidInputError(f"integer formats are 4- or 2-bit, got {self.bits}")

    @property
    def max_level(self) -> int:
        return 2 ** (self.bits - 1) - 1


@dataclass(frozen=True)
class Tensor:
    """Immutable dense array plus the precision its values logically occupy.

    `data` is kept in float64 regardless of storage precision; integer-
    quantized tensors hold the dequantized values q*scale.
    """

    data: np.ndarray
    storage_precision: Precision = Precision.FP32
    scale: float | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what}: non-finite values present")


def derive_quant_params(values: np.ndarray, precision: Precision) -> QuantParams:
    """Max-abs scale for a symmetric integer format.

    An all-zero tensor has no usable range; per the cast contract it gets
    scale 1.0, which makes the round-trip the identity.
    """
    amax = float(np.max(np.abs(values))) if values.size else 0.0
    if amax == 0.0:
        return QuantParams(scale=1.0, bits=precision.bits)
    return QuantParams(scale=amax / precision.max_level, bits=precision.bits)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _int_roundtrip(values: np.ndarray, qp: QuantParams) -> np.ndarray:
    levels = _round_half_away(values / qp.scale)
    levels = np.clip(levels, -qp.max_level, qp.max_level)
    return levels * qp.scale + 0.0  # normalize -0.0


def _fp16_roundtrip(values: np.ndarray) -> np.ndarray:
    clipped = np.clip(values, -_FP16_MAX, _FP16_MAX)
    return clipped.astype(np.float16).astype(np.float64)


def _fp8_roundtrip(values: np.ndarray) -> np.ndarray:
    """Round-trip through an E4M3-style 8-bit float (saturating).

    1 sign / 4 exponent / 3 mantissa bits, exponent bias 7, subnormals at
    2^-9 granularity, max finite 448. Rounds half to even like the IEEE
    formats it imitates.
    """
    out = np.zeros_like(values, dtype=np.float64)
    mag = np.abs(values)
    nonzero = mag > 0.0
    if not np.any(nonzero):
        return out
    a = np.minimum(mag[nonzero], _FP8_MAX)
    exp = np.floor(np.log2(a))
    exp = np.maximum(exp, _FP8_MIN_NORMAL_EXP)
    quantum = np.exp2(exp - _FP8_MANTISSA_BITS)
    snapped = np.rint(a / quantum) * quantum
    out[nonzero] = np.sign(values[nonzero]) * np.minimum(snapped, _FP8_MAX)
    return out


def cast_array(values: np.ndarray, precision: Precision,
               qp: QuantParams | None = None) -> np.ndarray:
    """Array-level cast used by the graph executor (batch-friendly)."""
    if precision is Precision.FP32:
        return np.asarray(values, dtype=np.float64)
    if precision is Precision.FP16:
        return _fp16_roundtrip(values)
    if precision is Precision.FP8:
        return _fp8_roundtrip(values)
    if qp is None:
        qp = derive_quant_params(values, precision)
    elif qp.bits != precision.bits:
        raise InvalidInputError(f"quant params are {qp.bits}-bit but target is {precision.label}")
    return _int_roundtrip(np.asarray(values, dtype=np.float64), qp)


def cast(t: Tensor, precision: Precision, qp: QuantParams | None = None) -> Tensor:
    """Round-trip a tensor through `precision` (quantize, dequantize).

    Integer formats need quant params; omitted, they derive from the
    tensor's max-abs. Casting to FP32 is the identity.
    """
    _require_finite(t.data, "cast")
    if precision is Precision.FP32:
        return Tensor(t.data, Precision.FP32, None)
    if precision.is_integer and qp is None:
        qp = derive_quant_params(t.data, precision)
    out = cast_array(t.data, precision, qp)
    return Tensor(out, precision, qp.scale if qp is not None else None)


def measure_sparsity(t: Tensor) -> float:
    """Fraction of elements exactly equal to zero."""
    if t.size == 0:
        raise InvalidInputError("measure_sparsity: empty tensor")
    return float(np.count_nonzero(t.data == 0.0)) / t.size


def histogram(t: Tensor, n_bins: int) -> list[tuple[tuple[float, float], int]]:
    """Counts per bin with a dedicated zero bin first.

    Zeros get their own (0.0, 0.0) bin; the remaining values fall into
    `n_bins` equal-width bins spanning their min..max (rightmost edge
    inclusive). Counts always sum to the element count.
    """
    if n_bins < 1:
        raise InvalidInputError("histogram: n_bins must be >= 1")
    _require_finite(t.data, "histogram")
    flat = t.data.ravel()
    zeros = int(np.count_nonzero(flat == 0.0))
    bins: list[tuple[tuple[float, float], int]] = [((0.0, 0.0), zeros)]
    rest = flat[flat != 0.0]
    if rest.size == 0:
        return bins
    lo, hi = float(rest.min()), float(rest.max())
    if lo == hi:
        bins.append(((lo, hi), int(rest.size)))
        return bins
    counts, edges = np.histogram(rest, bins=n_bins, range=(lo, hi))
    for i, c in enumerate(counts):
        bins.append(((float(edges[i]), float(edges[i + 1])), int(c)))
    return bins


# --- .aat binary tensor files -------------------------------------------
#
# magic "AAT1" | u32le rank | rank x u32le dims | u8 dtype (0 = FP32) | payload

_AAT_MAGIC = b"AAT1"
_DTYPE_FP32 = 0


def write_aat(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_AAT_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("B", _DTYPE_FP32))
        fh.write(arr.tobytes())


def read_aat(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"tensor file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != _AAT_MAGIC:
        raise InvalidInputError(f"{path}: not an .aat file (bad magic)")
    (rank,) = struct.unpack_from("<I", raw, 4)
    if rank > 8:
        raise InvalidInputError(f"{path}: implausible rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    off = 8 + 4 * rank
    dtype_code = raw[off]
    if dtype_code != _DTYPE_FP32:
        raise InvalidInputError(f"{path}: unsupported dtype code {dtype_code}")
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = raw[off + 1:]
    if len(payload) != 4 * count:
        raise InvalidInputError(
            f"{path}: payload holds {len(payload) // 4} float32s, header promises {count}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
