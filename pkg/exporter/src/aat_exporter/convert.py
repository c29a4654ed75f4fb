"""Checkpoint conversion: fold batch-norm, lay out the weight blob, emit the
manifest, and verify the export against the source module on a probe batch.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .aat import write_aat
from .models import ARCHS, build
from .reference import forward_manifest

__all__ = [
    "ExportError",
    "ExportReport",
    "load_checkpoint",
    "fold_and_convert",
    "export_model",
    "export_dataset",
    "export_goldens",
]

PROBE_TOLERANCE = 1e-5


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class ExportReport:
    source_model: str
    layer_map: tuple[dict, ...]
    folded_batchnorm_count: int
    weights_sha256: str
    golden_logits_path: str | None
    probe_max_abs_diff: float
    probe_count: int

    def to_json_dict(self) -> dict:
        return {
            "source_model": self.source_model,
            "layer_map": list(self.layer_map),
            "folded_batchnorm_count": self.folded_batchnorm_count,
            "weights_sha256": self.weights_sha256,
            "golden_logits_path": self.golden_logits_path,
            "probe_max_abs_diff": self.probe_max_abs_diff,
            "probe_count": self.probe_count,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[nn.Sequential, dict]:
    """Load a checkpoint dict and rebuild its source module in eval mode."""
    path = Path(path)
    if not path.exists():
        raise ExportError(f"checkpoint not found: {path}")
    doc = torch.load(path, map_location="cpu", weights_only=True)
    for key in ("arch", "state_dict", "input_shape", "class_count"):
        if key not in doc:
            raise ExportError(f"{path}: checkpoint missing key {key!r}")
    try:
        model = build(doc["arch"])
    except ValueError as exc:
        raise ExportError(str(exc)) from None
    model.load_state_dict(doc["state_dict"])
    model.eval()
    meta = {
        "arch": doc["arch"],
        "input_shape": tuple(int(d) for d in doc["input_shape"]),
        "class_count": int(doc["class_count"]),
    }
    return model, meta


def _pair(value, what: str, layer: str) -> int:
    """Collapse torch's int-or-pair geometry values to one square int."""
    if isinstance(value, (tuple, list)):
        if value[0] != value[1]:
            raise ExportError(f"layer {layer}: non-square {what} {value}")
        value = value[0]
    return int(value)


def _fold_bn(w: np.ndarray, b: np.ndarray | None,
             bn: nn.BatchNorm2d) -> tuple[np.ndarray, np.ndarray]:
    """Fold y = gamma*(conv(x)-mu)/sigma + beta into the conv weights."""
    gamma = bn.weight.detach().numpy().astype(np.float64)
    beta = bn.bias.detach().numpy().astype(np.float64)
    mu = bn.running_mean.detach().numpy().astype(np.float64)
    sigma = np.sqrt(bn.running_var.detach().numpy().astype(np.float64) + bn.eps)
    scale = gamma / sigma
    if b is None:
        b = np.zeros(w.shape[0], dtype=np.float64)
    return w * scale.reshape(-1, *([1] * (w.ndim - 1))), beta + (b - mu) * scale


@dataclass
class _Converted:
    manifest: dict
    weights: np.ndarray  # float64, element-unit layout
    layer_map: list[dict] = field(default_factory=list)
    folded: int = 0


def _check_supported(modules: list[tuple[str, nn.Module]]) -> None:
    supported = (nn.Conv2d, nn.BatchNorm2d, nn.ReLU, nn.MaxPool2d, nn.AvgPool2d,
                 nn.AdaptiveAvgPool2d, nn.Flatten, nn.Linear, nn.Softmax)
    bad = [f"{name} ({type(mod).__name__})"
           for name, mod in modules if not isinstance(mod, supported)]
    if bad:
        raise ExportError(f"unsupported layer(s): {', '.join(bad)}")


def fold_and_convert(model: nn.Sequential, meta: dict) -> _Converted:
    """Translate a sequential torch module into a manifest + weight blob."""
    modules = list(model.named_children())
    if not modules:
        raise ExportError("source model has no layers")
    _check_supported(modules)

    layers: list[dict] = []
    chunks: list[np.ndarray] = []
    conv = _Converted(manifest={}, weights=np.empty(0))
    offset = 0

    def emit(name: str, kind: str, geometry: dict,
             w: np.ndarray | None = None, b: np.ndarray | None = None) -> None:
        nonlocal offset
        doc = {"id": name, "kind": kind, "geometry": geometry}
        if w is not None:
            flat = [w.reshape(-1)]
            if b is not None:
                flat.append(b.reshape(-1))
            else:
                geometry["bias"] = False
            blob = np.concatenate(flat)
            doc["weight_ref"] = {"offset": offset, "length": int(blob.size)}
            chunks.append(blob)
            offset += int(blob.size)
        layers.append(doc)
        conv.layer_map.append({"source": name, "target": name, "kind": kind})

    def tensor(p) -> np.ndarray | None:
        return None if p is None else p.detach().numpy().astype(np.float64)

    for idx, (name, mod) in enumerate(modules):
        if isinstance(mod, nn.BatchNorm2d):
            prev = layers[-1] if layers else None
            if prev is None or prev["kind"] not in ("conv2d", "depthwise_conv2d"):
                raise ExportError(
                    f"layer {name}: batch-norm without a preceding conv to fold into")
            flat = chunks[-1]
            g = prev["geometry"]
            if prev["kind"] == "conv2d":
                o, c, k = g["out_channels"], g["in_channels"], g["kernel"]
            else:
                o, k = g["channels"], g["kernel"]
                c = 1
            n = o * c * k * k
            w = flat[:n].reshape(o, c, k, k) if prev["kind"] == "conv2d" \
                else flat[:n].reshape(o, k, k)
            b = flat[n:] if g.get("bias", True) else None
            w, b = _fold_bn(w, b, mod)
            g.pop("bias", None)  # folding always produces a bias
            chunks[-1] = np.concatenate([w.reshape(-1), b])
            conv.folded += 1
            conv.layer_map.append(
                {"source": name, "dropped": f"folded into {prev['id']}"})
            continue
        if isinstance(mod, nn.Conv2d):
            k = _pair(mod.kernel_size, "kernel", name)
            stride = _pair(mod.stride, "stride", name)
            padding = _pair(mod.padding, "padding", name)
            if _pair(mod.dilation, "dilation", name) != 1:
                raise ExportError(f"layer {name}: dilation is unsupported")
            if mod.padding_mode != "zeros":
                raise ExportError(
                    f"layer {name}: padding mode {mod.padding_mode!r} is unsupported")
            w = tensor(mod.weight)
            b = tensor(mod.bias)
            if mod.groups == 1:
                emit(name, "conv2d",
                     {"in_channels": mod.in_channels,
                      "out_channels": mod.out_channels, "kernel": k,
                      "stride": stride, "padding": padding}, w, b)
            elif mod.groups == mod.in_channels == mod.out_channels:
                emit(name, "depthwise_conv2d",
                     {"channels": mod.in_channels, "kernel": k,
                      "stride": stride, "padding": padding},
                     w.reshape(mod.in_channels, k, k), b)
            else:
                raise ExportError(
                    f"layer {name}: grouped conv (groups={mod.groups}) is unsupported")
        elif isinstance(mod, nn.Linear):
            emit(name, "dense",
                 {"in_features": mod.in_features, "out_features": mod.out_features},
                 tensor(mod.weight), tensor(mod.bias))
        elif isinstance(mod, nn.ReLU):
            emit(name, "aa_relu", {})
        elif isinstance(mod, nn.MaxPool2d):
            emit(name, "maxpool",
                 {"kernel": _pair(mod.kernel_size, "kernel", name),
                  "stride": _pair(mod.stride or mod.kernel_size, "stride", name),
                  "padding": _pair(mod.padding, "padding", name)})
        elif isinstance(mod, nn.AvgPool2d):
            emit(name, "avgpool",
                 {"kernel": _pair(mod.kernel_size, "kernel", name),
                  "stride": _pair(mod.stride or mod.kernel_size, "stride", name),
                  "padding": _pair(mod.padding, "padding", name)})
        elif isinstance(mod, nn.AdaptiveAvgPool2d):
            size = mod.output_size
            if size not in (1, (1, 1)):
                raise ExportError(
                    f"layer {name}: adaptive pooling to {size} is unsupported")
            emit(name, "avgpool", {"global": True})
        elif isinstance(mod, nn.Flatten):
            emit(name, "flatten", {})
        elif isinstance(mod, nn.Softmax):
            if mod.dim not in (1, -1):
                raise ExportError(
                    f"layer {name}: softmax over dim {mod.dim} is unsupported")
            emit(name, "softmax", {})

    # re-walk refs: folding may have grown a chunk, so offsets are rebuilt
    offset = 0
    chunk_iter = iter(chunks)
    for doc in layers:
        if "weight_ref" in doc:
            blob = next(chunk_iter)
            doc["weight_ref"] = {"offset": offset, "length": int(blob.size)}
            offset += int(blob.size)

    conv.manifest = {
        "name": meta["arch"],
        "input_shape": list(meta["input_shape"]),
        "class_count": meta["class_count"],
        "weights_file": "weights.aat",
        "layers": layers,
    }
    conv.weights = np.concatenate(chunks) if chunks else np.empty(0)
    return conv


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(manifest: dict, path: Path) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def export_model(checkpoint: str | Path, out_dir: str | Path, *,
                 probe: int = 16, seed: int = 0) -> ExportReport:
    """Convert ``checkpoint`` into ``out_dir``/manifest.json + weights.aat.

    The export is verified by running ``probe`` seeded inputs through both
    the source module (float64) and the reference interpreter over the
    emitted manifest; max-abs disagreement above 1e-5 aborts the export.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, meta = load_checkpoint(checkpoint)
    conv = fold_and_convert(model, meta)

    weights_path = write_aat(out_dir / "weights.aat",
                             conv.weights.astype(np.float32))
    _write_manifest(conv.manifest, out_dir / "manifest.json")

    # the blob is compared as written: float32 on disk, like the engine reads it
    stored = conv.weights.astype(np.float32).astype(np.float64)
    diff = 0.0
    if probe > 0:
        rng = np.random.default_rng(seed + 3)
        x = rng.standard_normal((probe, *meta["input_shape"]))
        with torch.no_grad():
            source = model.double()(torch.from_numpy(x)).numpy()
        exported = forward_manifest(conv.manifest, stored, x)
        diff = float(np.max(np.abs(source - exported)))
        if diff > PROBE_TOLERANCE:
            raise ExportError(
                f"round-trip probe disagrees: max-abs diff {diff:.3e} "
                f"> {PROBE_TOLERANCE:.0e}")

    return ExportReport(
        source_model=f"{meta['arch']}:{Path(checkpoint).name}",
        layer_map=tuple(conv.layer_map),
        folded_batchnorm_count=conv.folded,
        weights_sha256=_sha256(weights_path),
        golden_logits_path=None,
        probe_max_abs_diff=diff,
        probe_count=probe,
    )


def export_dataset(images: np.ndarray, labels: np.ndarray,
                   out_dir: str | Path, stem: str) -> dict:
    """Write ``{stem}.aat`` + ``{stem}.labels.json``; returns paths, checksum,
    and the arrays exactly as a reader of the files will see them."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.size == 0 or len(images) == 0:
        raise ExportError("dataset is empty")
    if len(images) != len(labels):
        raise ExportError(
            f"{len(images)} images vs {len(labels)} labels")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images_path = write_aat(out_dir / f"{stem}.aat", images)
    labels_path = out_dir / f"{stem}.labels.json"
    labels_path.write_text(json.dumps([int(l) for l in labels]) + "\n")
    return {
        "images": images_path,
        "labels": labels_path,
        "sha256": _sha256(images_path),
        "stored_images": images.astype(np.float32).astype(np.float64),
    }


def export_goldens(checkpoint: str | Path, dataset: tuple[np.ndarray, np.ndarray],
                   out_dir: str | Path) -> dict:
    """Run the reference forward over ``dataset`` and store golden outputs
    (golden_logits.aat) plus golden.json holding the top-1 accuracy."""
    images, labels = dataset
    if len(images) == 0:
        raise ExportError("dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, meta = load_checkpoint(checkpoint)
    conv = fold_and_convert(model, meta)
    stored = conv.weights.astype(np.float32).astype(np.float64)
    outputs = forward_manifest(conv.manifest, stored, np.asarray(images))
    logits_path = write_aat(out_dir / "golden_logits.aat", outputs)
    accuracy = float(np.mean(outputs.argmax(axis=1) == np.asarray(labels)))
    doc = {"accuracy": accuracy, "logits_file": "golden_logits.aat",
           "sample_count": int(len(images))}
    golden_path = out_dir / "golden.json"
    golden_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return {"logits": logits_path, "summary": golden_path, "accuracy": accuracy}


def with_golden_path(report: ExportReport, path: str) -> ExportReport:
    return replace(report, golden_logits_path=path)
