"""Model graph: layer specs, manifest loading, shape inference, forward pass.

Layers form a linear list; each consumes the previous layer's output unless
it names another upstream layer via ``input``. A conv layer may fuse a
residual merge by naming an earlier layer in ``geometry["add_input"]``.

Compute runs in float64 throughout. Reduced-precision activations are
simulated: the activation output is cast (round-tripped) to the configured
format, then handed downstream as float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .activation import aa_relu
from .errors import InvalidInputError, NumericError
from .tensor import Precision, cast_array, read_aat, write_aat

__all__ = [
    "WeightRef",
    "LayerSpec",
    "LayerRuntimeConfig",
    "Model",
    "Dataset",
    "load_model",
    "model_from_manifest",
    "baseline_config",
    "forward_batch",
    "infer",
    "evaluate_accuracy",
    "infer_shapes",
    "layer_param_count",
    "layer_macs",
]

INPUT_ID = "__input__"

LAYER_KINDS = (
    "conv2d", "depthwise_conv2d", "dense",
    "maxpool", "avgpool", "flatten", "softmax", "aa_relu",
)


@dataclass(frozen=True)
class WeightRef:
    """Slice of the model weights blob, in float32 element units."""

    offset: int
    length: int

    def __post_init__(self):
        if self.offset < 0 or self.length < 0:
            raise InvalidInputError("weight_ref offset/length must be >= 0")


_REQUIRED_GEOMETRY = {
    "conv2d": ("in_channels", "out_channels", "kernel"),
    "depthwise_conv2d": ("channels", "kernel"),
    "dense": ("in_features", "out_features"),
    "maxpool": ("kernel",),
}


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    geometry: Mapping
    weight_ref: WeightRef | None = None
    input: str | None = None  # defaults to the previous layer

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidInputError(f"layer {self.id}: unknown kind {self.kind!r}")
        object.__setattr__(self, "geometry", MappingProxyType(dict(self.geometry)))
        required = _REQUIRED_GEOMETRY.get(self.kind, ())
        if self.kind == "avgpool" and not self.geometry.get("global"):
            required = ("kernel",)
        missing = [k for k in required if k not in self.geometry]
        if missing:
            raise InvalidInputError(
                f"layer {self.id}: geometry missing {', '.join(missing)}")

    @property
    def has_bias(self) -> bool:
        return bool(self.geometry.get("bias", True))


@dataclass(frozen=True)
class LayerRuntimeConfig:
    """Per-activation runtime knobs.

    ``sparsity_level`` is the abstract level that produced ``threshold``;
    it annotates the config for reporting and does not affect compute.
    """

    threshold: float = 0.0
    precision: Precision = Precision.FP32
    sparsity_level: float = 0.0

    def __post_init__(self):
        if self.threshold < 0:
            raise InvalidInputError("threshold must be >= 0")
        if not (0.0 <= self.sparsity_level <= 1.0):
            raise InvalidInputError("sparsity_level must be in [0,1]")


def _expected_weight_count(layer: LayerSpec) -> int:
    g = layer.geometry
    if layer.kind == "conv2d":
        n = g["out_channels"] * g["in_channels"] * g["kernel"] ** 2
        return n + (g["out_channels"] if layer.has_bias else 0)
    if layer.kind == "depthwise_conv2d":
        n = g["channels"] * g["kernel"] ** 2
        return n + (g["channels"] if layer.has_bias else 0)
    if layer.kind == "dense":
        n = g["in_features"] * g["out_features"]
        return n + (g["out_features"] if layer.has_bias else 0)
    return 0


def layer_param_count(layer: LayerSpec) -> int:
    """Number of learned parameters (weights plus bias) in the layer."""
    return _expected_weight_count(layer)


class Model:
    """A loaded model: immutable topology plus a swappable runtime config.

    The runtime config is published as an immutable snapshot through a
    single attribute assignment, so concurrent readers see either the old
    or the new config, never a mix. ``eval_passes`` counts full-dataset
    evaluation passes, which lets callers assert planning paths that must
    reuse cached measurements.
    """

    def __init__(self, name: str, input_shape: tuple[int, ...], class_count: int,
                 layers: list[LayerSpec], weights: np.ndarray | None = None):
        if len(input_shape) != 3:
            raise InvalidInputError(f"input_shape must be (C,H,W), got {input_shape}")
        if class_count < 1:
            raise InvalidInputError("class_count must be >= 1")
        if not layers:
            raise InvalidInputError("model has no layers")
        seen: set[str] = set()
        for layer in layers:
            if layer.id in seen:
                raise InvalidInputError(f"duplicate layer id {layer.id!r}")
            seen.add(layer.id)
        self.name = name
        self.input_shape = tuple(int(d) for d in input_shape)
        self.class_count = int(class_count)
        self.layers = tuple(layers)
        self._by_id = {layer.id: layer for layer in self.layers}
        self._weights = None if weights is None else np.asarray(weights, dtype=np.float64)
        self._layer_weights = self._resolve_weights() if weights is not None else {}
        self._config: Mapping[str, LayerRuntimeConfig] = baseline_config(self)
        self.eval_passes = 0
        self._shapes = infer_shapes(self)

    def _resolve_weights(self) -> dict[str, tuple[np.ndarray, np.ndarray | None]]:
        resolved = {}
        total = self._weights.size
        for layer in self.layers:
            expected = _expected_weight_count(layer)
            if expected == 0:
                if layer.weight_ref is not None:
                    raise InvalidInputError(
                        f"layer {layer.id}: kind {layer.kind} takes no weights")
                continue
            ref = layer.weight_ref
            if ref is None:
                raise InvalidInputError(f"layer {layer.id}: missing weight_ref")
            if ref.length != expected:
                raise InvalidInputError(
                    f"layer {layer.id}: weight_ref length {ref.length} != "
                    f"expected {expected}")
            if ref.offset + ref.length > total:
                raise InvalidInputError(
                    f"layer {layer.id}: weight_ref exceeds weights blob "
                    f"({ref.offset}+{ref.length} > {total})")
            flat = self._weights[ref.offset:ref.offset + ref.length]
            g = layer.geometry
            if layer.kind == "conv2d":
                o, c, k = g["out_channels"], g["in_channels"], g["kernel"]
                n = o * c * k * k
                w = flat[:n].reshape(o, c, k, k)
            elif layer.kind == "depthwise_conv2d":
                c, k = g["channels"], g["kernel"]
                n = c * k * k
                w = flat[:n].reshape(c, k, k)
            else:  # dense
                o, i = g["out_features"], g["in_features"]
                n = o * i
                w = flat[:n].reshape(o, i)
            b = flat[n:] if layer.has_bias else None
            resolved[layer.id] = (w, b)
        return resolved

    @property
    def has_weights(self) -> bool:
        return self._weights is not None

    def layer(self, layer_id: str) -> LayerSpec:
        try:
            return self._by_id[layer_id]
        except KeyError:
            raise InvalidInputError(f"layer {layer_id!r} not found") from None

    def layer_weights(self, layer_id: str) -> tuple[np.ndarray, np.ndarray | None]:
        if not self.has_weights:
            raise InvalidInputError(
                f"model {self.name!r} was loaded without weights")
        return self._layer_weights[self.layer(layer_id).id]

    @property
    def activation_layers(self) -> tuple[LayerSpec, ...]:
        return tuple(l for l in self.layers if l.kind == "aa_relu")

    @property
    def output_shapes(self) -> Mapping[str, tuple[int, ...]]:
        return self._shapes

    @property
    def config(self) -> Mapping[str, LayerRuntimeConfig]:
        return self._config

    def publish_config(self, config: Mapping[str, LayerRuntimeConfig]) -> None:
        """Swap in a new runtime config atomically."""
        for lid, entry in config.items():
            if self.layer(lid).kind != "aa_relu":
                raise InvalidInputError(
                    f"layer {lid!r} is not an activation, cannot configure")
            if not isinstance(entry, LayerRuntimeConfig):
                raise InvalidInputError(f"layer {lid!r}: bad config entry {entry!r}")
        snapshot = MappingProxyType(dict(config))
        self._config = snapshot  # single assignment: atomic publish


def baseline_config(model: Model) -> Mapping[str, LayerRuntimeConfig]:
    """All activations at threshold 0, FP32."""
    return MappingProxyType(
        {l.id: LayerRuntimeConfig() for l in model.layers if l.kind == "aa_relu"})


def _layer_out_shape(layer: LayerSpec, in_shape: tuple[int, ...],
                     shapes: dict[str, tuple[int, ...]]) -> tuple[int, ...]:
    g = layer.geometry
    kind = layer.kind
    if kind in ("conv2d", "depthwise_conv2d"):
        if len(in_shape) != 3:
            raise InvalidInputError(f"layer {layer.id}: expects (C,H,W) input")
        c, h, w = in_shape
        k, s, p = g["kernel"], g.get("stride", 1), g.get("padding", 0)
        if kind == "conv2d":
            if c != g["in_channels"]:
                raise InvalidInputError(
                    f"layer {layer.id}: input has {c} channels, "
                    f"geometry says {g['in_channels']}")
            out_c = g["out_channels"]
        else:
            if c != g["channels"]:
                raise InvalidInputError(
                    f"layer {layer.id}: input has {c} channels, "
                    f"geometry says {g['channels']}")
            out_c = c
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        if oh < 1 or ow < 1:
            raise InvalidInputError(f"layer {layer.id}: kernel larger than input")
        out = (out_c, oh, ow)
        add = g.get("add_input")
        if add is not None:
            if add not in shapes:
                raise InvalidInputError(
                    f"layer {layer.id}: add_input {add!r} is not an earlier layer")
            if shapes[add] != out:
                raise InvalidInputError(
                    f"layer {layer.id}: add_input shape {shapes[add]} != {out}")
        return out
    if kind in ("maxpool", "avgpool"):
        if len(in_shape) != 3:
            raise InvalidInputError(f"layer {layer.id}: expects (C,H,W) input")
        c, h, w = in_shape
        if g.get("global"):
            return (c, 1, 1)
        k, s, p = g["kernel"], g.get("stride", g["kernel"]), g.get("padding", 0)
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        if oh < 1 or ow < 1:
            raise InvalidInputError(f"layer {layer.id}: pool window larger than input")
        return (c, oh, ow)
    if kind == "dense":
        if len(in_shape) != 1:
            raise InvalidInputError(
                f"layer {layer.id}: dense expects flat input, got {in_shape}")
        if in_shape[0] != g["in_features"]:
            raise InvalidInputError(
                f"layer {layer.id}: input has {in_shape[0]} features, "
                f"geometry says {g['in_features']}")
        return (g["out_features"],)
    if kind == "flatten":
        return (int(np.prod(in_shape)),)
    # softmax, aa_relu: shape-preserving
    return in_shape


def infer_shapes(model: Model) -> dict[str, tuple[int, ...]]:
    """Per-layer output shapes (single sample, no batch dim)."""
    shapes: dict[str, tuple[int, ...]] = {INPUT_ID: model.input_shape}
    prev = INPUT_ID
    for layer in model.layers:
        src = layer.input or prev
        if src not in shapes:
            raise InvalidInputError(
                f"layer {layer.id}: input {src!r} is not an earlier layer")
        shapes[layer.id] = _layer_out_shape(layer, shapes[src], shapes)
        prev = layer.id
    last = model.layers[-1]
    if shapes[last.id] != (model.class_count,):
        raise InvalidInputError(
            f"final layer {last.id} produces shape {shapes[last.id]}, "
            f"expected ({model.class_count},)")
    return shapes


def layer_macs(layer: LayerSpec, shapes: Mapping[str, tuple[int, ...]]) -> int:
    """Multiply-accumulate count for one sample. Pools, reshapes,
    activations and merges count as zero."""
    g = layer.geometry
    out = shapes[layer.id]
    if layer.kind == "conv2d":
        return int(np.prod(out)) * g["in_channels"] * g["kernel"] ** 2
    if layer.kind == "depthwise_conv2d":
        return int(np.prod(out)) * g["kernel"] ** 2
    if layer.kind == "dense":
        return g["in_features"] * g["out_features"]
    return 0


def _windows(x: np.ndarray, k: int, s: int, p: int) -> np.ndarray:
    """(N,C,H,W) -> strided windows (N,C,Ho,Wo,k,k)."""
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::s, ::s]


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
            stride: int, padding: int) -> np.ndarray:
    win = _windows(x, w.shape[-1], stride, padding)
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, -1)
    y = cols @ w.reshape(w.shape[0], -1).T
    y = y.transpose(0, 3, 1, 2)
    if b is not None:
        y = y + b[None, :, None, None]
    return y

def _depthwise_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                      stride: int, padding: int) -> np.ndarray:
    win = _windows(x, w.shape[-1], stride, padding)
    y = np.einsum("nchwij,cij->nchw", win, w, optimize=True)
    if b is not None:
        y = y + b[None, :, None, None]
    return y


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _cast_activation(y: np.ndarray, precision: Precision) -> np.ndarray:
    if precision is Precision.FP32:
        return y
    if precision.is_integer:
        # Per-sample scales so batched inference matches one-at-a-time.
        out = np.empty_like(y)
        for i in range(y.shape[0]):
            out[i] = cast_array(y[i], precision)
        return out
    return cast_array(y, precision)


def forward_batch(model: Model, images: np.ndarray,
                  config: Mapping[str, LayerRuntimeConfig] | None = None,
                  capture_inputs_of: set[str] | None = None,
                  ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Run a batch through the model; returns (final output, captured inputs).

    ``capture_inputs_of`` collects the input arrays of the named layers,
    which calibration uses to sample pre-activation distributions.
    """
    if not model.has_weights:
        raise InvalidInputError(f"model {model.name!r} was loaded without weights")
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != model.input_shape:
        raise InvalidInputError(
            f"input batch must be (N,{','.join(map(str, model.input_shape))}), "
            f"got {x.shape}")
    cfg = model.config if config is None else config
    captured: dict[str, np.ndarray] = {}
    outputs: dict[str, np.ndarray] = {INPUT_ID: x}
    prev = INPUT_ID
    for layer in model.layers:
        src = layer.input or prev
        x_in = outputs[src]
        if capture_inputs_of and layer.id in capture_inputs_of:
            captured[layer.id] = x_in
        g = layer.geometry
        kind = layer.kind
        if kind == "conv2d":
            w, b = model.layer_weights(layer.id)
            y = _conv2d(x_in, w, b, g.get("stride", 1), g.get("padding", 0))
            add = g.get("add_input")
            if add is not None:
                y = y + outputs[add]
        elif kind == "depthwise_conv2d":
            w, b = model.layer_weights(layer.id)
            y = _depthwise_conv2d(x_in, w, b, g.get("stride", 1), g.get("padding", 0))
        elif kind == "dense":
            w, b = model.layer_weights(layer.id)
            y = x_in @ w.T
            if b is not None:
                y = y + b
        elif kind == "maxpool":
            p = g.get("padding", 0)
            if p:
                x_in = np.pad(x_in, ((0, 0), (0, 0), (p, p), (p, p)),
                              constant_values=-np.inf)
            y = _windows(x_in, g["kernel"], g.get("stride", g["kernel"]), 0).max(axis=(4, 5))
        elif kind == "avgpool":
            if g.get("global"):
                y = x_in.mean(axis=(2, 3), keepdims=True)
            else:
                y = _windows(x_in, g["kernel"], g.get("stride", g["kernel"]),
                             g.get("padding", 0)).mean(axis=(4, 5))
        elif kind == "flatten":
            y = x_in.reshape(x_in.shape[0], -1)
        elif kind == "softmax":
            y = _softmax(x_in)
        else:  # aa_relu
            entry = cfg.get(layer.id, LayerRuntimeConfig())
            y = aa_relu(x_in, entry.threshold)
            y = _cast_activation(y, entry.precision)
        if not np.all(np.isfinite(y)):
            raise NumericError(f"layer {layer.id}: non-finite values in output")
        outputs[layer.id] = y
        prev = layer.id
    return outputs[model.layers[-1].id], captured


def infer(model: Model, images: np.ndarray,
          config: Mapping[str, LayerRuntimeConfig] | None = None) -> np.ndarray:
    """Class scores for a batch (output of the final layer)."""
    out, _ = forward_batch(model, images, config)
    return out


def evaluate_accuracy(model: Model, dataset: "Dataset",
                      config: Mapping[str, LayerRuntimeConfig] | None = None,
                      *, batch_size: int = 64, subset: int | None = None) -> float:
    """Top-1 accuracy over the dataset (or its first ``subset`` samples)."""
    images, labels = dataset.images, dataset.labels
    if subset is not None:
        if subset < 1:
            raise InvalidInputError(f"subset must be >= 1, got {subset}")
        images, labels = images[:subset], labels[:subset]
    n = images.shape[0]
    if n == 0:
        raise InvalidInputError("evaluation dataset is empty")
    correct = 0
    for start in range(0, n, batch_size):
        out, _ = forward_batch(model, images[start:start + batch_size], config)
        correct += int(np.count_nonzero(
            out.argmax(axis=1) == labels[start:start + batch_size]))
    model.eval_passes += 1
    return correct / n


@dataclass
class Dataset:
    """Images (N,C,H,W) with integer class labels, stored as a tensor file
    plus a ``<stem>.labels.json`` sidecar."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise InvalidInputError(
                f"dataset images must be (N,C,H,W), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise InvalidInputError(
                f"dataset has {self.images.shape[0]} images but "
                f"{self.labels.shape[0] if self.labels.ndim == 1 else 'malformed'} labels")

    def __len__(self) -> int:
        return self.images.shape[0]

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        path = Path(path)
        images = read_aat(path)
        labels_path = path.with_name(path.stem + ".labels.json")
        if not labels_path.exists():
            raise InvalidInputError(f"missing labels sidecar {labels_path}")
        labels = json.loads(labels_path.read_text())
        return cls(images=images, labels=np.asarray(labels, dtype=np.int64))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        write_aat(path, self.images)
        labels_path = path.with_name(path.stem + ".labels.json")
        labels_path.write_text(json.dumps([int(v) for v in self.labels]) + "\n")


def _parse_layer(doc: dict, index: int) -> LayerSpec:
    if "id" not in doc or "kind" not in doc:
        raise InvalidInputError(f"layer #{index}: missing id or kind")
    ref = doc.get("weight_ref")
    if ref is not None:
        try:
            ref = WeightRef(offset=int(ref["offset"]), length=int(ref["length"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(
                f"layer {doc['id']}: malformed weight_ref: {exc}") from None
    try:
        return LayerSpec(
            id=str(doc["id"]),
            kind=str(doc["kind"]),
            geometry=doc.get("geometry", {}),
            weight_ref=ref,
            input=doc.get("input"),
        )
    except KeyError as exc:
        raise InvalidInputError(
            f"layer {doc['id']}: geometry missing key {exc}") from None


def model_from_manifest(doc: dict, weights: np.ndarray | None = None,
                        base_dir: str | Path | None = None) -> Model:
    """Build a model from a manifest dict.

    Weights resolve in order: the ``weights`` argument, then the manifest's
    ``weights_file`` (relative to ``base_dir``), else the model loads
    weight-free (costs and shapes only, no forward pass).
    """
    for key in ("name", "input_shape", "class_count", "layers"):
        if key not in doc:
            raise InvalidInputError(f"manifest missing key {key!r}")
    layers = [_parse_layer(ld, i) for i, ld in enumerate(doc["layers"])]
    if weights is None and doc.get("weights_file"):
        wpath = Path(doc["weights_file"])
        if not wpath.is_absolute():
            wpath = Path(base_dir or ".") / wpath
        if not wpath.exists():
            raise InvalidInputError(f"weights file not found: {wpath}")
        weights = read_aat(wpath)
    try:
        input_shape = tuple(int(d) for d in doc["input_shape"])
    except (TypeError, ValueError):
        raise InvalidInputError(
            f"manifest input_shape must be ints, got {doc['input_shape']!r}") from None
    return Model(
        name=str(doc["name"]),
        input_shape=input_shape,
        class_count=int(doc["class_count"]),
        layers=layers,
        weights=weights,
    )


def load_model(path: str | Path) -> Model:
    """Load a model manifest (JSON) and its weights file."""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"model manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"model manifest is not valid JSON: {exc}") from None
    return model_from_manifest(doc, base_dir=path.parent)
