"""Builders for reference CNN architectures as weight-free manifests.

These exist for cost analysis (memory, latency proxy): they carry full
geometry but no weights, so the resulting models cannot run a forward
pass. All three assume 3x224x224 inputs and 1000 classes, with batch
normalization folded into the preceding convolution (every conv carries
a bias).
"""

from __future__ import annotations

from .errors import InvalidInputError
from .graph import Model, model_from_manifest

__all__ = ["builtin_names", "builtin_manifest", "builtin_model"]


class _ManifestBuilder:
    def __init__(self, name: str, input_shape, class_count: int):
        self.doc = {
            "name": name,
            "input_shape": list(input_shape),
            "class_count": class_count,
            "layers": [],
        }
        self._counts: dict[str, int] = {}

    def _next(self, prefix: str) -> str:
        self._counts[prefix] = self._counts.get(prefix, 0) + 1
        return f"{prefix}{self._counts[prefix]}"

    def add(self, kind: str, geometry: dict, *, id: str | None = None,
            input: str | None = None) -> str:
        lid = id or self._next(kind.replace("2d", ""))
        layer = {"id": lid, "kind": kind, "geometry": geometry}
        if input is not None:
            layer["input"] = input
        self.doc["layers"].append(layer)
        return lid

    def conv(self, in_c, out_c, kernel, stride=1, padding=0, *,
             id=None, input=None, add_input=None) -> str:
        geo = {"in_channels": in_c, "out_channels": out_c,
               "kernel": kernel, "stride": stride, "padding": padding}
        if add_input is not None:
            geo["add_input"] = add_input
        return self.add("conv2d", geo, id=id, input=input)

    def relu(self, id=None) -> str:
        return self.add("aa_relu", {}, id=id)

    def tail(self, in_features: int, class_count: int) -> None:
        self.add("avgpool", {"global": True}, id="gap")
        self.add("flatten", {}, id="flatten")
        self.add("dense", {"in_features": in_features,
                           "out_features": class_count}, id="fc")
        self.add("softmax", {}, id="softmax")


def vgg16_manifest() -> dict:
    b = _ManifestBuilder("vgg16", (3, 224, 224), 1000)
    in_c = 3
    for out_c in (64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
                  512, 512, 512, "M", 512, 512, 512, "M"):
        if out_c == "M":
            b.add("maxpool", {"kernel": 2, "stride": 2})
        else:
            b.conv(in_c, out_c, 3, padding=1)
            b.relu()
            in_c = out_c
    b.add("flatten", {}, id="flatten")
    b.add("dense", {"in_features": 512 * 7 * 7, "out_features": 4096}, id="fc1")
    b.relu(id="relu_fc1")
    b.add("dense", {"in_features": 4096, "out_features": 4096}, id="fc2")
    b.relu(id="relu_fc2")
    b.add("dense", {"in_features": 4096, "out_features": 1000}, id="fc3")
    b.add("softmax", {}, id="softmax")
    return b.doc


def resnet18_manifest() -> dict:
    b = _ManifestBuilder("resnet18", (3, 224, 224), 1000)
    b.conv(3, 64, 7, stride=2, padding=3, id="conv1")
    b.relu(id="relu1")
    b.add("maxpool", {"kernel": 3, "stride": 2, "padding": 1}, id="pool1")
    prev_out = "pool1"
    in_c = 64
    for stage, (out_c, first_stride) in enumerate(
            [(64, 1), (128, 2), (256, 2), (512, 2)], start=1):
        for block in (1, 2):
            stride = first_stride if block == 1 else 1
            tag = f"s{stage}b{block}"
            block_in = prev_out
            b.conv(in_c, out_c, 3, stride=stride, padding=1,
                   id=f"{tag}_conv_a", input=block_in)
            b.relu(id=f"{tag}_relu_a")
            if stride != 1 or in_c != out_c:
                shortcut = b.conv(in_c, out_c, 1, stride=stride,
                                  id=f"{tag}_down", input=block_in)
            else:
                shortcut = block_in
            b.conv(out_c, out_c, 3, padding=1, id=f"{tag}_conv_b",
                   input=f"{tag}_relu_a", add_input=shortcut)
            prev_out = b.relu(id=f"{tag}_relu_b")
            in_c = out_c
    b.tail(512, 1000)
    return b.doc


def mobilenet_v1_manifest() -> dict:
    b = _ManifestBuilder("mobilenet_v1", (3, 224, 224), 1000)
    b.conv(3, 32, 3, stride=2, padding=1, id="conv1")
    b.relu(id="relu1")
    in_c = 32
    blocks = [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
              (512, 1), (512, 1), (512, 1), (512, 1), (512, 1),
              (1024, 2), (1024, 1)]
    for i, (out_c, stride) in enumerate(blocks, start=1):
        b.add("depthwise_conv2d",
              {"channels": in_c, "kernel": 3, "stride": stride, "padding": 1},
              id=f"dw{i}")
        b.relu(id=f"relu_dw{i}")
        b.conv(in_c, out_c, 1, id=f"pw{i}")
        b.relu(id=f"relu_pw{i}")
        in_c = out_c
    b.tail(1024, 1000)
    return b.doc


_BUILDERS = {
    "vgg16": vgg16_manifest,
    "resnet18": resnet18_manifest,
    "mobilenet_v1": mobilenet_v1_manifest,
}


def builtin_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILDERS))


def builtin_manifest(name: str) -> dict:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise InvalidInputError(
            f"unknown builtin model {name!r}; available: "
            + ", ".join(builtin_names())) from None


def builtin_model(name: str) -> Model:
    """Weight-free model for one of the builtin architectures."""
    return model_from_manifest(builtin_manifest(name))
