"""Source architectures the exporter knows how to build from a checkpoint.

A checkpoint is a torch.save'd dict {arch, state_dict, input_shape,
class_count}; ``build`` reconstructs the module so the state dict can be
loaded strictly.
"""

from __future__ import annotations

from collections import OrderedDict

import torch
from torch import nn

__all__ = ["ARCHS", "build", "save_checkpoint"]


def _tinycnn() -> nn.Sequential:
    return nn.Sequential(OrderedDict([
        ("conv1", nn.Conv2d(1, 8, 3, padding=1)),
        ("bn1", nn.BatchNorm2d(8)),
        ("relu1", nn.ReLU()),
        ("conv2", nn.Conv2d(8, 16, 3, stride=2, padding=1)),
        ("bn2", nn.BatchNorm2d(16)),
        ("relu2", nn.ReLU()),
        ("pool1", nn.MaxPool2d(2, 2)),
        ("dw3", nn.Conv2d(16, 16, 3, padding=1, groups=16)),
        ("bn3", nn.BatchNorm2d(16)),
        ("relu3", nn.ReLU()),
        ("pw4", nn.Conv2d(16, 16, 1)),
        ("bn4", nn.BatchNorm2d(16)),
        ("relu4", nn.ReLU()),
        ("gap", nn.AdaptiveAvgPool2d(1)),
        ("flatten", nn.Flatten()),
        ("fc", nn.Linear(16, 4)),
        ("probs", nn.Softmax(dim=1)),
    ]))


def _identity4() -> nn.Sequential:
    fc = nn.Linear(4, 4, bias=False)
    with torch.no_grad():
        fc.weight.copy_(torch.eye(4))
    return nn.Sequential(OrderedDict([
        ("flatten", nn.Flatten()),
        ("fc", fc),
    ]))


def _tinyattn() -> nn.Sequential:
    return nn.Sequential(OrderedDict([
        ("flatten", nn.Flatten()),
        ("attn", nn.MultiheadAttention(embed_dim=4, num_heads=1)),
    ]))


# arch name -> (builder, input_shape CHW, class_count)
ARCHS = {
    "tinycnn": (_tinycnn, (1, 32, 32), 4),
    "identity4": (_identity4, (4, 1, 1), 4),
    "tinyattn": (_tinyattn, (4, 1, 1), 4),
}


def build(arch: str) -> nn.Sequential:
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}; "
                         f"known: {', '.join(sorted(ARCHS))}")
    return ARCHS[arch][0]()


def save_checkpoint(model: nn.Module, arch: str, path) -> None:
    _, input_shape, class_count = ARCHS[arch]
    torch.save({
        "arch": arch,
        "state_dict": model.state_dict(),
        "input_shape": list(input_shape),
        "class_count": class_count,
    }, path)
