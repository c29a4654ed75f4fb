"""Reference forward pass over an exported manifest + weight blob.

This is the exporter-side implementation used to generate golden outputs
and to cross-check exports against the source checkpoint. It interprets
the documented manifest semantics directly (float64 throughout, sequential
layer chaining) and shares no code with the engine.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["forward_manifest"]


def _win(x: np.ndarray, kernel: int, stride: int, padding: int,
         fill: float) -> np.ndarray:
    """(N,C,H,W) -> (N,C,OH,OW,k,k) sliding windows."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=fill)
    w = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return w[:, :, ::stride, ::stride]


def _layer_params(layer: dict, weights: np.ndarray):
    ref = layer["weight_ref"]
    flat = weights[ref["offset"]:ref["offset"] + ref["length"]]
    g = layer["geometry"]
    if layer["kind"] == "conv2d":
        o, c, k = g["out_channels"], g["in_channels"], g["kernel"]
        n = o * c * k * k
        w = flat[:n].reshape(o, c, k, k)
    elif layer["kind"] == "depthwise_conv2d":
        c, k = g["channels"], g["kernel"]
        n = c * k * k
        w = flat[:n].reshape(c, k, k)
    else:
        o, i = g["out_features"], g["in_features"]
        n = o * i
        w = flat[:n].reshape(o, i)
    b = flat[n:] if g.get("bias", True) else None
    return w, b


def forward_manifest(manifest: dict, weights: np.ndarray,
                     images: np.ndarray) -> np.ndarray:
    """Run ``images`` (N,C,H,W float64) through the manifest's layer chain."""
    x = np.asarray(images, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    for layer in manifest["layers"]:
        if layer.get("input") or layer.get("geometry", {}).get("add_input"):
            raise ValueError("reference forward covers sequential chains only")
        kind = layer["kind"]
        g = layer.get("geometry", {})
        if kind == "conv2d":
            w, b = _layer_params(layer, weights)
            windows = _win(x, g["kernel"], g.get("stride", 1),
                           g.get("padding", 0), 0.0)
            x = np.einsum("ncijkl,ockl->noij", windows, w, optimize=True)
            if b is not None:
                x = x + b[None, :, None, None]
        elif kind == "depthwise_conv2d":
            w, b = _layer_params(layer, weights)
            windows = _win(x, g["kernel"], g.get("stride", 1),
                           g.get("padding", 0), 0.0)
            x = np.einsum("ncijkl,ckl->ncij", windows, w, optimize=True)
            if b is not None:
                x = x + b[None, :, None, None]
        elif kind == "dense":
            w, b = _layer_params(layer, weights)
            x = x @ w.T
            if b is not None:
                x = x + b
        elif kind == "maxpool":
            windows = _win(x, g["kernel"], g.get("stride", g["kernel"]),
                           g.get("padding", 0), -np.inf)
            x = windows.max(axis=(-2, -1))
        elif kind == "avgpool":
            if g.get("global"):
                x = x.mean(axis=(-2, -1), keepdims=True)
            else:
                windows = _win(x, g["kernel"], g.get("stride", g["kernel"]),
                               g.get("padding", 0), 0.0)
                x = windows.mean(axis=(-2, -1))
        elif kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif kind == "aa_relu":
            x = np.maximum(x, 0.0)
        elif kind == "softmax":
            z = x - x.max(axis=-1, keepdims=True)
            e = np.exp(z)
            x = e / e.sum(axis=-1, keepdims=True)
        else:
            raise ValueError(f"reference forward: unknown kind {kind!r}")
    return x
