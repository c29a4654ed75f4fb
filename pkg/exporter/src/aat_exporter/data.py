"""Seeded synthetic datasets standing in for a real image corpus at desk
scale. Four visually distinct pattern classes on a single channel:
horizontal stripes, vertical stripes, checkerboard, and a centered blob,
each with randomized frequency/phase/position plus pixel noise.
"""

from __future__ import annotations

import numpy as np

__all__ = ["pattern_dataset", "make_datasets"]

CLASS_NAMES = ("h_stripes", "v_stripes", "checker", "blob")


def pattern_dataset(count: int, seed: int, side: int = 32,
                    noise: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Balanced 4-class pattern images, shape (count, 1, side, side)."""
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % 4).astype(np.int64)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / side
    images = np.empty((count, 1, side, side), dtype=np.float64)
    for i, label in enumerate(labels):
        freq = rng.uniform(2.0, 4.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        if label == 0:
            img = np.sin(2.0 * np.pi * freq * yy + phase)
        elif label == 1:
            img = np.sin(2.0 * np.pi * freq * xx + phase)
        elif label == 2:
            img = (np.sin(2.0 * np.pi * freq * yy + phase)
                   * np.sin(2.0 * np.pi * freq * xx + phase))
        else:
            cy = 0.5 + rng.uniform(-0.15, 0.15)
            cx = 0.5 + rng.uniform(-0.15, 0.15)
            sigma = rng.uniform(0.12, 0.2)
            r2 = (yy - cy) ** 2 + (xx - cx) ** 2
            img = 2.0 * np.exp(-r2 / (2.0 * sigma ** 2)) - 0.5
        images[i, 0] = img + rng.normal(0.0, noise, size=img.shape)
    return images, labels


def make_datasets(input_shape: tuple[int, ...], class_count: int, seed: int,
                  eval_count: int = 256, calib_count: int = 128):
    """Evaluation + calibration splits derived from one base seed.

    The pattern generator covers the fixture geometry (1-channel square
    images, 4 classes); anything else falls back to seeded noise images with
    uniform labels so export remains total.
    """
    c, h, w = input_shape
    if c == 1 and h == w and class_count == 4:
        eval_images, eval_labels = pattern_dataset(eval_count, seed + 1, side=h)
        calib_images, calib_labels = pattern_dataset(calib_count, seed + 2, side=h)
    else:
        rng = np.random.default_rng(seed + 1)
        eval_images = rng.standard_normal((eval_count, *input_shape))
        eval_labels = rng.integers(0, class_count, eval_count).astype(np.int64)
        rng = np.random.default_rng(seed + 2)
        calib_images = rng.standard_normal((calib_count, *input_shape))
        calib_labels = rng.integers(0, class_count, calib_count).astype(np.int64)
    return (eval_images, eval_labels), (calib_images, calib_labels)
