"""Shared fixtures: small in-memory models, the committed fixture bundle,
and a sync client for the in-process service."""

import asyncio
from pathlib import Path

import httpx
import numpy as np
import pytest

from adaptinfer import Dataset, infer, model_from_manifest

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "tinycnn"


def build_micro_manifest(seed: int = 7):
    """Tiny conv->relu->flatten->dense->softmax model with seeded weights.

    Input (1,4,4), 3 classes. Small enough that tests can recompute the
    forward pass by hand.
    """
    rng = np.random.default_rng(seed)
    conv_w = rng.normal(scale=0.5, size=(2, 1, 3, 3))
    conv_b = rng.normal(scale=0.1, size=2)
    dense_w = rng.normal(scale=0.3, size=(3, 32))
    dense_b = rng.normal(scale=0.1, size=3)
    weights = np.concatenate([conv_w.ravel(), conv_b,
                              dense_w.ravel(), dense_b])
    manifest = {
        "name": "micro",
        "input_shape": [1, 4, 4],
        "class_count": 3,
        "layers": [
            {"id": "conv1", "kind": "conv2d",
             "geometry": {"in_channels": 1, "out_channels": 2,
                          "kernel": 3, "stride": 1, "padding": 1},
             "weight_ref": {"offset": 0, "length": 20}},
            {"id": "relu1", "kind": "aa_relu", "geometry": {}},
            {"id": "flatten", "kind": "flatten", "geometry": {}},
            {"id": "fc", "kind": "dense",
             "geometry": {"in_features": 32, "out_features": 3},
             "weight_ref": {"offset": 20, "length": 99}},
            {"id": "probs", "kind": "softmax", "geometry": {}},
        ],
    }
    return manifest, weights


@pytest.fixture
def micro_model():
    manifest, weights = build_micro_manifest()
    return model_from_manifest(manifest, weights=weights)


@pytest.fixture
def micro_dataset(micro_model):
    """64 random images labeled by the model itself, so baseline
    accuracy is exactly 1.0."""
    rng = np.random.default_rng(99)
    images = rng.normal(size=(64, 1, 4, 4))
    labels = infer(micro_model, images).argmax(axis=1)
    return Dataset(images=images, labels=labels)


@pytest.fixture(scope="session")
def fixture_paths():
    """Paths into the committed fixture bundle (model + datasets + goldens)."""
    paths = {
        "dir": FIXTURE_DIR,
        "manifest": FIXTURE_DIR / "manifest.json",
        "weights": FIXTURE_DIR / "weights.aat",
        "eval": FIXTURE_DIR / "eval.aat",
        "eval_labels": FIXTURE_DIR / "eval.labels.json",
        "calib": FIXTURE_DIR / "calib.aat",
        "golden_logits": FIXTURE_DIR / "golden_logits.aat",
        "golden": FIXTURE_DIR / "golden.json",
    }
    missing = [k for k, p in paths.items() if not p.exists()]
    assert not missing, f"fixture bundle incomplete: {missing}"
    return paths


class ServiceClient:
    """Small sync facade over the ASGI app, mirroring the CLI transport."""

    def __init__(self, app):
        self._app = app

    def _request(self, method: str, path: str, **kw) -> httpx.Response:
        async def go():
            transport = httpx.ASGITransport(app=self._app,
                                            raise_app_exceptions=False)
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://service.test") as client:
                return await client.request(method, path, **kw)

        return asyncio.run(go())

    def get(self, path: str) -> httpx.Response:
        return self._request("GET", path)

    def post(self, path: str, payload: dict) -> httpx.Response:
        return self._request("POST", path, json=payload)


@pytest.fixture(scope="session")
def api():
    from adaptinfer.service import create_app

    return ServiceClient(create_app())
