"""Pluggable feature extractors.

A backbone is a callable mapping a (n, 256, 256, 3) batch in [0, 1] to
an (n, width) float array with a fixed width.  Identifiers:

* ``grid16``          deterministic 16 x 16 RGB grid-mean pooling (768-d)
* ``rp<width>``       grid pooling followed by a fixed-seed Gaussian
                      projection to <width> dims, e.g. ``rp1000``; an
                      optional seed suffix ``rp1000-7`` changes the draw
* ``torchvision:<m>`` a torchvision classification model; needs torch
                      plus locally available weights.  ``features`` picks
                      the classifier head output ("head") or the pooled
                      features before it ("pooled").

The built-ins need no downloads and are bit-reproducible, which keeps
re-exports byte-identical.
"""

from __future__ import annotations

import re

import numpy as np

GRID = 16
_RP_PATTERN = re.compile(r"^rp(\d+)(?:-(\d+))?$")


class BackboneError(ValueError):
    pass


def _grid_pool(batch: np.ndarray) -> np.ndarray:
    n, h, w, c = batch.shape
    cell_h, cell_w = h // GRID, w // GRID
    cells = batch.reshape(n, GRID, cell_h, GRID, cell_w, c)
    return cells.mean(axis=(2, 4)).reshape(n, GRID * GRID * c)


class GridPool:
    width = GRID * GRID * 3
    name = "grid16"

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        return _grid_pool(batch)


class RandomProjection:
    """Grid pooling composed with a seeded Gaussian projection."""

    def __init__(self, width: int, seed: int = 0):
        self.width = width
        self.name = f"rp{width}" if seed == 0 else f"rp{width}-{seed}"
        rng = np.random.default_rng((seed << 16) ^ width)
        base = GRID * GRID * 3
        self._matrix = rng.standard_normal((base, width)) / np.sqrt(base)

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        return _grid_pool(batch) @ self._matrix


class TorchvisionBackbone:
    """Adapter over a pretrained torchvision classifier."""

    def __init__(self, model_name: str, features: str = "head",
                 device: str = "cpu"):
        try:
            import torch
            import torchvision.models as models
        except ImportError as exc:
            raise BackboneError(f"torchvision backbone needs torch: {exc}")
        if features not in ("head", "pooled"):
            raise BackboneError(f"features must be head|pooled, got {features!r}")
        factory = getattr(models, model_name, None)
        if factory is None:
            raise BackboneError(f"unknown torchvision model {model_name!r}")
        self._torch = torch
        self._device = device
        self.name = f"torchvision:{model_name}"
        self.features = features
        model = factory(weights="DEFAULT").eval().to(device)
        if features == "pooled":
            removed = [name for name in ("fc", "classifier", "heads", "head")
                       if hasattr(model, name)]
            if not removed:
                raise BackboneError(
                    f"{model_name} exposes no known classifier attribute")
            setattr(model, removed[0], torch.nn.Identity())
        self._model = model
        with torch.no_grad():
            probe = torch.zeros(1, 3, 256, 256, device=device)
            self.width = int(model(probe).reshape(1, -1).shape[1])

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        tensor = torch.from_numpy(
            np.ascontiguousarray(batch.transpose(0, 3, 1, 2),
                                 dtype=np.float32)).to(self._device)
        with torch.no_grad():
            out = self._model(tensor)
        return out.reshape(tensor.shape[0], -1).cpu().numpy().astype(np.float64)


def resolve(backbone_id: str, features: str = "head",
            device: str = "cpu"):
    if backbone_id == "grid16":
        return GridPool()
    match = _RP_PATTERN.match(backbone_id)
    if match:
        width = int(match.group(1))
        seed = int(match.group(2) or 0)
        if width <= 0:
            raise BackboneError("projection width must be positive")
        return RandomProjection(width, seed)
    if backbone_id.startswith("torchvision:"):
        return TorchvisionBackbone(backbone_id.split(":", 1)[1], features,
                                   device)
    raise BackboneError(f"unknown backbone id {backbone_id!r}")
