"""Trainable projection head mapping raw embeddings into the latent space.

A head is a stack of affine layers with an elementwise nonlinearity
between layers (never after the last).  Checkpoint layout, little-endian:
magic ``HEAD``, version u32 = 1, number of dims u32, the dims as u32,
then per layer the weight matrix row-major and the bias, all f32.
The activation identifier is configuration, not checkpoint state.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    TruncatedStreamError,
    UnsupportedVersionError,
    ValidationError,
)
from .store import PathOrStream, _read_bytes, _write_bytes

HEAD_MAGIC = b"HEAD"


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_deriv(pre):
    return (pre > 0.0).astype(np.float64)


def _identity(x):
    return x


def _identity_deriv(pre):
    return np.ones_like(pre)


ACTIVATIONS = {
    "relu": (_relu, _relu_deriv),
    "identity": (_identity, _identity_deriv),
}


@dataclass
class ProjectionHead:
    layer_dims: tuple
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ValidationError(f"layer_dims needs >= 2 positive entries, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValidationError("one weight and bias pair per layer required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValidationError(
                    f"layer {i} shapes {w.shape}/{b.shape} do not compose "
                    f"{dims[i]}->{dims[i + 1]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValidationError(f"layer {i} has non-finite parameters")
        self.layer_dims = dims

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.layer_dims,
                              [w.copy() for w in self.weights],
                              [b.copy() for b in self.biases],
                              self.activation)


def init_head(layer_dims: Sequence[int], seed: int,
              activation: str = "relu") -> ProjectionHead:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    dims = tuple(int(d) for d in layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return ProjectionHead(dims, weights, biases, activation)


def forward(head: ProjectionHead, inputs: np.ndarray) -> np.ndarray:
    """Affine-then-activation composition; no activation after the last layer."""
    x = np.ascontiguousarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != head.d_in:
        raise DimensionMismatchError(
            f"inputs must be (n, {head.d_in}), got {x.shape}")
    if not np.isfinite(x).all():
        raise ValidationError("inputs contain NaN or Inf")
    act, _ = ACTIVATIONS[head.activation]
    last = len(head.weights) - 1
    for i, (w, b) in enumerate(zip(head.weights, head.biases)):
        x = x @ w + b
        if i != last:
            x = act(x)
    return x


def forward_cached(head: ProjectionHead, inputs: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backprop."""
    x = np.ascontiguousarray(inputs, dtype=np.float64)
    act, _ = ACTIVATIONS[head.activation]
    last = len(head.weights) - 1
    layer_inputs, pre_acts = [], []
    for i, (w, b) in enumerate(zip(head.weights, head.biases)):
        layer_inputs.append(x)
        pre = x @ w + b
        pre_acts.append(pre)
        x = pre if i == last else act(pre)
    return x, layer_inputs, pre_acts


def backprop(head: ProjectionHead, layer_inputs, pre_acts,
             d_out: np.ndarray):
    """Parameter gradients for a given upstream gradient on the output."""
    _, deriv = ACTIVATIONS[head.activation]
    last = len(head.weights) - 1
    grads_w = [None] * len(head.weights)
    grads_b = [None] * len(head.biases)
    delta = d_out
    for i in range(last, -1, -1):
        if i != last:
            delta = delta * deriv(pre_acts[i])
        grads_w[i] = layer_inputs[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ head.weights[i].T
    return grads_w, grads_b


def save_head(head: ProjectionHead, destination: PathOrStream) -> None:
    parts = [HEAD_MAGIC, struct.pack("<I", 1),
             struct.pack("<I", len(head.layer_dims))]
    parts.extend(struct.pack("<I", d) for d in head.layer_dims)
    for w, b in zip(head.weights, head.biases):
        parts.append(w.astype("<f4").tobytes())
        parts.append(b.astype("<f4").tobytes())
    _write_bytes(b"".join(parts), destination)


def load_head(source: PathOrStream, activation: str = "relu") -> ProjectionHead:
    data = _read_bytes(source)
    if len(data) < 12:
        raise TruncatedStreamError("head checkpoint shorter than its header")
    if data[:4] != HEAD_MAGIC:
        raise BadMagicError(f"expected magic {HEAD_MAGIC!r}, found {data[:4]!r}")
    version, n_dims = struct.unpack_from("<II", data, 4)
    if version != 1:
        raise UnsupportedVersionError(f"unsupported head version {version}")
    offset = 12
    if len(data) < offset + 4 * n_dims:
        raise TruncatedStreamError("head checkpoint missing layer dims")
    dims = struct.unpack_from(f"<{n_dims}I", data, offset)
    offset += 4 * n_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w_bytes = 4 * fan_in * fan_out
        b_bytes = 4 * fan_out
        if len(data) < offset + w_bytes + b_bytes:
            raise TruncatedStreamError("head checkpoint missing parameters")
        w = np.frombuffer(data, dtype="<f4", count=fan_in * fan_out,
                          offset=offset).reshape(fan_in, fan_out)
        offset += w_bytes
        b = np.frombuffer(data, dtype="<f4", count=fan_out, offset=offset)
        offset += b_bytes
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(data):
        raise TruncatedStreamError("trailing bytes after head parameters")
    return ProjectionHead(dims, weights, biases, activation)
