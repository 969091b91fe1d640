"""Projection-head training and synthetic cluster generation.

Training is plain full-gradient descent on class-balanced minibatches of
``supcon_loss(l2_normalize(forward(x)))``.  Everything is seeded: weight
init, per-epoch shuffles, and batch composition all come from one
``numpy.random.Generator``, so a fixed seed replays the exact weight
trajectory.

``history`` has ``epochs + 1`` entries: entry 0 is the mean batch loss of
one no-update evaluation pass, entries 1..epochs are the mean batch loss
observed during each training epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .contrastive import Temperature, loss_and_grads, loss_only
from .errors import (
    CompositionError,
    DegenerateVectorError,
    DivergenceError,
    ValidationError,
)
from .head import ProjectionHead, backprop, forward_cached
from .store import EmbeddingSet, LabelTable

ZERO_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    epochs: int
    learning_rate: float
    classes_per_batch: int
    samples_per_class: int
    tau: Temperature = Temperature()
    seed: int = 0

    def __post_init__(self):
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ValidationError("batch_size and epochs must be positive")
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise ValidationError("learning_rate must be finite and >= 0")
        if self.samples_per_class < 2:
            raise ValidationError("samples_per_class must be >= 2")
        if self.classes_per_batch < 1:
            raise ValidationError("classes_per_batch must be >= 1")
        if self.classes_per_batch * self.samples_per_class != self.batch_size:
            raise ValidationError(
                "classes_per_batch * samples_per_class must equal batch_size")


@dataclass(frozen=True)
class ClusterSpec:
    """Gaussian fingerprint clusters: one isotropic blob per class."""

    num_classes: int
    dim: int
    means: np.ndarray
    spread: np.ndarray
    count_per_class: int
    seed: int = 0
    names: Optional[tuple] = None

    def __post_init__(self):
        if self.num_classes <= 0 or self.dim <= 0 or self.count_per_class <= 0:
            raise ValidationError("num_classes, dim, count_per_class must be positive")
        means = np.ascontiguousarray(self.means, dtype=np.float64)
        if means.shape != (self.num_classes, self.dim):
            raise ValidationError(
                f"means must be ({self.num_classes}, {self.dim}), got {means.shape}")
        spread = np.broadcast_to(
            np.asarray(self.spread, dtype=np.float64), (self.num_classes,)).copy()
        if (spread < 0).any() or not np.isfinite(spread).all():
            raise ValidationError("spread must be finite and nonnegative")
        names = self.names
        if names is not None:
            names = tuple(names)
            if len(names) != self.num_classes:
                raise ValidationError("names must match num_classes")
        else:
            names = tuple(f"class_{i}" for i in range(self.num_classes))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "spread", spread)
        object.__setattr__(self, "names", names)


def separated_means(num_classes: int, dim: int, distance: float) -> np.ndarray:
    """Class means with exact pairwise distance ``distance``.

    Scaled standard basis vectors; needs dim >= num_classes.
    """
    if dim < num_classes:
        raise ValidationError("dim must be >= num_classes for separated means")
    means = np.zeros((num_classes, dim))
    np.fill_diagonal(means[:, :num_classes], distance / np.sqrt(2.0))
    return means


def make_clusters(spec: ClusterSpec) -> EmbeddingSet:
    """count_per_class samples per class: mean + spread * standard normal."""
    rng = np.random.default_rng(spec.seed)
    blocks = []
    for c in range(spec.num_classes):
        noise = rng.standard_normal((spec.count_per_class, spec.dim))
        blocks.append(spec.means[c] + spec.spread[c] * noise)
    vectors = np.vstack(blocks)
    label_ids = np.repeat(np.arange(spec.num_classes), spec.count_per_class)
    return EmbeddingSet(spec.dim, LabelTable(spec.names), label_ids, vectors)


def _class_pools(data: EmbeddingSet, cfg: TrainConfig):
    present = np.unique(data.label_ids)
    if present.size < cfg.classes_per_batch:
        raise CompositionError(
            f"{present.size} classes present, batch needs {cfg.classes_per_batch}")
    counts = data.class_counts()
    for lid in present:
        if counts[lid] < cfg.samples_per_class:
            raise CompositionError(
                f"class {data.labels.name_of(int(lid))!r} has {counts[lid]} records, "
                f"needs >= {cfg.samples_per_class}")
    indices = {int(lid): np.flatnonzero(data.label_ids == lid) for lid in present}
    min_count = min(counts[lid] for lid in present)
    batches_per_epoch = int(min_count // cfg.samples_per_class)
    return present, indices, batches_per_epoch


def _epoch_batches(present, indices, cfg, rng, batches_per_epoch):
    """Yield per-batch row indices, reshuffling each class pool per epoch."""
    pools = {c: rng.permutation(indices[c]) for c in (int(p) for p in present)}
    cursors = {c: 0 for c in pools}
    all_classes = sorted(pools)
    for _ in range(batches_per_epoch):
        if cfg.classes_per_batch == len(all_classes):
            chosen = all_classes
        else:
            chosen = sorted(rng.choice(all_classes, size=cfg.classes_per_batch,
                                       replace=False).tolist())
        rows = []
        for c in chosen:
            if cursors[c] + cfg.samples_per_class > len(pools[c]):
                pools[c] = rng.permutation(indices[c])
                cursors[c] = 0
            rows.append(pools[c][cursors[c]:cursors[c] + cfg.samples_per_class])
            cursors[c] += cfg.samples_per_class
        yield np.concatenate(rows)


def composed_loss(head: ProjectionHead, x: np.ndarray, labels: np.ndarray,
                  tau_value: float) -> float:
    """Loss after forward pass and row normalization."""
    out, _, _ = forward_cached(head, x)
    norms = np.linalg.norm(out, axis=1)
    if (norms <= ZERO_NORM_FLOOR).any():
        raise DegenerateVectorError("projection collapsed a row to zero norm")
    return loss_only(out / norms[:, None], labels, tau_value)


def composed_step(head: ProjectionHead, x: np.ndarray, labels: np.ndarray,
                  tau_value: float):
    """Loss plus parameter gradients through normalize and forward."""
    out, layer_inputs, pre_acts = forward_cached(head, x)
    norms = np.linalg.norm(out, axis=1)
    if (norms <= ZERO_NORM_FLOOR).any():
        raise DegenerateVectorError("projection collapsed a row to zero norm")
    z = out / norms[:, None]
    loss, g_z, dtau = loss_and_grads(z, labels, tau_value)
    # pull the gradient back through row normalization: (g - (g.u)u)/|h|
    radial = (g_z * z).sum(axis=1, keepdims=True)
    d_out = (g_z - radial * z) / norms[:, None]
    grads_w, grads_b = backprop(head, layer_inputs, pre_acts, d_out)
    return loss, grads_w, grads_b, dtau


def train(head: ProjectionHead, data: EmbeddingSet,
          cfg: TrainConfig) -> Tuple[ProjectionHead, List[float]]:
    """Class-balanced minibatch gradient descent on the contrastive loss."""
    if len(data) == 0:
        raise ValidationError("training data is empty")
    if data.dim != head.d_in:
        raise ValidationError(
            f"data dim {data.dim} does not match head input {head.d_in}")
    present, indices, batches_per_epoch = _class_pools(data, cfg)
    if batches_per_epoch == 0:
        raise CompositionError("smallest class cannot fill a single batch")

    trained = head.copy()
    rng = np.random.default_rng(cfg.seed)
    x_all = data.vectors.astype(np.float64)
    labels_all = data.label_ids
    tau_value = cfg.tau.value
    history: List[float] = []

    # entry 0: evaluation pass, no updates
    eval_losses = []
    for rows in _epoch_batches(present, indices, cfg, rng, batches_per_epoch):
        loss, _, _, _ = composed_step(trained, x_all[rows], labels_all[rows],
                                      tau_value)
        eval_losses.append(loss)
    history.append(float(np.mean(eval_losses)))

    for epoch in range(1, cfg.epochs + 1):
        batch_losses = []
        for b, rows in enumerate(
                _epoch_batches(present, indices, cfg, rng, batches_per_epoch)):
            loss, grads_w, grads_b, dtau = composed_step(
                trained, x_all[rows], labels_all[rows], tau_value)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} batch {b}")
            batch_losses.append(loss)
            if cfg.learning_rate != 0.0:
                for w, gw in zip(trained.weights, grads_w):
                    w -= cfg.learning_rate * gw
                for bias, gb in zip(trained.biases, grads_b):
                    bias -= cfg.learning_rate * gb
                if cfg.tau.learnable:
                    tau_value -= cfg.learning_rate * dtau
                    if tau_value <= 0 or not np.isfinite(tau_value):
                        raise DivergenceError(
                            f"temperature left (0, inf) at epoch {epoch} batch {b}")
        history.append(float(np.mean(batch_losses)))
    return trained, history
