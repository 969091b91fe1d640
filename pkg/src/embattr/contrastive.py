"""Supervised contrastive loss, its analytic gradient, and l2 normalization.

For a batch of latent rows z_1..z_N with class labels, each anchor i is
scored against every other row of the batch; rows sharing the anchor's
class are its positive partners.  With sim(i, j) = z_i . z_j / tau the
per-anchor term is the mean negative log-probability of its positives
under a softmax over all non-anchor rows, and the batch loss averages the
anchors that have at least one positive partner.  Anchors without a
partner are excluded and the average divides by the count of contributing
anchors.

The loss is evaluated with per-anchor max subtraction before
exponentiation and all reductions in a fixed order, so repeated calls are
bit-identical.  Dot products equal cosine similarity when rows are unit
length; callers are expected to normalize first (see ``l2_normalize``),
though the arithmetic itself is defined for any finite batch, which is
what finite-difference checks rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    ConfigurationError,
    DegenerateVectorError,
    NoPositivePairsError,
    ValidationError,
)

NORM_TOLERANCE = 1e-9
ZERO_NORM_FLOOR = 1e-12
DEFAULT_TAU = 0.07


@dataclass(frozen=True)
class Temperature:
    """Positive softmax temperature; optionally treated as trainable."""

    value: float = DEFAULT_TAU
    learnable: bool = False

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value <= 0:
            raise ValidationError(f"temperature must be positive, got {self.value}")


@dataclass(frozen=True)
class LabeledBatch:
    """N x d float64 latent rows with integer class ids."""

    z: np.ndarray
    labels: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if z.ndim != 2 or z.shape[0] < 2 or z.shape[1] < 1:
            raise ValidationError(f"batch needs shape (N>=2, d>=1), got {z.shape}")
        if labels.shape != (z.shape[0],):
            raise ValidationError("labels length must match batch rows")
        if not np.isfinite(z).all():
            raise ValidationError("batch contains NaN or Inf")
        if self.normalized:
            norms = np.linalg.norm(z, axis=1)
            if np.abs(norms - 1.0).max() > NORM_TOLERANCE:
                raise ValidationError(
                    "normalized flag set but a row norm deviates from 1")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]


def l2_normalize(batch: LabeledBatch) -> LabeledBatch:
    """Scale every row to unit length; labels pass through."""
    norms = np.linalg.norm(batch.z, axis=1)
    bad = np.flatnonzero(norms <= ZERO_NORM_FLOOR)
    if bad.size:
        raise DegenerateVectorError(
            f"row {int(bad[0])} has norm {norms[bad[0]]:.3e}, cannot normalize")
    return LabeledBatch(batch.z / norms[:, None], batch.labels, normalized=True)


def supcon_loss(batch: LabeledBatch, tau: Temperature = Temperature()) -> float:
    """Batch loss; raises when no anchor has a positive partner."""
    loss, n_contrib, _, _ = kernels.supcon_terms(batch.z, batch.labels,
                                                 tau.value, want_grad=False)
    if n_contrib == 0:
        raise NoPositivePairsError("every anchor is the sole member of its class")
    return loss


def supcon_grad(batch: LabeledBatch, tau: Temperature = Temperature()) -> np.ndarray:
    """Gradient of the loss with respect to the latent rows (N x d)."""
    _, n_contrib, grad, _ = kernels.supcon_terms(batch.z, batch.labels,
                                                 tau.value, want_grad=True)
    if n_contrib == 0:
        raise NoPositivePairsError("every anchor is the sole member of its class")
    return grad


def supcon_tau_grad(batch: LabeledBatch, tau: Temperature) -> float:
    """d(loss)/d(tau); only meaningful when the temperature is learnable."""
    if not tau.learnable:
        raise ConfigurationError("temperature gradient requires learnable=True")
    _, n_contrib, _, dtau = kernels.supcon_terms(batch.z, batch.labels,
                                                 tau.value, want_grad=True)
    if n_contrib == 0:
        raise NoPositivePairsError("every anchor is the sole member of its class")
    return dtau


def loss_and_grads(z: np.ndarray, labels: np.ndarray, tau_value: float):
    """Raw-array fast path for the training loop.

    Returns (loss, grad, dloss_dtau); raises NoPositivePairsError when the
    batch contributes nothing.
    """
    loss, n_contrib, grad, dtau = kernels.supcon_terms(z, labels, tau_value,
                                                       want_grad=True)
    if n_contrib == 0:
        raise NoPositivePairsError("every anchor is the sole member of its class")
    return loss, grad, dtau


def loss_only(z: np.ndarray, labels: np.ndarray, tau_value: float) -> float:
    """Raw-array loss without gradient work."""
    loss, n_contrib, _, _ = kernels.supcon_terms(z, labels, tau_value,
                                                 want_grad=False)
    if n_contrib == 0:
        raise NoPositivePairsError("every anchor is the sole member of its class")
    return loss
