"""Few-shot support set and k-nearest-neighbor attribution.

Similarity is the dot product of unit vectors (cosine).  The top k
exemplars vote; the posterior for class c is votes(c) / k.  Tie handling
is total and documented: at the k-th rank an equal similarity keeps the
smaller exemplar index; between classes, equal vote counts go to the
class with the larger summed similarity inside the top k, then to the
smaller label id.

An optional distance-weighted mode replaces vote counts with normalized
shifted similarities (1 + s) / 2 over the top k; it is off by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from . import kernels, store
from .errors import (
    ConfigurationError,
    DegenerateVectorError,
    DimensionMismatchError,
    ValidationError,
)
from .store import EmbeddingSet, LabelTable, PathOrStream

NORM_TOLERANCE = 1e-9
ZERO_NORM_FLOOR = 1e-12
DEFAULT_K = 11
DEFAULT_SHOTS = 150


@dataclass(frozen=True)
class SupportSet:
    """Unit-vector exemplar bank serving as the classifier's knowledge base."""

    labels: LabelTable
    label_ids: np.ndarray
    vectors: np.ndarray
    k_default: int = DEFAULT_K

    def __post_init__(self):
        ids = np.ascontiguousarray(self.label_ids, dtype=np.int64)
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[0] == 0:
            raise ValidationError("support needs at least one exemplar")
        if ids.shape != (vecs.shape[0],):
            raise ValidationError("label_ids length must match exemplar count")
        if ids.min() < 0 or ids.max() >= len(self.labels):
            raise ValidationError("exemplar label id outside the label table")
        norms = np.linalg.norm(vecs, axis=1)
        if np.abs(norms - 1.0).max() > NORM_TOLERANCE:
            raise ValidationError("exemplar vectors must be unit length")
        if not 1 <= self.k_default <= vecs.shape[0]:
            raise ConfigurationError(
                f"k_default {self.k_default} outside [1, {vecs.shape[0]}]")
        object.__setattr__(self, "label_ids", ids)
        object.__setattr__(self, "vectors", vecs)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class Prediction:
    """Per-class posterior, argmax label, and its probability."""

    posterior: np.ndarray
    predicted: int
    confidence: float


def _normalize_rows(vectors: np.ndarray, what: str) -> np.ndarray:
    vecs = np.ascontiguousarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vecs, axis=1)
    bad = np.flatnonzero(norms <= ZERO_NORM_FLOOR)
    if bad.size:
        raise DegenerateVectorError(f"{what} row {int(bad[0])} has near-zero norm")
    return vecs / norms[:, None]


def build_support(data: EmbeddingSet, shots_per_class: int = DEFAULT_SHOTS,
                  k: int = DEFAULT_K, seed: int = 0) -> SupportSet:
    support, _, _ = build_support_split(data, shots_per_class, k, seed)
    return support


def build_support_split(data: EmbeddingSet, shots_per_class: int = DEFAULT_SHOTS,
                        k: int = DEFAULT_K, seed: int = 0):
    """Support set plus (selected, remainder) record indices of ``data``.

    Sampling delegates to the store's seeded per-class partition, so the
    draw is reproducible from the seed alone and the remainder indices are
    exactly the records that stayed out of the support.
    """
    if len(data) == 0:
        raise ValidationError("cannot build a support set from an empty set")
    if shots_per_class <= 0:
        raise ValidationError("shots_per_class must be positive")
    sel, rem = store.partition_indices(data, range(len(data.labels)),
                                       shots_per_class, seed)
    if sel.size == 0:
        raise ValidationError("no exemplars selected")
    if k > sel.size:
        raise ConfigurationError(
            f"k={k} exceeds the {sel.size} selected exemplars")
    vectors = _normalize_rows(data.vectors[sel], "exemplar")
    support = SupportSet(data.labels, data.label_ids[sel], vectors, k)
    return support, sel, rem


def _predict_from_counts(votes, simsum, k, weighted):
    n, n_classes = votes.shape
    if weighted:
        weights = (votes + simsum) / 2.0  # sum over top-k of (1 + s) / 2
        totals = weights.sum(axis=1, keepdims=True)
        uniform = votes / float(k)
        posterior = np.where(totals > ZERO_NORM_FLOOR, weights / totals, uniform)
        rank_primary = posterior
    else:
        posterior = votes / float(k)
        rank_primary = votes
    best = rank_primary.max(axis=1, keepdims=True)
    tied = rank_primary == best
    sims_masked = np.where(tied, simsum, -np.inf)
    best_sim = sims_masked.max(axis=1, keepdims=True)
    # first True along a row is the smallest label id among survivors
    predicted = np.argmax(tied & (sims_masked == best_sim), axis=1)
    confidence = posterior[np.arange(n), predicted]
    return posterior, predicted, confidence


def classify_batch(support: SupportSet,
                   queries: Union[EmbeddingSet, np.ndarray],
                   k: Optional[int] = None,
                   distance_weighted: bool = False) -> List[Prediction]:
    """Classify each query row; output order matches input order."""
    vectors = queries.vectors if isinstance(queries, EmbeddingSet) else queries
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValidationError(f"queries must be 2-D, got shape {vectors.shape}")
    if vectors.shape[0] == 0:
        return []
    if vectors.shape[1] != support.dim:
        raise DimensionMismatchError(
            f"query dim {vectors.shape[1]} != support dim {support.dim}")
    use_k = support.k_default if k is None else int(k)
    if not 1 <= use_k <= len(support):
        raise ConfigurationError(
            f"k={use_k} outside [1, {len(support)}]")
    q = _normalize_rows(vectors, "query")
    sims = q @ support.vectors.T
    votes, simsum = kernels.knn_select(sims, support.label_ids, use_k,
                                       len(support.labels))
    posterior, predicted, confidence = _predict_from_counts(
        votes, simsum, use_k, distance_weighted)
    return [
        Prediction(posterior[i], int(predicted[i]), float(confidence[i]))
        for i in range(q.shape[0])
    ]


def classify(support: SupportSet, query: np.ndarray,
             k: Optional[int] = None,
             distance_weighted: bool = False) -> Prediction:
    """Single-query convenience wrapper over classify_batch."""
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1:
        raise ValidationError("query must be a 1-D vector")
    return classify_batch(support, query[None, :], k, distance_weighted)[0]


def save_support(support: SupportSet, destination: PathOrStream) -> None:
    """Persist as a version-2 EMBS blob carrying k_default."""
    as_set = EmbeddingSet(support.dim, support.labels, support.label_ids,
                          support.vectors.astype(np.float32))
    store.write_support_blob(as_set, support.k_default, destination)


def load_support(source: PathOrStream) -> SupportSet:
    """Read a version-2 blob; rows are re-normalized after f32 decoding."""
    as_set, k_default = store.read_support_blob(source)
    vectors = _normalize_rows(as_set.vectors, "exemplar")
    return SupportSet(as_set.labels, as_set.label_ids, vectors, int(k_default))
