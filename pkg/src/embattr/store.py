"""Labeled embedding collections and the EMBS on-disk format.

EMBS layout (all little-endian):

    bytes 0-3    magic ``EMBS``
    bytes 4-7    version: u32 (1 = plain set, 2 = support set)
    bytes 8-11   dim: u32
    bytes 12-19  count: u64
    bytes 20-23  label_block_len: u32 = L
    next L       UTF-8 label names joined by ``\\n`` (no trailing newline)
    [version 2 only] k_default: u32
    then count records, each ``label_id u32`` followed by ``dim * f32``

Vectors are stored as 32-bit floats on disk and kept as float32 in memory,
so write followed by read reproduces every coordinate bit for bit.  All
loss and metric arithmetic upcasts to float64 at the point of use.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from .errors import (
    BadMagicError,
    LabelRangeError,
    NonFiniteValueError,
    TruncatedStreamError,
    UnknownLabelError,
    UnsupportedVersionError,
    ValidationError,
)
from .rng import SplitMix64

MAGIC = b"EMBS"
_HEADER = struct.Struct("<4sIIQI")

PathOrStream = Union[str, "object"]


@dataclass(frozen=True)
class LabelTable:
    """Ordered class names; the id of a name is its position."""

    names: tuple

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        seen = set()
        for name in names:
            if not isinstance(name, str) or not name:
                raise ValidationError("label names must be non-empty strings")
            if "\n" in name:
                raise ValidationError(f"label name {name!r} contains a newline")
            if name in seen:
                raise ValidationError(f"duplicate label name {name!r}")
            seen.add(name)

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownLabelError(f"unknown label {name!r}") from None

    def name_of(self, label_id: int) -> str:
        if not 0 <= label_id < len(self.names):
            raise UnknownLabelError(f"label id {label_id} out of range")
        return self.names[label_id]

    def ids_of(self, names: Iterable[str]) -> tuple:
        return tuple(self.id_of(n) for n in names)


@dataclass(frozen=True)
class EmbeddingSet:
    """Immutable collection of labeled d-dimensional float32 vectors."""

    dim: int
    labels: LabelTable
    label_ids: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim <= 0:
            raise ValidationError("dim must be a positive integer")
        ids = np.ascontiguousarray(self.label_ids, dtype=np.int64)
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vecs.ndim != 2 or vecs.shape[1] != self.dim:
            raise ValidationError(
                f"vectors must have shape (n, {self.dim}), got {vecs.shape}"
            )
        if ids.shape != (vecs.shape[0],):
            raise ValidationError("label_ids length must match record count")
        if ids.size and (ids.min() < 0 or ids.max() >= len(self.labels)):
            raise LabelRangeError("label id outside the label table")
        if not np.isfinite(vecs).all():
            raise NonFiniteValueError("vectors contain NaN or Inf")
        object.__setattr__(self, "label_ids", ids)
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.labels == other.labels
            and np.array_equal(self.label_ids, other.label_ids)
            and np.array_equal(self.vectors, other.vectors)
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.label_ids, minlength=len(self.labels))

    def subset(self, indices: np.ndarray) -> "EmbeddingSet":
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingSet(self.dim, self.labels, self.label_ids[idx],
                            self.vectors[idx])

    def restrict_to(self, names: Iterable[str]) -> "EmbeddingSet":
        """Records whose class is in ``names``; label table unchanged."""
        ids = set(self.labels.ids_of(names))
        mask = np.isin(self.label_ids, sorted(ids))
        return self.subset(np.flatnonzero(mask))


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("vec", "<f4", (dim,))])


def _encode(set_: EmbeddingSet, version: int, k_default: Optional[int]) -> bytes:
    # re-check invariants: ndarray fields can be mutated after construction,
    # and nothing may reach the sink if they were
    if set_.label_ids.size and (set_.label_ids.min() < 0
                                or set_.label_ids.max() >= len(set_.labels)):
        raise LabelRangeError("label id outside the label table")
    if not np.isfinite(set_.vectors).all():
        raise NonFiniteValueError("vectors contain NaN or Inf")
    label_block = "\n".join(set_.labels.names).encode("utf-8")
    head = _HEADER.pack(MAGIC, version, set_.dim, len(set_), len(label_block))
    parts = [head, label_block]
    if version == 2:
        parts.append(struct.pack("<I", k_default))
    records = np.empty(len(set_), dtype=_record_dtype(set_.dim))
    records["label"] = set_.label_ids
    records["vec"] = set_.vectors
    parts.append(records.tobytes())
    return b"".join(parts)


def _decode(data: bytes, expect_version: int):
    if len(data) < _HEADER.size:
        raise TruncatedStreamError(
            f"stream holds {len(data)} bytes, header needs {_HEADER.size}"
        )
    magic, version, dim, count, label_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {magic!r}")
    if version != expect_version:
        raise UnsupportedVersionError(
            f"expected format version {expect_version}, found {version}"
        )
    if dim == 0:
        raise ValidationError("dim must be positive")
    offset = _HEADER.size
    if len(data) < offset + label_len:
        raise TruncatedStreamError("label block extends past end of stream")
    try:
        block = data[offset:offset + label_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValidationError(f"label block is not valid UTF-8: {exc}") from None
    names = tuple(block.split("\n")) if label_len else ()
    labels = LabelTable(names)
    offset += label_len
    k_default = None
    if expect_version == 2:
        if len(data) < offset + 4:
            raise TruncatedStreamError("missing k_default field")
        (k_default,) = struct.unpack_from("<I", data, offset)
        offset += 4
    payload = data[offset:]
    expected = count * (4 + 4 * dim)
    if len(payload) != expected:
        raise TruncatedStreamError(
            f"declared {count} records ({expected} bytes), found {len(payload)}"
        )
    records = np.frombuffer(payload, dtype=_record_dtype(dim))
    label_ids = records["label"].astype(np.int64)
    if label_ids.size and label_ids.max() >= len(labels):
        raise LabelRangeError(
            f"record label id {label_ids.max()} >= {len(labels)} labels"
        )
    vectors = records["vec"].reshape(count, dim).astype(np.float32)
    if not np.isfinite(vectors).all():
        raise NonFiniteValueError("stored vector contains NaN or Inf")
    set_ = EmbeddingSet(int(dim), labels, label_ids, vectors)
    return set_, k_default


def _write_bytes(data: bytes, destination: PathOrStream) -> None:
    if hasattr(destination, "write"):
        destination.write(data)
    else:
        with open(destination, "wb") as fh:
            fh.write(data)


def _read_bytes(source: PathOrStream) -> bytes:
    if hasattr(source, "read"):
        return source.read()
    with open(source, "rb") as fh:
        return fh.read()


def write_set(set_: EmbeddingSet, destination: PathOrStream) -> None:
    """Serialize to the version-1 EMBS layout, byte-exactly."""
    _write_bytes(_encode(set_, 1, None), destination)


def read_set(source: PathOrStream) -> EmbeddingSet:
    """Parse a version-1 EMBS stream, rejecting malformed input."""
    set_, _ = _decode(_read_bytes(source), 1)
    return set_


def write_support_blob(set_: EmbeddingSet, k_default: int,
                       destination: PathOrStream) -> None:
    """Version-2 layout: a set plus the recorded k_default."""
    _write_bytes(_encode(set_, 2, k_default), destination)


def read_support_blob(source: PathOrStream):
    set_, k_default = _decode(_read_bytes(source), 2)
    return set_, k_default


def partition_indices(set_: EmbeddingSet, label_ids: Iterable[int],
                      per_class_cap: Optional[int], seed: int):
    """Seeded per-class sampling without replacement, by record index.

    Returns (selected, remainder) index arrays, both in the set's original
    record order.  Classes are processed in ascending id order on one
    splitmix64 stream, so the draw is a pure function of
    (set, label_ids, cap, seed).
    """
    requested = sorted(set(int(i) for i in label_ids))
    for lid in requested:
        if not 0 <= lid < len(set_.labels):
            raise UnknownLabelError(f"label id {lid} not in table")
    if per_class_cap is not None and per_class_cap < 0:
        raise ValidationError("per_class_cap must be nonnegative")
    gen = SplitMix64(seed)
    chosen = []
    for lid in requested:
        candidates = np.flatnonzero(set_.label_ids == lid)
        take = len(candidates) if per_class_cap is None else min(
            per_class_cap, len(candidates))
        if take == len(candidates):
            chosen.extend(candidates.tolist())
        elif take > 0:
            pool = candidates.tolist()
            gen.shuffle(pool)
            chosen.extend(pool[:take])
    selected = np.array(sorted(chosen), dtype=np.int64)
    remainder = np.setdiff1d(np.arange(len(set_), dtype=np.int64), selected,
                             assume_unique=True)
    return selected, remainder


def partition(set_: EmbeddingSet, label_ids: Iterable[int],
              per_class_cap: Optional[int], seed: int):
    """Split into (selected, remainder) EmbeddingSets; see partition_indices."""
    sel, rem = partition_indices(set_, label_ids, per_class_cap, seed)
    return set_.subset(sel), set_.subset(rem)
