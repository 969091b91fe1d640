"""Standalone writer for the EMBS interchange format (version 1).

Layout, little-endian: magic ``EMBS``, version u32 = 1, dim u32,
count u64, label_block_len u32, UTF-8 label names joined by ``\\n``
(no trailing newline), then per record a u32 label id followed by
dim f32 coordinates.  The attribution toolkit reads these files; this
module intentionally shares no code with it.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

MAGIC = b"EMBS"


def write_embs(path, label_names: Sequence[str], label_ids: np.ndarray,
               vectors: np.ndarray) -> None:
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    label_ids = np.ascontiguousarray(label_ids, dtype="<u4")
    count, dim = vectors.shape
    if label_ids.shape != (count,):
        raise ValueError("one label id per vector required")
    if not np.isfinite(vectors).all():
        raise ValueError("vectors must be finite")
    if label_ids.size and label_ids.max() >= len(label_names):
        raise ValueError("label id outside the label table")
    block = "\n".join(label_names).encode("utf-8")
    header = MAGIC + struct.pack("<IIQI", 1, dim, count, len(block))
    records = np.empty(count, dtype=np.dtype([("label", "<u4"),
                                              ("vec", "<f4", (dim,))]))
    records["label"] = label_ids
    records["vec"] = vectors
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(block)
        fh.write(records.tobytes())
