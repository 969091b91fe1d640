"""Walk a labeled image tree and write one EMBS embedding set.

The directory layout is the label source: every immediate subdirectory
of the root is a class, ordered lexicographically, and every decodable
file inside it is one record.  Files are processed in lexicographic
path order, so a deterministic backbone makes re-export byte-identical.
"""

from __future__ import annotations

import datetime
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import numpy as np

from .backbones import resolve
from .embs import write_embs
from .preprocess import TARGET_SIZE, load_image


class ExportError(ValueError):
    pass


@dataclass
class ExportSpec:
    image_root: str
    backbone_id: str
    output_path: str
    batch_size: int = 64
    device: str = "cpu"
    features: str = "head"
    write_timestamp: bool = False

    def __post_init__(self):
        if self.batch_size <= 0:
            raise ExportError("batch_size must be positive")


@dataclass
class ExportSummary:
    classes: tuple
    counts: Dict[str, int]
    skipped: Dict[str, int]
    dim: int
    output_path: str
    manifest_path: str


def _class_dirs(root: Path):
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise ExportError(f"{root} contains no class subdirectories")
    return dirs


def export(spec: ExportSpec) -> ExportSummary:
    root = Path(spec.image_root)
    if not root.is_dir():
        raise ExportError(f"image root {root} is not a directory")
    backbone = resolve(spec.backbone_id, spec.features, spec.device)
    class_dirs = _class_dirs(root)
    names = tuple(d.name for d in class_dirs)

    blocks = []
    label_ids = []
    counts: Dict[str, int] = {}
    skipped: Dict[str, int] = {}
    for class_id, class_dir in enumerate(class_dirs):
        images = []
        for path in sorted(p for p in class_dir.iterdir() if p.is_file()):
            try:
                images.append(load_image(path))
            except Exception as exc:
                skipped[class_dir.name] = skipped.get(class_dir.name, 0) + 1
                print(f"warning: skipping undecodable {path}: {exc}",
                      file=sys.stderr)
        if not images:
            raise ExportError(
                f"class directory {class_dir} has no decodable images")
        counts[class_dir.name] = len(images)
        stack = np.stack(images)
        for start in range(0, len(stack), spec.batch_size):
            blocks.append(backbone(stack[start:start + spec.batch_size]))
        label_ids.extend([class_id] * len(images))

    vectors = np.vstack(blocks)
    write_embs(spec.output_path, names, np.asarray(label_ids), vectors)

    manifest = {
        "source": str(root),
        "backbone": backbone.name,
        "features": getattr(backbone, "features", "head"),
        "preprocessing": {
            "resize": list(TARGET_SIZE),
            "interpolation": "bilinear",
            "scale": "divide-by-255",
        },
        "dim": backbone.width,
        "counts": counts,
        "skipped": skipped,
    }
    if spec.write_timestamp:
        manifest["created_at"] = datetime.datetime.now(
            datetime.timezone.utc).isoformat()
    manifest_path = str(spec.output_path) + ".manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return ExportSummary(names, counts, skipped, backbone.width,
                         str(spec.output_path), manifest_path)
