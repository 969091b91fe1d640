"""embattr-export: image folders in, one EMBS embedding set out."""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .backbones import BackboneError
from .export import ExportError, ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embattr-export",
        description="run a feature backbone over labeled image folders "
                    "and write an EMBS embedding set")
    parser.add_argument("--root", required=True,
                        help="directory whose subdirectories are class labels")
    parser.add_argument("--backbone", default="rp1000",
                        help="grid16 | rp<width>[-seed] | torchvision:<model>")
    parser.add_argument("--out", required=True, help="output .embs path")
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--features", choices=("head", "pooled"),
                        default="head",
                        help="torchvision only: classifier output or pooled "
                             "features")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--timestamp", action="store_true",
                        help="record a creation time in the manifest "
                             "(breaks byte-identical re-export)")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(image_root=args.root, backbone_id=args.backbone,
                      output_path=args.out, batch_size=args.batch,
                      device=args.device, features=args.features,
                      write_timestamp=args.timestamp)
    try:
        summary = export(spec)
    except (ExportError, BackboneError) as exc:
        print(f"error: export: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    total = sum(summary.counts.values())
    print(f"exported {total} embeddings ({len(summary.classes)} classes, "
          f"dim {summary.dim}) -> {summary.output_path}")
    for name in summary.classes:
        skip_note = (f" ({summary.skipped[name]} skipped)"
                     if name in summary.skipped else "")
        print(f"  {name}: {summary.counts[name]}{skip_note}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
