"""Command-line pipeline: embattr <subcommand>.

Every run with identical inputs and seeds writes byte-identical outputs;
failures exit nonzero after printing one machine-parsable line of the form
``error: <category>: <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

from . import harness, knn, metrics, trainer
from .contrastive import Temperature
from .errors import ConfigurationError, EmbattrError, ValidationError
from .head import forward, init_head, load_head, save_head
from .knn import build_support_split, classify_batch, load_support, save_support
from .store import EmbeddingSet, read_set, write_set
from .trainer import ClusterSpec, TrainConfig

DEFAULT_EPOCHS = 20
DEFAULT_LR = 1.0
DEFAULT_SAMPLES_PER_CLASS = 8


def _parse_classes(spec: str) -> tuple:
    if spec in harness.EXPERIMENT_PRESETS:
        return harness.EXPERIMENT_PRESETS[spec]
    names = tuple(s for s in spec.split(",") if s)
    if not names:
        raise ValidationError(f"no class names in {spec!r}")
    return names


def _derive_batch(n_classes: int, batch_size: int):
    if batch_size % n_classes != 0:
        raise ConfigurationError(
            f"batch size {batch_size} not divisible by {n_classes} classes")
    spc = batch_size // n_classes
    if spc < 2:
        raise ConfigurationError(
            f"batch size {batch_size} gives {spc} samples per class, need >= 2")
    return n_classes, spc


def _train_cfg_from_dict(d: dict, n_classes: int) -> TrainConfig:
    spc = int(d.get("samples_per_class", DEFAULT_SAMPLES_PER_CLASS))
    cpb = int(d.get("classes_per_batch", n_classes))
    batch = int(d.get("batch_size", cpb * spc))
    return TrainConfig(
        batch_size=batch,
        epochs=int(d.get("epochs", DEFAULT_EPOCHS)),
        learning_rate=float(d.get("learning_rate", DEFAULT_LR)),
        classes_per_batch=cpb,
        samples_per_class=spc,
        tau=Temperature(float(d.get("tau", Temperature().value))),
        seed=int(d.get("seed", 0)),
    )


def experiment_config_from_dict(d: dict) -> harness.ExperimentConfig:
    if "preset" in d:
        names = harness.EXPERIMENT_PRESETS[d["preset"]]
    else:
        names = tuple(d["train_label_names"])
    return harness.ExperimentConfig(
        name=str(d.get("name", "experiment")),
        train_label_names=names,
        train_cfg=_train_cfg_from_dict(d.get("train", {}), len(names)),
        shots_per_class=int(d.get("shots_per_class", knn.DEFAULT_SHOTS)),
        k=int(d.get("k", knn.DEFAULT_K)),
        seed=int(d.get("seed", 0)),
        tau=Temperature(float(d.get("tau", Temperature().value))),
        head_dims=tuple(d["head_dims"]) if "head_dims" in d else None,
    )


def cluster_spec_from_dict(d: dict) -> ClusterSpec:
    num_classes = int(d["num_classes"])
    dim = int(d["dim"])
    if "means" in d:
        means = np.asarray(d["means"], dtype=np.float64)
    else:
        means = trainer.separated_means(num_classes, dim,
                                        float(d.get("separation", 5.0)))
    return ClusterSpec(
        num_classes=num_classes,
        dim=dim,
        means=means,
        spread=np.asarray(d.get("spread", 1.0), dtype=np.float64),
        count_per_class=int(d["count_per_class"]),
        seed=int(d.get("seed", 0)),
        names=tuple(d["names"]) if "names" in d else None,
    )


def _load_json(path: str) -> dict:
    with open(path, "r") as fh:
        return json.load(fh)


def _cmd_train_head(args) -> int:
    data = read_set(args.train)
    names = _parse_classes(args.classes)
    subset = data.restrict_to(names)
    cpb, spc = _derive_batch(len(names), args.batch)
    cfg = TrainConfig(batch_size=args.batch, epochs=args.epochs,
                      learning_rate=args.lr, classes_per_batch=cpb,
                      samples_per_class=spc, tau=Temperature(args.tau),
                      seed=args.seed)
    if args.dims == "auto":
        dims = harness.default_head_dims(data.dim)
    else:
        dims = tuple(int(d) for d in args.dims.split(","))
    head = init_head(dims, args.seed)
    trained, history = trainer.train(head, subset, cfg)
    save_head(trained, args.out)
    print(f"trained head {args.out}: dims={list(dims)} epochs={args.epochs} "
          f"loss {history[0]:.6f} -> {history[-1]:.6f}")
    return 0


def _latent_set(head, data: EmbeddingSet) -> EmbeddingSet:
    latent = forward(head, data.vectors.astype(np.float64))
    return EmbeddingSet(head.d_out, data.labels, data.label_ids,
                        latent.astype(np.float32))


def _cmd_build_support(args) -> int:
    data = read_set(args.data)
    head = load_head(args.head)
    latent = _latent_set(head, data)
    support, sel, rem = build_support_split(latent, args.shots, args.k,
                                            args.seed)
    save_support(support, args.out)
    if args.remainder_out:
        write_set(data.subset(rem), args.remainder_out)
    print(f"support {args.out}: {len(support)} exemplars, k={support.k_default}")
    return 0


def _cmd_classify(args) -> int:
    support = load_support(args.support)
    head = load_head(args.head)
    queries = read_set(args.queries)
    latent = forward(head, queries.vectors.astype(np.float64))
    predictions = classify_batch(support, latent)
    seen_names = _parse_classes(args.seen) if args.seen else ()
    seen_ids = queries.labels.ids_of(seen_names)
    records = metrics.EvalRecords.build(
        queries.labels, seen_ids, list(range(len(queries))),
        [int(t) for t in queries.label_ids], predictions)
    metrics.write_records_csv(records, args.out)
    print(f"classified {len(predictions)} queries -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    seen_names = _parse_classes(args.seen) if args.seen else ()
    records = metrics.read_records_csv(args.records, seen_names)
    rep = metrics.report(records)
    payload = metrics.report_payload(rep)
    if args.real_class:
        binary = metrics.binary_detection(records, args.real_class)
        payload["binary_detection"] = {
            "per_generator_accuracy": binary.per_generator_accuracy,
            "average_accuracy": binary.average_accuracy,
            "auc": binary.auc,
        }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    with open(args.out, "w") as fh:
        fh.write(text)
    if args.csv_out:
        header, row = metrics.report_to_csv_row(rep)
        metrics._write_csv(header, [row], args.csv_out)
    print(f"report -> {args.out}")
    return 0


def _cmd_splits(args) -> int:
    cfg_dict = _load_json(args.config)
    base = experiment_config_from_dict(cfg_dict["base"])
    splits = harness.SplitSet(tuple(
        (tuple(s["seen"]), tuple(s.get("unseen", ()))) for s in cfg_dict["splits"]))
    data = read_set(args.data)
    test_data = read_set(args.test_data) if args.test_data else None
    result = harness.run_splits(splits, data, base, test_data)
    os.makedirs(args.out, exist_ok=True)
    for i, rep in enumerate(result.per_split):
        metrics.write_report(rep, os.path.join(args.out, f"split_{i}.json"))
    metrics.write_report(result.mean, os.path.join(args.out, "mean.json"))
    with open(os.path.join(args.out, "stddev.json"), "w") as fh:
        fh.write(json.dumps(result.stddev, indent=2, sort_keys=True) + "\n")
    print(f"{len(result.per_split)} splits -> {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg_dict = _load_json(args.config)
    base = experiment_config_from_dict(cfg_dict["base"])
    sweep_cfg = harness.SweepConfig(
        shots_grid=tuple(cfg_dict.get("shots_grid", harness.DEFAULT_SHOTS_GRID)),
        repeats=int(cfg_dict.get("repeats", 1)),
        base=base)
    train_data = read_set(cfg_dict["train_data"])
    test_data = read_set(cfg_dict["test_data"])
    rows = harness.sweep_shots(sweep_cfg, train_data, test_data)
    harness.write_sweep_csv(rows, args.out)
    print(f"{len(rows)} sweep rows -> {args.out}")
    return 0


def _cmd_pca2(args) -> int:
    data = read_set(args.data)
    coords = harness.pca2(data)
    harness.write_pca_csv(data, coords, args.out)
    print(f"projected {len(data)} records -> {args.out}")
    return 0


def _cmd_make_clusters(args) -> int:
    spec = cluster_spec_from_dict(_load_json(args.spec))
    write_set(trainer.make_clusters(spec), args.out)
    print(f"{spec.num_classes} x {spec.count_per_class} records -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embattr",
        description="embedding-level synthetic-image attribution pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-head", help="train a projection head")
    p.add_argument("--train", required=True)
    p.add_argument("--classes", required=True,
                   help="comma-separated class names or a preset (ES1..ES5, ESB1)")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--tau", type=float, default=Temperature().value)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="auto",
                   help='comma-separated layer dims or "auto"')
    p.set_defaults(func=_cmd_train_head)

    p = sub.add_parser("build-support", help="draw a few-shot support set")
    p.add_argument("--data", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--shots", type=int, default=knn.DEFAULT_SHOTS)
    p.add_argument("--k", type=int, default=knn.DEFAULT_K)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--remainder-out", default=None,
                   help="write records left out of the support")
    p.set_defaults(func=_cmd_build_support)

    p = sub.add_parser("classify", help="k-NN classification of queries")
    p.add_argument("--support", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seen", default=None,
                   help="seen class names for the partition column")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("eval", help="metrics report from a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--seen", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--csv-out", default=None)
    p.add_argument("--real-class", default=None,
                   help="add a real-vs-synthetic detection section")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("splits", help="run seen/unseen splits and average them")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-data", default=None)
    p.set_defaults(func=_cmd_splits)

    p = sub.add_parser("sweep", help="few-shot sensitivity sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("pca2", help="2-D projection CSV for plotting")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pca2)

    p = sub.add_parser("make-clusters", help="synthetic fingerprint clusters")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_clusters)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmbattrError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    except (KeyError, json.JSONDecodeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
