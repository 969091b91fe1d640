"""Embedding-level synthetic-image attribution toolkit.

Supervised contrastive training of a projection head, few-shot k-NN
attribution over the learned latent space, and open-set evaluation
(CCR / FPR / OSCR / AUC), with a binary EMBS interchange format tying
the pieces together.
"""

from .contrastive import (
    LabeledBatch,
    Temperature,
    l2_normalize,
    supcon_grad,
    supcon_loss,
    supcon_tau_grad,
)
from .errors import EmbattrError
from .harness import (
    EXPERIMENT_PRESETS,
    GENIMAGE_CLASSES,
    ExperimentConfig,
    SplitSet,
    SweepConfig,
    make_synthetic_benchmark,
    pca2,
    run_experiment,
    run_splits,
    sweep_shots,
)
from .head import ProjectionHead, forward, init_head, load_head, save_head
from .kernels import get_backend, set_backend
from .knn import (
    Prediction,
    SupportSet,
    build_support,
    classify,
    classify_batch,
    load_support,
    save_support,
)
from .metrics import (
    EvalRecord,
    EvalRecords,
    MetricsReport,
    ThresholdCurve,
    binary_detection,
    ccr,
    fpr,
    oscr,
    report,
    roc_auc,
    threshold_curve,
)
from .store import (
    EmbeddingSet,
    LabelTable,
    partition,
    read_set,
    write_set,
)
from .trainer import ClusterSpec, TrainConfig, make_clusters, separated_means, train

__version__ = "0.1.0"

__all__ = [
    "EXPERIMENT_PRESETS",
    "GENIMAGE_CLASSES",
    "ClusterSpec",
    "EmbattrError",
    "EmbeddingSet",
    "EvalRecord",
    "EvalRecords",
    "ExperimentConfig",
    "LabelTable",
    "LabeledBatch",
    "MetricsReport",
    "Prediction",
    "ProjectionHead",
    "SplitSet",
    "SupportSet",
    "SweepConfig",
    "Temperature",
    "ThresholdCurve",
    "TrainConfig",
    "binary_detection",
    "build_support",
    "ccr",
    "classify",
    "classify_batch",
    "forward",
    "fpr",
    "get_backend",
    "init_head",
    "l2_normalize",
    "load_head",
    "load_support",
    "make_clusters",
    "make_synthetic_benchmark",
    "oscr",
    "partition",
    "pca2",
    "read_set",
    "report",
    "roc_auc",
    "run_experiment",
    "run_splits",
    "save_head",
    "save_support",
    "separated_means",
    "set_backend",
    "supcon_grad",
    "supcon_loss",
    "supcon_tau_grad",
    "sweep_shots",
    "threshold_curve",
    "train",
    "write_set",
]
