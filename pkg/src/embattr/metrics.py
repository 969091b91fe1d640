"""Closed- and open-set evaluation metrics.

Records are scored two ways:

* Multiclass quality (accuracy, per-class precision/recall/F1) uses the
  full-table argmax stored in each prediction.
* Open-set quantities (CCR, FPR, OSCR, open AUC) use the *known-class
  score*: the maximum posterior over the classes the extractor was
  trained on.  A sample confidently attributed to a few-shot-only class
  therefore does not count as an acceptance of a known class.

CCR(tau) counts seen-partition records whose known-class argmax is the
true class with score strictly above tau; FPR(tau) counts
unseen-partition records with score greater than or equal to tau; the
asymmetry (> vs >=) is deliberate.  OSCR integrates CCR against FPR over a threshold
grid of every distinct score, the midpoints between adjacent scores, and
two sentinels, which makes the trapezoidal sum equal the exact area under
the step curve.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import UndefinedMetricError, UnknownLabelError, ValidationError
from .knn import Prediction
from .store import LabelTable, PathOrStream

SEEN = "seen"
UNSEEN = "unseen"
UNKNOWN_NAME = "UNKNOWN"


@dataclass(frozen=True)
class EvalRecord:
    sample_id: int
    true_label: Optional[int]
    partition: str
    prediction: Prediction


@dataclass(frozen=True)
class EvalRecords:
    """Record collection plus the seen-class context it is judged against."""

    labels: LabelTable
    seen_ids: frozenset
    records: tuple

    def __post_init__(self):
        seen = frozenset(int(i) for i in self.seen_ids)
        for lid in seen:
            if not 0 <= lid < len(self.labels):
                raise UnknownLabelError(f"seen id {lid} not in table")
        records = tuple(self.records)
        for rec in records:
            if rec.true_label is not None and not (
                    0 <= rec.true_label < len(self.labels)):
                raise ValidationError(
                    f"record {rec.sample_id} true label {rec.true_label} "
                    f"outside the label table")
            want = SEEN if (rec.true_label is not None
                            and rec.true_label in seen) else UNSEEN
            if rec.partition != want:
                raise ValidationError(
                    f"record {rec.sample_id} partition {rec.partition!r} "
                    f"inconsistent with seen-class set")
            if rec.prediction.posterior.shape != (len(self.labels),):
                raise ValidationError(
                    f"record {rec.sample_id} posterior length mismatch")
        object.__setattr__(self, "seen_ids", seen)
        object.__setattr__(self, "records", records)

    def __len__(self) -> int:
        return len(self.records)

    @staticmethod
    def build(labels: LabelTable, seen_ids: Iterable[int],
              sample_ids: Sequence[int], true_labels: Sequence[Optional[int]],
              predictions: Sequence[Prediction]) -> "EvalRecords":
        seen = frozenset(int(i) for i in seen_ids)
        records = []
        for sid, true, pred in zip(sample_ids, true_labels, predictions):
            part = SEEN if (true is not None and true in seen) else UNSEEN
            records.append(EvalRecord(int(sid), true, part, pred))
        return EvalRecords(labels, seen, tuple(records))


@dataclass(frozen=True)
class ThresholdCurve:
    """(tau, ccr, fpr) samples sorted by descending tau."""

    taus: np.ndarray
    ccr: np.ndarray
    fpr: np.ndarray

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=np.float64)
        ccr = np.asarray(self.ccr, dtype=np.float64)
        fpr = np.asarray(self.fpr, dtype=np.float64)
        if not (taus.shape == ccr.shape == fpr.shape) or taus.ndim != 1:
            raise ValidationError("curve arrays must share one dimension")
        if np.any(np.diff(taus) > 0):
            raise ValidationError("taus must be sorted descending")
        if np.any(np.diff(ccr) < 0) or np.any(np.diff(fpr) < 0):
            raise ValidationError("ccr/fpr must be nonincreasing in tau")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "ccr", ccr)
        object.__setattr__(self, "fpr", fpr)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass
class MetricsReport:
    closed_accuracy: Optional[float]
    overall_accuracy: Optional[float]
    auc: Optional[float]
    oscr: Optional[float]
    per_class: Dict[str, PRF]
    macro_seen: Optional[PRF]
    macro_unseen: Optional[PRF]


def _seen_arrays(records: EvalRecords):
    """Known-class scores and argmaxes for every record, plus partitions."""
    seen_cols = np.array(sorted(records.seen_ids), dtype=np.int64)
    n = len(records.records)
    scores = np.zeros(n)
    seen_argmax = np.full(n, -1, dtype=np.int64)
    is_seen = np.zeros(n, dtype=bool)
    correct = np.zeros(n, dtype=bool)
    if seen_cols.size:
        for i, rec in enumerate(records.records):
            sub = rec.prediction.posterior[seen_cols]
            j = int(np.argmax(sub))  # first max keeps the smallest label id
            scores[i] = sub[j]
            seen_argmax[i] = seen_cols[j]
            is_seen[i] = rec.partition == SEEN
            correct[i] = (rec.true_label is not None
                          and seen_argmax[i] == rec.true_label)
    else:
        for i, rec in enumerate(records.records):
            is_seen[i] = rec.partition == SEEN
    return scores, seen_argmax, is_seen, correct


def ccr(records: EvalRecords, tau: float) -> float:
    """Fraction of seen records correctly attributed with score > tau."""
    scores, _, is_seen, correct = _seen_arrays(records)
    if not is_seen.any():
        raise UndefinedMetricError("ccr needs at least one seen record")
    hits = correct[is_seen] & (scores[is_seen] > tau)
    return float(hits.sum() / is_seen.sum())


def fpr(records: EvalRecords, tau: float) -> float:
    """Fraction of unseen records with known-class score >= tau."""
    scores, _, is_seen, _ = _seen_arrays(records)
    unseen = ~is_seen
    if not unseen.any():
        raise UndefinedMetricError("fpr needs at least one unseen record")
    return float((scores[unseen] >= tau).sum() / unseen.sum())


def _sweep_grid(all_scores: np.ndarray) -> np.ndarray:
    """Descending taus: +inf, every distinct score with the midpoints
    between adjacent scores interleaved, then -inf."""
    distinct = np.unique(all_scores)[::-1]
    grid = [np.inf]
    for i, c in enumerate(distinct):
        grid.append(c)
        if i + 1 < distinct.size:
            grid.append((c + distinct[i + 1]) / 2.0)
    grid.append(-np.inf)
    return np.array(grid)


def threshold_curve(records: EvalRecords) -> ThresholdCurve:
    scores, _, is_seen, correct = _seen_arrays(records)
    if not is_seen.any():
        raise UndefinedMetricError("curve needs at least one seen record")
    if is_seen.all():
        raise UndefinedMetricError("curve needs at least one unseen record")
    n_seen = int(is_seen.sum())
    n_unseen = int((~is_seen).sum())
    correct_scores = np.sort(scores[is_seen & correct])
    unseen_scores = np.sort(scores[~is_seen])
    taus = _sweep_grid(scores)
    ccr_vals = (correct_scores.size
                - np.searchsorted(correct_scores, taus, side="right")) / n_seen
    fpr_vals = (unseen_scores.size
                - np.searchsorted(unseen_scores, taus, side="left")) / n_unseen
    return ThresholdCurve(taus, ccr_vals, fpr_vals)


def oscr(records: EvalRecords) -> float:
    """Area under the CCR-vs-FPR curve via the trapezoidal rule."""
    curve = threshold_curve(records)
    df = np.diff(curve.fpr)
    mid = (curve.ccr[1:] + curve.ccr[:-1]) / 2.0
    return float((df * mid).sum())


def roc_auc(scores_positive: Sequence[float],
            scores_negative: Sequence[float]) -> float:
    """Pairwise win rate with half credit for ties (rank formulation).

    Computed so that roc_auc(a, b) + roc_auc(b, a) == 1 holds exactly.
    """
    pos = np.asarray(scores_positive, dtype=np.float64)
    neg = np.asarray(scores_negative, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("roc_auc needs scores on both sides")
    pooled = np.concatenate([pos, neg])
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(pooled.size, dtype=np.float64)
    sorted_vals = pooled[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average 1-based rank
        i = j + 1
    r_pos_doubled = int(round(2.0 * ranks[:pos.size].sum()))
    num2 = r_pos_doubled - pos.size * (pos.size + 1)  # twice the U statistic
    den2 = 2 * pos.size * neg.size
    if 2 * num2 >= den2:
        return num2 / den2
    return 1.0 - (den2 - num2) / den2


def _confusion_metrics(records: EvalRecords):
    n_classes = len(records.labels)
    tp = np.zeros(n_classes, dtype=np.int64)
    pred_count = np.zeros(n_classes, dtype=np.int64)
    true_count = np.zeros(n_classes, dtype=np.int64)
    known = 0
    known_correct = 0
    for rec in records.records:
        pred = rec.prediction.predicted
        pred_count[pred] += 1
        if rec.true_label is not None:
            known += 1
            true_count[rec.true_label] += 1
            if pred == rec.true_label:
                tp[rec.true_label] += 1
                known_correct += 1
    per_class = {}
    for c, name in enumerate(records.labels.names):
        precision = tp[c] / pred_count[c] if pred_count[c] else 0.0
        recall = tp[c] / true_count[c] if true_count[c] else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        per_class[name] = PRF(float(precision), float(recall), float(f1))
    overall = known_correct / known if known else None
    return per_class, overall


def _macro(per_class: Dict[str, PRF], labels: LabelTable,
           ids: Sequence[int]) -> Optional[PRF]:
    ids = sorted(ids)
    if not ids:
        return None
    triples = [per_class[labels.name_of(i)] for i in ids]
    return PRF(float(np.mean([t.precision for t in triples])),
               float(np.mean([t.recall for t in triples])),
               float(np.mean([t.f1 for t in triples])))


def report(records: EvalRecords) -> MetricsReport:
    """Full metric bundle for one evaluation run."""
    if len(records) == 0:
        raise ValidationError("cannot report on zero records")
    per_class, overall = _confusion_metrics(records)
    seen_ids = sorted(records.seen_ids)
    unseen_ids = sorted(set(range(len(records.labels))) - records.seen_ids)
    scores, _, is_seen, _ = _seen_arrays(records)
    has_seen = bool(is_seen.any())
    has_unseen = bool((~is_seen).any())
    closed = ccr(records, -math.inf) if (has_seen and seen_ids) else None
    auc = (roc_auc(scores[is_seen], scores[~is_seen])
           if has_seen and has_unseen and seen_ids else None)
    oscr_val = oscr(records) if has_seen and has_unseen and seen_ids else None
    return MetricsReport(
        closed_accuracy=closed,
        overall_accuracy=overall,
        auc=auc,
        oscr=oscr_val,
        per_class=per_class,
        macro_seen=_macro(per_class, records.labels, seen_ids),
        macro_unseen=_macro(per_class, records.labels, unseen_ids),
    )


@dataclass
class BinaryDetectionReport:
    per_generator_accuracy: Dict[str, float]
    average_accuracy: Optional[float]
    auc: Optional[float]


def binary_detection(records: EvalRecords, real_label: str) -> BinaryDetectionReport:
    """Real-vs-synthetic view of multiclass records.

    A prediction counts as "real" when its argmax is the real class, else
    "synthetic".  Each generator is scored over its own records plus all
    real-class records; the detection AUC scores synthetic records against
    real ones with 1 - posterior[real] as the score.
    """
    real_id = records.labels.id_of(real_label)
    reals = [r for r in records.records if r.true_label == real_id]
    fakes_by_gen: Dict[int, list] = {}
    for rec in records.records:
        if rec.true_label is None or rec.true_label == real_id:
            continue
        fakes_by_gen.setdefault(rec.true_label, []).append(rec)
    per_gen = {}
    for gen_id in sorted(fakes_by_gen):
        pool = fakes_by_gen[gen_id] + reals
        hits = 0
        for rec in pool:
            pred_real = rec.prediction.predicted == real_id
            truly_real = rec.true_label == real_id
            hits += int(pred_real == truly_real)
        per_gen[records.labels.name_of(gen_id)] = hits / len(pool)
    average = float(np.mean(list(per_gen.values()))) if per_gen else None
    auc = None
    all_fakes = [r for recs in fakes_by_gen.values() for r in recs]
    if all_fakes and reals:
        auc = roc_auc(
            [1.0 - r.prediction.posterior[real_id] for r in all_fakes],
            [1.0 - r.prediction.posterior[real_id] for r in reals])
    return BinaryDetectionReport(per_gen, average, auc)


# ---------------------------------------------------------------------------
# serialization

def write_records_csv(records: EvalRecords, destination: PathOrStream) -> None:
    """One line per sample; posterior columns follow label-table order."""
    names = records.labels.names
    header = ["sample_id", "true_label", "partition", "predicted_label",
              "confidence"] + [f"posterior_{n}" for n in names]
    rows = []
    for rec in records.records:
        true_name = (UNKNOWN_NAME if rec.true_label is None
                     else records.labels.name_of(rec.true_label))
        rows.append([rec.sample_id, true_name, rec.partition,
                     records.labels.name_of(rec.prediction.predicted),
                     repr(rec.prediction.confidence)]
                    + [repr(float(p)) for p in rec.prediction.posterior])
    _write_csv(header, rows, destination)


def read_records_csv(source: PathOrStream,
                     seen_names: Iterable[str]) -> EvalRecords:
    """Rebuild records; partitions are rederived from ``seen_names``."""
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(source, "r", newline="") as fh:
            lines = fh.read().splitlines()
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError("records CSV is empty") from None
    prefix = "posterior_"
    fixed = ["sample_id", "true_label", "partition", "predicted_label",
             "confidence"]
    if header[:5] != fixed:
        raise ValidationError(f"unexpected records CSV header {header[:5]}")
    names = tuple(h[len(prefix):] for h in header[5:])
    if any(not h.startswith(prefix) for h in header[5:]) or not names:
        raise ValidationError("records CSV lacks posterior columns")
    labels = LabelTable(names)
    seen_ids = [labels.id_of(n) for n in seen_names]
    sample_ids, trues, preds = [], [], []
    for row in reader:
        if not row:
            continue
        sample_ids.append(int(row[0]))
        trues.append(None if row[1] == UNKNOWN_NAME else labels.id_of(row[1]))
        posterior = np.array([float(v) for v in row[5:]], dtype=np.float64)
        if abs(posterior.sum() - 1.0) > 1e-9:
            raise ValidationError(
                f"sample {row[0]} posterior sums to {posterior.sum()!r}")
        predicted = labels.id_of(row[3])
        confidence = float(row[4])
        if posterior[predicted] != confidence:
            raise ValidationError(
                f"sample {row[0]} confidence does not match its posterior")
        preds.append(Prediction(posterior, predicted, confidence))
    return EvalRecords.build(labels, seen_ids, sample_ids, trues, preds)


def _prf_dict(prf: Optional[PRF]):
    if prf is None:
        return None
    return {"precision": prf.precision, "recall": prf.recall, "f1": prf.f1}


def report_payload(rep: MetricsReport) -> dict:
    return {
        "closed_accuracy": rep.closed_accuracy,
        "overall_accuracy": rep.overall_accuracy,
        "auc": rep.auc,
        "oscr": rep.oscr,
        "macro_seen": _prf_dict(rep.macro_seen),
        "macro_unseen": _prf_dict(rep.macro_unseen),
        "per_class": {name: _prf_dict(prf) for name, prf in rep.per_class.items()},
    }


def report_to_json(rep: MetricsReport) -> str:
    return json.dumps(report_payload(rep), indent=2, sort_keys=True) + "\n"


def report_to_csv_row(rep: MetricsReport) -> Tuple[List[str], List[str]]:
    """Flat (header, row) pair covering every metric in the report."""
    def fmt(v):
        return "" if v is None else repr(v)

    header = ["closed_accuracy", "overall_accuracy", "auc", "oscr"]
    row = [fmt(rep.closed_accuracy), fmt(rep.overall_accuracy), fmt(rep.auc),
           fmt(rep.oscr)]
    for tag, prf in (("macro_seen", rep.macro_seen),
                     ("macro_unseen", rep.macro_unseen)):
        for part in ("precision", "recall", "f1"):
            header.append(f"{tag}_{part}")
            row.append(fmt(getattr(prf, part) if prf else None))
    for name, prf in rep.per_class.items():
        for part in ("precision", "recall", "f1"):
            header.append(f"{name}_{part}")
            row.append(fmt(getattr(prf, part)))
    return header, row


def write_report(rep: MetricsReport, json_destination: PathOrStream,
                 csv_destination: Optional[PathOrStream] = None) -> None:
    text = report_to_json(rep)
    if hasattr(json_destination, "write"):
        json_destination.write(text)
    else:
        with open(json_destination, "w", newline="") as fh:
            fh.write(text)
    if csv_destination is not None:
        header, row = report_to_csv_row(rep)
        _write_csv(header, [row], csv_destination)


def _write_csv(header, rows, destination: PathOrStream) -> None:
    def dump(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)

    if hasattr(destination, "write"):
        dump(destination)
    else:
        with open(destination, "w", newline="") as fh:
            dump(fh)
