import io
import math

import numpy as np
import pytest

from embattr import LabelTable, ccr, fpr, oscr, report, roc_auc, threshold_curve
from embattr.errors import UndefinedMetricError, ValidationError
from embattr.knn import Prediction
from embattr.metrics import (
    SEEN,
    UNSEEN,
    EvalRecords,
    binary_detection,
    read_records_csv,
    report_to_csv_row,
    write_records_csv,
)


def as_prediction(posterior):
    posterior = np.asarray(posterior, dtype=np.float64)
    predicted = int(np.argmax(posterior))
    return Prediction(posterior, predicted, float(posterior[predicted]))


def make_records(labels, seen_names, rows):
    """rows: (true_name_or_None, posterior) tuples."""
    table = LabelTable(labels)
    seen_ids = [table.id_of(n) for n in seen_names]
    trues, preds = [], []
    for true, post in rows:
        trues.append(None if true is None else table.id_of(true))
        preds.append(as_prediction(post))
    return EvalRecords.build(table, seen_ids, list(range(len(rows))), trues,
                             preds)


def seen_score(rec, seen_ids):
    return max(rec.prediction.posterior[i] for i in sorted(seen_ids))


def seen_argmax(rec, seen_ids):
    ids = sorted(seen_ids)
    best = max(ids, key=lambda i: (rec.prediction.posterior[i], -i))
    return best


def oscr_oracle(records):
    """Exact integral of CCR dFPR: sum CCR(c) * (FPR jump at c) over every
    distinct unseen-record score c."""
    seen = [r for r in records.records if r.partition == SEEN]
    unseen = [r for r in records.records if r.partition == UNSEEN]
    n_s, n_u = len(seen), len(unseen)
    unseen_scores = [seen_score(r, records.seen_ids) for r in unseen]
    total = 0.0
    for c in sorted(set(unseen_scores)):
        jump = sum(1 for s in unseen_scores if s == c) / n_u
        correct_above = sum(
            1 for r in seen
            if seen_argmax(r, records.seen_ids) == r.true_label
            and seen_score(r, records.seen_ids) > c) / n_s
        total += jump * correct_above
    return total


def random_records(rng, n=None, lattice=False):
    names = ("a", "b", "c", "d", "e")
    seen_names = ("a", "b", "c")
    n = n or int(rng.integers(10, 200))
    rows = []
    for _ in range(n):
        true = names[int(rng.integers(0, 5))]
        if lattice:
            votes = rng.multinomial(11, np.ones(5) / 5)
            post = votes / 11.0
        else:
            post = rng.dirichlet(np.ones(5))
        rows.append((true, post))
    return make_records(names, seen_names, rows)


class TestCcrFpr:
    def records_five(self):
        # three correct seen records at confidence .9/.6/.4, two wrong ones
        rows = [
            ("a", [0.9, 0.05, 0.05]),
            ("a", [0.6, 0.3, 0.1]),
            ("b", [0.3, 0.4, 0.3]),
            ("a", [0.2, 0.7, 0.1]),   # wrong: argmax b
            ("b", [0.8, 0.1, 0.1]),   # wrong: argmax a
        ]
        return make_records(("a", "b", "c"), ("a", "b"), rows)

    def test_tau_above_one_gives_zero(self):
        assert ccr(self.records_five(), 1.0) == 0.0
        assert ccr(self.records_five(), 2.0) == 0.0

    def test_tau_below_zero_gives_closed_accuracy(self):
        assert ccr(self.records_five(), -0.5) == pytest.approx(3 / 5)

    def test_hand_counted_threshold(self):
        assert ccr(self.records_five(), 0.5) == pytest.approx(2 / 5)

    def test_ccr_requires_seen(self):
        recs = make_records(("a", "b"), ("a",), [("b", [0.5, 0.5])])
        with pytest.raises(UndefinedMetricError):
            ccr(recs, 0.5)

    def unseen_four(self):
        rows = [
            ("c", [0.9, 0.05, 0.05]),
            ("c", [0.9, 0.1, 0.0]),
            ("c", [0.3, 0.2, 0.5]),
            ("c", [0.1, 0.1, 0.8]),
        ]
        return make_records(("a", "b", "c"), ("a", "b"), rows)

    def test_fpr_sentinels(self):
        recs = self.unseen_four()
        assert fpr(recs, 1.5) == 0.0
        assert fpr(recs, 0.0) == 1.0

    def test_fpr_hand_counted(self):
        # seen-class scores: .9, .9, .3, .1
        assert fpr(self.unseen_four(), 0.5) == pytest.approx(0.5)

    def test_fpr_is_inclusive_at_tau(self):
        assert fpr(self.unseen_four(), 0.9) == pytest.approx(0.5)

    def test_ccr_is_strict_at_tau(self):
        assert ccr(self.records_five(), 0.9) == 0.0

    def test_fpr_requires_unseen(self):
        recs = make_records(("a", "b"), ("a",), [("a", [0.9, 0.1])])
        with pytest.raises(UndefinedMetricError):
            fpr(recs, 0.5)


class TestOscr:
    def ideal(self):
        rows = [("a", [1.0, 0.0, 0.0])] * 3 + [("c", [0.0, 0.0, 1.0])] * 2
        return make_records(("a", "b", "c"), ("a", "b"), rows)

    def test_ideal_detector_is_exactly_one(self):
        assert oscr(self.ideal()) == 1.0

    def test_all_wrong_is_exactly_zero(self):
        rows = [("a", [0.0, 1.0, 0.0])] * 3 + [("c", [0.5, 0.5, 0.0])] * 2
        assert oscr(make_records(("a", "b", "c"), ("a", "b"), rows)) == 0.0

    def test_matches_exhaustive_oracle_continuous(self):
        rng = np.random.default_rng(33)
        for _ in range(40):
            recs = random_records(rng)
            if not any(r.partition == SEEN for r in recs.records):
                continue
            if not any(r.partition == UNSEEN for r in recs.records):
                continue
            assert abs(oscr(recs) - oscr_oracle(recs)) <= 1e-12

    def test_matches_exhaustive_oracle_lattice(self):
        # vote-fraction posteriors produce heavy cross-partition score ties
        rng = np.random.default_rng(34)
        for _ in range(40):
            recs = random_records(rng, lattice=True)
            if not any(r.partition == SEEN for r in recs.records):
                continue
            if not any(r.partition == UNSEEN for r in recs.records):
                continue
            assert abs(oscr(recs) - oscr_oracle(recs)) <= 1e-12

    def test_curve_monotone_with_endpoints(self):
        rng = np.random.default_rng(35)
        recs = random_records(rng, n=60, lattice=True)
        curve = threshold_curve(recs)
        assert curve.taus[0] == math.inf and curve.taus[-1] == -math.inf
        assert curve.ccr[0] == 0.0 and curve.fpr[0] == 0.0
        assert curve.fpr[-1] == 1.0
        assert (np.diff(curve.ccr) >= 0).all()
        assert (np.diff(curve.fpr) >= 0).all()

    def test_single_distinct_score_matches_oracle(self):
        # one shared confidence: FPR jumps 0 -> 1 exactly where CCR's
        # strict inequality still excludes every seen record
        rows = ([("a", [0.6, 0.2, 0.2])] * 3 + [("c", [0.6, 0.2, 0.2])] * 2)
        recs = make_records(("a", "b", "c"), ("a", "b"), rows)
        assert oscr(recs) == oscr_oracle(recs) == 0.0

    def test_fully_tied_partitions_match_oracle(self):
        rows = [
            ("a", [0.8, 0.1, 0.1]),
            ("a", [0.6, 0.3, 0.1]),
            ("c", [0.8, 0.1, 0.1]),   # unseen tied with a seen score
            ("c", [0.4, 0.3, 0.3]),
        ]
        recs = make_records(("a", "b", "c"), ("a", "b"), rows)
        assert abs(oscr(recs) - oscr_oracle(recs)) <= 1e-12

    def test_duplicate_record_reweights(self):
        rows = [("a", [0.9, 0.1, 0.0]), ("c", [0.6, 0.2, 0.2])]
        base = make_records(("a", "b", "c"), ("a", "b"), rows)
        doubled = make_records(("a", "b", "c"), ("a", "b"),
                               rows + [("c", [0.6, 0.2, 0.2])])
        assert fpr(base, 0.5) == 1.0
        assert fpr(doubled, 0.7) == 0.0
        assert ccr(base, 0.5) == ccr(doubled, 0.5)


class TestRocAuc:
    def test_disjoint_ranges(self):
        assert roc_auc([0.8, 0.9], [0.1, 0.2]) == 1.0
        assert roc_auc([0.1, 0.2], [0.8, 0.9]) == 0.0

    def test_all_ties(self):
        assert roc_auc([0.5, 0.5], [0.5, 0.5, 0.5]) == 0.5

    def test_hand_enumerated(self):
        assert roc_auc([0.9, 0.4], [0.6, 0.2]) == 0.75

    def test_pairwise_oracle(self):
        rng = np.random.default_rng(44)
        for _ in range(30):
            pos = rng.choice(np.linspace(0, 1, 12), size=rng.integers(1, 25))
            neg = rng.choice(np.linspace(0, 1, 12), size=rng.integers(1, 25))
            wins = sum(1.0 if p > n else 0.5 if p == n else 0.0
                       for p in pos for n in neg)
            expected = wins / (len(pos) * len(neg))
            assert abs(roc_auc(pos, neg) - expected) <= 1e-12

    def test_exact_complement_symmetry(self):
        rng = np.random.default_rng(45)
        for _ in range(200):
            pos = rng.choice(np.linspace(0, 1, 7), size=rng.integers(1, 30))
            neg = rng.choice(np.linspace(0, 1, 7), size=rng.integers(1, 30))
            assert roc_auc(pos, neg) + roc_auc(neg, pos) == 1.0

    def test_empty_side_rejected(self):
        with pytest.raises(UndefinedMetricError):
            roc_auc([], [0.5])
        with pytest.raises(UndefinedMetricError):
            roc_auc([0.5], [])


class TestReport:
    def test_all_correct(self):
        rows = [("a", [1.0, 0, 0]), ("b", [0, 1.0, 0]), ("c", [0, 0, 1.0])]
        rep = report(make_records(("a", "b", "c"), ("a", "b", "c"), rows))
        for prf in rep.per_class.values():
            assert (prf.precision, prf.recall, prf.f1) == (1.0, 1.0, 1.0)
        assert rep.closed_accuracy == 1.0
        assert rep.overall_accuracy == 1.0
        assert rep.macro_unseen is None

    def test_vacuous_class_zero_convention(self):
        rows = [("a", [1.0, 0, 0]), ("a", [1.0, 0, 0])]
        rep = report(make_records(("a", "b", "c"), ("a", "b"), rows))
        assert rep.per_class["c"] .precision == 0.0
        assert rep.per_class["c"].recall == 0.0
        assert rep.per_class["c"].f1 == 0.0

    def test_f1_harmonic_identity(self):
        rng = np.random.default_rng(55)
        recs = random_records(rng, n=120)
        rep = report(recs)
        for prf in rep.per_class.values():
            if prf.precision + prf.recall > 0:
                expected = (2 * prf.precision * prf.recall
                            / (prf.precision + prf.recall))
                assert prf.f1 == pytest.approx(expected, abs=1e-12)

    def test_macro_rows_average_member_classes(self):
        rng = np.random.default_rng(56)
        recs = random_records(rng, n=100)
        rep = report(recs)
        seen = [rep.per_class[n] for n in ("a", "b", "c")]
        unseen = [rep.per_class[n] for n in ("d", "e")]
        assert rep.macro_seen.f1 == pytest.approx(
            np.mean([p.f1 for p in seen]), abs=1e-12)
        assert rep.macro_unseen.precision == pytest.approx(
            np.mean([p.precision for p in unseen]), abs=1e-12)

    def test_all_seen_has_no_unseen_row_or_open_metrics(self):
        rows = [("a", [0.9, 0.1]), ("b", [0.2, 0.8])]
        rep = report(make_records(("a", "b"), ("a", "b"), rows))
        assert rep.macro_unseen is None
        assert rep.auc is None
        assert rep.oscr is None

    def test_unknown_true_label_hits_precision_only(self):
        rows = [("a", [1.0, 0.0]), (None, [1.0, 0.0])]
        rep = report(make_records(("a", "b"), ("a",), rows))
        assert rep.per_class["a"].precision == 0.5
        assert rep.per_class["a"].recall == 1.0
        assert rep.overall_accuracy == 1.0  # unknowns excluded

    def test_open_auc_present_with_both_partitions(self):
        rows = [("a", [0.9, 0.05, 0.05]), ("c", [0.2, 0.2, 0.6])]
        rep = report(make_records(("a", "b", "c"), ("a", "b"), rows))
        assert rep.auc == 1.0
        assert rep.oscr == 1.0


class TestBinaryDetection:
    def test_per_generator_accuracy(self):
        rows = [
            ("real", [0.8, 0.1, 0.1]),   # correct real
            ("real", [0.2, 0.7, 0.1]),   # called synthetic: wrong
            ("g1", [0.1, 0.8, 0.1]),     # correct synthetic
            ("g1", [0.9, 0.05, 0.05]),   # called real: wrong
            ("g2", [0.0, 0.3, 0.7]),     # correct synthetic
        ]
        recs = make_records(("real", "g1", "g2"), ("real", "g1"), rows)
        rep = binary_detection(recs, "real")
        assert rep.per_generator_accuracy["g1"] == pytest.approx(2 / 4)
        assert rep.per_generator_accuracy["g2"] == pytest.approx(2 / 3)
        assert rep.average_accuracy == pytest.approx((2 / 4 + 2 / 3) / 2)
        assert 0.0 <= rep.auc <= 1.0

    def test_paper_style_average(self):
        # averaging per-generator accuracies is plain arithmetic
        accs = [87.5, 96.5, 87.7, 91.6, 86.8, 94.4, 94.1, 91.6]
        assert round(float(np.mean(accs)), 1) == 91.3


class TestRecordsCsv:
    def test_roundtrip(self):
        rng = np.random.default_rng(66)
        recs = random_records(rng, n=25)
        buf = io.StringIO()
        write_records_csv(recs, buf)
        buf.seek(0)
        parsed = read_records_csv(buf, ("a", "b", "c"))
        assert parsed.labels == recs.labels
        assert len(parsed) == len(recs)
        for r1, r2 in zip(recs.records, parsed.records):
            assert r1.sample_id == r2.sample_id
            assert r1.true_label == r2.true_label
            assert r1.partition == r2.partition
            assert np.array_equal(r1.prediction.posterior,
                                  r2.prediction.posterior)

    def test_unknown_marker_roundtrip(self):
        rows = [(None, [0.5, 0.5]), ("a", [0.9, 0.1])]
        recs = make_records(("a", "b"), ("a",), rows)
        buf = io.StringIO()
        write_records_csv(recs, buf)
        buf.seek(0)
        parsed = read_records_csv(buf, ("a",))
        assert parsed.records[0].true_label is None
        assert parsed.records[0].partition == UNSEEN

    def test_header_shape(self):
        recs = make_records(("a", "b"), ("a",), [("a", [1.0, 0.0])])
        buf = io.StringIO()
        write_records_csv(recs, buf)
        header = buf.getvalue().splitlines()[0]
        assert header == ("sample_id,true_label,partition,predicted_label,"
                          "confidence,posterior_a,posterior_b")

    def test_report_csv_row_aligns(self):
        rng = np.random.default_rng(67)
        rep = report(random_records(rng, n=30))
        header, row = report_to_csv_row(rep)
        assert len(header) == len(row)
        assert header[0] == "closed_accuracy"


class TestEvalRecordsValidation:
    def test_partition_consistency_enforced(self):
        table = LabelTable(("a", "b"))
        pred = as_prediction([0.9, 0.1])
        from embattr.metrics import EvalRecord
        bad = EvalRecord(0, 0, UNSEEN, pred)  # class a is seen
        with pytest.raises(ValidationError):
            EvalRecords(table, frozenset({0}), (bad,))
