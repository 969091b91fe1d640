import io

import numpy as np
import pytest

from embattr import (
    EmbeddingSet,
    LabelTable,
    build_support,
    classify,
    classify_batch,
    load_support,
    make_synthetic_benchmark,
    save_support,
)
from embattr.errors import (
    ConfigurationError,
    DegenerateVectorError,
    DimensionMismatchError,
)
from embattr.knn import SupportSet, build_support_split


def unit_rows(a):
    a = np.asarray(a, dtype=np.float64)
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def make_support(vectors, labels, names, k=1):
    return SupportSet(LabelTable(names), np.asarray(labels, dtype=np.int64),
                      unit_rows(vectors), k)


def brute_force_predict(support, query, k):
    """Full-sort oracle: rank every exemplar, vote, break ties by the
    documented rules; no shared code with classify."""
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    sims = [float(np.dot(support.vectors[j], q)) for j in range(len(support))]
    order = sorted(range(len(support)), key=lambda j: (-sims[j], j))[:k]
    n_classes = len(support.labels)
    votes = [0] * n_classes
    simsum = [0.0] * n_classes
    for j in order:
        votes[support.label_ids[j]] += 1
        simsum[support.label_ids[j]] += sims[j]
    posterior = [v / k for v in votes]
    best = max(range(n_classes),
               key=lambda c: (votes[c], simsum[c], -c))
    return posterior, best


class TestBuildSupport:
    def test_one_shot_three_classes(self):
        rng = np.random.default_rng(0)
        data = EmbeddingSet(4, LabelTable(("a", "b", "c")),
                            rng.integers(0, 3, 30),
                            rng.normal(size=(30, 4)).astype(np.float32))
        support = build_support(data, shots_per_class=1, k=1, seed=0)
        assert len(support) == 3
        assert sorted(support.label_ids.tolist()) == [0, 1, 2]

    def test_paper_scale_support(self):
        data = make_synthetic_benchmark(seed=1, count_per_class=200)
        support = build_support(data, shots_per_class=150, k=11, seed=3)
        assert len(support) == 150 * 9
        assert np.abs(np.linalg.norm(support.vectors, axis=1) - 1).max() < 1e-9

    def test_determinism(self):
        data = make_synthetic_benchmark(seed=2, count_per_class=50)
        s1 = build_support(data, 10, 5, seed=9)
        s2 = build_support(data, 10, 5, seed=9)
        assert np.array_equal(s1.vectors, s2.vectors)
        assert np.array_equal(s1.label_ids, s2.label_ids)

    def test_split_remainder_disjoint(self):
        data = make_synthetic_benchmark(seed=3, count_per_class=30)
        _, sel, rem = build_support_split(data, 5, 3, seed=1)
        assert set(sel) & set(rem) == set()
        assert len(sel) + len(rem) == len(data)

    def test_k_exceeding_exemplars(self):
        rng = np.random.default_rng(1)
        data = EmbeddingSet(3, LabelTable(("a",)), np.zeros(4, dtype=np.int64),
                            rng.normal(size=(4, 3)).astype(np.float32))
        with pytest.raises(ConfigurationError):
            build_support(data, shots_per_class=2, k=5, seed=0)

    def test_zero_norm_exemplar(self):
        data = EmbeddingSet(3, LabelTable(("a",)), np.zeros(2, dtype=np.int64),
                            np.array([[1, 0, 0], [0, 0, 0]], dtype=np.float32))
        with pytest.raises(DegenerateVectorError):
            build_support(data, shots_per_class=2, k=1, seed=0)


class TestClassify:
    def test_exact_match_one_shot(self, backend):
        support = make_support(np.eye(3), [0, 1, 2], ("a", "b", "c"), k=1)
        pred = classify(support, np.array([0.0, 1.0, 0.0]), k=1)
        assert pred.predicted == 1
        assert pred.confidence == 1.0
        assert pred.posterior.tolist() == [0.0, 1.0, 0.0]

    def test_six_five_split_vote(self, backend):
        # 11 exemplars: 6 near +x for class 0, 5 near +y for class 1
        angles0 = np.linspace(-0.2, 0.2, 6)
        angles1 = np.linspace(np.pi / 2 - 0.2, np.pi / 2 + 0.2, 5)
        vecs = np.array([[np.cos(a), np.sin(a)]
                         for a in np.concatenate([angles0, angles1])])
        support = make_support(vecs, [0] * 6 + [1] * 5, ("a", "b"), k=11)
        pred = classify(support, np.array([1.0, 1.0]), k=11)
        assert pred.posterior.tolist() == [6 / 11, 5 / 11]
        assert pred.predicted == 0
        assert pred.confidence == 6 / 11

    def test_scale_invariance_power_of_two(self, backend):
        rng = np.random.default_rng(5)
        support = make_support(rng.normal(size=(20, 6)),
                               rng.integers(0, 3, 20), ("a", "b", "c"), k=5)
        q = rng.normal(size=6)
        base = classify(support, q)
        for c in (2.0, 0.25, 1024.0):
            scaled = classify(support, c * q)
            assert scaled.predicted == base.predicted
            assert np.array_equal(scaled.posterior, base.posterior)
            assert scaled.confidence == base.confidence

    def test_scale_invariance_generic_constant(self, backend):
        rng = np.random.default_rng(6)
        support = make_support(rng.normal(size=(30, 5)),
                               rng.integers(0, 4, 30),
                               ("a", "b", "c", "d"), k=7)
        for trial in range(10):
            q = rng.normal(size=5)
            base = classify(support, q)
            scaled = classify(support, 3.7 * q)
            assert scaled.predicted == base.predicted
            assert np.array_equal(scaled.posterior, base.posterior)

    def test_exemplar_self_classification(self, backend):
        rng = np.random.default_rng(7)
        support = make_support(rng.normal(size=(15, 4)),
                               rng.integers(0, 3, 15), ("a", "b", "c"), k=1)
        for j in range(15):
            pred = classify(support, support.vectors[j], k=1)
            assert pred.predicted == support.label_ids[j]
            assert pred.confidence == 1.0

    def test_posterior_lattice_and_sum(self, backend):
        rng = np.random.default_rng(8)
        support = make_support(rng.normal(size=(40, 8)),
                               rng.integers(0, 5, 40),
                               tuple("abcde"), k=11)
        for _ in range(20):
            pred = classify(support, rng.normal(size=8))
            votes = pred.posterior * 11
            assert np.allclose(votes, np.round(votes), atol=1e-9)
            assert pred.posterior.sum() == pytest.approx(1.0, abs=1e-9)
            assert pred.predicted == int(np.argmax(pred.posterior)) or (
                pred.posterior[pred.predicted] == pred.posterior.max())

    def test_brute_force_oracle_equivalence(self, backend):
        rng = np.random.default_rng(9)
        for _ in range(25):
            m = int(rng.integers(12, 120))
            d = int(rng.integers(2, 33))
            n_classes = int(rng.integers(2, 6))
            support = make_support(rng.normal(size=(m, d)),
                                   rng.integers(0, n_classes, m),
                                   tuple(f"c{i}" for i in range(n_classes)),
                                   k=11)
            for k in (1, 5, 11):
                q = rng.normal(size=d)
                got = classify(support, q, k=k)
                oracle_post, oracle_label = brute_force_predict(support, q, k)
                assert got.predicted == oracle_label
                assert got.posterior.tolist() == oracle_post

    def test_rank_tie_prefers_smaller_index(self, backend):
        # identical exemplars at the k-th boundary
        v = unit_rows([[1.0, 0.0]])[0]
        w = unit_rows([[0.0, 1.0]])[0]
        support = make_support([v, v, v, w], [0, 1, 2, 2],
                               ("a", "b", "c"), k=2)
        pred = classify(support, v, k=2)
        # exemplars 0 and 1 tie at similarity 1; both enter the top 2
        assert pred.posterior.tolist() == [0.5, 0.5, 0.0]
        assert pred.predicted == 0  # vote tie, equal simsum, smaller label id

    def test_class_tie_higher_summed_similarity_wins(self, backend):
        # class 1's two neighbors are closer than class 0's two
        vecs = [[1.0, 0.0], [np.cos(0.3), np.sin(0.3)],
                [np.cos(0.1), np.sin(0.1)], [np.cos(0.15), np.sin(0.15)]]
        support = make_support(vecs, [0, 0, 1, 1], ("a", "b"), k=4)
        pred = classify(support, np.array([1.0, 0.0]), k=4)
        assert pred.posterior.tolist() == [0.5, 0.5]
        assert pred.predicted == 1

    def test_batch_matches_per_query(self, backend):
        rng = np.random.default_rng(10)
        support = make_support(rng.normal(size=(25, 5)),
                               rng.integers(0, 3, 25), ("a", "b", "c"), k=5)
        queries = rng.normal(size=(8, 5))
        batch = classify_batch(support, queries)
        for i in range(8):
            single = classify(support, queries[i])
            assert single.predicted == batch[i].predicted
            assert np.array_equal(single.posterior, batch[i].posterior)

    def test_empty_query_batch(self, backend):
        support = make_support(np.eye(2), [0, 1], ("a", "b"), k=1)
        assert classify_batch(support, np.empty((0, 2))) == []

    def test_dimension_mismatch(self, backend):
        support = make_support(np.eye(3), [0, 1, 2], ("a", "b", "c"), k=1)
        with pytest.raises(DimensionMismatchError):
            classify(support, np.array([1.0, 0.0]))

    def test_zero_norm_query(self, backend):
        support = make_support(np.eye(2), [0, 1], ("a", "b"), k=1)
        with pytest.raises(DegenerateVectorError):
            classify(support, np.zeros(2))

    def test_distance_weighted_variant(self, backend):
        support = make_support(np.eye(2), [0, 1], ("a", "b"), k=2)
        pred = classify(support, np.array([1.0, 0.2]), k=2,
                        distance_weighted=True)
        assert pred.posterior.sum() == pytest.approx(1.0)
        assert pred.predicted == 0
        assert pred.posterior[0] > 0.5  # closer neighbor outweighs 1/k


class TestBackendAgreement:
    def test_predictions_identical(self):
        from embattr import kernels
        rng = np.random.default_rng(11)
        previous = kernels.get_backend()
        try:
            support = make_support(rng.normal(size=(60, 7)),
                                   rng.integers(0, 4, 60),
                                   ("a", "b", "c", "d"), k=11)
            queries = rng.normal(size=(30, 7))
            results = {}
            for name in ("numba", "numpy"):
                kernels.set_backend(name)
                results[name] = classify_batch(support, queries)
            for pa, pb in zip(results["numba"], results["numpy"]):
                assert pa.predicted == pb.predicted
                assert np.array_equal(pa.posterior, pb.posterior)
                assert pa.confidence == pb.confidence
        finally:
            kernels.set_backend(previous)


class TestSerialization:
    def test_support_roundtrip(self):
        rng = np.random.default_rng(12)
        support = make_support(rng.normal(size=(20, 6)),
                               rng.integers(0, 3, 20), ("a", "b", "c"), k=7)
        buf = io.BytesIO()
        save_support(support, buf)
        buf.seek(0)
        loaded = load_support(buf)
        assert loaded.k_default == 7
        assert loaded.labels == support.labels
        assert np.array_equal(loaded.label_ids, support.label_ids)
        # vectors go through f32 but stay unit length after reload
        assert np.abs(np.linalg.norm(loaded.vectors, axis=1) - 1).max() < 1e-9
        assert np.abs(loaded.vectors - support.vectors).max() < 1e-6

    def test_loaded_support_classifies_identically(self):
        data = make_synthetic_benchmark(seed=4, count_per_class=40)
        support = build_support(data, 10, 5, seed=2)
        buf = io.BytesIO()
        save_support(support, buf)
        buf.seek(0)
        loaded = load_support(buf)
        rng = np.random.default_rng(13)
        queries = data.vectors[rng.choice(len(data), 20, replace=False)]
        for pa, pb in zip(classify_batch(support, queries),
                          classify_batch(loaded, queries)):
            assert pa.predicted == pb.predicted
            assert np.array_equal(pa.posterior, pb.posterior)

    def test_version_one_reader_rejects_support_blob(self):
        from embattr import read_set
        from embattr.errors import UnsupportedVersionError
        support = make_support(np.eye(2), [0, 1], ("a", "b"), k=1)
        buf = io.BytesIO()
        save_support(support, buf)
        buf.seek(0)
        with pytest.raises(UnsupportedVersionError):
            read_set(buf)

    def test_support_loader_rejects_plain_set(self):
        from embattr import EmbeddingSet, LabelTable, write_set
        from embattr.errors import UnsupportedVersionError
        s = EmbeddingSet(2, LabelTable(("a",)), np.zeros(1, dtype=np.int64),
                         np.ones((1, 2), dtype=np.float32))
        buf = io.BytesIO()
        write_set(s, buf)
        buf.seek(0)
        with pytest.raises(UnsupportedVersionError):
            load_support(buf)
