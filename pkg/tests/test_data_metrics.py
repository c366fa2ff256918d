"""Dataset generation, file round-trips and metric definitions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wtasoftmax import (
    ConfigError,
    Dataset,
    UsageError,
    gen_clustered,
    in_class_variance,
    load_dataset,
    load_dataset_text,
    precision_at_k,
    precision_report,
    save_dataset,
    save_dataset_text,
    top1_accuracy,
)


class TestGenClustered:
    def test_zero_spread_examples_sit_on_centers(self):
        ds = gen_clustered(5, 8, per_class=3, spread=0.0, seed=1)
        centers = ds.meta["centers"]
        for feat, labels in zip(ds.features, ds.labels):
            np.testing.assert_array_equal(
                feat, centers[labels[0]].astype(np.float32))

    def test_example_count(self):
        ds = gen_clustered(3, 4, per_class=1, spread=0.5, seed=0)
        assert len(ds) == 3
        assert sorted(int(l[0]) for l in ds.labels) == [0, 1, 2]

    def test_deterministic_by_seed(self):
        a = gen_clustered(10, 6, 4, 0.3, seed=12)
        b = gen_clustered(10, 6, 4, 0.3, seed=12)
        assert np.array_equal(a.features, b.features)
        assert all(np.array_equal(x, y) for x, y in zip(a.labels, b.labels))
        c = gen_clustered(10, 6, 4, 0.3, seed=13)
        assert not np.array_equal(a.features, c.features)

    def test_variance_grows_with_spread(self):
        """Mean in-class variance must be monotone over a spread grid."""
        means = []
        for spread in (0.05, 0.2, 0.5, 1.0):
            ds = gen_clustered(20, 16, 30, spread, seed=3)
            result = in_class_variance(ds.features, ds.labels)
            means.append(result.variances.mean())
        assert all(a < b for a, b in zip(means, means[1:]))

    def test_invalid_params(self):
        with pytest.raises(ConfigError):
            gen_clustered(0, 4, 1, 0.1)
        with pytest.raises(ConfigError):
            gen_clustered(3, 4, 1, -0.5)


class TestDatasetFiles:
    def test_binary_roundtrip_lossless(self, tmp_path, rng):
        ds = gen_clustered(8, 5, 4, 0.4, seed=7)
        path = tmp_path / "data.wtds"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert np.array_equal(back.features, ds.features)
        assert back.n_classes == ds.n_classes
        assert all(np.array_equal(a, b) for a, b in zip(back.labels, ds.labels))
        # a second save of the loaded dataset is byte-identical
        path2 = tmp_path / "data2.wtds"
        save_dataset(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_text_roundtrip_lossless(self, tmp_path):
        ds = gen_clustered(4, 3, 2, 0.25, seed=9)
        path = tmp_path / "data.txt"
        save_dataset_text(ds, path)
        back = load_dataset_text(path)
        assert np.array_equal(back.features, ds.features)
        assert all(np.array_equal(a, b) for a, b in zip(back.labels, ds.labels))

    def test_text_format_is_hand_editable(self, tmp_path):
        path = tmp_path / "tiny.txt"
        path.write_text("# wtasoftmax-dataset v1 dim=2 classes=3\n"
                        "0\t1.5 -2\n"
                        "1,2\t0 0.25\n")
        ds = load_dataset_text(path)
        assert len(ds) == 2
        assert ds.labels[1].tolist() == [1, 2]
        np.testing.assert_allclose(ds.features[0], [1.5, -2.0])

    def test_bad_files_rejected(self, tmp_path):
        binary = tmp_path / "bad.wtds"
        binary.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(ConfigError):
            load_dataset(binary)
        text = tmp_path / "bad.txt"
        text.write_text("not a dataset\n")
        with pytest.raises(ConfigError):
            load_dataset_text(text)

    def test_multilabel_binary_roundtrip(self, tmp_path):
        ds = Dataset(features=np.eye(3, dtype=np.float32),
                     labels=[[0, 2], [1], []], n_classes=3)
        path = tmp_path / "ml.wtds"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert [l.tolist() for l in back.labels] == [[0, 2], [1], []]


class TestPrecisionAtK:
    def test_perfect_single_label(self):
        assert precision_at_k([[3]], [[3]], 1) == 1.0

    def test_disjoint_predictions(self):
        assert precision_at_k([[1, 2], [4, 5]], [[3], [0]], 2) == 0.0

    def test_hand_enumerated_case(self):
        # example 1: top-3 hits {5, 9} of truth {5, 9, 7} -> 2/3
        # example 2: top-3 hits {1} of truth {1} -> 1/1
        ranked = [[5, 2, 9], [0, 3, 1]]
        truths = [[5, 9, 7], [1]]
        got = precision_at_k(ranked, truths, 3)
        np.testing.assert_allclose(got, (2 / 3 + 1.0) / 2)

    def test_short_prediction_lists_allowed(self):
        # retrieval may return fewer than k candidates
        assert precision_at_k([[2]], [[2]], 5) == 1.0

    def test_empty_truth_skipped(self):
        got = precision_at_k([[1], [2]], [[], [2]], 1)
        assert got == 1.0
        with pytest.raises(UsageError):
            precision_at_k([[1]], [[]], 1)

    def test_monotone_in_k_single_label(self, rng):
        # Monotonicity holds when every truth set is a single label (the
        # denominator is then constant in k).  With larger truth sets the
        # min(k, |truth|) denominator can shrink the value as k grows.
        ranked = [rng.permutation(20)[:10] for _ in range(30)]
        truths = [[int(rng.integers(0, 20))] for _ in range(30)]
        values = [precision_at_k(ranked, truths, k) for k in range(1, 11)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_monotone_property_single_label(self, seed):
        rng = np.random.default_rng(seed)
        ranked = [rng.permutation(12) for _ in range(8)]
        truths = [[int(rng.integers(0, 12))] for _ in range(8)]
        values = [precision_at_k(ranked, truths, k) for k in (1, 2, 4, 8, 12)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_multilabel_counterexample_to_monotonicity(self):
        # Documents why the invariant above is single-label only.
        ranked = [[5, 1, 2]]
        truths = [[5, 8, 9]]
        assert precision_at_k(ranked, truths, 1) == 1.0
        assert precision_at_k(ranked, truths, 2) == 0.5

    def test_report_includes_diagnostics(self):
        report = precision_report([[1], [0]], [[1], [0]], ks=(1,))
        assert report["precision@1"] == 1.0
        assert report["skipped_empty_truth"] == 0
        assert report["average_precision"] == 1.0

    def test_top1_accuracy_alias(self):
        assert top1_accuracy([[4, 1], [2, 0]], [[4], [0]]) == 0.5


class TestInClassVariance:
    def test_identical_examples_have_zero_variance(self):
        feats = np.ones((6, 4))
        labels = [[0]] * 3 + [[1]] * 3
        result = in_class_variance(feats, labels)
        np.testing.assert_allclose(result.variances, 0.0)

    def test_symmetric_pair_analytic(self):
        # two examples at distance 2a symmetric about the centroid -> a^2
        a = 1.7
        feats = np.array([[a, 0.0], [-a, 0.0]])
        result = in_class_variance(feats, [[0], [0]])
        np.testing.assert_allclose(result.variances, [a * a])

    def test_matches_two_pass_oracle(self, rng):
        feats = rng.standard_normal((50, 6))
        labels = [[int(rng.integers(0, 5))] for _ in range(50)]
        result = in_class_variance(feats, labels)
        for cid, var in zip(result.class_ids.tolist(), result.variances):
            rows = feats[[i for i, l in enumerate(labels) if l[0] == cid]]
            centroid = rows.sum(axis=0) / rows.shape[0]
            acc = 0.0
            for row in rows:
                acc += float(((row - centroid) ** 2).sum())
            np.testing.assert_allclose(var, acc / rows.shape[0], rtol=1e-12)

    def test_singleton_classes_skipped(self):
        feats = np.zeros((3, 2))
        result = in_class_variance(feats, [[0], [0], [1]])
        assert result.skipped_classes == 1
        assert result.class_ids.tolist() == [0]

    def test_histogram_covers_all_classes(self, rng):
        ds = gen_clustered(15, 8, 5, 0.3, seed=2)
        result = in_class_variance(ds.features, ds.labels)
        assert int(result.hist_counts.sum()) == 15
