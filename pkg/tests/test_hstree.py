"""Hierarchical softmax tests: tree shape, normalisation, gradients."""

import numpy as np
import pytest

from wtasoftmax import (
    ConfigError,
    UsageError,
    hs_build_tree,
    hs_forward,
    hs_loss_backward,
)


class TestTreeShape:
    def test_two_classes_single_node(self):
        tree = hs_build_tree(2, 4, seed=0)
        assert tree.vectors.shape == (1, 4)
        assert tree.path_lens.tolist() == [1, 1]

    def test_five_classes_depth_three(self):
        tree = hs_build_tree(5, 4, seed=0)
        assert tree.n_classes == 5
        assert int(tree.path_lens.max()) == 3

    def test_depth_bound(self):
        for n in (2, 3, 5, 17, 64, 1000):
            tree = hs_build_tree(n, 3, seed=1)
            assert int(tree.path_lens.max()) <= int(np.ceil(np.log2(n))) + 1

    def test_paths_reach_distinct_leaves(self):
        # Walking each class's recorded directions from the root must land
        # on that class's leaf slot in the heap layout.
        n = 1000
        tree = hs_build_tree(n, 2, seed=3)
        for cls in (0, 1, 499, 998, 999):
            nodes, signs = tree.path(cls)
            node = 0
            for parent, sign in zip(nodes.tolist(), signs.tolist()):
                assert parent == node
                node = 2 * node + (1 if sign > 0 else 2)
            assert node == (n - 1) + cls

    def test_too_few_classes_rejected(self):
        with pytest.raises(ConfigError):
            hs_build_tree(1, 4)

    def test_deterministic_by_seed(self):
        a = hs_build_tree(33, 8, seed=9)
        b = hs_build_tree(33, 8, seed=9)
        assert np.array_equal(a.vectors, b.vectors)


class TestForward:
    def test_orthogonal_root_splits_evenly(self):
        tree = hs_build_tree(2, 2, seed=0)
        tree.vectors[0] = np.array([1.0, 0.0])
        probs = hs_forward(np.array([0.0, 5.0]), tree)
        np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-15)

    def test_leaf_probabilities_sum_to_one(self, rng):
        for n in (2, 5, 64, 1000):
            tree = hs_build_tree(n, 16, seed=n)
            x = rng.standard_normal(16) * 3
            probs = hs_forward(x, tree)
            assert probs.shape == (n,)
            assert abs(probs.sum() - 1.0) < 1e-9
            assert (probs > 0).all()

    def test_four_class_enumeration_matches_branch_products(self, rng):
        tree = hs_build_tree(4, 8, seed=2)
        x = rng.standard_normal(8)

        def sigma(v):
            return 1.0 / (1.0 + np.exp(-v))

        z = tree.vectors @ x
        want = [sigma(z[0]) * sigma(z[1]), sigma(z[0]) * sigma(-z[1]),
                sigma(-z[0]) * sigma(z[2]), sigma(-z[0]) * sigma(-z[2])]
        np.testing.assert_allclose(hs_forward(x, tree), want, rtol=1e-12)

    def test_subset_matches_full(self, rng):
        tree = hs_build_tree(30, 8, seed=4)
        x = rng.standard_normal(8)
        full = hs_forward(x, tree)
        subset = hs_forward(x, tree, class_ids=[3, 17, 29])
        np.testing.assert_allclose(subset, full[[3, 17, 29]], rtol=1e-12)

    def test_bad_class_id(self, rng):
        tree = hs_build_tree(4, 4, seed=0)
        with pytest.raises(UsageError):
            hs_forward(rng.standard_normal(4), tree, class_ids=[4])


class TestLossBackward:
    def test_loss_is_negative_log_probability(self, rng):
        tree = hs_build_tree(17, 8, seed=5)
        x = rng.standard_normal(8)
        for label in (0, 7, 16):
            loss, _, _, _ = hs_loss_backward(x, tree, label)
            want = -np.log(hs_forward(x, tree)[label])
            np.testing.assert_allclose(loss, want, rtol=1e-10)

    def test_gradients_touch_only_path_nodes(self, rng):
        tree = hs_build_tree(32, 6, seed=6)
        x = rng.standard_normal(6)
        _, node_ids, node_grads, _ = hs_loss_backward(x, tree, 11)
        path_nodes, _ = tree.path(11)
        assert node_ids.tolist() == path_nodes.tolist()
        assert node_grads.shape == (len(path_nodes), 6)

    def test_gradients_match_finite_differences(self, rng):
        for trial in range(10):
            n = int(rng.integers(3, 20))
            d = int(rng.integers(2, 8))
            tree = hs_build_tree(n, d, seed=trial)
            x = rng.standard_normal(d)
            label = int(rng.integers(0, n))
            loss, node_ids, node_grads, x_grad = hs_loss_backward(x, tree, label)
            h = 1e-6

            def loss_at(vectors, xv):
                saved = tree.vectors
                tree.vectors = vectors
                try:
                    return -np.log(hs_forward(xv, tree)[label])
                finally:
                    tree.vectors = saved

            for j, nid in enumerate(node_ids.tolist()):
                for col in range(d):
                    Vp, Vm = tree.vectors.copy(), tree.vectors.copy()
                    Vp[nid, col] += h
                    Vm[nid, col] -= h
                    num = (loss_at(Vp, x) - loss_at(Vm, x)) / (2 * h)
                    np.testing.assert_allclose(node_grads[j, col], num,
                                               rtol=1e-5, atol=1e-7)
            for col in range(d):
                xp, xm = x.copy(), x.copy()
                xp[col] += h
                xm[col] -= h
                num = (loss_at(tree.vectors, xp)
                       - loss_at(tree.vectors, xm)) / (2 * h)
                np.testing.assert_allclose(x_grad[col], num, rtol=1e-5,
                                           atol=1e-7)

    def test_label_out_of_range(self, rng):
        tree = hs_build_tree(4, 4, seed=0)
        with pytest.raises(UsageError):
            hs_loss_backward(rng.standard_normal(4), tree, 4)
