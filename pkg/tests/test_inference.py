"""Oblivious inference vs plain traversal."""

import math

import numpy as np
import pytest

from oblivboost.data import random_dataset
from oblivboost.inference import predict, predict_margin_traced, predict_tree
from oblivboost.reference import reference_predict_tree
from oblivboost.trace import TracedArray, capture_trace
from oblivboost.trainer import TrainParams, train
from oblivboost.tree import (
    KIND_DUMMY,
    KIND_LEAF,
    KIND_SPLIT,
    Model,
    Tree,
    TreeNode,
)


def depth1_tree(threshold=5.0, left=-1.0, right=1.0):
    return Tree(
        1,
        [
            TreeNode(KIND_SPLIT, 0, threshold, 0.0),
            TreeNode(KIND_LEAF, 0, math.inf, left),
            TreeNode(KIND_LEAF, 0, math.inf, right),
        ],
    )


def test_depth1_examples():
    tree = depth1_tree()
    assert predict_tree(tree, TracedArray(np.array([3.0]))) == -1.0
    assert predict_tree(tree, TracedArray(np.array([7.0]))) == 1.0
    # tie at the threshold goes right
    assert predict_tree(tree, TracedArray(np.array([5.0]))) == 1.0


def test_constant_tree():
    nodes = [TreeNode(KIND_LEAF, 0, math.inf, 0.25)] + [
        TreeNode(KIND_DUMMY, 0, math.inf, 0.25) for _ in range(6)
    ]
    tree = Tree(2, nodes)
    for x in (-10.0, 0.0, 10.0):
        assert predict_tree(tree, TracedArray(np.array([x, x]))) == 0.25


def test_zero_leaf_model_probability_half():
    nodes = [TreeNode(KIND_LEAF, 0, math.inf, 0.0)] + [
        TreeNode(KIND_DUMMY, 0, math.inf, 0.0) for _ in range(2)
    ]
    model = Model([Tree(1, nodes)], 2)
    X = np.array([[1.0, 2.0]])
    assert predict(model, X, output="margin")[0] == 0.0
    assert predict(model, X, output="probability")[0] == 0.5


def _random_full_tree(rng, depth, d):
    """Random valid full binary tree: split/leaf decided per node, dummies
    replicate their leaf ancestor's weight."""
    total = (1 << (depth + 1)) - 1
    nodes = [None] * total

    def fill(level, idx, alive, inherited):
        flat = (1 << level) - 1 + idx
        if level == depth:
            w = float(rng.standard_normal()) if alive else inherited
            nodes[flat] = TreeNode(KIND_LEAF if alive else KIND_DUMMY, 0, math.inf, w)
            return
        split = alive and rng.random() < 0.7
        if split:
            nodes[flat] = TreeNode(
                KIND_SPLIT, int(rng.integers(0, d)), float(rng.integers(-3, 4)), 0.0
            )
            fill(level + 1, 2 * idx, True, 0.0)
            fill(level + 1, 2 * idx + 1, True, 0.0)
        else:
            w = float(rng.standard_normal()) if alive else inherited
            nodes[flat] = TreeNode(KIND_LEAF if alive else KIND_DUMMY, 0, math.inf, w)
            fill(level + 1, 2 * idx, False, w)
            fill(level + 1, 2 * idx + 1, False, w)

    fill(0, 0, True, 0.0)
    return Tree(depth, nodes)


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_traversal_matches_reference_oracle(depth):
    rng = np.random.default_rng(depth)
    d = 3
    for _ in range(25):
        tree = _random_full_tree(rng, depth, d)
        for _ in range(8):
            x = rng.integers(-4, 5, d).astype(np.float64)
            got = predict_tree(tree, TracedArray(x.copy()))
            want = reference_predict_tree(tree, x)
            assert got == want


def test_batch_predict_matches_reference():
    from oblivboost.reference import reference_predict

    rng = np.random.default_rng(77)
    X, y = random_dataset(rng, 120, 4, "binary:logistic")
    model = train(X, y, TrainParams(num_rounds=3, max_depth=3, num_bins=8))
    Xt = rng.standard_normal((1000, 4))
    fast = predict(model, Xt)
    want = reference_predict(model, Xt)
    assert np.array_equal(fast, want)


def test_trace_independent_of_sample_and_model():
    rng = np.random.default_rng(5)
    X, y = random_dataset(rng, 50, 4, "binary:logistic")
    model_a = train(X, y, TrainParams(num_rounds=2, max_depth=3, num_bins=8))
    X2, y2 = random_dataset(np.random.default_rng(6), 50, 4, "binary:logistic")
    model_b = train(X2, y2, TrainParams(num_rounds=2, max_depth=3, num_bins=8))

    def trace_of(model, sample):
        return capture_trace(
            lambda: predict_margin_traced(model, TracedArray(sample.copy()))
        )[1]

    s1 = rng.standard_normal(4)
    s2 = rng.standard_normal(4)
    assert trace_of(model_a, s1) == trace_of(model_a, s2)
    # same public shape, different model contents
    assert trace_of(model_a, s1) == trace_of(model_b, s1)


def test_probability_in_open_interval():
    rng = np.random.default_rng(1)
    X, y = random_dataset(rng, 60, 3, "binary:logistic")
    model = train(X, y, TrainParams(num_rounds=3, max_depth=3, num_bins=8))
    p = predict(model, X, output="probability")
    assert np.all(p > 0.0) and np.all(p < 1.0)


def test_dimension_mismatch_is_input_error():
    X, y = random_dataset(np.random.default_rng(2), 30, 3, "binary:logistic")
    model = train(X, y, TrainParams(num_rounds=1, max_depth=2, num_bins=4))
    with pytest.raises(ValueError):
        predict(model, np.zeros((4, 5)))
    with pytest.raises(ValueError):
        predict(Model([], 3), np.zeros((1, 3)))
