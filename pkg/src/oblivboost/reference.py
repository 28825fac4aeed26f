"""Plain non-oblivious trainer and evaluator.

Implements the same histogram rules as the oblivious trainer (same bin
plan, same candidate cuts, same gain formula and tie rule, same
fixed-point sums) with ordinary data-dependent control flow: nodes are
grown recursively, only live branches do work, and lookups index
directly. Serves as the correctness oracle in tests and as the vanilla
baseline in the benchmark.
"""

from __future__ import annotations

import math

import numpy as np

from .tree import KIND_DUMMY, KIND_LEAF, KIND_SPLIT, Model, Tree, TreeNode
from .trainer import (
    BinPlan,
    TrainParams,
    compute_gradients,
    leaf_weight,
    quantize_gradients,
    split_gain,
)


def reference_bin_matrix(X: np.ndarray, plan: BinPlan) -> np.ndarray:
    """Bin indices via sorted search over the interior edges."""
    n, d = X.shape
    out = np.empty((n, d), dtype=np.int64)
    for f in range(d):
        interior = plan.edge_values[f][plan.interior[f] == 1]
        out[:, f] = np.searchsorted(interior, X[:, f], side="right")
    return out


def _grow_tree(
    binned: np.ndarray,
    gq: np.ndarray,
    hq: np.ndarray,
    params: TrainParams,
    plan: BinPlan,
    sample_weights: np.ndarray,
) -> Tree:
    d = binned.shape[1]
    b = params.num_bins
    depth = params.max_depth
    total_nodes = (1 << (depth + 1)) - 1
    nodes: list[TreeNode | None] = [None] * total_nodes

    def flat(level: int, idx: int) -> int:
        return (1 << level) - 1 + idx

    def fill_dummies(level: int, idx: int, weight: float) -> None:
        for lv in range(level, depth + 1):
            span = 1 << (lv - level)
            for k in range(span):
                nodes[flat(lv, idx * span + k)] = TreeNode(
                    KIND_DUMMY, 0, math.inf, weight
                )

    def grow(level: int, idx: int, rows: np.ndarray) -> None:
        gtot = int(gq[rows].sum())
        htot = int(hq[rows].sum())
        if level == depth:
            w = leaf_weight(gtot, htot, params.reg_lambda, params.eta)
            nodes[flat(level, idx)] = TreeNode(KIND_LEAF, 0, math.inf, w)
            sample_weights[rows] = w
            return

        hist_g = np.zeros((d, b), dtype=np.int64)
        hist_h = np.zeros((d, b), dtype=np.int64)
        for f in range(d):
            np.add.at(hist_g[f], binned[rows, f], gq[rows])
            np.add.at(hist_h[f], binned[rows, f], hq[rows])

        best_gain = -math.inf
        best_f = 0
        best_cut = 0
        for f in range(d):
            gl = 0
            hl = 0
            for j in range(b - 1):
                gl += int(hist_g[f, j])
                hl += int(hist_h[f, j])
                gain = split_gain(gl, hl, gtot, htot, params.reg_lambda, params.gamma)
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_cut = j

        if htot > 0 and best_gain > 0.0:
            thr = float(plan.edge_values[best_f][best_cut + 1])
            nodes[flat(level, idx)] = TreeNode(KIND_SPLIT, best_f, thr, 0.0, best_cut)
            left = rows[binned[rows, best_f] <= best_cut]
            right = rows[binned[rows, best_f] > best_cut]
            grow(level + 1, 2 * idx, left)
            grow(level + 1, 2 * idx + 1, right)
        else:
            w = leaf_weight(gtot, htot, params.reg_lambda, params.eta)
            nodes[flat(level, idx)] = TreeNode(KIND_LEAF, 0, math.inf, w)
            sample_weights[rows] = w
            fill_dummies(level + 1, 2 * idx, w)
            fill_dummies(level + 1, 2 * idx + 1, w)

    grow(0, 0, np.arange(binned.shape[0]))
    assert all(n is not None for n in nodes)
    return Tree(depth, nodes)


def reference_train(
    X: np.ndarray,
    y: np.ndarray,
    params: TrainParams,
    plan: BinPlan,
) -> Model:
    params.validate()
    X = np.ascontiguousarray(X, dtype=np.float64) + 0.0
    y = np.ascontiguousarray(y, dtype=np.float64)
    binned = reference_bin_matrix(X, plan)
    n = X.shape[0]
    margins = np.zeros(n)
    model = Model([], X.shape[1], params.objective)
    for _ in range(params.num_rounds):
        g, h = compute_gradients(margins, y, params.objective)
        gq, hq = quantize_gradients(g, h)
        weights = np.zeros(n)
        tree = _grow_tree(binned, gq, hq, params, plan, weights)
        margins += weights
        model.trees.append(tree)
    return model


def reference_predict_tree(tree: Tree, sample: np.ndarray) -> float:
    """Root-to-leaf traversal of the logical (non-dummy) tree."""
    level, idx = 0, 0
    while True:
        node = tree.node_at(level, idx)
        if node.kind != KIND_SPLIT:
            return node.weight
        go_right = not (sample[node.feature] < node.threshold)
        idx = 2 * idx + (1 if go_right else 0)
        level += 1


def reference_predict(model: Model, X: np.ndarray, output: str = "margin") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.num_features:
        raise ValueError("feature dimension mismatch")
    margins = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        s = 0.0
        for tree in model.trees:
            s += reference_predict_tree(tree, X[i])
        margins[i] = s
    if output == "margin":
        return margins
    if output == "probability":
        from .trainer import sigmoid

        return sigmoid(margins)
    raise ValueError(f"unknown output {output!r}")
