"""Oblivious model evaluation.

Each tree level is a flat array; traversal fetches the current node and
the sample's feature value through full-scan array access, so the trace
depends only on (num_trees, depth, num_features). The split feature index
is treated as secret, hence the scanned feature fetch.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .oblivious import oaccess_read, oless_float
from .trace import TracedArray, active_recorder
from .trainer import sigmoid
from .tree import Model, Tree


def pack_model(model: Model) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flat (trees, nodes) arrays of feature ids, thresholds, weights."""
    depth = model.depth
    nodes_per_tree = (1 << (depth + 1)) - 1
    T = len(model.trees)
    feats = np.zeros((T, nodes_per_tree), dtype=np.int64)
    thrs = np.zeros((T, nodes_per_tree), dtype=np.float64)
    wts = np.zeros((T, nodes_per_tree), dtype=np.float64)
    for t, tree in enumerate(model.trees):
        for k, node in enumerate(tree.nodes):
            feats[t, k] = node.feature
            thrs[t, k] = node.threshold
            wts[t, k] = node.weight
    return feats, thrs, wts


def predict_tree(tree: Tree, sample: TracedArray) -> float:
    """Evaluate one tree on one sample with oblivious accesses only.

    Dummy nodes carry their leaf ancestor's weight, so traversal runs
    unconditionally to the bottom level and returns whatever weight it
    lands on; ties at a threshold go right.
    """
    depth = tree.depth
    layers_f = []
    layers_t = []
    for level in range(depth):
        base, width = Tree.layer(level)
        layers_f.append(
            TracedArray(np.array([tree.nodes[base + k].feature for k in range(width)], dtype=np.int64))
        )
        layers_t.append(
            TracedArray(np.array([tree.nodes[base + k].threshold for k in range(width)]))
        )
    base, width = Tree.layer(depth)
    bottom_w = TracedArray(np.array([tree.nodes[base + k].weight for k in range(width)]))

    idx = 0
    for level in range(depth):
        feat = oaccess_read(layers_f[level], idx)
        thr = oaccess_read(layers_t[level], idx)
        x = oaccess_read(sample, feat)
        go_right = 1 - oless_float(x, thr)
        idx = 2 * idx + go_right
    return oaccess_read(bottom_w, idx)


def predict_margin_traced(model: Model, sample: TracedArray) -> float:
    total = 0.0
    for tree in model.trees:
        total += predict_tree(tree, sample)
    return total


def predict(model: Model, X: np.ndarray, output: str = "margin") -> np.ndarray:
    """Batch prediction; margins or logistic probabilities."""
    if not model.trees:
        raise ValueError("empty model")
    if output not in ("margin", "probability"):
        raise ValueError(f"unknown output {output!r}")
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.num_features:
        raise ValueError("feature dimension mismatch")
    X = X + 0.0

    margins = np.zeros(X.shape[0])
    if active_recorder() is not None:
        for i in range(X.shape[0]):
            sample = TracedArray(X[i].copy())
            margins[i] = predict_margin_traced(model, sample)
    else:
        feats, thrs, wts = pack_model(model)
        kernels.active().predict_margins(X, feats, thrs, wts, model.depth, margins)
    if output == "probability":
        return sigmoid(margins)
    return margins
