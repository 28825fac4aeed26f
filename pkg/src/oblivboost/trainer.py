"""Level-wise oblivious training of gradient boosted trees.

The trainer always builds full binary trees: every level gets histogram
work for all of its 2^level nodes (dummy nodes included), split decisions
are argmax scans with conditional moves, and sample markers advance with
branch-free updates. All data-sized loops run either through the traced
per-line path (when a recorder is active) or through the kernel backend;
both compute identical results.

Gradient/hessian sums are accumulated in 2^-32 fixed point so that
histogram aggregation is exact integer addition: models are bit-identical
for any worker count and partition order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeMismatch
from .oblivious import (
    oequal_int,
    ogreater_float,
    ogreater_int,
    oless_float,
    oselect_float,
    oselect_int,
)
from .quantile import (
    QuantileSummary,
    build_summary,
    edge_slots,
    merge_summaries,
    prune_summary,
)
from .trace import TracedArray
from .tree import KIND_DUMMY, KIND_LEAF, KIND_SPLIT, Model, Tree, TreeNode

GRAD_SCALE = float(1 << 32)

OBJECTIVES = ("binary:logistic", "reg:squarederror")


@dataclass
class TrainParams:
    objective: str = "binary:logistic"
    num_rounds: int = 5
    max_depth: int = 3
    num_bins: int = 16
    gamma: float = 0.1
    reg_lambda: float = 1.0
    eta: float = 0.3

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if self.num_bins < 1:
            raise ValueError("num_bins must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.reg_lambda < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "num_rounds": self.num_rounds,
            "max_depth": self.max_depth,
            "num_bins": self.num_bins,
            "gamma": self.gamma,
            "reg_lambda": self.reg_lambda,
            "eta": self.eta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainParams":
        p = cls(**{k: d[k] for k in cls().to_dict() if k in d})
        p.validate()
        return p


def sigmoid(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return np.where(m >= 0, 1.0 / (1.0 + np.exp(-np.abs(m))), np.exp(-np.abs(m)) / (1.0 + np.exp(-np.abs(m))))


def compute_gradients(
    margins: np.ndarray, labels: np.ndarray, objective: str
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample first/second order gradients of the objective loss."""
    margins = np.asarray(margins, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if margins.shape != labels.shape:
        raise ValueError("margins and labels must have the same length")
    if objective == "binary:logistic":
        p = sigmoid(margins)
        g = p - labels
        h = p * (1.0 - p)
    elif objective == "reg:squarederror":
        g = margins - labels
        h = np.ones_like(margins)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return g, h


def quantize_gradients(g: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gq = np.rint(g * GRAD_SCALE).astype(np.int64)
    hq = np.rint(h * GRAD_SCALE).astype(np.int64)
    return gq, hq


def split_gain(
    gl: int, hl: int, gtot: int, htot: int, reg_lambda: float, gamma: float
) -> float:
    """Gain of cutting a node's histogram after the given left sums.

    Inputs are fixed-point integer sums. Zero denominators (possible only
    with zero mass and reg_lambda=0) are bumped to 1, leaving those terms
    exactly zero.
    """
    glf = gl / GRAD_SCALE
    hlf = hl / GRAD_SCALE
    grf = (gtot - gl) / GRAD_SCALE
    hrf = (htot - hl) / GRAD_SCALE
    gtf = gtot / GRAD_SCALE
    htf = htot / GRAD_SCALE
    dl = hlf + reg_lambda
    dl = dl + (dl == 0.0)
    dr = hrf + reg_lambda
    dr = dr + (dr == 0.0)
    dt = htf + reg_lambda
    dt = dt + (dt == 0.0)
    return 0.5 * (glf * glf / dl + grf * grf / dr - gtf * gtf / dt) - gamma


def leaf_weight(gtot: int, htot: int, reg_lambda: float, eta: float) -> float:
    gf = gtot / GRAD_SCALE
    hf = htot / GRAD_SCALE
    den = hf + reg_lambda
    den = den + (den == 0.0)
    return -(gf / den) * eta


@dataclass
class BinPlan:
    """Per-feature histogram boundaries in fixed-capacity slot form.

    edge_values[f] holds capacity slots (dummy slots are +inf); interior
    flags mark valid edges that are neither first nor last, so that
    bin(x) = number of interior edges <= x. Computed once per training
    session and reused for every level of every tree.
    """

    edge_values: np.ndarray  # (d, capacity) float64
    interior: np.ndarray  # (d, capacity) int64
    num_bins: int

    @property
    def num_features(self) -> int:
        return self.edge_values.shape[0]

    def to_wire(self) -> dict:
        return {
            "edge_values": self.edge_values.tolist(),
            "interior": self.interior.tolist(),
            "num_bins": self.num_bins,
        }

    @classmethod
    def from_wire(cls, d: dict) -> "BinPlan":
        return cls(
            np.asarray(d["edge_values"], dtype=np.float64),
            np.asarray(d["interior"], dtype=np.int64),
            int(d["num_bins"]),
        )


def make_bin_plan(summaries: list[QuantileSummary], num_bins: int) -> BinPlan:
    caps = {s.capacity for s in summaries}
    if len(caps) != 1:
        raise ShapeMismatch("summaries must share one capacity")
    cap = caps.pop()
    d = len(summaries)
    edge_values = np.empty((d, cap), dtype=np.float64)
    interior = np.zeros((d, cap), dtype=np.int64)
    for f, s in enumerate(summaries):
        vals, flags = edge_slots(s)
        edge_values[f] = vals
        interior[f] = flags
    return BinPlan(edge_values, interior, num_bins)


def aggregate_histograms(
    hist_sets: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Elementwise sum over workers, folded in worker order; exact."""
    if not hist_sets:
        raise ShapeMismatch("no histograms to aggregate")
    shape = hist_sets[0][0].shape
    for hg, hh, hc in hist_sets:
        if hg.shape != shape or hh.shape != shape or hc.shape != shape:
            raise ShapeMismatch("histogram shape mismatch across workers")
    agg = [a.copy() for a in hist_sets[0]]
    for hg, hh, hc in hist_sets[1:]:
        agg[0] += hg
        agg[1] += hh
        agg[2] += hc
    return agg[0], agg[1], agg[2]


@dataclass
class _NodeDecision:
    kind: int
    feature: int
    cut: int
    threshold: float
    weight: float
    cut_bin: int


class TreePlanner:
    """Split decision state for one tree, advanced level by level.

    Consumes globally aggregated histograms; every worker runs an
    identical planner and reaches identical decisions. Secret per-node
    state (alive flags, inherited weights, propagated child totals) lives
    in registers; scans are fixed-shape with conditional moves.
    """

    def __init__(self, params: TrainParams, num_features: int, plan: BinPlan):
        self.params = params
        self.d = num_features
        self.b = params.num_bins
        self.depth = params.max_depth
        # edge values as registers, read once per tree
        self.edge_regs = [[float(v) for v in row] for row in plan.edge_values]
        self.level = 0
        self.alive = [1]
        self.inherit = [0.0]
        self.child_g = [0]
        self.child_h = [0]
        self.levels: list[list[_NodeDecision]] = []

    def decide_level(
        self, hg: TracedArray, hh: TracedArray, hc: TracedArray
    ) -> tuple[list[int], list[int]]:
        """Decide splits for all nodes of the current level from global
        histograms; returns (feature, cut) register lists for partitioning."""
        p = self.params
        d, b = self.d, self.b
        m = 1 << self.level
        assert hg.n == m * d * b

        decisions: list[_NodeDecision] = []
        alive2 = [0] * (2 * m)
        inherit2 = [0.0] * (2 * m)
        child_g2 = [0] * (2 * m)
        child_h2 = [0] * (2 * m)
        feats: list[int] = []
        cuts: list[int] = []

        for node in range(m):
            base = node * d * b
            gtot = 0
            htot = 0
            for s in range(b):
                gtot += hg.read(base + s)
                htot += hh.read(base + s)

            best_gain = -math.inf
            best_f = 0
            best_cut = 0
            best_thr = math.inf
            best_gl = 0
            best_hl = 0
            for f in range(d):
                gl = 0
                hl = 0
                for j in range(b - 1):
                    gl += hg.read(base + f * b + j)
                    hl += hh.read(base + f * b + j)
                    gain = split_gain(gl, hl, gtot, htot, p.reg_lambda, p.gamma)
                    better = ogreater_float(gain, best_gain)
                    best_gain = oselect_float(better, gain, best_gain)
                    best_f = oselect_int(better, f, best_f)
                    best_cut = oselect_int(better, j, best_cut)
                    best_thr = oselect_float(better, self.edge_regs[f][j + 1], best_thr)
                    best_gl = oselect_int(better, gl, best_gl)
                    best_hl = oselect_int(better, hl, best_hl)

            active = self.alive[node]
            own_w = leaf_weight(gtot, htot, p.reg_lambda, p.eta)
            w_here = oselect_float(active, own_w, self.inherit[node])
            do_split = active & ogreater_int(htot, 0) & ogreater_float(best_gain, 0.0)

            kind = oselect_int(do_split, KIND_SPLIT, oselect_int(active, KIND_LEAF, KIND_DUMMY))
            feat_eff = oselect_int(do_split, best_f, 0)
            cut_eff = oselect_int(do_split, best_cut, b)  # bin values stay < b: all-left
            thr_eff = oselect_float(do_split, best_thr, math.inf)
            node_weight = oselect_float(do_split, 0.0, w_here)
            cut_bin = oselect_int(do_split, best_cut, -1)

            decisions.append(
                _NodeDecision(kind, feat_eff, cut_eff, thr_eff, node_weight, cut_bin)
            )
            feats.append(feat_eff)
            cuts.append(cut_eff)

            alive2[2 * node] = do_split
            alive2[2 * node + 1] = do_split
            inherit2[2 * node] = w_here
            inherit2[2 * node + 1] = w_here
            child_g2[2 * node] = oselect_int(do_split, best_gl, 0)
            child_h2[2 * node] = oselect_int(do_split, best_hl, 0)
            child_g2[2 * node + 1] = oselect_int(do_split, gtot - best_gl, 0)
            child_h2[2 * node + 1] = oselect_int(do_split, htot - best_hl, 0)

        self.levels.append(decisions)
        self.alive = alive2
        self.inherit = inherit2
        self.child_g = child_g2
        self.child_h = child_h2
        self.level += 1
        return feats, cuts

    def finish(self) -> tuple[Tree, list[float]]:
        """Assemble the full tree after max_depth decide calls; returns the
        tree and the bottom-level weight per node (for margin updates)."""
        assert self.level == self.depth
        p = self.params
        m = 1 << self.depth
        bottom: list[TreeNode] = []
        weights: list[float] = []
        for node in range(m):
            active = self.alive[node]
            own_w = leaf_weight(self.child_g[node], self.child_h[node], p.reg_lambda, p.eta)
            w = oselect_float(active, own_w, self.inherit[node])
            kind = oselect_int(active, KIND_LEAF, KIND_DUMMY)
            bottom.append(TreeNode(kind, 0, math.inf, w))
            weights.append(w)
        nodes: list[TreeNode] = []
        for level_nodes in self.levels:
            for dec in level_nodes:
                nodes.append(
                    TreeNode(dec.kind, dec.feature, dec.threshold, dec.weight, dec.cut_bin)
                )
        nodes.extend(bottom)
        return Tree(self.depth, nodes), weights


class WorkerState:
    """Training state for one data partition.

    Phase methods are driven either by the in-process lockstep driver or
    by the cluster layer; every cross-worker exchange happens through
    plain numpy payloads so the cluster can seal them for transport.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, params: TrainParams):
        params.validate()
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError("X must be (n, d) with one label per row")
        if not np.isfinite(X).all():
            raise ValueError("feature values must be finite")
        if params.objective == "binary:logistic" and not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("binary:logistic labels must be 0 or 1")
        X = X + 0.0  # canonicalize -0.0
        self.params = params
        self.n, self.d = X.shape
        self.X = X
        self.features = TracedArray(X.reshape(-1))
        self.labels = TracedArray(y)
        self.margins = TracedArray.zeros(self.n)
        self.gq = TracedArray.zeros(self.n, dtype=np.int64)
        self.hq = TracedArray.zeros(self.n, dtype=np.int64)
        self.hess = np.full(self.n, 0.0)
        self.plan: BinPlan | None = None
        self.binned: TracedArray | None = None
        self.markers: TracedArray | None = None
        self.planner: TreePlanner | None = None
        self.last_tree: Tree | None = None

    # -- phases -------------------------------------------------------------

    def gradient_phase(self) -> None:
        g, h = compute_gradients(self.margins.data, self.labels.data, self.params.objective)
        gq, hq = quantize_gradients(g, h)
        self.hess = h
        if self.margins.traced:
            for i in range(self.n):
                self.margins.read(i)
                self.labels.read(i)
                self.gq.write(i, int(gq[i]))
                self.hq.write(i, int(hq[i]))
        else:
            self.gq.data[:] = gq
            self.hq.data[:] = hq

    def summary_phase(self) -> list[QuantileSummary]:
        """Per-feature pruned summaries weighted by the current hessians."""
        out = []
        for f in range(self.d):
            vals = TracedArray(self.X[:, f].copy())
            wts = TracedArray(self.hess.copy())
            s = build_summary(vals, wts, feature_id=f)
            out.append(prune_summary(s, self.params.num_bins))
        return out

    def set_edges(self, plan: BinPlan) -> None:
        if plan.num_features != self.d:
            raise ShapeMismatch("bin plan feature count mismatch")
        self.plan = plan
        self.binned = TracedArray.zeros(self.n * self.d, dtype=np.int64)
        if self.features.traced:
            cap = plan.edge_values.shape[1]
            # load boundaries into registers once, then bin every sample
            edge_regs = []
            flag_regs = []
            for f in range(self.d):
                ev = TracedArray(plan.edge_values[f].copy())
                fl = TracedArray(plan.interior[f].astype(np.int64))
                edge_regs.append([ev.read(k) for k in range(cap)])
                flag_regs.append([fl.read(k) for k in range(cap)])
            for i in range(self.n):
                for f in range(self.d):
                    x = self.features.read(i * self.d + f)
                    acc = 0
                    for k in range(cap):
                        acc += (1 - oless_float(x, edge_regs[f][k])) * flag_regs[f][k]
                    self.binned.write(i * self.d + f, acc)
        else:
            kernels.active().binned_matrix(
                self.X,
                plan.edge_values,
                plan.interior,
                self.binned.data.reshape(self.n, self.d),
            )

    def begin_tree(self) -> None:
        assert self.plan is not None, "set_edges must run before training"
        self.markers = TracedArray.zeros(self.n, dtype=np.int64)
        self.planner = TreePlanner(self.params, self.d, self.plan)

    def hist_phase(self, level: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One scan of the partition: histograms for all 2^level nodes."""
        d, b = self.d, self.params.num_bins
        m = 1 << level
        size = m * d * b
        hg = TracedArray.zeros(size, dtype=np.int64)
        hh = TracedArray.zeros(size, dtype=np.int64)
        hc = TracedArray.zeros(size, dtype=np.int64)
        if self.markers.traced:
            self._hist_traced(hg, hh, hc, m)
        else:
            kernels.active().hist_build_level(
                self.binned.data.reshape(self.n, self.d),
                self.markers.data,
                self.gq.data,
                self.hq.data,
                hg.data,
                hh.data,
                hc.data,
                m,
                d,
                b,
            )
        return hg.data, hh.data, hc.data

    def _hist_traced(self, hg: TracedArray, hh: TracedArray, hc: TracedArray, m: int) -> None:
        d, b = self.d, self.params.num_bins
        db = d * b
        arrays = (hg, hh, hc)
        for i in range(self.n):
            node = self.markers.read(i)
            g = self.gq.read(i)
            h = self.hq.read(i)
            locs = ([0] * db, [0] * db, [0] * db)
            # fetch the owning node's block while scanning every line
            for arr, loc in zip(arrays, locs):
                for line in range(arr.num_lines):
                    vals = arr.read_line(line)
                    base = line * 8
                    for k in range(vals.shape[0]):
                        e = base + k
                        owner = e // db
                        sel = oequal_int(owner, node)
                        slot = e - owner * db
                        loc[slot] = oselect_int(sel, int(vals[k]), loc[slot])
            # update one bin per feature in registers
            for f in range(d):
                bv = self.binned.read(i * d + f)
                for s in range(b):
                    c = oequal_int(s, bv)
                    locs[0][f * b + s] += c * g
                    locs[1][f * b + s] += c * h
                    locs[2][f * b + s] += c
            # write back, rewriting every line
            for arr, loc in zip(arrays, locs):
                for line in range(arr.num_lines):
                    vals = arr.read_line(line)
                    base = line * 8
                    out = []
                    for k in range(vals.shape[0]):
                        e = base + k
                        owner = e // db
                        sel = oequal_int(owner, node)
                        out.append(oselect_int(sel, loc[e - owner * db], int(vals[k])))
                    arr.write_line(line, out)

    def split_phase(
        self, level: int, agg: tuple[np.ndarray, np.ndarray, np.ndarray]
    ) -> None:
        """Consume globally aggregated histograms and decide this level."""
        hg = TracedArray(agg[0].copy())
        hh = TracedArray(agg[1].copy())
        hc = TracedArray(agg[2].copy())
        feats, cuts = self.planner.decide_level(hg, hh, hc)
        self._level_feats = feats
        self._level_cuts = cuts

    def partition_phase(self, level: int) -> None:
        m = 1 << level
        feats, cuts = self._level_feats, self._level_cuts
        if self.markers.traced:
            d = self.d
            for i in range(self.n):
                node = self.markers.read(i)
                fsel = 0
                csel = 0
                for nd in range(m):
                    sel = oequal_int(nd, node)
                    fsel = oselect_int(sel, feats[nd], fsel)
                    csel = oselect_int(sel, cuts[nd], csel)
                bv = 0
                for f in range(d):
                    bv = oselect_int(oequal_int(f, fsel), self.binned.read(i * d + f), bv)
                right = ogreater_int(bv, csel)
                self.markers.write(i, 2 * node + right)
        else:
            kernels.active().partition_level(
                self.markers.data,
                self.binned.data.reshape(self.n, self.d),
                np.asarray(feats, dtype=np.int64),
                np.asarray(cuts, dtype=np.int64),
            )

    def finish_tree(self) -> Tree:
        tree, weights = self.planner.finish()
        self.last_tree = tree
        if self.markers.traced:
            mcount = len(weights)
            for i in range(self.n):
                node = self.markers.read(i)
                w = 0.0
                for nd in range(mcount):
                    w = oselect_float(oequal_int(nd, node), weights[nd], w)
                self.margins.write(i, self.margins.read(i) + w)
        else:
            kernels.active().margin_update(
                self.markers.data,
                np.asarray(weights, dtype=np.float64),
                self.margins.data,
            )
        return tree


def compute_bin_plan(
    states: list[WorkerState], num_bins: int
) -> BinPlan:
    """Session bin boundaries: per-worker pruned summaries folded in
    worker order into one global summary per feature."""
    d = states[0].d
    per_worker = [st.summary_phase() for st in states]
    global_summaries = []
    for f in range(d):
        acc = per_worker[0][f]
        for w in range(1, len(states)):
            acc = merge_summaries(acc, per_worker[w][f], num_bins)
        global_summaries.append(acc)
    return make_bin_plan(global_summaries, num_bins)


def train_partitions(
    partitions: list[tuple[np.ndarray, np.ndarray]],
    params: TrainParams,
    bin_plan: BinPlan | None = None,
) -> tuple[Model, BinPlan]:
    """Lockstep multi-worker training over in-process partitions.

    With a fixed bin plan the result is bit-identical for any partition
    count; without one, round-1 statistics feed the quantile pipeline
    first.
    """
    params.validate()
    states = [WorkerState(X, y, params) for X, y in partitions]
    dims = {st.d for st in states}
    if len(dims) != 1:
        raise ShapeMismatch("partitions disagree on feature count")
    d = dims.pop()

    for st in states:
        st.gradient_phase()
    if bin_plan is None:
        bin_plan = compute_bin_plan(states, params.num_bins)
    for st in states:
        st.set_edges(bin_plan)

    model = Model([], d, params.objective)
    for rnd in range(params.num_rounds):
        if rnd > 0:
            for st in states:
                st.gradient_phase()
        for st in states:
            st.begin_tree()
        for level in range(params.max_depth):
            hists = [st.hist_phase(level) for st in states]
            agg = aggregate_histograms(hists)
            for st in states:
                st.split_phase(level, agg)
            for st in states:
                st.partition_phase(level)
        trees = [st.finish_tree() for st in states]
        model.trees.append(trees[0])
    return model, bin_plan


def train(
    X: np.ndarray,
    y: np.ndarray,
    params: TrainParams,
    bin_plan: BinPlan | None = None,
) -> Model:
    """Single-partition convenience wrapper around train_partitions."""
    model, _plan = train_partitions([(X, y)], params, bin_plan)
    return model
