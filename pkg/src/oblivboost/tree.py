"""Full binary tree model structure and its binary serialization.

Trees always have 2^(depth+1)-1 level-ordered nodes; pruned branches are
padded with dummy nodes that carry their leaf ancestor's weight, so the
serialized shape is a function of depth alone.

Format (little-endian): header {magic "SXGB", version u16, num_trees u32,
depth u16, num_features u32}, then per tree a flat level-order array of
node records {kind u8, split_feature u32, threshold f64, leaf_weight f64}.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

KIND_SPLIT = 0
KIND_LEAF = 1
KIND_DUMMY = 2

MAGIC = b"SXGB"
VERSION = 1

_HEADER = struct.Struct("<4sHIHI")
_NODE = struct.Struct("<BIdd")


@dataclass
class TreeNode:
    kind: int
    feature: int = 0
    threshold: float = math.inf
    weight: float = 0.0
    cut_bin: int = -1  # histogram bin of the split; training metadata, not serialized


@dataclass
class Tree:
    depth: int
    nodes: list[TreeNode]

    def __post_init__(self):
        expected = (1 << (self.depth + 1)) - 1
        if len(self.nodes) != expected:
            raise ValueError(
                f"depth-{self.depth} tree needs {expected} nodes, got {len(self.nodes)}"
            )

    @staticmethod
    def layer(level: int) -> tuple[int, int]:
        """(base offset, width) of one level in the flat node array."""
        return (1 << level) - 1, 1 << level

    def node_at(self, level: int, index: int) -> TreeNode:
        base, width = self.layer(level)
        assert 0 <= index < width
        return self.nodes[base + index]


@dataclass
class Model:
    trees: list[Tree] = field(default_factory=list)
    num_features: int = 0
    objective: str = "binary:logistic"  # runtime attribute; not serialized

    @property
    def depth(self) -> int:
        return self.trees[0].depth if self.trees else 0


def serialize_model(model: Model) -> bytes:
    depth = model.depth
    for t in model.trees:
        if t.depth != depth:
            raise ValueError("all trees in a model share one depth")
    out = [_HEADER.pack(MAGIC, VERSION, len(model.trees), depth, model.num_features)]
    for t in model.trees:
        for node in t.nodes:
            out.append(_NODE.pack(node.kind, node.feature, node.threshold, node.weight))
    return b"".join(out)


def deserialize_model(data: bytes, objective: str = "binary:logistic") -> Model:
    if len(data) < _HEADER.size:
        raise ValueError("truncated model header")
    magic, version, num_trees, depth, num_features = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError("bad model magic")
    if version != VERSION:
        raise ValueError(f"unsupported model version {version}")
    nodes_per_tree = (1 << (depth + 1)) - 1
    expected = _HEADER.size + num_trees * nodes_per_tree * _NODE.size
    if len(data) != expected:
        raise ValueError("model payload size mismatch")
    offset = _HEADER.size
    trees = []
    for _ in range(num_trees):
        nodes = []
        for _ in range(nodes_per_tree):
            kind, feature, threshold, weight = _NODE.unpack_from(data, offset)
            offset += _NODE.size
            if kind not in (KIND_SPLIT, KIND_LEAF, KIND_DUMMY):
                raise ValueError(f"bad node kind {kind}")
            nodes.append(TreeNode(kind, feature, threshold, weight))
        trees.append(Tree(depth, nodes))
    return Model(trees, num_features, objective)
