"""Design-level (108-dim) and node-level features of an AST graph.

Vector layout, in order::

    [0]      total input bits
    [1]      total output bits
    [2]      longest root-to-leaf path (edges, syntactic only)
    [3:8]    node counts per category (root, variable, operation, constant, edge)
    [8:108]  node counts per operation code 0..99
"""

from __future__ import annotations

import csv
from typing import Iterable

import numpy as np

from ..diffcore import ParamSet, Tensor, concat_cols, gather_rows, init_uniform
from ..graphio import AST_CATEGORIES, NUM_OP_CODES, AstGraph, AstNode, topo_order
from .syntax import VerilogModule

FEATURE_DIM = 108
BIT_CAP = 200
BIT_CLASSES = BIT_CAP + 1
NODE_FEATURE_DIM = 16
_PROJ_DIM = 4
PROJECTION_SHAPES = {
    "in_bits": (BIT_CLASSES, _PROJ_DIM),
    "out_bits": (BIT_CLASSES, _PROJ_DIM),
    "category": (len(AST_CATEGORIES), _PROJ_DIM),
    "op": (NUM_OP_CODES, _PROJ_DIM),
}
_PROJ_ORDER = ("in_bits", "out_bits", "category", "op")


def longest_path(g: AstGraph) -> int:
    """Edges on the longest root-to-leaf path over parent->child edges."""
    n = g.num_nodes
    order = topo_order(n, g.edges)
    kids: list[list[int]] = [[] for _ in range(n)]
    for a, b in g.edges:
        kids[a].append(b)
    depth = [0] * n
    for u in reversed(order):
        if kids[u]:
            depth[u] = 1 + max(depth[v] for v in kids[u])
    return depth[g.root]


def extract_features_108(g: AstGraph, m: VerilogModule) -> np.ndarray:
    vec = np.zeros(FEATURE_DIM)
    vec[0] = m.input_bits
    vec[1] = m.output_bits
    vec[2] = longest_path(g)
    for nd in g.nodes:
        vec[3 + nd.category] += 1
        if nd.op_type:
            vec[8 + nd.op_type] += 1
    return vec


def feature_names() -> list[str]:
    return [f"f{i}" for i in range(FEATURE_DIM)]


def save_features(path, rows: Iterable[tuple[str, np.ndarray]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["design_id"] + feature_names())
        for did, vec in rows:
            if len(vec) != FEATURE_DIM:
                raise ValueError(f"{did}: feature vector of length {len(vec)}")
            w.writerow([did] + [repr(float(v)) for v in vec])


def load_features(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["design_id"] + feature_names():
            raise ValueError("feature CSV header does not match design_id,f0..f107")
        return {row[0]: np.array([float(v) for v in row[1:]]) for row in reader}


# ---- node features for the AST-GNN


def node_classes(nodes: list[AstNode]) -> dict[str, np.ndarray]:
    """One-hot class index per node for each of the four projections."""
    return {
        "in_bits": np.array([min(nd.in_bits, BIT_CAP) for nd in nodes], dtype=np.int64),
        "out_bits": np.array([min(nd.out_bits, BIT_CAP) for nd in nodes], dtype=np.int64),
        "category": np.array([nd.category for nd in nodes], dtype=np.int64),
        "op": np.array([nd.op_type for nd in nodes], dtype=np.int64),
    }


def init_projections(rng: np.random.Generator, prefix: str = "proj") -> ParamSet:
    ps = ParamSet()
    for name in _PROJ_ORDER:
        rows, cols = PROJECTION_SHAPES[name]
        ps[f"{prefix}.{name}"] = Tensor(init_uniform(rng, rows, cols), requires_grad=True)
    return ps


def encode_nodes(classes: dict[str, np.ndarray], proj: ParamSet, prefix: str = "proj") -> Tensor:
    """(num_nodes, 16) features; a row lookup is the one-hot times the projection."""
    parts = [gather_rows(proj[f"{prefix}.{name}"], classes[name]) for name in _PROJ_ORDER]
    return concat_cols(parts)


def node_feature_encoder(n: AstNode, proj: ParamSet, prefix: str = "proj") -> np.ndarray:
    return encode_nodes(node_classes([n]), proj, prefix).data[0]
