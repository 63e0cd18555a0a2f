"""Records, file formats, dataset splits, graph batching and label scaling.

Formats (all little-endian where binary):

* LUT graphs: JSON Lines ``{"id", "n", "attrs": [[16 floats]...], "edges": [[src, dst]...]}``
* AST graphs: JSON Lines, same keys plus ``"nodes": [{"cat", "op", "in", "out"}...]``
  and ``"links"`` (dataflow edges); ``"attrs"`` is absent.
* Embeddings: ``b"QDEM"``, u32 version=1, u32 count, then per record
  u32 id length, UTF-8 id, u32 rows, u32 dim, u8 pooled, rows*dim float32.
* Labels: CSV with header columns ``design_id``, ``area``, ``delay`` (any order).
* Split: JSON ``{"seed", "train", "val", "test"}``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

LUT_ATTR_DIM = 16
AST_CATEGORIES = ("root", "variable", "operation", "constant", "edge")
NUM_OP_CODES = 100

EMBED_MAGIC = b"QDEM"
EMBED_VERSION = 1


class DataError(ValueError):
    """Base class for malformed or inconsistent input data."""


class ParseError(DataError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class SchemaError(DataError):
    pass


class DuplicateKeyError(DataError):
    pass


class DomainError(DataError):
    pass


class AlignmentError(DataError):
    pass


# ------------------------------------------------------------------ records


@dataclass
class LutGraph:
    design_id: str
    num_nodes: int
    node_attrs: np.ndarray  # (num_nodes, 16) float64
    edges: list[tuple[int, int]]

    def __post_init__(self):
        self.node_attrs = np.asarray(self.node_attrs, dtype=np.float64).reshape(self.num_nodes, -1) \
            if self.num_nodes else np.zeros((0, LUT_ATTR_DIM))
        self.edges = [(int(s), int(d)) for s, d in self.edges]
        self.validate()

    def validate(self) -> None:
        if self.num_nodes < 1:
            raise SchemaError(f"{self.design_id}: graph has no nodes")
        if self.node_attrs.shape != (self.num_nodes, LUT_ATTR_DIM):
            raise SchemaError(
                f"{self.design_id}: node_attrs shape {self.node_attrs.shape}, "
                f"expected ({self.num_nodes}, {LUT_ATTR_DIM})")
        if not np.all(np.isfinite(self.node_attrs)):
            raise SchemaError(f"{self.design_id}: non-finite node attribute")
        for s, d in self.edges:
            if not (0 <= s < self.num_nodes and 0 <= d < self.num_nodes):
                raise SchemaError(f"{self.design_id}: edge ({s}, {d}) out of range")
            if s == d:
                raise SchemaError(f"{self.design_id}: self-loop on node {s}")

    def __eq__(self, other):
        return (isinstance(other, LutGraph) and self.design_id == other.design_id
                and self.num_nodes == other.num_nodes and self.edges == other.edges
                and np.array_equal(self.node_attrs, other.node_attrs))


@dataclass(frozen=True)
class AstNode:
    category: int  # index into AST_CATEGORIES
    op_type: int = 0
    in_bits: int = 0
    out_bits: int = 0

    def __post_init__(self):
        if not 0 <= self.category < len(AST_CATEGORIES):
            raise SchemaError(f"bad AST category {self.category}")
        if not 0 <= self.op_type < NUM_OP_CODES:
            raise SchemaError(f"bad op code {self.op_type}")
        if self.op_type != 0 and self.category != AST_CATEGORIES.index("operation"):
            raise SchemaError("op_type set on a non-operation node")
        if self.in_bits < 0 or self.out_bits < 0:
            raise SchemaError("negative bit count")


@dataclass
class AstGraph:
    design_id: str
    nodes: list[AstNode]
    edges: list[tuple[int, int]]  # syntactic parent -> child
    links: list[tuple[int, int]] = field(default_factory=list)  # dataflow: edge-node -> driven variable

    def __post_init__(self):
        self.edges = [(int(a), int(b)) for a, b in self.edges]
        self.links = [(int(a), int(b)) for a, b in self.links]
        self.validate()

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def validate(self) -> None:
        n = len(self.nodes)
        roots = [i for i, nd in enumerate(self.nodes) if nd.category == 0]
        if len(roots) != 1:
            raise SchemaError(f"{self.design_id}: expected exactly one root, found {len(roots)}")
        for a, b in self.edges + self.links:
            if not (0 <= a < n and 0 <= b < n):
                raise SchemaError(f"{self.design_id}: edge ({a}, {b}) out of range")
        if any(b == roots[0] for _, b in self.edges):
            raise SchemaError(f"{self.design_id}: root has a parent")
        order = topo_order(n, self.edges)
        if order is None:
            raise SchemaError(f"{self.design_id}: parent->child edges contain a cycle")

    @property
    def root(self) -> int:
        return next(i for i, nd in enumerate(self.nodes) if nd.category == 0)

    def category_counts(self) -> list[int]:
        counts = [0] * len(AST_CATEGORIES)
        for nd in self.nodes:
            counts[nd.category] += 1
        return counts


def topo_order(n: int, edges: Sequence[tuple[int, int]]) -> list[int] | None:
    indeg = [0] * n
    kids: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        kids[a].append(b)
        indeg[b] += 1
    stack = [i for i in range(n) if indeg[i] == 0]
    order = []
    while stack:
        u = stack.pop()
        order.append(u)
        for v in kids[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                stack.append(v)
    return order if len(order) == n else None


@dataclass
class EmbeddingRecord:
    design_id: str
    data: np.ndarray  # (rows, dim) float32
    pooled: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim == 1:
            self.data = self.data[None, :]
        rows, dim = self.data.shape
        if rows < 1 or dim < 1:
            raise SchemaError(f"{self.design_id}: empty embedding {self.data.shape}")
        if self.pooled and rows != 1:
            raise SchemaError(f"{self.design_id}: pooled record must have one row, has {rows}")
        if not np.all(np.isfinite(self.data)):
            raise SchemaError(f"{self.design_id}: non-finite embedding values")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        return (isinstance(other, EmbeddingRecord) and self.design_id == other.design_id
                and self.pooled == other.pooled and np.array_equal(self.data, other.data))


@dataclass(frozen=True)
class LabelRecord:
    design_id: str
    raw_area: float
    raw_delay: float

    def __post_init__(self):
        for name in ("raw_area", "raw_delay"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise DomainError(f"{self.design_id}: {name} must be positive and finite, got {v}")

    @property
    def log_area(self) -> float:
        return math.log(self.raw_area)

    @property
    def log_delay(self) -> float:
        return math.log(self.raw_delay)

    def log_target(self, target: str) -> float:
        if target == "area":
            return self.log_area
        if target == "delay":
            return self.log_delay
        raise ValueError(f"unknown target {target!r}")


@dataclass
class DatasetSplit:
    seed: int
    train: list[str]
    val: list[str]
    test: list[str]

    def __post_init__(self):
        a, b, c = set(self.train), set(self.val), set(self.test)
        if len(a) + len(b) + len(c) != len(a | b | c) or \
                len(a) != len(self.train) or len(b) != len(self.val) or len(c) != len(self.test):
            raise SchemaError("split parts overlap or contain duplicates")

    def part(self, name: str) -> list[str]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split part {name!r}")
        return getattr(self, name)


# -------------------------------------------------------------- LUT graphs


def _lut_to_json(g: LutGraph) -> dict:
    return {"id": g.design_id, "n": g.num_nodes,
            "attrs": g.node_attrs.tolist(), "edges": [list(e) for e in g.edges]}


def save_lut_graphs(path, graphs: Iterable[LutGraph]) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(_lut_to_json(g)) + "\n")


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            yield lineno, obj


def load_lut_graphs(path) -> list[LutGraph]:
    out, seen = [], set()
    for lineno, obj in _read_jsonl(path):
        try:
            gid, n, attrs, edges = obj["id"], obj["n"], obj["attrs"], obj["edges"]
        except KeyError as exc:
            raise ParseError(f"missing key {exc.args[0]!r}", lineno) from None
        if not isinstance(n, int) or len(attrs) != n:
            raise ParseError(f"'n'={n!r} disagrees with {len(attrs)} attribute rows", lineno)
        for row in attrs:
            if len(row) != LUT_ATTR_DIM:
                raise SchemaError(f"line {lineno}: attribute row of width {len(row)}, expected {LUT_ATTR_DIM}")
        if any(len(e) != 2 for e in edges):
            raise ParseError("edges must be [src, dst] pairs", lineno)
        if gid in seen:
            raise DuplicateKeyError(f"line {lineno}: duplicate design id {gid!r}")
        seen.add(gid)
        try:
            out.append(LutGraph(gid, n, np.array(attrs, dtype=np.float64).reshape(n, LUT_ATTR_DIM), edges))
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    return out


# -------------------------------------------------------------- AST graphs


def _ast_to_json(g: AstGraph) -> dict:
    return {"id": g.design_id, "n": g.num_nodes,
            "nodes": [{"cat": nd.category, "op": nd.op_type, "in": nd.in_bits, "out": nd.out_bits}
                      for nd in g.nodes],
            "edges": [list(e) for e in g.edges],
            "links": [list(e) for e in g.links]}


def save_ast_graphs(path, graphs: Iterable[AstGraph]) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(_ast_to_json(g)) + "\n")


def load_ast_graphs(path) -> list[AstGraph]:
    out, seen = [], set()
    for lineno, obj in _read_jsonl(path):
        try:
            nodes = [AstNode(d["cat"], d["op"], d["in"], d["out"]) for d in obj["nodes"]]
            g = AstGraph(obj["id"], nodes, obj["edges"], obj.get("links", []))
        except KeyError as exc:
            raise ParseError(f"missing key {exc.args[0]!r}", lineno) from None
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
        if obj.get("n", len(nodes)) != len(nodes):
            raise ParseError("'n' disagrees with node list", lineno)
        if g.design_id in seen:
            raise DuplicateKeyError(f"line {lineno}: duplicate design id {g.design_id!r}")
        seen.add(g.design_id)
        out.append(g)
    return out


# -------------------------------------------------------------- embeddings


def save_embeddings(path, records: Iterable[EmbeddingRecord]) -> None:
    records = list(records)
    buf = io.BytesIO()
    buf.write(EMBED_MAGIC)
    buf.write(struct.pack("<II", EMBED_VERSION, len(records)))
    for r in records:
        key = r.design_id.encode("utf-8")
        buf.write(struct.pack("<I", len(key)))
        buf.write(key)
        buf.write(struct.pack("<IIB", r.rows, r.dim, int(r.pooled)))
        buf.write(np.ascontiguousarray(r.data, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_embeddings(path) -> dict[str, EmbeddingRecord]:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise ParseError(f"truncated embedding file at byte {pos} (wanted {n} more)")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4) != EMBED_MAGIC:
        raise ParseError("bad magic: not a QDEM embedding file")
    version, count = struct.unpack("<II", take(8))
    if version != EMBED_VERSION:
        raise ParseError(f"unsupported embedding file version {version}")
    out: dict[str, EmbeddingRecord] = {}
    for _ in range(count):
        (klen,) = struct.unpack("<I", take(4))
        key = take(klen).decode("utf-8")
        rows, dim, pooled = struct.unpack("<IIB", take(9))
        data = np.frombuffer(take(4 * rows * dim), dtype="<f4").reshape(rows, dim).astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise SchemaError(f"{key}: NaN/Inf in embedding payload")
        if key in out:
            raise DuplicateKeyError(f"duplicate design id {key!r} in embedding file")
        out[key] = EmbeddingRecord(key, data, bool(pooled))
    if pos != len(raw):
        raise ParseError(f"{len(raw) - pos} trailing bytes after last record")
    return out


# ------------------------------------------------------------------ labels


def save_labels(path, labels: Iterable[LabelRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["design_id", "area", "delay"])
        for r in labels:
            w.writerow([r.design_id, repr(float(r.raw_area)), repr(float(r.raw_delay))])


def load_labels(path) -> dict[str, LabelRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        missing = {"design_id", "area", "delay"} - cols
        if missing:
            raise ParseError(f"label header missing columns {sorted(missing)}", 1)
        out: dict[str, LabelRecord] = {}
        for lineno, row in enumerate(reader, 2):
            try:
                area, delay = float(row["area"]), float(row["delay"])
            except (TypeError, ValueError):
                raise ParseError("non-numeric area/delay", lineno) from None
            did = row["design_id"]
            if did in out:
                raise DuplicateKeyError(f"line {lineno}: duplicate design id {did!r}")
            try:
                out[did] = LabelRecord(did, area, delay)
            except DomainError as exc:
                raise DomainError(f"line {lineno}: {exc}") from None
    return out


# ------------------------------------------------------------------- split

SPLIT_RATIOS = (0.75, 0.10)


def make_split(ids: Sequence[str], seed: int,
               ratios: tuple[float, float] = SPLIT_RATIOS) -> DatasetSplit:
    """Seeded shuffle into floor(r0*n) train, floor(r1*n) val, rest test."""
    ids = sorted(set(ids))
    n = len(ids)
    if n < 10:
        raise DataError(f"need at least 10 designs to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in perm]
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return DatasetSplit(int(seed), shuffled[:n_train], shuffled[n_train:n_train + n_val],
                        shuffled[n_train + n_val:])


def save_split(path, split: DatasetSplit) -> None:
    Path(path).write_text(json.dumps(
        {"seed": split.seed, "train": split.train, "val": split.val, "test": split.test}) + "\n")


def load_split(path) -> DatasetSplit:
    try:
        obj = json.loads(Path(path).read_text())
        return DatasetSplit(int(obj["seed"]), list(obj["train"]), list(obj["val"]), list(obj["test"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed split file: {exc}") from None


# ---------------------------------------------------------------- batching


def normalized_adjacency(n: int, edges: Sequence[tuple[int, int]]) -> sp.csr_matrix:
    """D^-1/2 (A + A^T + I) D^-1/2, with parallel edges collapsed."""
    if edges:
        e = np.asarray(edges, dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        A = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
        A.data[:] = 1.0
    else:
        A = sp.csr_matrix((n, n))
    A = (A + sp.identity(n, format="csr")).tocsr()
    A.sum_duplicates()
    A.data[:] = np.minimum(A.data, 1.0)
    d = np.asarray(A.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(d)
    return sp.csr_matrix(sp.diags(dinv) @ A @ sp.diags(dinv))


@dataclass(frozen=True)
class BatchedGraph:
    """Disjoint union of graphs: block-diagonal adjacency, stacked node rows."""

    design_ids: tuple[str, ...]
    x: np.ndarray
    adj: sp.csr_matrix
    offsets: tuple[int, ...]
    edges: np.ndarray  # (E, 2), global indices

    @property
    def num_graphs(self) -> int:
        return len(self.design_ids)


_ADJ_CACHE_ATTR = "_qorkd_adj"


def _cached_adj(g) -> sp.csr_matrix:
    adj = getattr(g, _ADJ_CACHE_ATTR, None)
    if adj is None:
        adj = normalized_adjacency(g.num_nodes, g.edges + list(getattr(g, "links", [])))
        object.__setattr__(g, _ADJ_CACHE_ATTR, adj)
    return adj


def batch_graphs(graphs: Sequence, features: Sequence[np.ndarray] | None = None) -> BatchedGraph:
    """Batch LUT graphs (or any graph with ``num_nodes``/``edges`` given ``features``)."""
    if not graphs:
        raise DataError("batch_graphs needs at least one graph")
    if features is None:
        features = [g.node_attrs for g in graphs]
    sizes = [g.num_nodes for g in graphs]
    offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum(sizes)]))
    edge_blocks = []
    for g, off in zip(graphs, offsets):
        pairs = list(g.edges) + list(getattr(g, "links", []))
        if pairs:
            edge_blocks.append(np.asarray(pairs, dtype=np.int64) + off)
    edges = np.concatenate(edge_blocks) if edge_blocks else np.zeros((0, 2), dtype=np.int64)
    adj = sp.block_diag([_cached_adj(g) for g in graphs], format="csr")
    x = np.concatenate([np.asarray(f, dtype=np.float64) for f in features], axis=0)
    return BatchedGraph(tuple(g.design_id for g in graphs), x, adj, offsets, edges)


# ----------------------------------------------------------- normalization


@dataclass(frozen=True)
class LabelNormalizer:
    mu: float
    sigma: float

    @classmethod
    def fit(cls, values: Sequence[float]) -> "LabelNormalizer":
        v = np.asarray(values, dtype=np.float64)
        if v.size < 2:
            raise DataError("label normalizer needs at least 2 training labels")
        sigma = float(v.std())
        if not sigma > 0:
            raise DataError("training labels have zero variance")
        return cls(float(v.mean()), sigma)

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mu) / self.sigma

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.sigma + self.mu


def label_normalizer(train_labels: Sequence[float]) -> LabelNormalizer:
    return LabelNormalizer.fit(train_labels)
