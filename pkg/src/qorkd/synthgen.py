"""Deterministic synthetic corpora with a planted label law.

Each design gets a LUT graph, a token-level embedding, a Verilog source in
the supported subset, and raw area/delay labels with

    ln(area)  = a * ln(num_nodes) + b * mean(node_attrs) + N(0, noise_sigma)
    ln(delay) = delay_offset + 0.5 * a * ln(num_nodes) - 0.5 * b * mean(node_attrs) + N(0, noise_sigma)

Graph structure: ``num_inputs`` primary-input nodes (identity truth table on
input 0) followed by LUTs that each read 1..max_fanin earlier nodes, so the
graph is a DAG and the share of input nodes shrinks with size.  Each LUT's
truth table has a per-design bit density, making ``mean(node_attrs)`` vary
across designs.

Every embedding row (row 0 included) carries ``ln(num_nodes)`` in coordinate
0 and the attribute mean in coordinate 1, each plus a per-design offset with
standard deviation ``embed_noise``.  The offset is shared by all rows, so mean
pooling cannot average it away.

The remaining coordinates depend on ``token_source``.  With ``"graph"`` there
is one row per LUT: a fixed random ReLU projection of the node's truth table
and its 1..3-hop normalized neighbourhood averages, standing in for a
language model that reads the netlist source line by line.  Structure is then
present in the embedding only implicitly.  With ``"noise"`` the rows are
i.i.d. N(0, 1) and their count is drawn from ``[min_rows, max_rows]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graphio import (
    DatasetSplit, EmbeddingRecord, LabelRecord, LutGraph, make_split, normalized_adjacency,
    save_embeddings, save_labels, save_lut_graphs, save_split,
)

TOKEN_HOPS = 3


@dataclass(frozen=True)
class SynthSpec:
    n_designs: int = 1000
    min_nodes: int = 4
    max_nodes: int = 64
    max_fanin: int = 4  # edge density: each LUT reads 1..max_fanin earlier nodes
    num_inputs: int = 2
    embed_dim: int = 32
    token_source: str = "graph"  # graph | noise
    min_rows: int = 4
    max_rows: int = 12
    a: float = 1.0
    b: float = 2.0
    noise_sigma: float = 0.05
    embed_noise: float = 0.1
    delay_offset: float = 3.0
    train_frac: float = 0.75
    val_frac: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.n_designs < 10:
            raise ValueError("need at least 10 designs")
        if not 2 <= self.min_nodes <= self.max_nodes:
            raise ValueError("node-count range must satisfy 2 <= min <= max")
        if not 1 <= self.num_inputs < self.min_nodes:
            raise ValueError("num_inputs must be in [1, min_nodes)")
        if not 1 <= self.max_fanin <= 4:
            raise ValueError("max_fanin must be in [1, 4] (16-bit truth tables)")
        if self.token_source not in ("graph", "noise"):
            raise ValueError(f"token_source must be 'graph' or 'noise', got {self.token_source!r}")
        if self.embed_dim < 2 or not 1 <= self.min_rows <= self.max_rows:
            raise ValueError("bad embedding shape parameters")

    @classmethod
    def from_json(cls, obj: dict) -> "SynthSpec":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class Design:
    graph: LutGraph
    embedding: EmbeddingRecord
    label: LabelRecord
    verilog: str


def truth_table(bits: np.ndarray, k: int) -> np.ndarray:
    """Periodic extension of a 2**k-entry truth table to 16 entries."""
    reps = 16 // (1 << k)
    return np.tile(bits[: 1 << k], reps).astype(np.float64)


def _graph(spec: SynthSpec, rng: np.random.Generator, did: str) -> LutGraph:
    lo, hi = math.log(spec.min_nodes), math.log(spec.max_nodes)
    n = int(np.clip(round(math.exp(rng.uniform(lo, hi))), spec.min_nodes, spec.max_nodes))
    density = rng.uniform(0.2, 0.8)
    attrs = np.zeros((n, 16))
    edges = []
    pi = truth_table(np.array([0, 1]), 1)
    for i in range(n):
        if i < spec.num_inputs:
            attrs[i] = pi
            continue
        k = int(rng.integers(1, min(spec.max_fanin, i) + 1))
        for src in sorted(rng.choice(i, size=k, replace=False)):
            edges.append((int(src), i))
        attrs[i] = truth_table((rng.random(1 << k) < density).astype(np.float64), k)
    return LutGraph(did, n, attrs, edges)


_OPS = ["&", "|", "^", "+", "-", "~^"]


def _verilog(did: str, n: int, rng: np.random.Generator) -> str:
    width = 1 << int(min(5, max(1, round(math.log2(n)) - 1)))
    steps = max(1, n // 4)
    lines = [f"module {did}(input clk, input [{width - 1}:0] a, input [{width - 1}:0] b, "
             f"output reg [{width - 1}:0] q);"]
    lines.append(f"  wire [{width - 1}:0] " + ", ".join(f"t{i}" for i in range(steps)) + ";")
    prev = ["a", "b"]
    for i in range(steps):
        op = _OPS[int(rng.integers(len(_OPS)))]
        x, y = prev[int(rng.integers(len(prev)))], prev[int(rng.integers(len(prev)))]
        if rng.random() < 0.2:
            lines.append(f"  assign t{i} = ~({x} {op} {y});")
        elif rng.random() < 0.2:
            lines.append(f"  assign t{i} = {x}[0] ? {y} : {width}'d{int(rng.integers(1 << min(width, 16)))};")
        else:
            lines.append(f"  assign t{i} = {x} {op} {y};")
        prev.append(f"t{i}")
    lines.append("  always @(posedge clk) begin")
    lines.append(f"    if (a == b) q <= {width}'d0;")
    lines.append(f"    else q <= t{steps - 1};")
    lines.append("  end")
    lines.append("endmodule")
    return "\n".join(lines) + "\n"


def token_projection(spec: SynthSpec) -> np.ndarray:
    """The corpus-wide random map from neighbourhood descriptors to token coordinates."""
    rng = np.random.default_rng([spec.seed, 1 << 32])
    return rng.normal(0.0, 0.25, size=(16 * (TOKEN_HOPS + 1), spec.embed_dim - 2))


def graph_tokens(g: LutGraph, proj: np.ndarray) -> np.ndarray:
    adj = normalized_adjacency(g.num_nodes, g.edges)
    h, hops = g.node_attrs, [g.node_attrs]
    for _ in range(TOKEN_HOPS):
        h = adj @ h
        hops.append(h)
    return np.maximum((np.concatenate(hops, axis=1) - 0.5) @ proj, 0.0)


def _design(spec: SynthSpec, i: int, proj: np.ndarray | None = None) -> Design:
    rng = np.random.default_rng([spec.seed, i])
    did = f"d{i:05d}"
    g = _graph(spec, rng, did)
    mean_attr = float(g.node_attrs.mean())
    ln_n = math.log(g.num_nodes)
    eps_a, eps_d = rng.normal(0.0, spec.noise_sigma, size=2) if spec.noise_sigma > 0 else (0.0, 0.0)
    log_area = spec.a * ln_n + spec.b * mean_attr + eps_a
    log_delay = spec.delay_offset + 0.5 * spec.a * ln_n - 0.5 * spec.b * mean_attr + eps_d
    label = LabelRecord(did, math.exp(log_area), math.exp(log_delay))

    if spec.token_source == "graph":
        emb = np.empty((g.num_nodes, spec.embed_dim))
        emb[:, 2:] = graph_tokens(g, token_projection(spec) if proj is None else proj)
    else:
        rows = int(rng.integers(spec.min_rows, spec.max_rows + 1))
        emb = rng.normal(0.0, 1.0, size=(rows, spec.embed_dim))
    off = rng.normal(0.0, 1.0, size=2) * spec.embed_noise  # always drawn: keeps Verilog independent of noise
    emb[:, 0] = ln_n + off[0]
    emb[:, 1] = mean_attr + off[1]
    return Design(g, EmbeddingRecord(did, emb.astype(np.float32)), label, _verilog(did, g.num_nodes, rng))


def generate_designs(spec: SynthSpec) -> list[Design]:
    proj = token_projection(spec)
    return [_design(spec, i, proj) for i in range(spec.n_designs)]


def generate(spec: SynthSpec, out_dir) -> DatasetSplit:
    """Write graphs.jsonl, embeddings.qdem, labels.csv, verilog/*.v, split.json, spec.json."""
    out = Path(out_dir)
    (out / "verilog").mkdir(parents=True, exist_ok=True)
    designs = generate_designs(spec)
    save_lut_graphs(out / "graphs.jsonl", (d.graph for d in designs))
    save_embeddings(out / "embeddings.qdem", (d.embedding for d in designs))
    save_labels(out / "labels.csv", (d.label for d in designs))
    for d in designs:
        (out / "verilog" / f"{d.graph.design_id}.v").write_text(d.verilog)
    split = make_split([d.graph.design_id for d in designs], spec.seed,
                       (spec.train_frac, spec.val_frac))
    save_split(out / "split.json", split)
    (out / "spec.json").write_text(json.dumps(asdict(spec), sort_keys=True, indent=1) + "\n")
    return split
