"""Teacher LUT-GNN, student embedding decoder and the AST-GNN baseline.

Every model maps a batch to ``(prediction[B], z[B, 512])`` where ``z`` is the
post-ReLU activation feeding the output layer.  Checkpoints are a small
little-endian binary format::

    b"QDCK" u32 version u32 len  <config JSON>
    u32 count, then per tensor: u32 len <name> u32 ndim u32*ndim shape  float64 payload
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import BatchNormState, ParamSet, Tensor
from .graphio import LUT_ATTR_DIM, AstGraph, BatchedGraph, EmbeddingRecord, LabelNormalizer, batch_graphs
from .verilog_ast.features import NODE_FEATURE_DIM, encode_nodes, init_projections, node_classes

CKPT_MAGIC = b"QDCK"
CKPT_VERSION = 1
HIDDEN = 512


class ConfigMismatchError(ValueError):
    pass


@dataclass
class ModelConfig:
    kind: str  # teacher | student | ast_gnn
    in_dim: int = LUT_ATTR_DIM
    conv_dim: int = 64
    n_conv: int = 3
    hidden: int = HIDDEN
    n_hidden: int = 3
    dim_embed: int = HIDDEN
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("teacher", "student", "ast_gnn"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def modality(self) -> str:
        return {"teacher": "lut", "student": "embedding", "ast_gnn": "ast"}[self.kind]

    def architecture(self) -> dict:
        d = asdict(self)
        d.pop("seed")
        return d


def _add_linear(ps: ParamSet, rng, name: str, d_in: int, d_out: int) -> None:
    ps[f"{name}.W"] = Tensor(dc.init_uniform(rng, d_in, d_out), requires_grad=True)
    bound = 1.0 / np.sqrt(d_in)
    ps[f"{name}.b"] = Tensor(rng.uniform(-bound, bound, size=d_out), requires_grad=True)


def _lin(ps: ParamSet, name: str, x: Tensor) -> Tensor:
    return dc.linear(x, ps[f"{name}.W"], ps[f"{name}.b"])


class Model:
    """Shared head: ``n_hidden`` ReLU layers of width ``hidden`` then a 1-unit output."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = ParamSet()
        self.bn: dict[str, BatchNormState] = {}

    # subclasses build params in this order so init is deterministic from the seed
    def _add_head(self, rng, d_in: int) -> None:
        c = self.config
        dims = [d_in] + [c.hidden] * c.n_hidden
        for i in range(c.n_hidden):
            _add_linear(self.params, rng, f"fc{i}", dims[i], dims[i + 1])
        _add_linear(self.params, rng, "out", c.hidden, 1)

    def _head(self, h: Tensor) -> tuple[Tensor, Tensor]:
        for i in range(self.config.n_hidden):
            h = dc.relu(_lin(self.params, f"fc{i}", h))
        pred = dc.reshape(_lin(self.params, "out", h), (h.shape[0],))
        return pred, h

    @property
    def frozen(self) -> bool:
        return self.params.frozen

    def freeze(self) -> None:
        self.params.freeze()

    def prepare(self, items: Sequence):
        raise NotImplementedError

    def forward(self, batch, mode: str = "eval") -> tuple[Tensor, Tensor]:
        raise NotImplementedError

    def predict(self, items: Sequence, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
        preds, zs = [], []
        for i in range(0, len(items), chunk):
            p, z = self.forward(self.prepare(items[i:i + chunk]), mode="eval")
            preds.append(p.data)
            zs.append(z.data)
        return np.concatenate(preds), np.concatenate(zs)

    def shape_signature(self, include_input: bool = False) -> list[tuple[str, tuple[int, ...]]]:
        sig = [(k, t.shape) for k, t in self.params.items()]
        if not include_input:
            sig = [(k, s) for k, s in sig if not k.startswith(("proj.", "inproj."))]
        return sig

    # -- state

    def state(self) -> dict[str, np.ndarray]:
        out = {k: t.data for k, t in self.params.items()}
        for k in sorted(self.bn):
            out[f"{k}.running_mean"] = self.bn[k].running_mean
            out[f"{k}.running_var"] = self.bn[k].running_var
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.state())
        if set(state) != expected:
            missing, extra = sorted(expected - set(state)), sorted(set(state) - expected)
            raise ConfigMismatchError(f"checkpoint tensors differ: missing {missing[:3]}, extra {extra[:3]}")
        for k, t in self.params.items():
            if state[k].shape != t.shape:
                raise ConfigMismatchError(f"{k}: shape {state[k].shape} != {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)
        for k, s in self.bn.items():
            s.running_mean = np.array(state[f"{k}.running_mean"], dtype=np.float64)
            s.running_var = np.array(state[f"{k}.running_var"], dtype=np.float64)

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in sorted(self.state().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()


class _GraphTrunkModel(Model):
    def _add_trunk(self, rng) -> None:
        c = self.config
        dims = [c.in_dim] + [c.conv_dim] * c.n_conv
        for i in range(c.n_conv):
            self.params[f"conv{i}.W"] = Tensor(dc.init_uniform(rng, dims[i], dims[i + 1]), requires_grad=True)
            self.params[f"bn{i}.gamma"] = Tensor(np.ones(dims[i + 1]), requires_grad=True)
            self.params[f"bn{i}.beta"] = Tensor(np.zeros(dims[i + 1]), requires_grad=True)
            self.bn[f"bn{i}"] = BatchNormState.fresh(dims[i + 1])
        self._add_head(rng, 2 * c.conv_dim)

    def _trunk(self, x: Tensor, batch: BatchedGraph, mode: str) -> tuple[Tensor, Tensor]:
        h = x
        for i in range(self.config.n_conv):
            h = graph_conv(h, batch.adj, self.params[f"conv{i}.W"])
            h = dc.batch_norm(h, self.params[f"bn{i}.gamma"], self.params[f"bn{i}.beta"],
                              self.bn[f"bn{i}"], mode)
            h = dc.relu(h)
        pooled = dc.concat_cols([dc.segment_mean(h, batch.offsets), dc.segment_max(h, batch.offsets)])
        return self._head(pooled)


def graph_conv(x: Tensor, adj, W: Tensor) -> Tensor:
    """Â x W with Â the symmetric-normalized adjacency (self-loops, symmetrized)."""
    return dc.spmm(adj, dc.matmul(x, W))


class TeacherGNN(_GraphTrunkModel):
    def __init__(self, config: ModelConfig):
        super().__init__(config)
        self._add_trunk(np.random.default_rng(config.seed))

    def prepare(self, graphs) -> BatchedGraph:
        if isinstance(graphs, BatchedGraph):
            return graphs
        return batch_graphs(list(graphs))

    def forward(self, batch: BatchedGraph, mode: str = "eval") -> tuple[Tensor, Tensor]:
        if batch.x.shape[1] != self.config.in_dim:
            raise dc.DimensionError(f"node attributes have width {batch.x.shape[1]}, "
                                    f"model expects {self.config.in_dim}")
        return self._trunk(Tensor(batch.x), batch, mode)


@dataclass(frozen=True)
class AstBatch:
    graph: BatchedGraph
    classes: dict


class AstGnnModel(_GraphTrunkModel):
    def __init__(self, config: ModelConfig):
        if config.in_dim != NODE_FEATURE_DIM:
            raise ValueError(f"AST-GNN input width is fixed at {NODE_FEATURE_DIM}")
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        self._add_trunk(rng)
        for k, t in init_projections(rng, "proj").items():
            self.params[k] = t

    def prepare(self, graphs: Sequence[AstGraph]) -> AstBatch:
        if isinstance(graphs, AstBatch):
            return graphs
        graphs = list(graphs)
        bg = batch_graphs(graphs, [np.zeros((g.num_nodes, 0)) for g in graphs])
        nodes = [nd for g in graphs for nd in g.nodes]
        return AstBatch(bg, node_classes(nodes))

    def forward(self, batch: AstBatch, mode: str = "eval") -> tuple[Tensor, Tensor]:
        x = encode_nodes(batch.classes, self.params, "proj")
        return self._trunk(x, batch.graph, mode)


@dataclass(frozen=True)
class EmbeddingBatch:
    design_ids: tuple[str, ...]
    pooled: np.ndarray  # (B, dim) float64


class StudentDecoder(Model):
    def __init__(self, config: ModelConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        if config.dim_embed != config.hidden:
            _add_linear(self.params, rng, "inproj", config.dim_embed, config.hidden)
        self._add_head(rng, config.hidden)

    def prepare(self, records: Sequence[EmbeddingRecord]) -> EmbeddingBatch:
        if isinstance(records, EmbeddingBatch):
            return records
        return EmbeddingBatch(tuple(r.design_id for r in records), pool_embeddings(records, self.config.dim_embed))

    def forward(self, batch: EmbeddingBatch, mode: str = "eval") -> tuple[Tensor, Tensor]:
        h = Tensor(batch.pooled)
        if "inproj.W" in self.params:
            h = _lin(self.params, "inproj", h)
        return self._head(h)


def pool_embeddings(records: Sequence[EmbeddingRecord], dim: int | None = None) -> np.ndarray:
    """Mean over token rows (pooled records pass through)."""
    out = np.empty((len(records), records[0].dim if records else 0))
    for i, r in enumerate(records):
        if dim is not None and r.dim != dim:
            raise dc.DimensionError(f"{r.design_id}: embedding dim {r.dim}, model expects {dim}")
        rows = np.asarray(r.data, dtype=np.float64)
        out[i] = rows[0] if r.pooled else dc.mean_pool_rows(Tensor(rows)).data
    return out


def student_forward(model: StudentDecoder, e: EmbeddingRecord) -> tuple[float, np.ndarray]:
    p, z = model.forward(model.prepare([e]))
    return float(p.data[0]), z.data[0]


def teacher_forward(model: TeacherGNN, g, mode: str = "eval") -> tuple[np.ndarray, np.ndarray]:
    batch = g if isinstance(g, BatchedGraph) else batch_graphs([g])
    p, z = model.forward(batch, mode)
    return p.data, z.data


def extract_last_hidden(model: Model, items) -> np.ndarray:
    _, z = model.forward(model.prepare(items), mode="eval")
    return z.data


def build_model(config: ModelConfig) -> Model:
    return {"teacher": TeacherGNN, "student": StudentDecoder, "ast_gnn": AstGnnModel}[config.kind](config)


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    model: Model
    normalizer: LabelNormalizer
    meta: dict = field(default_factory=dict)  # target, training config, best epoch, ...

    @property
    def config(self) -> dict:
        return {"model": asdict(self.model.config),
                "normalizer": {"mu": self.normalizer.mu, "sigma": self.normalizer.sigma},
                "meta": self.meta}


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blob = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(blob)), blob]
    state = ckpt.model.state()
    parts.append(struct.pack("<I", len(state)))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, expect: ModelConfig | dict | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise ValueError(f"truncated checkpoint at byte {pos}")
        pos += n
        return raw[pos - n:pos]

    if take(4) != CKPT_MAGIC:
        raise ValueError("bad magic: not a QDCK checkpoint")
    version, blen = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    cfg = json.loads(take(blen).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(count):
        (klen,) = struct.unpack("<I", take(4))
        name = take(klen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(raw):
        raise ValueError("trailing bytes in checkpoint")
    mcfg = ModelConfig(**cfg["model"])
    if expect is not None:
        want = expect.architecture() if isinstance(expect, ModelConfig) else dict(expect)
        have = mcfg.architecture()
        diff = {k for k in want if have.get(k) != want[k]}
        if diff:
            raise ConfigMismatchError(f"checkpoint config mismatch on {sorted(diff)}")
    model = build_model(mcfg)
    model.load_state(state)
    norm = LabelNormalizer(cfg["normalizer"]["mu"], cfg["normalizer"]["sigma"])
    return Checkpoint(model, norm, cfg.get("meta", {}))
