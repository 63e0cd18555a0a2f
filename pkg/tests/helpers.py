"""Random-instance builders and fixture loaders shared by the test modules."""

import json
from pathlib import Path

import numpy as np

from qorkd.graphio import AstGraph, AstNode, EmbeddingRecord, LabelRecord, LutGraph


def random_lut_graph(rng, did="g", n=None, p_edge=0.3):
    n = int(rng.integers(1, 12)) if n is None else n
    attrs = rng.integers(0, 2, size=(n, 16)).astype(float)
    edges = [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < p_edge / max(n, 1) * 3]
    return LutGraph(did, n, attrs, edges)


def random_ast_graph(rng, did="a", n=None):
    """Random tree rooted at 0 plus a few links; operation nodes carry op codes."""
    n = int(rng.integers(2, 15)) if n is None else n
    nodes = [AstNode(0, 0, int(rng.integers(0, 300)), int(rng.integers(0, 300)))]
    edges = []
    for i in range(1, n):
        cat = int(rng.integers(1, 5))
        op = int(rng.integers(1, 100)) if cat == 2 else 0
        nodes.append(AstNode(cat, op, int(rng.integers(0, 300)), int(rng.integers(0, 300))))
        edges.append((int(rng.integers(0, i)), i))
    links = [(int(rng.integers(1, n)), int(rng.integers(1, n))) for _ in range(int(rng.integers(0, 3)))]
    return AstGraph(did, nodes, edges, links)


def random_embedding(rng, did="e", pooled=False, dim=None):
    dim = int(rng.integers(1, 9)) if dim is None else dim
    rows = 1 if pooled else int(rng.integers(1, 6))
    return EmbeddingRecord(did, rng.normal(size=(rows, dim)).astype(np.float32), pooled)


def random_label(rng, did="l"):
    return LabelRecord(did, float(np.exp(rng.normal(5, 2))), float(np.exp(rng.normal(3, 1))))


FIXTURES = Path(__file__).parent / "fixtures"


def feature_fixtures():
    """(file name, source, expected 108-vector) for the hand-computed fixtures."""
    d = FIXTURES / "features"
    table = json.loads((d / "expected.json").read_text())
    out = []
    for name, e in sorted(table.items()):
        if name.startswith("_"):
            continue
        vec = np.zeros(108)
        vec[0], vec[1], vec[2] = e["in"], e["out"], e["longest"]
        vec[3:8] = e["cats"]
        for code, count in e["ops"].items():
            vec[8 + int(code)] = count
        out.append((name, (d / name).read_text(), vec))
    return out


def corpus_fixtures():
    """(file name, source, annotation) where annotation is ("ok",) or (category[, construct])."""
    out = []
    for p in sorted((FIXTURES / "verilog").glob("*.v")):
        src = p.read_text()
        head = src.splitlines()[0]
        out.append((p.name, src, tuple(head.split("expect:", 1)[1].split())))
    return out


def dfs_longest(n, edges, root):
    """Exhaustive enumeration of root-to-leaf paths; returns the longest edge count."""
    kids = [[] for _ in range(n)]
    for a, b in edges:
        kids[a].append(b)
    best = 0
    stack = [(root, 0)]
    while stack:
        u, d = stack.pop()
        best = max(best, d)
        stack.extend((v, d + 1) for v in kids[u])
    return best


def model_grad_error(model, batch, rng, coords=3, eps=1e-6):
    """Max relative error of tape gradients vs central differences, sampled per parameter.

    Loss mixes the prediction and z so every parameter gets a non-trivial
    gradient; train-mode batch norm uses batch statistics, so the loss is a
    pure function of the parameters.
    """
    from qorkd import diffcore as dc

    p0, z0 = model.forward(batch, mode="train")
    y = dc.Tensor(rng.normal(size=p0.shape))
    zt = dc.Tensor(rng.normal(size=z0.shape))

    def loss():
        pred, z = model.forward(batch, mode="train")
        return dc.add(dc.mse(pred, y), dc.scale(dc.sq_dist_mean(z, zt), 1e-2))

    for _, t in model.params.items():
        t.zero_grad()
    with dc.Tape() as tape:
        out = loss()
    dc.backward(out, tape)
    worst = 0.0
    for _, t in model.params.items():
        flat = t.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(coords, flat.size), replace=False):
            keep = flat[i]
            flat[i] = keep + eps
            fp = loss().item()
            flat[i] = keep - eps
            fm = loss().item()
            flat[i] = keep
            num = (fp - fm) / (2 * eps)
            ana = t.grad.reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana)))
    return worst


def perfect_fixture(out_dir, n=20, dim=4, seed=0):
    """Corpus whose log-area is linear in the pooled embedding, plus a linear
    student checkpoint carrying exactly those weights."""
    from qorkd.graphio import LabelNormalizer, make_split, save_embeddings, save_labels, save_split
    from qorkd.models import Checkpoint, ModelConfig, build_model, save_checkpoint
    from qorkd.training import load_corpus

    rng = np.random.default_rng(seed)
    w, c = rng.normal(size=dim), 0.75
    ids = [f"p{i:03d}" for i in range(n)]
    recs = [EmbeddingRecord(d, rng.normal(size=(1, dim)).astype(np.float32), pooled=True) for d in ids]
    labels = [LabelRecord(d, float(np.exp(r.data[0].astype(np.float64) @ w + c)), 1.0) for d, r in zip(ids, recs)]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_embeddings(out_dir / "embeddings.qdem", recs)
    save_labels(out_dir / "labels.csv", labels)
    save_split(out_dir / "split.json", make_split(ids, seed))
    m = build_model(ModelConfig("student", dim_embed=dim, hidden=dim, n_hidden=0))
    m.params["out.W"].data[:] = w[:, None]
    m.params["out.b"].data[:] = c
    ckpt = Checkpoint(m, LabelNormalizer(0.0, 1.0), {"target": "area"})
    save_checkpoint(out_dir / "perfect.qdck", ckpt)
    return ckpt, load_corpus(out_dir, need=("embedding",))


ACCEPTANCE_LINES: list[str] = []


def report(num: int, title: str, ok: bool, detail: str = "") -> None:
    """Record and print one acceptance line, then fail the calling test if needed."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
