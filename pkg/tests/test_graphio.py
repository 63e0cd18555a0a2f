import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qorkd import graphio as gio
from qorkd.graphio import EmbeddingRecord, LabelNormalizer, LabelRecord, LutGraph

from helpers import random_ast_graph, random_embedding, random_label, random_lut_graph

seeds = st.integers(0, 2**32 - 1)


def _qdem(records):
    out = [b"QDEM", struct.pack("<II", 1, len(records))]
    for did, rows, dim, pooled, payload in records:
        key = did.encode()
        out.append(struct.pack("<I", len(key)) + key + struct.pack("<IIB", rows, dim, pooled))
        out.append(np.asarray(payload, dtype="<f4").tobytes())
    return b"".join(out)


# ---------------------------------------------------------------- LUT graphs

def test_minimal_lut_graph_file(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text('{"id": "x", "n": 2, "attrs": [%s, %s], "edges": [[0, 1]]}\n'
                 % ([0.0] * 16, [1.0] * 16))
    (g,) = gio.load_lut_graphs(p)
    assert g.num_nodes == 2 and g.edges == [(0, 1)]


def test_short_attribute_row_is_schema_error(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text('{"id": "x", "n": 1, "attrs": [%s], "edges": []}\n' % ([0.0] * 15))
    with pytest.raises(gio.SchemaError):
        gio.load_lut_graphs(p)


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "g.jsonl"
    good = '{"id": "x", "n": 1, "attrs": [%s], "edges": []}' % ([0.0] * 16)
    p.write_text(good + "\n{not json\n")
    with pytest.raises(gio.ParseError) as ei:
        gio.load_lut_graphs(p)
    assert ei.value.line == 2


def test_lut_loader_rejects_nan(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text('{"id": "x", "n": 1, "attrs": [[NaN%s]], "edges": []}\n' % (", 0.0" * 15))
    with pytest.raises(gio.DataError):
        gio.load_lut_graphs(p)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_lut_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    gs = [random_lut_graph(rng, f"g{i}") for i in range(3)]
    p = tmp_path_factory.mktemp("lut") / "g.jsonl"
    gio.save_lut_graphs(p, gs)
    assert gio.load_lut_graphs(p) == gs


# -------------------------------------------------------------- AST graphs

@settings(max_examples=30, deadline=None)
@given(seeds)
def test_ast_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    gs = [random_ast_graph(rng, f"a{i}") for i in range(3)]
    p = tmp_path_factory.mktemp("ast") / "a.jsonl"
    gio.save_ast_graphs(p, gs)
    assert gio.load_ast_graphs(p) == gs


def test_ast_graph_invariants():
    N = gio.AstNode
    with pytest.raises(gio.SchemaError):
        gio.AstGraph("x", [N(0), N(0)], [])  # two roots
    with pytest.raises(gio.SchemaError):
        gio.AstGraph("x", [N(0), N(1), N(1)], [(0, 1), (1, 2), (2, 1)])  # cycle
    with pytest.raises(gio.SchemaError):
        N(1, op_type=3)  # op code on a variable


# -------------------------------------------------------------- embeddings

def test_hand_built_embedding_file(tmp_path):
    payload = np.arange(12, dtype=np.float32).reshape(3, 4) / 8
    p = tmp_path / "e.qdem"
    p.write_bytes(_qdem([("d1", 3, 4, 0, payload), ("d2", 1, 4, 1, payload[:1])]))
    recs = gio.load_embeddings(p)
    assert np.array_equal(recs["d1"].data, payload) and not recs["d1"].pooled
    assert recs["d2"].pooled and recs["d2"].rows == 1


@pytest.mark.parametrize("blob,err", [
    (lambda: b"QDEX" + _qdem([])[4:], gio.ParseError),
    (lambda: _qdem([("d", 2, 2, 0, np.zeros(4))])[:-3], gio.ParseError),
    (lambda: _qdem([("d", 1, 2, 0, [np.nan, 0.0])]), gio.DataError),
    (lambda: _qdem([("d", 1, 1, 0, [1.0]), ("d", 1, 1, 0, [2.0])]), gio.DuplicateKeyError),
])
def test_embedding_loader_errors(tmp_path, blob, err):
    p = tmp_path / "e.qdem"
    p.write_bytes(blob())
    with pytest.raises(err):
        gio.load_embeddings(p)


def test_pooled_record_needs_one_row():
    with pytest.raises(gio.SchemaError):
        EmbeddingRecord("x", np.zeros((2, 3)), pooled=True)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_embedding_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    recs = [random_embedding(rng, f"e{i}", pooled=bool(i % 2)) for i in range(4)]
    p = tmp_path_factory.mktemp("emb") / "e.qdem"
    gio.save_embeddings(p, recs)
    back = gio.load_embeddings(p)
    assert [back[r.design_id] for r in recs] == recs


# ------------------------------------------------------------------ labels

def test_label_logs():
    r = LabelRecord("x", math.e, 1.0)
    assert abs(r.log_area - 1.0) <= 1e-12 and r.log_delay == 0.0


def test_label_rejects_non_positive(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("design_id,area,delay\nx,0,1\n")
    with pytest.raises(gio.DomainError):
        gio.load_labels(p)
    p.write_text("design_id,area,delay\nx,inf,1\n")
    with pytest.raises(gio.DomainError):
        gio.load_labels(p)


def test_label_header_permutation(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("design_id,area,delay\nx,2.5,7\ny,3,4\n")
    b.write_text("delay,design_id,area\n7,x,2.5\n4,y,3\n")
    assert gio.load_labels(a) == gio.load_labels(b)


def test_label_duplicate_id(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("design_id,area,delay\nx,1,1\nx,2,2\n")
    with pytest.raises(gio.DuplicateKeyError):
        gio.load_labels(p)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_label_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    recs = [random_label(rng, f"l{i}") for i in range(5)]
    p = tmp_path_factory.mktemp("lab") / "l.csv"
    gio.save_labels(p, recs)
    assert gio.load_labels(p) == {r.design_id: r for r in recs}


# ------------------------------------------------------------------ splits

def test_split_sizes_and_determinism():
    ids = [f"d{i}" for i in range(20)]
    s = gio.make_split(ids, 7)
    assert (len(s.train), len(s.val), len(s.test)) == (15, 2, 3)
    assert gio.make_split(ids, 7) == s
    assert gio.make_split(ids, 8).train != s.train
    assert sorted(s.train + s.val + s.test) == sorted(ids)


def test_split_needs_ten_ids():
    with pytest.raises(gio.DataError):
        gio.make_split([f"d{i}" for i in range(9)], 0)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(10, 200))
def test_split_round_trip_bitwise(tmp_path_factory, seed, n):
    s = gio.make_split([f"d{i}" for i in range(n)], seed)
    d = tmp_path_factory.mktemp("split")
    gio.save_split(d / "a.json", s)
    gio.save_split(d / "b.json", gio.make_split([f"d{i}" for i in range(n)], seed))
    assert (d / "a.json").read_bytes() == (d / "b.json").read_bytes()
    assert gio.load_split(d / "a.json") == s


def test_split_rejects_overlap():
    with pytest.raises(gio.SchemaError):
        gio.DatasetSplit(0, ["a"], ["a"], [])


# ---------------------------------------------------------------- batching

def test_batch_offsets_and_edge_shift():
    rng = np.random.default_rng(0)
    g1 = LutGraph("a", 2, rng.integers(0, 2, (2, 16)), [(0, 1)])
    g2 = LutGraph("b", 3, rng.integers(0, 2, (3, 16)), [(0, 2), (1, 2)])
    b = gio.batch_graphs([g1, g2])
    assert b.x.shape == (5, 16) and b.offsets == (0, 2, 5)
    assert b.edges.tolist() == [[0, 1], [2, 4], [3, 4]]
    assert np.array_equal(b.adj[2:, 2:].toarray(), gio.normalized_adjacency(3, g2.edges).toarray())
    assert b.adj[:2, 2:].nnz == 0


def test_batch_of_one_matches_single_graph():
    g = random_lut_graph(np.random.default_rng(1), n=6)
    b = gio.batch_graphs([g])
    assert np.array_equal(b.x, g.node_attrs) and b.offsets == (0, 6)
    assert np.array_equal(b.adj.toarray(), gio.normalized_adjacency(6, g.edges).toarray())


def test_normalized_adjacency_is_symmetric_with_unit_spectrum():
    g = random_lut_graph(np.random.default_rng(2), n=9, p_edge=0.6)
    A = gio.normalized_adjacency(g.num_nodes, g.edges).toarray()
    assert np.allclose(A, A.T)
    assert np.max(np.abs(np.linalg.eigvalsh(A))) <= 1 + 1e-12


# --------------------------------------------------------------- normalizer

def test_normalizer_examples():
    n = LabelNormalizer.fit([0.0, 2.0])
    assert (n.mu, n.sigma) == (1.0, 1.0)
    with pytest.raises(gio.DataError):
        LabelNormalizer.fit([3.0, 3.0])
    with pytest.raises(gio.DataError):
        LabelNormalizer.fit([3.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30).filter(lambda v: np.std(v) > 1e-3))
def test_normalizer_inverts(values):
    n = gio.label_normalizer(values)
    x = np.asarray(values)
    assert np.max(np.abs(n.invert(n.apply(x)) - x)) <= 1e-12 * max(1.0, np.max(np.abs(x)))
