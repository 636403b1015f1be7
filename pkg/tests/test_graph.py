import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from scrl.errors import ParameterError, ShapeError, ValidationError
from scrl.graph import (build_knn_graph, convert_amgcn, convert_planetoid, cosine_similarity,
                        edges_to_adjacency, knn_indices, load_dataset, make_splits,
                        normalize_adjacency, read_edges, write_dataset, write_edges)
from scrl.tensor import SparseMatrix


@pytest.fixture
def toy_dir(tmp_path):
    """3-node path graph 0-1-2 with 2-d features, two classes."""
    d = tmp_path / "toy"
    d.mkdir()
    (d / "edges.txt").write_text("# path\n0 1\n2 1\n")
    (d / "features.txt").write_text("1 0\n0.9 0.1\n0 1\n")
    (d / "labels.txt").write_text("0\n0\n1\n")
    (d / "splits.json").write_text(json.dumps({"train": [0, 2], "val": [], "test": [1]}))
    return d


def brute_force_knn(x, k):
    """Reference kNN edges from a full similarity table and explicit tie-breaking."""
    n = len(x)
    edges = set()
    for i in range(n):
        sims = [(-cosine_similarity(x[i], x[j]), j) for j in range(n) if j != i]
        for _, j in sorted(sims)[:k]:
            edges.add((min(i, j), max(i, j)))
    return edges


def edge_set(adj: SparseMatrix):
    dense = adj.to_dense()
    return {(i, j) for i, j in zip(*np.nonzero(np.triu(dense, 1)))}


# --------------------------------------------------------------------------- #
# loading
# --------------------------------------------------------------------------- #


def test_load_toy_dataset(toy_dir):
    ds = load_dataset(toy_dir)
    assert ds.num_nodes == 3 and ds.num_features == 2 and ds.num_classes == 2
    assert ds.adjacency.nnz == 4
    dense = ds.adjacency.to_dense()
    np.testing.assert_array_equal(dense, dense.T)
    assert np.all(np.diag(dense) == 0)


def test_duplicate_edges_collapse(toy_dir):
    (toy_dir / "edges.txt").write_text("0 1\n1 0\n0 1\n1 2\n")
    assert load_dataset(toy_dir).adjacency.nnz == 4


@pytest.mark.parametrize("content,fragment", [
    ("0 1\n1 1\n", "edges.txt:2"),
    ("0 1\n1 5\n", "edges.txt:2"),
    ("0 1 2\n", "edges.txt:1"),
    ("0 x\n", "edges.txt:1"),
])
def test_bad_edges_report_line(toy_dir, content, fragment):
    (toy_dir / "edges.txt").write_text(content)
    with pytest.raises(ValidationError, match=fragment):
        load_dataset(toy_dir)


def test_label_out_of_range(toy_dir):
    (toy_dir / "labels.txt").write_text("0\n7\n1\n")
    (toy_dir / "meta.json").write_text(
        json.dumps({"num_nodes": 3, "num_features": 2, "num_classes": 6}))
    with pytest.raises(ValidationError, match="labels.txt:2"):
        load_dataset(toy_dir)


def test_missing_file(toy_dir):
    (toy_dir / "labels.txt").unlink()
    with pytest.raises(FileNotFoundError):
        load_dataset(toy_dir)


@pytest.mark.parametrize("splits,match", [
    ({"train": [0, 2], "val": [], "test": [2]}, "overlap"),
    ({"train": [0, 2], "val": [], "test": [3]}, "out of range"),
    ({"train": [0, 0, 2], "val": [], "test": [1]}, "duplicates"),
    ({"train": [0], "val": [], "test": [1]}, "no labeled training node"),
])
def test_split_validation(toy_dir, splits, match):
    (toy_dir / "splits.json").write_text(json.dumps(splits))
    with pytest.raises(ValidationError, match=match):
        load_dataset(toy_dir)


def test_meta_mismatch(toy_dir):
    (toy_dir / "meta.json").write_text(
        json.dumps({"num_nodes": 3, "num_features": 5, "num_classes": 2}))
    with pytest.raises(ValidationError):
        load_dataset(toy_dir)


def test_write_then_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    edges = np.array([[0, 1], [1, 3], [2, 3]])
    feats = rng.standard_normal((4, 3))
    write_dataset(tmp_path / "d", edges_to_adjacency(edges, 4), feats, [0, 1, 0, 1],
                  {"train": [0, 1], "val": [2], "test": [3]}, 2)
    ds = load_dataset(tmp_path / "d")
    np.testing.assert_array_equal(ds.features, feats)
    np.testing.assert_array_equal(read_edges(tmp_path / "d" / "edges.txt"), edges)
    assert ds.val.tolist() == [2]


def test_write_edges_header(tmp_path):
    write_edges(tmp_path / "e.txt", edges_to_adjacency(np.array([[1, 2], [0, 1]]), 3),
                header="knn k=1")
    assert (tmp_path / "e.txt").read_text() == "# knn k=1\n0 1\n1 2\n"


def test_convert_amgcn_layout(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    rng = np.random.default_rng(1)
    n = 30
    labels = np.arange(n) % 3
    np.savetxt(raw / "toy.feature", rng.random((n, 4)))
    np.savetxt(raw / "toy.label", labels, fmt="%d")
    np.savetxt(raw / "toy.edge", np.array([[i, (i + 1) % n] for i in range(n)]), fmt="%d")
    np.savetxt(raw / "train5.txt", np.arange(15), fmt="%d")
    np.savetxt(raw / "test.txt", np.arange(15, 30), fmt="%d")
    ds = convert_amgcn(raw, "toy", tmp_path / "out", labels_per_class=5)
    assert ds.num_nodes == n and ds.num_classes == 3
    assert ds.train.size == 15 and ds.test.size == 15 and ds.val.size == 0
    assert load_dataset(tmp_path / "out").adjacency.nnz == 2 * n


# --------------------------------------------------------------------------- #
# cosine similarity and kNN graph
# --------------------------------------------------------------------------- #


@pytest.mark.parametrize("a,b,expected", [
    ([1, 0], [0, 1], 0.0),
    ([1, 2], [2, 4], 1.0),
    ([1, 1, 0], [1, 0, 1], 0.5),
    ([0, 0], [1, 1], 0.0),
])
def test_cosine_examples(a, b, expected):
    assert cosine_similarity(a, b) == pytest.approx(expected, abs=1e-15)


def test_cosine_shape_error():
    with pytest.raises(ShapeError):
        cosine_similarity([1, 2], [1, 2, 3])


def test_knn_three_node_example():
    g = build_knn_graph(np.array([[1, 0], [0.9, 0.1], [0, 1]]), 1)
    assert edge_set(g.adjacency) == {(0, 1), (1, 2)}
    assert g.k == 1


def test_knn_complete_graph():
    x = np.random.default_rng(0).standard_normal((6, 3))
    dense = build_knn_graph(x, 5).adjacency.to_dense()
    np.testing.assert_array_equal(dense, np.ones((6, 6)) - np.eye(6))


@pytest.mark.parametrize("k", [0, 3, 4])
def test_knn_k_out_of_range(k):
    with pytest.raises(ParameterError):
        build_knn_graph(np.eye(3), k)


def test_knn_ties_go_to_lower_index():
    # node 3 is equally similar (zero) to everyone; it must pick 0 and 1
    x = np.array([[1, 0], [1, 0], [0, 1], [0, 0]], dtype=float)
    np.testing.assert_array_equal(knn_indices(x, 2)[3], [0, 1])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(3, 25), k=st.integers(1, 5))
def test_knn_matches_brute_force(seed, n, k):
    k = min(k, n - 1)
    x = np.random.default_rng(seed).standard_normal((n, 4))
    g = build_knn_graph(x, k)
    assert edge_set(g.adjacency) == brute_force_knn(x, k)
    dense = g.adjacency.to_dense()
    np.testing.assert_array_equal(dense, dense.T)
    assert np.all(np.diag(dense) == 0)
    assert (dense.sum(axis=1) >= k).all()


def test_knn_invariant_to_positive_scaling_and_rotation():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((20, 6))
    base = edge_set(build_knn_graph(x, 3).adjacency)
    scaled = x * rng.uniform(0.1, 10, size=(20, 1))
    assert edge_set(build_knn_graph(scaled, 3).adjacency) == base
    rot = ortho_group.rvs(6, random_state=3)
    assert edge_set(build_knn_graph(x @ rot, 3).adjacency) == base


def test_knn_permutation_equivariance():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((15, 5))
    perm = rng.permutation(15)
    a = build_knn_graph(x, 3).adjacency.to_dense()
    b = build_knn_graph(x[perm], 3).adjacency.to_dense()
    np.testing.assert_array_equal(b, a[np.ix_(perm, perm)])


def test_knn_blocked_computation_matches_single_block(monkeypatch):
    import scrl.graph as graph

    x = np.random.default_rng(5).standard_normal((40, 6))
    full = knn_indices(x, 4)
    monkeypatch.setattr(graph, "_SIM_BLOCK", 7)
    np.testing.assert_array_equal(knn_indices(x, 4), full)


# --------------------------------------------------------------------------- #
# normalization
# --------------------------------------------------------------------------- #


def test_normalize_single_node():
    g = SparseMatrix.from_dense(np.zeros((1, 1)))
    np.testing.assert_array_equal(normalize_adjacency(g).to_dense(), [[1.0]])
    np.testing.assert_array_equal(normalize_adjacency(g, False).to_dense(), [[1.0]])


def test_normalize_edge_with_self_loops():
    g = SparseMatrix.from_dense([[0, 1], [1, 0]])
    np.testing.assert_allclose(normalize_adjacency(g).to_dense(), [[0.5, 0.5], [0.5, 0.5]],
                               atol=1e-15)


def test_normalize_edge_without_self_loops():
    g = SparseMatrix.from_dense([[0, 1], [1, 0]])
    np.testing.assert_allclose(normalize_adjacency(g, self_loops=False).to_dense(),
                               [[0, 1], [1, 0]], atol=1e-15)


def test_normalize_isolated_node_without_self_loops():
    g = edges_to_adjacency(np.array([[0, 1]]), 3)
    out = normalize_adjacency(g, self_loops=False).to_dense()
    np.testing.assert_allclose(out, [[0, 1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_normalize_matches_dense_formula():
    rng = np.random.default_rng(6)
    a = np.triu((rng.random((12, 12)) < 0.3).astype(float), 1)
    a = a + a.T
    a_hat = a + np.eye(12)
    dinv = 1 / np.sqrt(a_hat.sum(1))
    want = dinv[:, None] * a_hat * dinv[None, :]
    np.testing.assert_allclose(normalize_adjacency(SparseMatrix.from_dense(a)).to_dense(),
                               want, atol=1e-15)


@pytest.mark.parametrize("self_loops", [True, False])
def test_normalize_symmetric_and_contractive(self_loops):
    rng = np.random.default_rng(7)
    n = 200
    a = np.triu((rng.random((n, n)) < 0.03).astype(float), 1)
    op = normalize_adjacency(SparseMatrix.from_dense(a + a.T), self_loops).to_dense()
    assert np.abs(op - op.T).max() <= 1e-15
    v = rng.standard_normal(n)
    for _ in range(300):
        v = op @ v
        v /= np.linalg.norm(v)
    assert np.linalg.norm(op @ v) <= 1 + 1e-9


# --------------------------------------------------------------------------- #
# splits
# --------------------------------------------------------------------------- #


@pytest.fixture
def six_class_labels():
    return np.random.default_rng(8).integers(0, 6, size=3327)


@pytest.mark.parametrize("lpc,expected_train", [(20, 120), (3, 18)])
def test_make_splits_sizes(six_class_labels, lpc, expected_train):
    s = make_splits(six_class_labels, lpc, seed=0)
    assert len(s["train"]) == expected_train
    assert len(s["val"]) == 500 and len(s["test"]) == 1000
    assert not (set(s["train"]) & set(s["val"])) and not (set(s["val"]) & set(s["test"]))
    assert not set(s["train"]) & set(s["test"])
    counts = np.bincount(six_class_labels[s["train"]], minlength=6)
    assert (counts == lpc).all()
    if lpc == 3:
        assert len(s["train"]) / 3327 == pytest.approx(0.0054, abs=1e-4)


def test_make_splits_deterministic(six_class_labels):
    assert make_splits(six_class_labels, 20, seed=5) == make_splits(six_class_labels, 20, seed=5)
    assert make_splits(six_class_labels, 20, seed=5) != make_splits(six_class_labels, 20, seed=6)


def test_make_splits_small_class():
    labels = np.array([0] * 30 + [1] * 2)
    with pytest.raises(ValidationError, match="class 1"):
        make_splits(labels, 3, val_size=0, test_size=0)


def test_make_splits_not_enough_remaining():
    with pytest.raises(ValidationError):
        make_splits(np.arange(20) % 2, 2, val_size=10, test_size=10)


def test_make_splits_excludes_placeholders():
    labels = np.arange(60) % 3
    excluded = [0, 1, 2, 10, 20]
    s = make_splits(labels, 4, val_size=10, test_size=20, seed=1, exclude=excluded)
    drawn = set(s["train"]) | set(s["val"]) | set(s["test"])
    assert not drawn & set(excluded)
    assert len(s["train"]) == 12


@pytest.fixture
def planetoid_raw(tmp_path):
    """Planetoid-style pickles: 8 labeled + 6 test slots, one test slot missing."""
    import pickle

    import scipy.sparse as sp

    rng = np.random.default_rng(0)
    d, m = 5, 2
    onehot = lambda y: np.eye(m)[y]  # noqa: E731
    allx_labels = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    test_index = np.array([13, 8, 11, 9, 12])  # slot 10 is missing, order shuffled
    test_labels = np.array([1, 0, 1, 0, 1])
    objects = {
        "x": sp.csr_matrix(rng.random((4, d))),
        "y": onehot(allx_labels[:4]),
        "allx": sp.csr_matrix(rng.random((8, d)) + 0.1),
        "ally": onehot(allx_labels),
        "tx": sp.csr_matrix(rng.random((5, d)) + 0.1),
        "ty": onehot(test_labels),
        "graph": {i: [(i + 1) % 14, i] for i in range(14)},
    }
    raw = tmp_path / "raw"
    raw.mkdir()
    for key, obj in objects.items():
        with open(raw / f"ind.fake.{key}", "wb") as fh:
            pickle.dump(obj, fh)
    np.savetxt(raw / "ind.fake.test.index", test_index, fmt="%d")
    return raw, objects, test_index, test_labels


def test_convert_planetoid(planetoid_raw, tmp_path):
    raw, objects, test_index, test_labels = planetoid_raw
    ds = convert_planetoid(raw, "fake", tmp_path / "out", labels_per_class=2, seed=0,
                           val_size=3, test_size=5)
    assert ds.num_nodes == 14 and ds.num_features == 5 and ds.num_classes == 2
    # test rows land at their listed node ids
    np.testing.assert_allclose(ds.features[test_index], objects["tx"].toarray())
    np.testing.assert_array_equal(ds.labels[test_index], test_labels)
    np.testing.assert_allclose(ds.features[:8], objects["allx"].toarray())
    # the missing slot is a zero-feature placeholder that never enters a split
    assert not ds.features[10].any()
    meta = json.loads((tmp_path / "out" / "meta.json").read_text())
    assert meta["unlabeled"] == [10]
    s = make_splits(ds.labels, 2, val_size=3, test_size=5, seed=0, exclude=meta["unlabeled"])
    assert 10 not in set(s["train"]) | set(s["val"]) | set(s["test"])
    # ring graph, self-loops dropped
    assert ds.adjacency.nnz == 2 * 14
