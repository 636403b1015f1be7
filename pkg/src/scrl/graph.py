"""Attributed-graph datasets, the cosine kNN feature graph and GCN propagation operators.

On-disk dataset layout (one directory per dataset)::

    edges.txt     one undirected edge per line: "i j" (0-based); '#' lines ignored
    features.txt  line i: d whitespace-separated floats for node i
    labels.txt    line i: integer class of node i in [0, M)
    splits.json   {"train": [...], "val": [...], "test": [...]}
    meta.json     optional {"num_nodes", "num_features", "num_classes"}, plus an
                  optional "unlabeled" list of nodes that never enter a split
"""

from __future__ import annotations

import json
import pickle
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError, ShapeError, ValidationError
from .tensor import SparseMatrix

_SIM_BLOCK = 1024


@dataclass(frozen=True)
class DatasetBundle:
    adjacency: SparseMatrix
    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    num_classes: int
    name: str = ""

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def with_splits(self, splits: dict) -> "DatasetBundle":
        train, val, test = _check_splits(splits, self.num_nodes)
        out = replace(self, train=train, val=val, test=test)
        _check_train_classes(out)
        return out


@dataclass(frozen=True)
class FeatureGraph:
    adjacency: SparseMatrix
    k: int


# --------------------------------------------------------------------------- #
# Loading
# --------------------------------------------------------------------------- #


def _data_lines(path: Path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if s and not s.startswith("#"):
                yield lineno, s


def read_edges(path, num_nodes: int | None = None) -> np.ndarray:
    """Parse an edge list into an ``(E, 2)`` array of ``(min, max)`` pairs, deduplicated."""
    path = Path(path)
    pairs = []
    for lineno, s in _data_lines(path):
        parts = s.split()
        if len(parts) != 2:
            raise ValidationError(f"{path.name}:{lineno}: expected two node indices")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValidationError(f"{path.name}:{lineno}: non-integer node index") from None
        if i < 0 or j < 0 or (num_nodes is not None and max(i, j) >= num_nodes):
            raise ValidationError(f"{path.name}:{lineno}: node index out of range")
        if i == j:
            raise ValidationError(f"{path.name}:{lineno}: self-loop {i}-{j} not allowed")
        pairs.append((min(i, j), max(i, j)))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.array(pairs, dtype=np.int64), axis=0)


def edges_to_adjacency(edges: np.ndarray, num_nodes: int) -> SparseMatrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = SparseMatrix.from_coo(rows, cols, np.ones(len(rows)), (num_nodes, num_nodes))
    # duplicates were summed; collapse back to binary
    return SparseMatrix(adj.indptr, adj.indices, np.ones(adj.nnz), adj.shape, check=False)


def read_labels(path, num_classes: int | None = None) -> np.ndarray:
    path = Path(path)
    labels = []
    for lineno, s in _data_lines(path):
        try:
            y = int(s)
        except ValueError:
            raise ValidationError(f"{path.name}:{lineno}: label is not an integer") from None
        if y < 0 or (num_classes is not None and y >= num_classes):
            raise ValidationError(
                f"{path.name}:{lineno}: label {y} outside [0, {num_classes})"
            )
        labels.append(y)
    return np.array(labels, dtype=np.int64)


def read_meta(directory) -> dict:
    path = Path(directory) / "meta.json"
    if not path.exists():
        return {}
    with open(path) as fh:
        return json.load(fh)


def _check_splits(splits: dict, n: int):
    out = []
    for key in ("train", "val", "test"):
        idx = np.asarray(splits.get(key, []), dtype=np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValidationError(f"splits: '{key}' index out of range [0, {n})")
        if len(np.unique(idx)) != len(idx):
            raise ValidationError(f"splits: '{key}' contains duplicates")
        out.append(idx)
    train, val, test = out
    for a, b, name in ((train, val, "train/val"), (train, test, "train/test"),
                       (val, test, "val/test")):
        if np.intersect1d(a, b).size:
            raise ValidationError(f"splits: {name} overlap")
    return train, val, test


def _check_train_classes(ds: DatasetBundle) -> None:
    if ds.train.size == 0:
        return
    seen = np.unique(ds.labels[ds.train])
    missing = sorted(set(range(ds.num_classes)) - set(seen.tolist()))
    if missing:
        raise ValidationError(f"classes {missing} have no labeled training node")


def load_dataset(directory) -> DatasetBundle:
    """Load and validate a dataset directory."""
    directory = Path(directory)
    for name in ("edges.txt", "features.txt", "labels.txt", "splits.json"):
        if not (directory / name).is_file():
            raise FileNotFoundError(f"{directory / name} not found")
    meta = read_meta(directory)

    features = np.loadtxt(directory / "features.txt", dtype=np.float64, ndmin=2,
                          comments="#")
    n = int(meta.get("num_nodes", features.shape[0]))
    if features.shape[0] != n:
        raise ValidationError(f"features.txt has {features.shape[0]} rows, expected {n}")
    if "num_features" in meta and features.shape[1] != int(meta["num_features"]):
        raise ValidationError(
            f"features.txt has {features.shape[1]} columns, expected {meta['num_features']}"
        )
    if not np.isfinite(features).all():
        raise ValidationError("features.txt contains non-finite values")

    m = meta.get("num_classes")
    labels = read_labels(directory / "labels.txt", None if m is None else int(m))
    if len(labels) != n:
        raise ValidationError(f"labels.txt has {len(labels)} lines, expected {n}")
    m = int(m) if m is not None else int(labels.max()) + 1

    adjacency = edges_to_adjacency(read_edges(directory / "edges.txt", n), n)

    with open(directory / "splits.json") as fh:
        splits = json.load(fh)
    train, val, test = _check_splits(splits, n)
    ds = DatasetBundle(adjacency, features, labels, train, val, test, m, directory.name)
    _check_train_classes(ds)
    return ds


def write_edges(path, adjacency: SparseMatrix, header: str | None = None) -> None:
    """Write the upper triangle of a symmetric adjacency in edges.txt format."""
    coo = adjacency.to_scipy().tocoo()
    keep = coo.row < coo.col
    pairs = sorted(zip(coo.row[keep].tolist(), coo.col[keep].tolist()))
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.writelines(f"{i} {j}\n" for i, j in pairs)


def write_dataset(directory, adjacency: SparseMatrix, features, labels, splits: dict,
                  num_classes: int, unlabeled=None) -> None:
    """Write the directory layout; ``unlabeled`` nodes are recorded in meta.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    features = np.asarray(features, dtype=np.float64)
    write_edges(directory / "edges.txt", adjacency)
    with open(directory / "features.txt", "w") as fh:
        for row in features:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    with open(directory / "labels.txt", "w") as fh:
        fh.writelines(f"{int(y)}\n" for y in labels)
    with open(directory / "splits.json", "w") as fh:
        json.dump({k: [int(i) for i in splits.get(k, [])] for k in ("train", "val", "test")},
                  fh)
    meta = {"num_nodes": int(features.shape[0]), "num_features": int(features.shape[1]),
            "num_classes": int(num_classes)}
    if unlabeled is not None and len(unlabeled):
        meta["unlabeled"] = sorted(int(i) for i in unlabeled)
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)


# --------------------------------------------------------------------------- #
# Feature graph
# --------------------------------------------------------------------------- #


def cosine_similarity(x_i, x_j) -> float:
    x_i = np.asarray(x_i, dtype=np.float64).ravel()
    x_j = np.asarray(x_j, dtype=np.float64).ravel()
    if x_i.shape != x_j.shape:
        raise ShapeError(f"cosine_similarity: {x_i.shape} vs {x_j.shape}")
    ni, nj = np.linalg.norm(x_i), np.linalg.norm(x_j)
    if ni == 0 or nj == 0:
        return 0.0
    return float(np.clip(x_i @ x_j / (ni * nj), -1.0, 1.0))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def knn_indices(features, k: int) -> np.ndarray:
    """``(N, k)`` indices of each node's k most cosine-similar other nodes.

    Ties go to the lower node index. Similarities are computed blockwise so
    peak memory stays at ``O(block * N)``.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k < n:
        raise ParameterError(f"k must satisfy 1 <= k < N={n}, got {k}")
    unit = _unit_rows(x)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _SIM_BLOCK):
        stop = min(start + _SIM_BLOCK, n)
        sim = unit[start:stop] @ unit.T
        sim[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        # stable sort on -sim keeps lower indices first among equal similarities
        out[start:stop] = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    return out


def build_knn_graph(features, k: int) -> FeatureGraph:
    """Cosine kNN graph, symmetrized by union, zero diagonal, binary weights."""
    nbrs = knn_indices(features, k)
    n = nbrs.shape[0]
    src = np.repeat(np.arange(n), k)
    dst = nbrs.ravel()
    edges = np.stack([np.minimum(src, dst), np.maximum(src, dst)], axis=1)
    return FeatureGraph(edges_to_adjacency(np.unique(edges, axis=0), n), k)


def normalize_adjacency(g: SparseMatrix, self_loops: bool = True) -> SparseMatrix:
    """Symmetric normalization ``D^-1/2 (A [+ I]) D^-1/2``.

    Nodes with no edges in ``A`` get a lone diagonal 1 in either mode.
    """
    n = g.shape[0]
    if g.shape[1] != n:
        raise ShapeError(f"adjacency must be square, got {g.shape}")
    a = g.to_scipy().tocsr().copy()
    a.setdiag(0)
    a.eliminate_zeros()
    isolated = np.diff(a.indptr) == 0
    if self_loops:
        a = a + sp.identity(n, format="csr")
    elif isolated.any():
        a = a + sp.diags(isolated.astype(np.float64), format="csr")
    a = a.tocoo()
    deg = np.bincount(a.row, weights=a.data, minlength=n)
    dinv = np.zeros(n)
    pos = deg > 0
    dinv[pos] = 1.0 / np.sqrt(deg[pos])
    # single product per entry keeps the result exactly symmetric
    vals = a.data * (dinv[a.row] * dinv[a.col])
    if not self_loops:
        vals[isolated[a.row] & (a.row == a.col)] = 1.0
    return SparseMatrix.from_coo(a.row, a.col, vals, (n, n))


# --------------------------------------------------------------------------- #
# Splits
# --------------------------------------------------------------------------- #


def make_splits(labels, labels_per_class: int, val_size: int = 500,
                test_size: int = 1000, seed: int = 0, num_classes: int | None = None,
                exclude=None) -> dict:
    """Draw ``labels_per_class`` training nodes per class, then val and test from the rest.

    Nodes listed in ``exclude`` (e.g. placeholders without a real label) are
    never drawn.
    """
    labels = np.asarray(labels, dtype=np.int64)
    m = int(num_classes if num_classes is not None else labels.max() + 1)
    if labels_per_class < 1:
        raise ParameterError("labels_per_class must be >= 1")
    eligible = np.ones(len(labels), dtype=bool)
    if exclude is not None:
        eligible[np.asarray(exclude, dtype=np.int64)] = False
    rng = np.random.default_rng(seed)
    train = []
    for c in range(m):
        members = np.flatnonzero((labels == c) & eligible)
        if len(members) < labels_per_class:
            raise ValidationError(
                f"class {c} has {len(members)} nodes, fewer than {labels_per_class}"
            )
        train.append(rng.choice(members, size=labels_per_class, replace=False))
    train = np.sort(np.concatenate(train))
    rest = np.setdiff1d(np.flatnonzero(eligible), train)
    if len(rest) < val_size + test_size:
        raise ValidationError(
            f"only {len(rest)} unlabeled nodes for val={val_size} + test={test_size}"
        )
    rest = rng.permutation(rest)
    return {
        "train": train.tolist(),
        "val": np.sort(rest[:val_size]).tolist(),
        "test": np.sort(rest[val_size:val_size + test_size]).tolist(),
    }


# --------------------------------------------------------------------------- #
# Converters for common public layouts
# --------------------------------------------------------------------------- #


def _load_planetoid_object(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert_planetoid(raw_dir, name: str, out_dir, labels_per_class: int = 20,
                      seed: int = 0, val_size: int = 500,
                      test_size: int = 1000) -> DatasetBundle:
    """Convert Planetoid ``ind.<name>.*`` files into the directory layout above.

    Test nodes missing from the raw test index (Citeseer has 15) are given
    all-zero features and placeholder class 0; they are listed as
    ``"unlabeled"`` in meta.json and excluded from every split. Self-loops and
    duplicate edges in the raw graph are dropped. Writes splits with
    :func:`make_splits`.
    """
    raw_dir = Path(raw_dir)
    parts = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        parts[key] = _load_planetoid_object(raw_dir / f"ind.{name}.{key}")
    test_index = np.loadtxt(raw_dir / f"ind.{name}.test.index", dtype=np.int64, ndmin=1)
    test_sorted = np.sort(test_index)

    allx = sp.csr_matrix(parts["allx"])
    tx = sp.csr_matrix(parts["tx"])
    ally = np.asarray(parts["ally"])
    ty = np.asarray(parts["ty"])
    span = test_sorted[-1] - test_sorted[0] + 1
    if span != len(test_sorted):
        tx_ext = sp.lil_matrix((span, tx.shape[1]))
        tx_ext[test_sorted - test_sorted[0], :] = tx
        tx = tx_ext.tocsr()
        ty_ext = np.zeros((span, ty.shape[1]))
        ty_ext[test_sorted - test_sorted[0], :] = ty
        ty = ty_ext
    feats = sp.vstack([allx, tx]).tolil()
    feats[test_index, :] = feats[test_sorted, :]
    onehot = np.vstack([ally, ty])
    onehot[test_index, :] = onehot[test_sorted, :]
    labels = onehot.argmax(axis=1)
    placeholders = np.flatnonzero(~onehot.any(axis=1))
    n = feats.shape[0]

    graph = parts["graph"]
    pairs = [(min(i, j), max(i, j)) for i, nbrs in graph.items() for j in nbrs
             if i != j and i < n and j < n]
    edges = np.unique(np.array(pairs, dtype=np.int64), axis=0)
    adjacency = edges_to_adjacency(edges, n)

    m = onehot.shape[1]
    splits = make_splits(labels, labels_per_class, val_size=val_size, test_size=test_size,
                         seed=seed, num_classes=m, exclude=placeholders)
    write_dataset(out_dir, adjacency, feats.toarray(), labels, splits, m, placeholders)
    return load_dataset(out_dir)


def convert_amgcn(raw_dir, name: str, out_dir, labels_per_class: int = 20) -> DatasetBundle:
    """Convert the ``<name>.feature/.label/.edge`` + ``train<L>.txt``/``test.txt`` layout.

    The bundled train/test node lists are kept as-is and no validation split
    is created, so runs use the published partition.
    """
    raw_dir = Path(raw_dir)
    features = np.loadtxt(raw_dir / f"{name}.feature", dtype=np.float64, ndmin=2)
    labels = np.loadtxt(raw_dir / f"{name}.label", dtype=np.int64, ndmin=1)
    n = features.shape[0]
    raw = np.loadtxt(raw_dir / f"{name}.edge", dtype=np.int64, ndmin=2)
    raw = raw[raw[:, 0] != raw[:, 1]]
    edges = np.unique(np.sort(raw, axis=1), axis=0)
    adjacency = edges_to_adjacency(edges, n)
    train = np.loadtxt(raw_dir / f"train{labels_per_class}.txt", dtype=np.int64, ndmin=1)
    test = np.loadtxt(raw_dir / "test.txt", dtype=np.int64, ndmin=1)
    splits = {"train": np.sort(train).tolist(), "val": [],
              "test": np.sort(np.setdiff1d(test, train)).tolist()}
    write_dataset(out_dir, adjacency, features, labels, splits, int(labels.max()) + 1)
    return load_dataset(out_dir)
