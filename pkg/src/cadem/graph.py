"""Multiplex graph data model and graph utilities."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .autodiff import SparseMatrix

UNREACHABLE = np.iinfo(np.int64).max


def _as_edge_array(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return arr.reshape(-1, 2)


def canonical_edges(edges) -> np.ndarray:
    """Sorted unique undirected edges with ``u < v``; self-loops dropped."""
    arr = _as_edge_array(edges)
    if arr.shape[0] == 0:
        return arr
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    keep = lo != hi
    pairs = np.unique(np.stack([lo[keep], hi[keep]], axis=1), axis=0)
    return pairs.astype(np.int64)


def adjacency_matrix(edges, n_nodes: int) -> sp.csr_matrix:
    e = _as_edge_array(edges)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n_nodes, n_nodes))
    a.sum_duplicates()
    a.data[:] = 1.0
    return a


def normalize_adjacency(edges, n_nodes: int) -> SparseMatrix:
    """Symmetric GCN propagation matrix ``D^-1/2 (A + I) D^-1/2``."""
    e = _as_edge_array(edges)
    u, v = e[:, 0], e[:, 1]
    deg = np.ones(n_nodes)
    np.add.at(deg, u, 1.0)
    np.add.at(deg, v, 1.0)
    inv_sqrt = 1.0 / np.sqrt(deg)
    w = inv_sqrt[u] * inv_sqrt[v]
    idx = np.arange(n_nodes)
    rows = np.concatenate([u, v, idx])
    cols = np.concatenate([v, u, idx])
    weights = np.concatenate([w, w, inv_sqrt * inv_sqrt])
    return SparseMatrix(n_nodes, n_nodes, rows, cols, weights)


def laplacian(edges, n_nodes: int) -> np.ndarray:
    """Combinatorial Laplacian ``D - A`` as a dense matrix."""
    a = adjacency_matrix(edges, n_nodes).toarray()
    return np.diag(a.sum(axis=1)) - a


def knn_graph(points, k: int) -> np.ndarray:
    """Undirected union of each point's ``k`` nearest Euclidean neighbours.

    Ties in distance are broken by the lower node index.
    """
    pts = np.asarray(points, dtype=np.float64)
    m = pts.shape[0]
    if m <= k:
        raise ValueError(f"knn_graph needs more points than k (M={m}, k={k})")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sum(diff * diff, axis=-1)
    np.fill_diagonal(dist, np.inf)
    # stable sort keeps lower indices first among equal distances
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    src = np.repeat(np.arange(m), k)
    return canonical_edges(np.stack([src, order.ravel()], axis=1))


def spectral_radius(adj, tol: float = 1e-9, max_iter: int = 10_000) -> float:
    """Largest-magnitude eigenvalue of a symmetric non-negative matrix by power iteration."""
    if isinstance(adj, SparseMatrix):
        mat = adj.csr
        n = adj.n_rows
    elif sp.issparse(adj):
        mat = sp.csr_matrix(adj)
        n = mat.shape[0]
    else:
        mat = np.asarray(adj, dtype=np.float64)
        n = mat.shape[0]
    if n == 0:
        return 0.0
    # unit shift separates +lambda_max from -lambda_max (bipartite graphs);
    # the non-constant start avoids the Laplacian null vector
    shift = 1.0
    x = 1.0 + 0.5 * np.cos(np.arange(n))
    x /= np.linalg.norm(x)
    prev = None
    rq = 0.0
    for _ in range(max_iter):
        ax = np.asarray(mat @ x).ravel()
        if not np.any(ax):
            return 0.0
        rq = float(x @ ax)
        y = ax + shift * x
        x = y / np.linalg.norm(y)
        if prev is not None and abs(rq - prev) < tol:
            break
        prev = rq
    return rq


def jacobi_eigh(a, tol: float = 1e-9, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by parallel cyclic Jacobi rotations.

    Rotations on disjoint index pairs (round-robin ordering) are applied
    together, so each sweep costs ``n - 1`` vectorised steps.  Stops once the
    off-diagonal Frobenius norm falls below ``tol`` (relative to ``||A||_F``
    when that exceeds 1).

    Returns ascending eigenvalues and the matching orthonormal eigenvectors
    as columns.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("jacobi_eigh needs a square matrix")
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale_ref = max(1.0, float(np.linalg.norm(a)))
    m = n + (n % 2)
    players = list(range(m))

    def off_norm(x):
        return float(np.sqrt(max(np.sum(x * x) - np.sum(np.diag(x) ** 2), 0.0)))

    for _ in range(max_sweeps):
        if off_norm(a) < tol * scale_ref:
            break
        for _ in range(m - 1):
            pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
            pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
            p = np.array([x[0] for x in pairs])
            q = np.array([x[1] for x in pairs])
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if np.any(active):
                p, q, apq = p[active], q[active], apq[active]
                app, aqq = a[p, p], a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t[theta == 0] = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # columns then rows: A <- J^T A J, with J acting on (p, q) planes
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c[:, None] * ap - s[:, None] * aq
                a[q, :] = s[:, None] * ap + c[:, None] * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
            players = [players[0]] + [players[-1]] + players[1:-1]
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def bfs_hop_distances(edges, n_nodes: int, sources) -> np.ndarray:
    """Minimum hop count from any source; unreachable nodes get ``UNREACHABLE``."""
    sources = np.unique(np.asarray(list(sources), dtype=np.int64))
    if sources.size == 0:
        raise ValueError("bfs_hop_distances needs at least one source")
    adj = adjacency_matrix(edges, n_nodes)
    dist = np.full(n_nodes, UNREACHABLE, dtype=np.int64)
    dist[sources] = 0
    frontier = sources
    hop = 0
    while frontier.size:
        hop += 1
        nbrs = np.unique(adj[frontier].indices)
        nbrs = nbrs[dist[nbrs] == UNREACHABLE]
        dist[nbrs] = hop
        frontier = nbrs
    return dist


def is_connected(edges, n_nodes: int) -> bool:
    if n_nodes == 0:
        return True
    return bool(np.all(bfs_hop_distances(edges, n_nodes, [0]) != UNREACHABLE))


@dataclass
class LayerGraph:
    """One layer: undirected edge list plus an M x F feature matrix."""

    edges: np.ndarray
    features: np.ndarray
    _norm_adj: SparseMatrix | None = field(default=None, repr=False, compare=False)
    _feat_sparse: SparseMatrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        e = _as_edge_array(self.edges)
        if e.shape[0] and np.any(e[:, 0] == e[:, 1]):
            raise ValueError("raw edge list must not contain self-loops")
        if e.shape[0] and (e.min() < 0 or e.max() >= self.n_nodes):
            raise ValueError("edge references a node outside the layer")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("layer features contain NaN or Inf")
        self.edges = e

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def normalized_adj(self) -> SparseMatrix:
        if self._norm_adj is None:
            self._norm_adj = normalize_adjacency(self.edges, self.n_nodes)
        return self._norm_adj

    @property
    def sparse_features(self) -> SparseMatrix:
        if self._feat_sparse is None:
            self._feat_sparse = SparseMatrix.from_dense(self.features)
        return self._feat_sparse

    @property
    def feature_density(self) -> float:
        return float(np.count_nonzero(self.features)) / max(self.features.size, 1)


def induced_subgraph(layer: LayerGraph, nodes) -> LayerGraph:
    """Subgraph on ``nodes`` (in the given order), reindexed 0..len(nodes)-1."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("induced_subgraph needs at least one node")
    if np.unique(nodes).size != nodes.size:
        raise ValueError("sampled node indices must be unique")
    if nodes.min() < 0 or nodes.max() >= layer.n_nodes:
        raise ValueError("sampled node index out of range")
    new_idx = np.full(layer.n_nodes, -1, dtype=np.int64)
    new_idx[nodes] = np.arange(nodes.size)
    e = layer.edges
    mapped = new_idx[e]
    keep = (mapped[:, 0] >= 0) & (mapped[:, 1] >= 0)
    return LayerGraph(edges=mapped[keep], features=layer.features[nodes])


@dataclass
class MultiplexGraph:
    """``N`` layers over a shared node set of size ``M``."""

    layers: list[LayerGraph]
    labels: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("a multiplex graph needs at least one layer")
        m = self.layers[0].n_nodes
        if any(layer.n_nodes != m for layer in self.layers):
            raise ValueError("all layers must share the same node count")
        self.labels = {k: np.asarray(v, dtype=np.int64) for k, v in self.labels.items()}
        for k, v in self.labels.items():
            if v.shape != (m,):
                raise ValueError(f"label vector {k!r} has shape {v.shape}, expected ({m},)")

    @property
    def n_nodes(self) -> int:
        return self.layers[0].n_nodes

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_features(self) -> int:
        return self.layers[0].n_features


def _write_csv(path: Path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w") as fh:
        for row in matrix:
            fh.write(",".join(format(float(x), ".17g") for x in row))
            fh.write("\n")


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split(",")])
    return np.array(rows, dtype=np.float64)


write_matrix_csv = _write_csv
read_matrix_csv = _read_csv


def save_multiplex(graph: MultiplexGraph, directory, name: str = "graph") -> Path:
    """Write ``<name>.json`` plus one headerless feature CSV per layer."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, layer in enumerate(graph.layers):
        feat_name = f"{name}_layer{i}_features.csv"
        _write_csv(directory / feat_name, layer.features)
        layers.append({"edges": layer.edges.tolist(), "features_path": feat_name})
    doc = {
        "M": graph.n_nodes,
        "N": graph.n_layers,
        "layers": layers,
        "labels": {k: v.tolist() for k, v in sorted(graph.labels.items())},
        "metadata": graph.metadata,
    }
    path = directory / f"{name}.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
    return path


def load_multiplex(path) -> MultiplexGraph:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    base = path.parent
    layers = []
    for spec in doc["layers"]:
        feat_path = Path(spec["features_path"])
        if not feat_path.is_absolute():
            feat_path = base / feat_path
        features = _read_csv(feat_path)
        if features.shape[0] != doc["M"]:
            raise ValueError(f"{feat_path}: expected {doc['M']} feature rows, got {features.shape[0]}")
        layers.append(LayerGraph(edges=np.asarray(spec["edges"], dtype=np.int64), features=features))
    if len(layers) != doc["N"]:
        raise ValueError(f"{path}: N={doc['N']} but {len(layers)} layers listed")
    return MultiplexGraph(layers=layers, labels=doc.get("labels", {}), metadata=doc.get("metadata", {}))


def load_collection(path) -> list[MultiplexGraph]:
    """Load a collection manifest ``{"graphs": [file, ...]}`` or a single graph file."""
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    if "graphs" not in doc:
        return [load_multiplex(path)]
    return [load_multiplex(path.parent / g) for g in doc["graphs"]]


def save_collection(graphs: Sequence[MultiplexGraph], directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, g in enumerate(graphs):
        save_multiplex(g, directory, name=f"graph{i:03d}")
        names.append(f"graph{i:03d}.json")
    doc = {"graphs": names}
    if extra:
        doc.update(extra)
    path = directory / "collection.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
    return path


def data_path(directory) -> Path:
    """Resolve the graph file inside a ``generate`` output directory."""
    directory = Path(directory)
    if directory.is_file():
        return directory
    for candidate in ("collection.json", "graph.json"):
        if (directory / candidate).exists():
            return directory / candidate
    raise FileNotFoundError(f"no graph.json or collection.json under {os.fspath(directory)}")
