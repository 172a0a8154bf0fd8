"""Augmented single-layer graphs for the stratification losses.

Each layer of each multiplex sample yields ``n_aug`` induced subgraphs on a
uniformly sampled ``round(r * M)`` node subset.  All subgraphs of one layer
are encoded in a single block-diagonal pass, noise is added to the
node-level embeddings, and each subgraph is pooled to one row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import SparseMatrix, Value
from .encoders import CademModel, encode, pooling_matrix, prepare_features
from .graph import MultiplexGraph, normalize_adjacency
from .losses import one_hot


@dataclass
class AugmentedBatch:
    source_layer: np.ndarray
    sample: np.ndarray
    node_maps: list[np.ndarray]
    targets: np.ndarray
    h_common: Value
    h_private: Value

    @property
    def size(self) -> int:
        return int(self.source_layer.size)


def subset_size(n_nodes: int, ratio: float) -> int:
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"sampling ratio must lie in (0, 1], got {ratio}")
    k = int(round(ratio * n_nodes))
    if k == 0:
        raise ValueError(f"ratio {ratio} keeps no nodes out of {n_nodes}")
    return k


def sample_node_sets(n_nodes: int, ratio: float, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    k = subset_size(n_nodes, ratio)
    if k == n_nodes:
        return [np.arange(n_nodes) for _ in range(count)]
    return [np.sort(rng.choice(n_nodes, size=k, replace=False)) for _ in range(count)]


def stacked_subgraphs(edge_lists: Sequence[np.ndarray], n_nodes: Sequence[int],
                      node_sets: Sequence[np.ndarray], owners: Sequence[int]) -> tuple[SparseMatrix, np.ndarray]:
    """Block-diagonal normalised adjacency over the induced subgraphs.

    ``owners[i]`` says which entry of ``edge_lists`` subgraph ``i`` is cut from.
    Returns the operator and the stacked global row offsets.
    """
    blocks = []
    offset = 0
    for nodes, owner in zip(node_sets, owners):
        idx = np.full(n_nodes[owner], -1, dtype=np.int64)
        idx[nodes] = np.arange(nodes.size)
        e = edge_lists[owner]
        mapped = idx[e]
        keep = (mapped[:, 0] >= 0) & (mapped[:, 1] >= 0)
        blocks.append(mapped[keep] + offset)
        offset += nodes.size
    edges = np.concatenate(blocks) if blocks else np.zeros((0, 2), dtype=np.int64)
    return normalize_adjacency(edges, offset), np.cumsum([0] + [n.size for n in node_sets])


def _stacked_features(features: Sequence, node_sets, owners):
    if all(isinstance(f, SparseMatrix) for f in features):
        parts = [features[o].csr[nodes] for nodes, o in zip(node_sets, owners)]
        return SparseMatrix.from_scipy(sp.vstack(parts, format="csr"))
    dense = [f.to_dense() if isinstance(f, SparseMatrix) else np.asarray(f) for f in features]
    return np.concatenate([dense[o][nodes] for nodes, o in zip(node_sets, owners)], axis=0)


def draw_node_sets(graphs: Sequence[MultiplexGraph], ratio: float, n_aug: int,
                   rng: np.random.Generator) -> list[tuple[list[np.ndarray], list[int]]]:
    """Per layer: the sampled node subsets and the graph each one belongs to."""
    if n_aug < 1:
        raise ValueError("need at least one augmentation per layer")
    out = []
    for _ in range(graphs[0].n_layers):
        node_sets, owners = [], []
        for gi, g in enumerate(graphs):
            for nodes in sample_node_sets(g.n_nodes, ratio, n_aug, rng):
                node_sets.append(nodes)
                owners.append(gi)
        out.append((node_sets, owners))
    return out


def build_batch(graphs: Sequence[MultiplexGraph], model: CademModel, ratio: float, sigma: float,
                n_aug: int, pooling: str, rng: np.random.Generator, train: bool = False,
                dropout: float = 0.0, features_cache: dict | None = None,
                node_sets: list | None = None) -> AugmentedBatch:
    """Augment every layer of every graph and pool the noisy embeddings.

    ``node_sets`` (from :func:`draw_node_sets`) fixes the subsets; otherwise
    they are drawn from ``rng``.  Noise and dropout always come from ``rng``.
    """
    if sigma < 0:
        raise ValueError("noise standard deviation must be non-negative")
    if node_sets is None:
        node_sets = draw_node_sets(graphs, ratio, n_aug, rng)
    n_layers = graphs[0].n_layers
    h_c_parts, h_p_parts = [], []
    source, sample, node_maps = [], [], []
    for ell in range(n_layers):
        edge_lists = [g.layers[ell].edges for g in graphs]
        sizes = [g.n_nodes for g in graphs]
        layer_sets, owners = node_sets[ell]
        adj, _ = stacked_subgraphs(edge_lists, sizes, layer_sets, owners)
        if features_cache is not None and ell in features_cache:
            feats = features_cache[ell]
        else:
            feats = [prepare_features(g.layers[ell].features) for g in graphs]
            if features_cache is not None:
                features_cache[ell] = feats
        x = _stacked_features(feats, layer_sets, owners)
        c, p = encode(model, ell, adj, x, train=train, dropout=dropout, rng=rng)
        if sigma > 0:
            c = c + Value(rng.normal(0.0, sigma, size=c.shape))
            p = p + Value(rng.normal(0.0, sigma, size=p.shape))
        pool = pooling_matrix([n.size for n in layer_sets], pooling)
        h_c_parts.append(ad.sparse_dense_matmul(pool, c))
        h_p_parts.append(ad.sparse_dense_matmul(pool, p))
        source += [ell] * len(layer_sets)
        sample += owners
        node_maps += layer_sets
    h_c = _stack_rows(h_c_parts)
    h_p = _stack_rows(h_p_parts)
    source = np.asarray(source, dtype=np.int64)
    return AugmentedBatch(
        source_layer=source,
        sample=np.asarray(sample, dtype=np.int64),
        node_maps=node_maps,
        targets=one_hot(source, max(n_layers, 2)),
        h_common=h_c,
        h_private=h_p,
    )


def _stack_rows(parts: list[Value]) -> Value:
    return parts[0] if len(parts) == 1 else ad.concat_rows(parts)


def augment_layers(graph: MultiplexGraph, model: CademModel, r: float, sigma: float,
                   n_aug_per_layer: int, pooling: str, rng: np.random.Generator,
                   train: bool = False, dropout: float = 0.0) -> AugmentedBatch:
    """Augmented batch for a single multiplex graph (N' = N * n_aug_per_layer)."""
    return build_batch([graph], model, r, sigma, n_aug_per_layer, pooling, rng,
                       train=train, dropout=dropout)
