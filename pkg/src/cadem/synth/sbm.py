"""Stochastic-block-model multiplex generators (Syn1, Syn2)."""

from __future__ import annotations

import numpy as np

from ..graph import LayerGraph, MultiplexGraph


def _check_prob(name: str, p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {p}")


def block_probabilities(n_blocks: int, p_intra: float, p_inter: float) -> np.ndarray:
    return np.where(np.eye(n_blocks, dtype=bool), p_intra, p_inter)


def sample_edges(prob: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli edges from a symmetric M x M probability matrix."""
    m = prob.shape[0]
    iu, ju = np.triu_indices(m, k=1)
    keep = rng.random(iu.size) < prob[iu, ju]
    return np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64)


def sbm_edges(labels: np.ndarray, block_prob: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return sample_edges(block_prob[labels[:, None], labels[None, :]], rng)


def gen_syn1(M: int = 100, N: int = 3, communities: int = 3, p_intra: float = 0.7,
             p_inter: float = 0.1, final_mix=(0.8, 0.1, 0.1), seed: int = 0) -> MultiplexGraph:
    """Layers with independent SBM community structure and identity features.

    Final labels copy, per node, the community label of a layer drawn with
    probabilities ``final_mix``.
    """
    _check_prob("p_intra", p_intra)
    _check_prob("p_inter", p_inter)
    mix = np.asarray(final_mix, dtype=np.float64)
    if mix.size != N or np.any(mix < 0) or not np.isclose(mix.sum(), 1.0):
        raise ValueError(f"final_mix must be a probability vector of length N={N}")
    rng = np.random.default_rng(seed)
    probs = block_probabilities(communities, p_intra, p_inter)
    features = np.eye(M)
    layers, labels = [], {}
    for ell in range(N):
        comm = rng.integers(0, communities, size=M)
        labels[f"layer{ell}"] = comm
        layers.append(LayerGraph(edges=sbm_edges(comm, probs, rng), features=features))
    source = rng.choice(N, size=M, p=mix)
    stacked = np.stack([labels[f"layer{ell}"] for ell in range(N)])
    labels["final"] = stacked[source, np.arange(M)]
    labels["final_source"] = source
    meta = {"variant": "syn1", "M": M, "N": N, "communities": communities, "p_intra": p_intra,
            "p_inter": p_inter, "final_mix": mix.tolist(), "seed": seed}
    return MultiplexGraph(layers=layers, labels=labels, metadata=meta)


def syn2_edge_probability(c_i, c_j, s_i, s_j, gamma: float, shared: np.ndarray,
                          private: np.ndarray):
    """Convex mix of the shared and private block probabilities."""
    return gamma * shared[c_i, c_j] + (1.0 - gamma) * private[s_i, s_j]


def gen_syn2(M: int = 1000, N: int = 3, communities: int = 3, p_intra: float = 0.3,
             p_inter: float = 0.01, gamma: float = 0.5, reassign: float = 0.5,
             seed: int = 0) -> MultiplexGraph:
    """Shared communities plus per-layer label perturbations, mixed by ``gamma``."""
    _check_prob("p_intra", p_intra)
    _check_prob("p_inter", p_inter)
    _check_prob("gamma", gamma)
    _check_prob("reassign", reassign)
    rng = np.random.default_rng(seed)
    shared_prob = block_probabilities(communities, p_intra, p_inter)
    private_prob = shared_prob.copy()
    shared = rng.integers(0, communities, size=M)
    features = np.eye(M)
    labels = {"shared": shared}
    layers = []
    n_move = int(round(reassign * M))
    for ell in range(N):
        priv = shared.copy()
        moved = rng.choice(M, size=n_move, replace=False)
        priv[moved] = rng.integers(0, communities, size=n_move)
        labels[f"private{ell}"] = priv
        prob = syn2_edge_probability(shared[:, None], shared[None, :], priv[:, None], priv[None, :],
                                     gamma, shared_prob, private_prob)
        layers.append(LayerGraph(edges=sample_edges(prob, rng), features=features))
    meta = {"variant": "syn2", "M": M, "N": N, "communities": communities, "p_intra": p_intra,
            "p_inter": p_inter, "gamma": gamma, "reassign": reassign, "seed": seed}
    return MultiplexGraph(layers=layers, labels=labels, metadata=meta)
