"""Syn3: shared low-pass signal plus layer-specific band-pass wavelet atoms."""

from __future__ import annotations

import numpy as np

from ..graph import (LayerGraph, MultiplexGraph, UNREACHABLE, bfs_hop_distances, is_connected,
                     jacobi_eigh, knn_graph, laplacian, spectral_radius)


def low_pass(lam):
    return np.exp(-np.asarray(lam, dtype=np.float64))


def band_pass(lam):
    lam = np.asarray(lam, dtype=np.float64)
    return lam * np.exp(-lam * lam)


def spiral_points(m: int, turns: float = 2.0, r0: float = 0.1, growth: float = 0.05) -> np.ndarray:
    """``m`` points evenly spaced in angle on an Archimedean spiral."""
    theta = np.linspace(0.0, 2.0 * np.pi * turns, m)
    rho = r0 + growth * theta
    return np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=1)


def spectral_filter(evals: np.ndarray, evecs: np.ndarray, response, signal: np.ndarray) -> np.ndarray:
    """``Q diag(response(Lambda)) Q^T signal``; ``signal`` may hold several columns."""
    coeff = evecs.T @ signal
    gain = response(evals)
    if coeff.ndim == 2:
        gain = gain[:, None]
    return evecs @ (gain * coeff)


def center_nodes(m: int, n_centers: int, layer: int, n_layers: int) -> np.ndarray:
    """Evenly spaced centers along the spiral with a layer-dependent phase."""
    k = np.arange(n_centers)
    pos = (k + (layer + 1) / (n_layers + 1)) / n_centers
    return np.clip(np.round(m * pos).astype(np.int64), 0, m - 1)


def cosine_taper(hops: np.ndarray, hop_max: int) -> np.ndarray:
    return 0.5 * (1.0 + np.cos(np.pi * hops / (hop_max + 1)))


def layer_private_signal(evals, evecs, edges, m: int, centers, t: float, hop_radius: int) -> np.ndarray:
    """Sum over centers of taper-weighted band-pass atoms ``g(tL) delta_q``."""
    weights = np.zeros(m)
    for r in centers:
        hops = bfs_hop_distances(edges, m, [int(r)])
        near = hops <= hop_radius
        weights[near] += cosine_taper(hops[near].astype(np.float64), hop_radius)
    # atoms are linear in delta_q, so the weighted sum is one filtering pass
    return spectral_filter(evals, evecs, lambda lam: band_pass(t * lam), weights)


def gen_syn3(M: int = 600, K_nn: int = 15, centers_per_layer: int = 3, N: int = 2,
             hop_radius: int = 3, mix: float = 0.3, t_scale: float = 20.0, eig: str = "numpy",
             seed: int = 0) -> MultiplexGraph:
    """Two layers on one spiral KNN graph with different localized high-frequency content.

    ``t = t_scale / lambda_max`` with ``lambda_max`` from power iteration on
    the Laplacian.  ``eig`` picks the eigensolver: ``"numpy"`` (LAPACK) or
    ``"jacobi"`` (the in-house cyclic Jacobi, slow for M=600).
    """
    if hop_radius < 0 or centers_per_layer < 1 or N < 1:
        raise ValueError("hop_radius >= 0, centers_per_layer >= 1 and N >= 1 required")
    rng = np.random.default_rng(seed)
    pts = spiral_points(M)
    edges = knn_graph(pts, K_nn)
    if not is_connected(edges, M):
        # the point cloud is deterministic, so a fresh seed would not help
        raise ValueError(f"KNN graph with K={K_nn} on {M} spiral points is disconnected")
    lap = laplacian(edges, M)
    if eig == "numpy":
        evals, evecs = np.linalg.eigh(lap)
    elif eig == "jacobi":
        evals, evecs = jacobi_eigh(lap)
    else:
        raise ValueError(f"unknown eigensolver {eig!r}")
    evals = np.clip(evals, 0.0, None)
    lam_max = spectral_radius(lap)
    t = t_scale / lam_max
    x_common = spectral_filter(evals, evecs, low_pass, rng.standard_normal(M))
    layers, labels = [], {}
    all_centers = []
    for ell in range(N):
        centers = center_nodes(M, centers_per_layer, ell, N)
        all_centers.append(centers.tolist())
        x_p = layer_private_signal(evals, evecs, edges, M, centers, t, hop_radius)
        x = mix * x_common + x_p
        layers.append(LayerGraph(edges=edges, features=x[:, None]))
        hops = bfs_hop_distances(edges, M, centers)
        labels[f"layer{ell}"] = ((hops <= hop_radius) & (hops != UNREACHABLE)).astype(np.int64)
    meta = {"variant": "syn3", "M": M, "N": N, "K_nn": K_nn, "centers_per_layer": centers_per_layer,
            "hop_radius": hop_radius, "mix": mix, "t": t, "lambda_max": lam_max, "eig": eig,
            "centers": all_centers, "seed": seed}
    return MultiplexGraph(layers=layers, labels=labels, metadata=meta)
