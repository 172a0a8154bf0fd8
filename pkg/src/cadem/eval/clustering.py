"""K-means with k-means++ seeding."""

from __future__ import annotations

import numpy as np

from .metrics import ari, nmi


def _sq_dist(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = _sq_dist(x, centers[0][None, :]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dist(x, x[idx][None, :]).ravel())
    return np.array(centers)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300, tol: float = 1e-6):
    """Lloyd iterations; returns labels, inertia and the per-iteration inertia trace."""
    centers = centers.copy()
    k = centers.shape[0]
    trace = []
    for _ in range(max_iter):
        d = _sq_dist(x, centers)
        labels = d.argmin(axis=1)
        trace.append(float(d[np.arange(x.shape[0]), labels].sum()))
        new = np.empty_like(centers)
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                # reseed an empty cluster at the point farthest from its center
                far = int(d[np.arange(x.shape[0]), labels].argmax())
                new[j] = x[far]
                labels[far] = j
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break
    d = _sq_dist(x, centers)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(x.shape[0]), labels].sum())
    return labels, inertia, centers, trace


def kmeans(x, k: int, n_init: int = 1, max_iter: int = 300, tol: float = 1e-6,
           rng: np.random.Generator | None = None) -> tuple[np.ndarray, float]:
    """Best-inertia clustering over ``n_init`` k-means++ restarts."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("kmeans expects an n x d array")
    if k < 1 or x.shape[0] < k:
        raise ValueError(f"need 1 <= K <= n (K={k}, n={x.shape[0]})")
    if rng is None:
        rng = np.random.default_rng(0)
    best = None
    for _ in range(n_init):
        labels, inertia, _, _ = lloyd(x, kmeans_pp_init(x, k, rng), max_iter, tol)
        if best is None or inertia < best[1]:
            best = (labels, inertia)
    return best


def clustering_scores(x, truth, k: int, runs: int = 50, seed: int = 0) -> dict:
    """Mean and std of ARI/NMI over ``runs`` independent single-init K-means runs."""
    seeds = np.random.SeedSequence(seed).spawn(runs)
    aris, nmis = [], []
    for s in seeds:
        labels, _ = kmeans(x, k, n_init=1, rng=np.random.default_rng(s))
        aris.append(ari(truth, labels))
        nmis.append(nmi(truth, labels))
    return {"ari_mean": float(np.mean(aris)), "ari_std": float(np.std(aris)),
            "nmi_mean": float(np.mean(nmis)), "nmi_std": float(np.std(nmis)),
            "ari_runs": aris, "nmi_runs": nmis}
