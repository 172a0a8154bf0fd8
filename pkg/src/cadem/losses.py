"""Matching, self-supervised and causal objectives."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Value


@dataclass(frozen=True)
class LossWeights:
    """Weights on (matching, self-supervised, causal)."""

    match: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.match < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def from_sequence(cls, weights: Sequence[float]) -> "LossWeights":
        w = [float(x) for x in weights]
        if len(w) == 2:
            return cls(1.0, w[0], w[1])
        if len(w) == 3:
            return cls(*w)
        raise ValueError("loss weights need 2 (alpha, beta) or 3 (match, alpha, beta) values")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.match, self.alpha, self.beta)


@dataclass
class ConsensusResult:
    S: np.ndarray
    residual: float


def procrustes_consensus(common: Sequence) -> ConsensusResult:
    """Orthonormal, column-centred consensus of per-layer common embeddings.

    Sums the layers, removes the column means and returns the polar factor
    ``U V^T`` of the thin SVD.  ``S`` is a plain array: the surrounding loss
    treats it as a constant.
    """
    mats = [np.asarray(c.data if isinstance(c, Value) else c, dtype=np.float64) for c in common]
    if not mats:
        raise ValueError("procrustes_consensus needs at least one matrix")
    m, d = mats[0].shape
    if any(x.shape != (m, d) for x in mats):
        raise ValueError("all common embeddings must share one shape")
    if m < d:
        raise ValueError(f"need at least as many nodes as dimensions (M={m}, d={d})")
    agg = np.sum(mats, axis=0)
    agg = agg - agg.mean(axis=0, keepdims=True)
    u, sig, vt = np.linalg.svd(agg, full_matrices=False)
    if sig[-1] < 1e-10:
        warnings.warn(f"aggregated common embedding is rank deficient (sigma_min={sig[-1]:.3g})",
                      RuntimeWarning, stacklevel=2)
        u = _complete_centered_basis(u, sig)
    s = u @ vt
    residual = float(sum(np.sum((x - s) ** 2) for x in mats))
    return ConsensusResult(S=s, residual=residual)


def _complete_centered_basis(u: np.ndarray, sig: np.ndarray) -> np.ndarray:
    # columns tied to zero singular values may carry a mean component;
    # replace them with a deterministic orthonormal completion orthogonal to 1
    m, d = u.shape
    good = sig >= 1e-10
    basis = [u[:, j] for j in range(d) if good[j]]
    ones = np.ones(m) / np.sqrt(m)
    fixed = [ones] + basis
    out = u.copy()
    e = 0
    for j in range(d):
        if good[j]:
            continue
        while True:
            cand = np.zeros(m)
            cand[e % m] = 1.0
            cand[(e + 1) % m] -= 1.0
            e += 1
            for b in fixed:
                cand -= (b @ cand) * b
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                break
        cand /= norm
        fixed.append(cand)
        out[:, j] = cand
    return out


def matching_loss(common: Sequence[Value], consensus: np.ndarray | None = None) -> Value:
    """``sum_l ||C_l - S||_F^2`` with ``S`` held fixed."""
    if consensus is None:
        consensus = procrustes_consensus(common).S
    s = Value(consensus)
    total = None
    for c in common:
        term = ad.frobenius_sq(ad.sub(c, s))
        total = term if total is None else total + term
    return total


def one_hot(index, n_classes: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((index.size, n_classes))
    out[np.arange(index.size), index] = 1.0
    return out


def self_supervised_loss(h_private: Value, targets: np.ndarray, head) -> Value:
    """Cross-entropy of ``head(h_private)`` against one-hot layer targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[1] < 2:
        raise ValueError("self-supervised loss needs at least two layers")
    return ad.softmax_cross_entropy(head(h_private), targets)


def pairing_indices(n: int, pairing: str = "full", k: int | None = None,
                    rng: np.random.Generator | None = None, groups=None) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays (i, j) over which private ``i`` meets common ``j``.

    ``groups`` restricts pairs to members of the same group (one group per
    multiplex sample when several are batched together).
    """
    if groups is None:
        groups = np.zeros(n, dtype=np.int64)
    groups = np.asarray(groups)
    ii, jj = [], []
    for g in np.unique(groups):
        members = np.flatnonzero(groups == g)
        size = members.size
        if pairing == "full":
            ii.append(np.repeat(members, size))
            jj.append(np.tile(members, size))
        elif pairing == "monte_carlo":
            if k is None or k < 1:
                raise ValueError("monte_carlo pairing needs k >= 1")
            if k > size:
                raise ValueError(f"monte_carlo pairing with k={k} exceeds batch size {size}")
            if rng is None:
                raise ValueError("monte_carlo pairing needs an rng")
            picks = np.stack([rng.choice(size, size=k, replace=False) for _ in range(size)])
            ii.append(np.repeat(members, k))
            jj.append(members[picks.ravel()])
        else:
            raise ValueError(f"unknown pairing mode {pairing!r}")
    return np.concatenate(ii), np.concatenate(jj)


def causal_loss(h_private: Value, h_common: Value, targets: np.ndarray, head,
                pairing: str = "full", k: int | None = None,
                rng: np.random.Generator | None = None, groups=None) -> Value:
    """Stratified cross-entropy over re-paired (private_i, common_j) inputs.

    With full pairing this is the mean over all N'^2 pairs; with Monte Carlo
    pairing each private embedding meets ``k`` sampled commons.
    """
    targets = np.asarray(targets, dtype=np.float64)
    i, j = pairing_indices(h_private.shape[0], pairing, k, rng, groups)
    logits = head(ad.take_rows(h_private, i), ad.take_rows(h_common, j))
    return ad.softmax_cross_entropy(logits, targets[i])


def total_loss(matching: Value, self_sup: Value | None, causal: Value | None,
               weights: LossWeights) -> Value:
    out = ad.scale(matching, weights.match)
    if self_sup is not None and weights.alpha:
        out = out + ad.scale(self_sup, weights.alpha)
    if causal is not None and weights.beta:
        out = out + ad.scale(causal, weights.beta)
    return out
