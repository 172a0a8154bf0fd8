"""Clustering agreement and classification scores."""

from __future__ import annotations

import numpy as np


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.size != b.size:
        raise ValueError(f"labelings differ in length ({a.size} vs {b.size})")
    if a.size < 2:
        raise ValueError("need at least two samples to compare labelings")
    return a, b


def _ordered_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    # a fixed argument order keeps f(a, b) == f(b, a) bit for bit, since
    # float sums over the contingency table depend on its orientation
    a, b = _check_pair(a, b)
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    diff = np.flatnonzero(ia != ib)
    if diff.size and ia[diff[0]] > ib[diff[0]]:
        return b, a
    return a, b


def contingency(a, b) -> np.ndarray:
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index from the pair-counting contingency formula."""
    a, b = _ordered_pair(labels_a, labels_b)
    table = contingency(a, b)
    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(a.size)
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both labelings trivial in the same way (all-one-cluster or all-singletons)
        return 1.0 if sum_ij == max_index else 0.0
    return float((sum_ij - expected) / (max_index - expected))


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(labels_a, labels_b) -> float:
    """Mutual information over the geometric mean of the two entropies."""
    a, b = _ordered_pair(labels_a, labels_b)
    table = contingency(a, b).astype(np.float64)
    n = a.size
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0.0 or hb == 0.0:
        return 0.0
    pij = table / n
    pa = pij.sum(axis=1, keepdims=True)
    pb = pij.sum(axis=0, keepdims=True)
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / (pa @ pb)[nz])))
    return float(np.clip(mi / np.sqrt(ha * hb), 0.0, 1.0))


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.size != y_pred.size:
        raise ValueError("y_true and y_pred differ in length")
    for name, y in (("y_true", y_true), ("y_pred", y_pred)):
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise ValueError(f"{name} has labels outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def f1_scores(y_true, y_pred, n_classes: int) -> tuple[float, float]:
    """(macro, micro) F1; a class with neither support nor predictions scores 0."""
    cm = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = tp + 0.5 * (fp + fn)
    per_class = np.divide(tp, denom, out=np.zeros_like(tp), where=denom > 0)
    total = tp.sum() + 0.5 * (fp.sum() + fn.sum())
    micro = float(tp.sum() / total) if total > 0 else 0.0
    return float(per_class.mean()), micro
