"""Stratified and grouped K-fold plans and nested cross-validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .metrics import f1_scores


class LeakError(AssertionError):
    pass


def stratified_kfold(labels, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Test-index folds; each class is shuffled then dealt round-robin.

    The dealing counter carries over between classes so fold sizes differ
    by at most one.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("need at least two folds")
    classes, counts = np.unique(labels, return_counts=True)
    for c, n in zip(classes, counts):
        if n < k:
            raise ValueError(f"class {c} has {n} samples, fewer than {k} folds")
    folds = [[] for _ in range(k)]
    slot = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        for idx in members:
            folds[slot % k].append(idx)
            slot += 1
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def grouped_kfold(groups, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Folds made of whole groups, dealt round-robin after shuffling."""
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    if uniq.size < k:
        raise ValueError(f"{uniq.size} groups cannot fill {k} folds")
    folds = [[] for _ in range(k)]
    for slot, g in enumerate(rng.permutation(uniq)):
        folds[slot % k].extend(np.flatnonzero(groups == g).tolist())
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def make_folds(labels, k: int, rng, groups=None) -> list[np.ndarray]:
    if groups is not None:
        return grouped_kfold(groups, k, rng)
    return stratified_kfold(labels, k, rng)


def check_split(train_idx, test_idx, groups=None) -> None:
    """Leak detector: raise if any index or group sits on both sides."""
    train_idx = np.asarray(train_idx)
    test_idx = np.asarray(test_idx)
    overlap = np.intersect1d(train_idx, test_idx)
    if overlap.size:
        raise LeakError(f"indices {overlap[:5].tolist()} appear in train and test")
    if groups is not None:
        groups = np.asarray(groups)
        shared = np.intersect1d(groups[train_idx], groups[test_idx])
        if shared.size:
            raise LeakError(f"groups {shared[:5].tolist()} span train and test")


@dataclass
class FoldPlan:
    outer: list[np.ndarray]
    inner: list[list[np.ndarray]]
    labels: np.ndarray
    groups: np.ndarray | None = None

    def train_indices(self, fold: int) -> np.ndarray:
        return np.setdiff1d(np.arange(self.labels.size), self.outer[fold])


def plan_folds(labels, outer_k: int = 5, inner_k: int = 3, groups=None, seed: int = 0) -> FoldPlan:
    labels = np.asarray(labels, dtype=np.int64)
    g = None if groups is None else np.asarray(groups)
    rng = np.random.default_rng(seed)
    outer = make_folds(labels, outer_k, rng, g)
    inner = []
    n = labels.size
    for test in outer:
        train = np.setdiff1d(np.arange(n), test)
        sub = make_folds(labels[train], inner_k, rng, None if g is None else g[train])
        inner.append([train[f] for f in sub])
    return FoldPlan(outer=outer, inner=inner, labels=labels, groups=g)


@dataclass
class CVResult:
    per_fold: list[dict]
    chosen: list[dict] = field(default_factory=list)

    def summary(self, keys=("macro_f1", "micro_f1")) -> tuple[dict, dict]:
        mean = {k: float(np.mean([f[k] for f in self.per_fold])) for k in keys}
        std = {k: float(np.std([f[k] for f in self.per_fold])) for k in keys}
        return mean, std


def nested_cv(labels, fit_predict: Callable, hyper_grid: Sequence[dict] | None = None,
              groups=None, outer_k: int = 5, inner_k: int = 3, seed: int = 0,
              n_classes: int | None = None) -> CVResult:
    """Outer folds estimate, inner folds pick hyperparameters by macro-F1.

    ``fit_predict(train_idx, test_idx, hyper)`` returns predicted labels for
    ``test_idx``.  With a single grid entry the inner loop is skipped since
    there is nothing to select.
    """
    labels = np.asarray(labels, dtype=np.int64)
    grid = list(hyper_grid) if hyper_grid else [{}]
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    plan = plan_folds(labels, outer_k, inner_k, groups, seed)
    per_fold, chosen = [], []
    for fold, test in enumerate(plan.outer):
        train = plan.train_indices(fold)
        check_split(train, test, plan.groups)
        best = grid[0]
        if len(grid) > 1:
            scores = []
            for hyper in grid:
                vals = []
                for inner_test in plan.inner[fold]:
                    inner_train = np.setdiff1d(train, inner_test)
                    check_split(inner_train, inner_test, plan.groups)
                    pred = fit_predict(inner_train, inner_test, hyper)
                    vals.append(f1_scores(labels[inner_test], pred, n_classes)[0])
                scores.append(float(np.mean(vals)))
            # ties go to the earliest grid entry
            best = grid[int(np.argmax(scores))]
        pred = fit_predict(train, test, best)
        macro, micro = f1_scores(labels[test], pred, n_classes)
        per_fold.append({"fold": fold, "macro_f1": macro, "micro_f1": micro,
                         "n_train": int(train.size), "n_test": int(test.size)})
        chosen.append(dict(best))
    return CVResult(per_fold=per_fold, chosen=chosen)
