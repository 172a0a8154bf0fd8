"""Metrics JSON reports and config hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


@dataclass
class Metrics:
    task: str
    per_fold: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    config_hash: str = ""
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, val in self.mean.items():
            # F1 and NMI live in [0, 1]; ARI (and anything unlabelled) in [-1, 1]
            lo = 0.0 if ("f1" in key or "nmi" in key) else -1.0
            if val is not None and not lo - 1e-12 <= val <= 1.0 + 1e-12:
                raise ValueError(f"metric {key}={val} outside [{lo}, 1]")

    def to_dict(self) -> dict:
        d = {"task": self.task, "per_fold": self.per_fold, "mean": self.mean, "std": self.std,
             "config_hash": self.config_hash, "seed": self.seed}
        d.update(self.extra)
        return _plain(d)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps(_plain(obj), sort_keys=True, indent=1))
        fh.write("\n")
    return path
