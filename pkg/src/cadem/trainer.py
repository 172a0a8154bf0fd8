"""Training loop and embedding export."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .augment import build_batch, draw_node_sets
from .autodiff import SparseMatrix, Value
from .encoders import (CademModel, MHACombiner, ModelConfig, encode, mha_combine,
                       pooling_matrix, prepare_features)
from .graph import MultiplexGraph, normalize_adjacency, read_matrix_csv, write_matrix_csv
from .losses import (LossWeights, causal_loss, matching_loss, procrustes_consensus,
                     self_supervised_loss, total_loss)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 140
    lr_heads: float = 1e-2
    lr_rest: float = 1e-4
    weight_decay_heads: float = 1e-4
    weight_decay_rest: float = 0.0
    dim: int = 8
    hidden: int = 64
    dropout: float = 0.1
    loss_weights: tuple = (1.0, 0.5, 0.5)
    ratio: float = 0.6
    sigma: float = 0.1
    n_aug: int = 5
    pooling: str = "add"
    pairing: str = "full"
    pairing_k: int | None = None
    resample_each_epoch: bool = True
    augment: bool = True
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_heads <= 0 or self.lr_rest <= 0:
            raise ValueError("learning rates must be positive")
        self.loss_weights = tuple(float(x) for x in self.loss_weights)
        LossWeights.from_sequence(self.loss_weights)

    @property
    def weights(self) -> LossWeights:
        return LossWeights.from_sequence(self.loss_weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class EmbeddingSet:
    """Eval-mode embeddings of one multiplex graph."""

    common: list[np.ndarray]
    private: list[np.ndarray]
    consensus: np.ndarray
    combined: np.ndarray | None = None
    pooled: dict = field(default_factory=dict)

    @property
    def common_mean(self) -> np.ndarray:
        return np.mean(self.common, axis=0)

    @property
    def private_mean(self) -> np.ndarray:
        return np.mean(self.private, axis=0)

    def matrices(self) -> dict[str, np.ndarray]:
        out = {}
        for i, c in enumerate(self.common):
            out[f"common_{i}"] = c
        for i, p in enumerate(self.private):
            out[f"private_{i}"] = p
        out["consensus"] = self.consensus
        out["common_mean"] = self.common_mean
        if self.combined is not None:
            out["combined"] = self.combined
        return out


class _Stacked:
    """Per-layer block-diagonal operators over a list of graphs (cached)."""

    def __init__(self, graphs: Sequence[MultiplexGraph]):
        self.graphs = list(graphs)
        self.sizes = np.array([g.n_nodes for g in graphs])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.adj: list[SparseMatrix] = []
        self.features = []
        for ell in range(graphs[0].n_layers):
            edges = np.concatenate([g.layers[ell].edges + off for g, off in zip(graphs, self.offsets[:-1])])
            self.adj.append(normalize_adjacency(edges, int(self.offsets[-1])))
            feats = np.concatenate([g.layers[ell].features for g in graphs], axis=0)
            self.features.append(prepare_features(feats))

    def slices(self):
        return [slice(int(a), int(b)) for a, b in zip(self.offsets[:-1], self.offsets[1:])]


def _check_graphs(graphs: Sequence[MultiplexGraph]) -> None:
    if not graphs:
        raise ValueError("no graphs to train on")
    n, f = graphs[0].n_layers, graphs[0].n_features
    for g in graphs:
        if g.n_layers != n or g.n_features != f:
            raise ValueError("all graphs in a collection need the same layer count and feature width")


def _consensus_per_graph(common: Sequence[Value], slices) -> np.ndarray:
    parts = [procrustes_consensus([c.data[s] for c in common]).S for s in slices]
    return np.concatenate(parts, axis=0)


def build_model(graphs: Sequence[MultiplexGraph], cfg: TrainConfig) -> CademModel:
    g = graphs[0]
    return CademModel(ModelConfig(n_layers=g.n_layers, n_features=g.n_features, hidden=cfg.hidden,
                                  dim=cfg.dim, activation=cfg.activation, seed=cfg.seed))


def train(graph, cfg: TrainConfig, log_path=None) -> tuple[CademModel, list[dict]]:
    """Train on one multiplex graph or on a list of them (graph-level tasks).

    Matching uses full-graph embeddings, one consensus per graph; the
    self-supervised and causal terms use the augmented batch, pairing only
    augmented graphs that come from the same multiplex sample.
    """
    graphs = [graph] if isinstance(graph, MultiplexGraph) else list(graph)
    _check_graphs(graphs)
    if cfg.activation != "relu":
        raise ValueError("only the relu GCN activation is implemented")
    weights = cfg.weights
    model = build_model(graphs, cfg)
    stacked = _Stacked(graphs)
    slices = stacked.slices()
    opt = ad.Adam([
        {"params": model.head_params(), "lr": cfg.lr_heads, "weight_decay": cfg.weight_decay_heads},
        {"params": model.encoder_params(), "lr": cfg.lr_rest, "weight_decay": cfg.weight_decay_rest},
    ])
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    drop_rng = np.random.default_rng(seeds[0])
    aug_rng = np.random.Generator(np.random.Philox(seeds[1]))
    feat_cache: dict = {}
    use_aux = (weights.alpha > 0 or weights.beta > 0) and graphs[0].n_layers >= 2
    if cfg.augment:
        ratio, sigma, n_aug = cfg.ratio, cfg.sigma, cfg.n_aug
    else:
        ratio, sigma, n_aug = 1.0, 0.0, 1
    fixed_sets = None
    history = []
    fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            opt.zero_grad()
            common = []
            for ell in range(model.n_layers):
                c, _ = encode(model, ell, stacked.adj[ell], stacked.features[ell],
                              train=True, dropout=cfg.dropout, rng=drop_rng)
                common.append(c)
            s = _consensus_per_graph(common, slices)
            l_match = ad.scale(matching_loss(common, s), 1.0 / len(graphs))
            l_self = l_causal = None
            if use_aux:
                sets = None
                if not cfg.resample_each_epoch:
                    if fixed_sets is None:
                        fixed_sets = draw_node_sets(graphs, ratio, n_aug, aug_rng)
                    sets = fixed_sets
                batch = build_batch(graphs, model, ratio, sigma, n_aug, cfg.pooling, aug_rng,
                                    train=True, dropout=cfg.dropout, features_cache=feat_cache,
                                    node_sets=sets)
                if weights.alpha > 0:
                    l_self = self_supervised_loss(batch.h_private, batch.targets, model.phi)
                if weights.beta > 0:
                    l_causal = causal_loss(batch.h_private, batch.h_common, batch.targets, model.psi,
                                           pairing=cfg.pairing, k=cfg.pairing_k, rng=aug_rng,
                                           groups=batch.sample)
            loss = total_loss(l_match, l_self, l_causal, weights)
            record = {
                "epoch": epoch,
                "matching": l_match.item(),
                "self_supervised": l_self.item() if l_self is not None else None,
                "causal": l_causal.item() if l_causal is not None else None,
                "total": loss.item(),
            }
            for term, val in record.items():
                if term != "epoch" and val is not None and not math.isfinite(val):
                    raise FloatingPointError(f"non-finite {term} loss at epoch {epoch}")
            ad.backward(loss)
            opt.step()
            history.append(record)
            if fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if epoch == 1 or epoch % 20 == 0 or epoch == cfg.epochs:
                log.debug("epoch %d total %.6f", epoch, record["total"])
    finally:
        if fh:
            fh.close()
    return model, history


def embed(model: CademModel, graph: MultiplexGraph, combiner: MHACombiner | None = None,
          pooling: str = "mean") -> EmbeddingSet:
    """Eval-mode (no dropout, no noise) embeddings of one graph."""
    common, private = [], []
    for ell in range(model.n_layers):
        c, p = encode(model, ell, graph.layers[ell].normalized_adj,
                      prepare_features(graph.layers[ell].features))
        common.append(c.data)
        private.append(p.data)
    cons = procrustes_consensus(common).S
    combined = None
    if combiner is not None:
        combined = mha_combine(combiner, np.mean(common, axis=0), private).data
    es = EmbeddingSet(common=common, private=private, consensus=cons, combined=combined)
    es.pooled = pooled_embeddings(es, pooling)
    return es


def embed_many(model: CademModel, graphs: Sequence[MultiplexGraph], pooling: str = "mean") -> list[EmbeddingSet]:
    return [embed(model, g, pooling=pooling) for g in graphs]


def pooled_embeddings(es: EmbeddingSet, mode: str = "mean") -> dict[str, np.ndarray]:
    def pool(x):
        return (pooling_matrix([x.shape[0]], mode).csr @ x).ravel()

    out = {f"private_{i}": pool(p) for i, p in enumerate(es.private)}
    out.update({f"common_{i}": pool(c) for i, c in enumerate(es.common)})
    out["common_mean"] = pool(es.common_mean)
    out["private_mean"] = pool(es.private_mean)
    return out


def export_embeddings(model: CademModel, graph: MultiplexGraph, out_dir, seed: int = 0,
                      extra: dict | None = None) -> Path:
    """Write each embedding matrix as headerless CSV plus ``manifest.json``.

    ``combined.csv`` holds the attention combiner at its seeded
    initialisation; evaluation retrains the combiner with the probe.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    combiner = MHACombiner(model.dim, heads=4, seed=seed)
    es = embed(model, graph, combiner=combiner)
    files = {}
    for name, mat in es.matrices().items():
        fname = f"{name}.csv"
        write_matrix_csv(out_dir / fname, mat)
        files[name] = {"path": fname, "shape": list(mat.shape)}
    manifest = {
        "n_layers": model.n_layers,
        "n_nodes": graph.n_nodes,
        "dim": model.dim,
        "matrices": files,
        "labels": {k: v.tolist() for k, v in sorted(graph.labels.items())},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return path


def load_embeddings(directory) -> tuple[EmbeddingSet, dict]:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    mats = {name: read_matrix_csv(directory / info["path"]) for name, info in manifest["matrices"].items()}
    n = manifest["n_layers"]
    es = EmbeddingSet(common=[mats[f"common_{i}"] for i in range(n)],
                      private=[mats[f"private_{i}"] for i in range(n)],
                      consensus=mats["consensus"], combined=mats.get("combined"))
    es.pooled = pooled_embeddings(es)
    return es, manifest
