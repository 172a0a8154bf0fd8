"""End-to-end pipelines for the synthetic benchmarks.

Each experiment is fully described by a JSON-able config dict (data spec,
training config, evaluation settings, seed); ``reproduce`` runs it and
returns a metrics report whose layout follows the benchmark tables.
"""

from __future__ import annotations

import copy
import csv
import logging
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .augment import build_batch
from .encoders import CademModel
from .eval import (check_split, clustering_scores, combiner_probe, config_hash, linear_probe,
                   make_folds, nested_cv, plan_folds, prediction_entropy, write_json)
from .eval.report import Metrics
from .graph import MultiplexGraph
from .synth import SUBCLASSES, SynSpec, generate
from .trainer import TrainConfig, embed, pooled_embeddings, train

log = logging.getLogger(__name__)

EXPERIMENTS = ("syn1", "syn2", "syn3", "syn4")

# inner-loop model selection tunes only the probe's L2 penalty
PROBE_GRID = [{"probe_weight_decay": w} for w in (0.0, 1e-3, 1e-2, 1e-1, 1.0)]

# reference settings per benchmark: data, training and evaluation
_BASE = {
    "syn1": {
        "data": {"variant": "syn1", "M": 100, "N": 3,
                 "params": {"communities": 3, "p_intra": 0.7, "p_inter": 0.1,
                            "final_mix": [0.8, 0.1, 0.1]}},
        "train": {"epochs": 140, "lr_heads": 1e-2, "lr_rest": 1e-4, "loss_weights": [0.9, 1.5, 3.4],
                  "n_aug": 5, "ratio": 0.6, "sigma": 0.1, "pooling": "add"},
        "eval": {"task": "node_classification", "outer_k": 5, "inner_k": 3, "probe_epochs": 50,
                 "probe_lr": 0.3, "hyper_grid": PROBE_GRID, "layer_probe_samples": 60},
    },
    "syn2": {
        "data": {"variant": "syn2", "M": 1000, "N": 3,
                 "params": {"communities": 3, "p_intra": 0.3, "p_inter": 0.01, "reassign": 0.5}},
        "train": {"epochs": 200, "lr_heads": 1e-2, "lr_rest": 1e-4, "loss_weights": [1.0, 0.5, 0.5],
                  "n_aug": 20, "ratio": 0.6, "sigma": 0.1, "pooling": "add"},
        "eval": {"task": "node_clustering", "kmeans_k": 3, "kmeans_runs": 50,
                 "gammas": [0.0, 0.25, 0.5, 0.75, 1.0]},
    },
    "syn3": {
        "data": {"variant": "syn3", "M": 600, "N": 2,
                 "params": {"K_nn": 15, "centers_per_layer": 3, "hop_radius": 3, "mix": 0.3}},
        "train": {"epochs": 200, "lr_heads": 1e-2, "lr_rest": 1e-4, "loss_weights": [1.0, 0.05, 0.05],
                  "n_aug": 20, "ratio": 0.6, "sigma": 0.1, "pooling": "add"},
        "eval": {"task": "node_clustering", "kmeans_k": 2, "kmeans_runs": 50},
    },
    "syn4": {
        "data": {"variant": "syn4", "M": 100, "N": 2, "params": {"n_base": 30, "p_er": 0.08}},
        "train": {"epochs": 200, "lr_heads": 1e-2, "lr_rest": 1e-4, "loss_weights": [1.0, 0.5, 0.5],
                  "n_aug": 20, "ratio": 0.6, "sigma": 0.1, "pooling": "add"},
        "eval": {"task": "graph_classification", "outer_k": 5, "inner_k": 3, "probe_epochs": 400,
                 "probe_lr": 0.1, "hyper_grid": PROBE_GRID, "graph_pooling": "mean"},
    },
}

ABLATION_ROWS = (
    ("matching",),
    ("matching", "selfsup"),
    ("matching", "causal"),
    ("matching", "selfsup", "causal"),
)


def experiment_config(name: str, quick: bool = False, seed: int = 0) -> dict:
    """Resolved config for one benchmark; ``quick`` is the reduced CI profile."""
    if name not in _BASE:
        raise ValueError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    cfg = copy.deepcopy(_BASE[name])
    cfg["experiment"] = name
    cfg["seed"] = int(seed)
    cfg["quick"] = bool(quick)
    cfg["data"]["seed"] = int(seed)
    cfg["train"]["seed"] = int(seed)
    if quick:
        ev = cfg["eval"]
        if "outer_k" in ev:
            ev["outer_k"] = 3
        if "kmeans_runs" in ev:
            ev["kmeans_runs"] = 10
    # normalise through the dataclasses so defaults show up in the hash
    cfg["train"] = TrainConfig.from_dict(cfg["train"]).to_dict()
    cfg["data"] = SynSpec.from_dict(cfg["data"]).to_dict()
    return cfg


def _train_cfg(cfg: dict, **override) -> TrainConfig:
    d = dict(cfg["train"])
    d.update(override)
    return TrainConfig.from_dict(d)


def _probe_fn(x: np.ndarray, y: np.ndarray, n_classes: int, ev: dict, seed: int):
    def fit_predict(train_idx, test_idx, hyper):
        epochs = hyper.get("probe_epochs", ev["probe_epochs"])
        lr = hyper.get("probe_lr", ev["probe_lr"])
        return linear_probe(x[train_idx], y[train_idx], x[test_idx], y[test_idx], n_classes,
                            epochs=epochs, lr=lr, seed=seed,
                            weight_decay=hyper.get("probe_weight_decay", 0.0))["pred"]
    return fit_predict


def _combiner_fn(common: np.ndarray, private: list[np.ndarray], y: np.ndarray, n_classes: int,
                 ev: dict, seed: int):
    def fit_predict(train_idx, test_idx, hyper):
        epochs = hyper.get("probe_epochs", ev["probe_epochs"])
        lr = hyper.get("probe_lr", ev["probe_lr"])
        return combiner_probe(common, private, y, train_idx, test_idx, n_classes,
                              epochs=epochs, lr=lr, seed=seed,
                              weight_decay=hyper.get("probe_weight_decay", 0.0))["pred"]
    return fit_predict


def _cv_cell(fit_predict, y, ev: dict, seed: int, groups=None, n_classes=None) -> dict:
    res = nested_cv(y, fit_predict, ev.get("hyper_grid"), groups=groups, outer_k=ev["outer_k"],
                    inner_k=ev["inner_k"], seed=seed, n_classes=n_classes)
    mean, std = res.summary()
    return {"macro_f1_mean": mean["macro_f1"], "macro_f1_std": std["macro_f1"],
            "micro_f1_mean": mean["micro_f1"], "micro_f1_std": std["micro_f1"],
            "per_fold": res.per_fold, "chosen": res.chosen}


# ---------------------------------------------------------------- syn1


def syn1_tables(graph: MultiplexGraph, model: CademModel, ev: dict, seed: int) -> dict:
    """Rows: combined and per-layer private embeddings; columns: final and per-layer labels."""
    es = embed(model, graph)
    n = graph.n_layers
    label_keys = ["final"] + [f"layer{k}" for k in range(n)]
    rows = {"combined": None}
    rows.update({f"private{ell}": es.private[ell] for ell in range(n)})
    rows["common"] = es.common_mean
    table = {}
    for row, x in rows.items():
        table[row] = {}
        for key in label_keys:
            y = graph.labels[key]
            k = int(y.max()) + 1
            if row == "combined":
                fn = _combiner_fn(es.common_mean, es.private, y, k, ev, seed)
            else:
                fn = _probe_fn(x, y, k, ev, seed)
            table[row][key] = _cv_cell(fn, y, ev, seed, n_classes=k)
    return table


def common_layer_probe(graph: MultiplexGraph, model: CademModel, cfg: dict) -> dict:
    """Can a linear probe recover the layer index from pooled common embeddings?

    Pooled common embeddings come from fresh augmented subgraphs (eval mode:
    no dropout, augmentation noise kept) and are scored by stratified CV.
    """
    tr, ev = cfg["train"], cfg["eval"]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg["seed"], 2])))
    batch = build_batch([graph], model, tr["ratio"], tr["sigma"], ev["layer_probe_samples"],
                        tr["pooling"], rng, train=False)
    x = batch.h_common.data
    y = batch.source_layer
    n = graph.n_layers
    folds = make_folds(y, ev["outer_k"], np.random.default_rng(cfg["seed"]))
    macro, micro, ent = [], [], []
    for test in folds:
        train_idx = np.setdiff1d(np.arange(y.size), test)
        check_split(train_idx, test)
        r = linear_probe(x[train_idx], y[train_idx], x[test], y[test], n, ev["probe_epochs"],
                         ev["probe_lr"], seed=cfg["seed"])
        macro.append(r["macro_f1"])
        micro.append(r["micro_f1"])
        ent.append(float(prediction_entropy(r["proba"]).mean()))
    return {"macro_f1": float(np.mean(macro)), "micro_f1": float(np.mean(micro)),
            "mean_entropy": float(np.mean(ent)), "max_entropy": float(np.log(n)),
            "n_samples": int(y.size), "chance": 1.0 / n}


def run_syn1(cfg: dict) -> dict:
    graph = generate(SynSpec.from_dict(cfg["data"]))
    model, history = train(graph, _train_cfg(cfg))
    table = syn1_tables(graph, model, cfg["eval"], cfg["seed"])
    head = table["combined"]["final"]
    metrics = Metrics(
        task="syn1_node_classification",
        per_fold=head["per_fold"],
        mean={"macro_f1": head["macro_f1_mean"], "micro_f1": head["micro_f1_mean"]},
        std={"macro_f1": head["macro_f1_std"], "micro_f1": head["micro_f1_std"]},
        config_hash=config_hash(cfg), seed=cfg["seed"],
        extra={"table": table, "common_layer_probe": common_layer_probe(graph, model, cfg),
               "final_loss": history[-1], "first_loss": history[0]},
    )
    return metrics.to_dict()


def ablation_config(cfg: dict, losses) -> dict:
    """Zero the weights of the losses left out (matching is always on)."""
    losses = set(losses)
    unknown = losses - {"matching", "selfsup", "causal"}
    if unknown:
        raise ValueError(f"unknown loss names {sorted(unknown)}")
    if "matching" not in losses:
        raise ValueError("every ablation row keeps the matching loss")
    out = copy.deepcopy(cfg)
    w = list(out["train"]["loss_weights"])
    if "selfsup" not in losses:
        w[1] = 0.0
    if "causal" not in losses:
        w[2] = 0.0
    out["train"]["loss_weights"] = w
    return out


def run_ablation(cfg: dict, rows=ABLATION_ROWS) -> dict:
    graph = generate(SynSpec.from_dict(cfg["data"]))
    out_rows = []
    for losses in rows:
        sub = ablation_config(cfg, losses)
        model, _ = train(graph, _train_cfg(sub))
        es = embed(model, graph)
        y = graph.labels["final"]
        fn = _combiner_fn(es.common_mean, es.private, y, int(y.max()) + 1, cfg["eval"], cfg["seed"])
        cell = _cv_cell(fn, y, cfg["eval"], cfg["seed"])
        out_rows.append({
            "matching": "matching" in losses, "selfsup": "selfsup" in losses,
            "causal": "causal" in losses,
            "macro_f1_mean": cell["macro_f1_mean"], "macro_f1_std": cell["macro_f1_std"],
            "micro_f1_mean": cell["micro_f1_mean"], "micro_f1_std": cell["micro_f1_std"],
        })
    return {"task": "syn1_ablation", "rows": out_rows, "config_hash": config_hash(cfg),
            "seed": cfg["seed"]}


def run_augmentation_ablation(cfg: dict) -> dict:
    """Full objective with and without graph augmentation."""
    graph = generate(SynSpec.from_dict(cfg["data"]))
    y = graph.labels["final"]
    rows = []
    for augment in (False, True):
        model, _ = train(graph, _train_cfg(cfg, augment=augment))
        es = embed(model, graph)
        fn = _combiner_fn(es.common_mean, es.private, y, int(y.max()) + 1, cfg["eval"], cfg["seed"])
        cell = _cv_cell(fn, y, cfg["eval"], cfg["seed"])
        cell.pop("per_fold")
        cell.pop("chosen")
        rows.append({"augmentation": augment, **cell})
    return {"task": "syn1_augmentation", "rows": rows, "config_hash": config_hash(cfg),
            "seed": cfg["seed"]}


# ---------------------------------------------------------------- syn2


def run_syn2(cfg: dict) -> dict:
    ev = cfg["eval"]
    points = []
    for gi, gamma in enumerate(ev["gammas"]):
        data = copy.deepcopy(cfg["data"])
        data["params"]["gamma"] = gamma
        graph = generate(SynSpec.from_dict(data))
        model, _ = train(graph, _train_cfg(cfg))
        es = embed(model, graph)
        cseed = cfg["seed"] * 1000 + gi
        common = clustering_scores(es.common_mean, graph.labels["shared"], ev["kmeans_k"],
                                   ev["kmeans_runs"], seed=cseed)
        priv = [clustering_scores(es.private[ell], graph.labels[f"private{ell}"], ev["kmeans_k"],
                                  ev["kmeans_runs"], seed=cseed + 100 * (ell + 1))
                for ell in range(graph.n_layers)]
        points.append({
            "gamma": gamma,
            "common_shared": _strip_runs(common),
            "private_layer": [_strip_runs(p) for p in priv],
            "private_layer_mean_ari": float(np.mean([p["ari_mean"] for p in priv])),
            "private_layer_mean_nmi": float(np.mean([p["nmi_mean"] for p in priv])),
        })
    gam = [p["gamma"] for p in points]
    rho_c = _spearman(gam, [p["common_shared"]["ari_mean"] for p in points])
    rho_p = _spearman(gam, [p["private_layer_mean_ari"] for p in points])
    return {"task": "syn2_gamma_sweep", "points": points,
            "spearman_common_vs_gamma": rho_c, "spearman_private_vs_gamma": rho_p,
            "config_hash": config_hash(cfg), "seed": cfg["seed"]}


def _spearman(x, y) -> float:
    if np.ptp(y) == 0:
        return 0.0
    return float(spearmanr(x, y).statistic)


def _strip_runs(scores: dict) -> dict:
    return {k: v for k, v in scores.items() if not k.endswith("_runs")}


def gamma_sweep_rows(report: dict) -> list[dict]:
    """Long-format rows for plotting ARI against gamma."""
    rows = []
    for p in report["points"]:
        rows.append({"gamma": p["gamma"], "embedding_kind": "common", "labeling": "shared",
                     "ari_mean": p["common_shared"]["ari_mean"],
                     "ari_std": p["common_shared"]["ari_std"]})
        for ell, s in enumerate(p["private_layer"]):
            rows.append({"gamma": p["gamma"], "embedding_kind": f"private{ell}",
                         "labeling": f"private{ell}", "ari_mean": s["ari_mean"],
                         "ari_std": s["ari_std"]})
    return rows


def write_sweep_csv(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["gamma", "embedding_kind", "labeling", "ari_mean", "ari_std"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in r.items()})
    return path


# ---------------------------------------------------------------- syn3


def run_syn3(cfg: dict) -> dict:
    ev = cfg["eval"]
    graph = generate(SynSpec.from_dict(cfg["data"]))
    model, _ = train(graph, _train_cfg(cfg))
    es = embed(model, graph)
    table = {}
    n = graph.n_layers
    for ell in range(n):
        for k in range(n):
            key = f"private{ell}_vs_layer{k}"
            table[key] = _strip_runs(clustering_scores(es.private[ell], graph.labels[f"layer{k}"],
                                                       ev["kmeans_k"], ev["kmeans_runs"],
                                                       seed=cfg["seed"] + 10 * ell + k))
    for k in range(n):
        table[f"common_vs_layer{k}"] = _strip_runs(clustering_scores(
            es.common_mean, graph.labels[f"layer{k}"], ev["kmeans_k"], ev["kmeans_runs"],
            seed=cfg["seed"] + 100 + k))
    mean = {key: v["ari_mean"] for key, v in table.items()}
    std = {key: v["ari_std"] for key, v in table.items()}
    return Metrics(task="syn3_node_clustering", per_fold=[], mean=mean, std=std,
                   config_hash=config_hash(cfg), seed=cfg["seed"],
                   extra={"table": table}).to_dict()


# ---------------------------------------------------------------- syn4


def syn4_embeddings(graphs, model, pooling: str = "mean") -> dict[str, np.ndarray]:
    pooled = [pooled_embeddings(embed(model, g), pooling) for g in graphs]
    keys = pooled[0].keys()
    return {k: np.stack([p[k] for p in pooled]) for k in keys}


def run_syn4(cfg: dict) -> dict:
    ev = cfg["eval"]
    seed = cfg["seed"]
    graphs = generate(SynSpec.from_dict(cfg["data"]))
    model, _ = train(graphs, _train_cfg(cfg))
    emb = syn4_embeddings(graphs, model, ev["graph_pooling"])
    y = np.array([g.metadata["class"] for g in graphs])
    groups = np.array([g.metadata["base_graph"] for g in graphs])
    n_cls = int(y.max()) + 1
    rows = {
        "common": emb["common_mean"],
        "private0": emb["private_0"],
        "private1": emb["private_1"],
    }
    table = {}
    for name, x in rows.items():
        table[name] = _cv_cell(_probe_fn(x, y, n_cls, ev, seed), y, ev, seed, groups, n_cls)
    private_stack = [emb["private_0"], emb["private_1"]]
    table["combined"] = _cv_cell(_combiner_fn(emb["common_mean"], private_stack, y, n_cls, ev, seed),
                                 y, ev, seed, groups, n_cls)
    # layer-level task: every layer becomes its own single-layer sample
    x_sub = np.concatenate([emb["private_0"], emb["private_1"]])
    y_sub = np.concatenate([[g.metadata["subclass"][ell] for g in graphs] for ell in range(2)])
    g_sub = np.concatenate([groups, groups])
    table["private_subclass"] = _cv_cell(_probe_fn(x_sub, y_sub, len(SUBCLASSES), ev, seed),
                                         y_sub, ev, seed, g_sub, len(SUBCLASSES))
    leak_free = _grouped_plan_is_leak_free(y, groups, ev, seed) and \
        _grouped_plan_is_leak_free(y_sub, g_sub, ev, seed)
    mean = {k: v["macro_f1_mean"] for k, v in table.items()}
    std = {k: v["macro_f1_std"] for k, v in table.items()}
    return Metrics(task="syn4_graph_classification", per_fold=table["private0"]["per_fold"],
                   mean=mean, std=std, config_hash=config_hash(cfg), seed=seed,
                   extra={"table": table, "grouped_cv_leak_free": leak_free,
                          "n_graphs": len(graphs)}).to_dict()


def _grouped_plan_is_leak_free(y, groups, ev, seed) -> bool:
    plan = plan_folds(y, ev["outer_k"], ev["inner_k"], groups, seed)
    for fold, test in enumerate(plan.outer):
        train_idx = plan.train_indices(fold)
        if np.intersect1d(groups[train_idx], groups[test]).size:
            return False
        for inner_test in plan.inner[fold]:
            inner_train = np.setdiff1d(train_idx, inner_test)
            if np.intersect1d(groups[inner_train], groups[inner_test]).size:
                return False
    return True


RUNNERS = {"syn1": run_syn1, "syn2": run_syn2, "syn3": run_syn3, "syn4": run_syn4}


def reproduce(name: str, out_dir=None, quick: bool = False, seed: int = 0,
              config: dict | None = None) -> dict:
    """Run one benchmark; with ``out_dir`` write metrics.json, manifest.json (and plot CSVs)."""
    cfg = config if config is not None else experiment_config(name, quick=quick, seed=seed)
    report = RUNNERS[cfg["experiment"]](cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_json(out_dir / "metrics.json", report)
        files = ["metrics.json"]
        if cfg["experiment"] == "syn2":
            write_sweep_csv(out_dir / "gamma_sweep.csv", gamma_sweep_rows(report))
            files.append("gamma_sweep.csv")
        write_json(out_dir / "manifest.json", {"command": "reproduce", "config": cfg,
                                               "config_hash": config_hash(cfg), "outputs": files})
    return report
