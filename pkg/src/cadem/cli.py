"""Command-line entry point: generate, train, eval, reproduce, ablate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .encoders import load_checkpoint, save_checkpoint
from .eval import clustering_scores, config_hash, write_json
from .graph import data_path, load_collection, save_collection, save_multiplex
from .synth import SynSpec, generate
from .trainer import TrainConfig, export_embeddings, load_embeddings, train

log = logging.getLogger("cadem")

TASKS = ("node_classification", "node_clustering", "graph_classification")


class InvariantError(Exception):
    """A precondition on inputs or outputs failed; reported with exit code 1."""


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InvariantError(f"config file {path} does not exist")
    with open(path) as fh:
        return json.load(fh)


def _announce(cfg) -> str:
    h = config_hash(cfg)
    print(f"config hash: {h}")
    return h


def cmd_generate(args) -> int:
    spec = SynSpec.from_dict(_read_json(args.spec))
    if args.seed is not None:
        spec.seed = args.seed
    h = _announce(spec.to_dict())
    out = Path(args.out)
    data = generate(spec)
    if isinstance(data, list):
        save_collection(data, out)
        graph_file = "collection.json"
    else:
        save_multiplex(data, out)
        graph_file = "graph.json"
    labels = {}
    if isinstance(data, list):
        labels = {"class": [g.metadata["class"] for g in data],
                  "subclass": [g.metadata["subclass"] for g in data],
                  "base_graph": [g.metadata["base_graph"] for g in data]}
    else:
        labels = {k: v for k, v in sorted(data.labels.items())}
    write_json(out / "labels.json", labels)
    write_json(out / "manifest.json", {"command": "generate", "spec": spec.to_dict(),
                                       "config_hash": h, "graph": graph_file})
    print(f"wrote {out / graph_file}")
    return 0


def cmd_train(args) -> int:
    cfg_doc = _read_json(args.config) if args.config else {}
    cfg = TrainConfig.from_dict(cfg_doc.get("train", cfg_doc))
    if args.seed is not None:
        cfg.seed = args.seed
    h = _announce(cfg.to_dict())
    src = data_path(args.data)
    if not src.exists():
        raise InvariantError(f"no graph file under {args.data}")
    graphs = load_collection(src)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, history = train(graphs if len(graphs) > 1 else graphs[0], cfg, log_path=out / "train_log.jsonl")
    save_checkpoint(model, out / "model.ckpt", extra={"train": cfg.to_dict()})
    emb_dirs = []
    for i, g in enumerate(graphs):
        sub = out / ("embeddings" if len(graphs) == 1 else f"embeddings/graph{i:03d}")
        export_embeddings(model, g, sub, seed=cfg.seed, extra={"metadata": g.metadata})
        emb_dirs.append(str(sub.relative_to(out)))
    write_json(out / "manifest.json", {"command": "train", "data": str(src), "train": cfg.to_dict(),
                                       "config_hash": h, "embeddings": emb_dirs,
                                       "final_loss": history[-1]})
    print(f"final total loss {history[-1]['total']:.6f}; wrote {out}")
    return 0


def _embedding_matrix(es, which: str) -> np.ndarray:
    mats = es.matrices()
    if which not in mats:
        raise InvariantError(f"embedding {which!r} not found; have {sorted(mats)}")
    return mats[which]


def cmd_eval(args) -> int:
    eval_cfg = {"task": args.task, "labels": args.labels, "embedding": args.embedding,
                "outer_k": args.outer_k, "inner_k": args.inner_k, "probe_epochs": args.epochs,
                "probe_lr": args.lr, "kmeans_runs": args.runs, "seed": args.seed,
                "hyper_grid": ex.PROBE_GRID}
    h = _announce(eval_cfg)
    root = Path(args.embeddings)
    if args.task == "graph_classification":
        report = _eval_graphs(root, args, eval_cfg)
    else:
        es, manifest = load_embeddings(root)
        if args.labels not in manifest["labels"]:
            raise InvariantError(f"labels {args.labels!r} not in manifest; have {sorted(manifest['labels'])}")
        y = np.asarray(manifest["labels"][args.labels], dtype=np.int64)
        k = int(y.max()) + 1
        if args.task == "node_clustering":
            x = _embedding_matrix(es, args.embedding)
            scores = clustering_scores(x, y, k, args.runs, seed=args.seed)
            report = {"task": args.task, "per_fold": [],
                      "mean": {"ari": scores["ari_mean"], "nmi": scores["nmi_mean"]},
                      "std": {"ari": scores["ari_std"], "nmi": scores["nmi_std"]}}
        else:
            if args.embedding == "combined":
                fn = ex._combiner_fn(es.common_mean, es.private, y, k, eval_cfg, args.seed)
            else:
                fn = ex._probe_fn(_embedding_matrix(es, args.embedding), y, k, eval_cfg, args.seed)
            cell = ex._cv_cell(fn, y, eval_cfg, args.seed, n_classes=k)
            report = {"task": args.task, "per_fold": cell["per_fold"],
                      "mean": {"macro_f1": cell["macro_f1_mean"], "micro_f1": cell["micro_f1_mean"]},
                      "std": {"macro_f1": cell["macro_f1_std"], "micro_f1": cell["micro_f1_std"]}}
    report.update({"config_hash": h, "seed": args.seed})
    out = Path(args.out) if args.out else root / "metrics.json"
    write_json(out, report)
    print(json.dumps(report["mean"], sort_keys=True))
    return 0


def _eval_graphs(root: Path, args, eval_cfg) -> dict:
    subdirs = sorted(p for p in root.iterdir() if (p / "manifest.json").is_file())
    if not subdirs:
        raise InvariantError(f"no per-graph embedding directories under {root}")
    pooled, y, groups = [], [], []
    for d in subdirs:
        es, manifest = load_embeddings(d)
        meta = manifest.get("metadata", {})
        if args.labels not in meta:
            raise InvariantError(f"graph label {args.labels!r} missing in {d}")
        pooled.append(es.pooled)
        y.append(int(meta[args.labels]))
        groups.append(meta.get("base_graph", len(groups)))
    y = np.array(y)
    groups = np.array(groups)
    key = {"common": "common_mean"}.get(args.embedding, args.embedding.replace("private", "private_"))
    if key not in pooled[0]:
        raise InvariantError(f"pooled embedding {args.embedding!r} not available")
    x = np.stack([p[key] for p in pooled])
    k = int(y.max()) + 1
    cell = ex._cv_cell(ex._probe_fn(x, y, k, eval_cfg, args.seed), y, eval_cfg, args.seed, groups, k)
    return {"task": args.task, "per_fold": cell["per_fold"],
            "mean": {"macro_f1": cell["macro_f1_mean"], "micro_f1": cell["micro_f1_mean"]},
            "std": {"macro_f1": cell["macro_f1_std"], "micro_f1": cell["micro_f1_std"]}}


def cmd_reproduce(args) -> int:
    cfg = ex.experiment_config(args.experiment, quick=args.quick, seed=args.seed)
    _announce(cfg)
    out = Path(args.out or f"runs/{args.experiment}{'_quick' if args.quick else ''}")
    report = ex.reproduce(args.experiment, out_dir=out, config=cfg)
    print(json.dumps(report.get("mean", {}), sort_keys=True))
    print(f"wrote {out / 'metrics.json'}")
    return 0


def cmd_ablate(args) -> int:
    if args.experiment != "syn1":
        raise InvariantError("loss ablation is defined for syn1")
    cfg = ex.experiment_config("syn1", quick=args.quick, seed=args.seed)
    wanted = [s.strip() for s in args.losses.split(",") if s.strip()]
    rows = [r for r in ex.ABLATION_ROWS if set(r) <= set(wanted)]
    if not rows:
        raise InvariantError(f"no ablation row uses only {wanted}")
    cfg["ablation_rows"] = [list(r) for r in rows]
    h = _announce(cfg)
    report = ex.run_ablation(cfg, rows)
    out = Path(args.out or "runs/syn1_ablation")
    write_json(out / "metrics.json", report)
    write_json(out / "manifest.json", {"command": "ablate", "config": cfg, "config_hash": h,
                                       "outputs": ["metrics.json"]})
    for r in report["rows"]:
        flags = " ".join(f"{k}={'y' if r[k] else 'n'}" for k in ("matching", "selfsup", "causal"))
        print(f"{flags}  macro {r['macro_f1_mean']:.4f}  micro {r['micro_f1_mean']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cadem", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic multiplex dataset")
    g.add_argument("--spec", required=True, help="JSON file with the dataset spec")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train on a graph file or generate output directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate exported embeddings")
    e.add_argument("--embeddings", required=True)
    e.add_argument("--task", required=True, choices=TASKS)
    e.add_argument("--labels", required=True, help="label key in the manifest (graph metadata key for graph tasks)")
    e.add_argument("--embedding", default="combined",
                   help="matrix to evaluate: combined, common_mean, consensus, private_<l>, common_<l>")
    e.add_argument("--outer-k", type=int, default=5)
    e.add_argument("--inner-k", type=int, default=3)
    e.add_argument("--epochs", type=int, default=400)
    e.add_argument("--lr", type=float, default=0.1)
    e.add_argument("--runs", type=int, default=50, help="K-means runs for clustering")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("reproduce", help="run a synthetic benchmark end to end")
    r.add_argument("--experiment", required=True, choices=ex.EXPERIMENTS)
    r.add_argument("--quick", action="store_true", help="3 outer folds, 10 K-means runs")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_reproduce)

    a = sub.add_parser("ablate", help="loss-combination ablation")
    a.add_argument("--experiment", required=True, choices=("syn1",))
    a.add_argument("--losses", default="matching,selfsup,causal")
    a.add_argument("--quick", action="store_true")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)
    return p


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvariantError, ValueError, FloatingPointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
