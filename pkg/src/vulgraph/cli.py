"""Command-line surface tying the pipeline together.

Subcommands: ``synth`` (corpus generation), ``ingest`` (validation +
embedder fitting), ``train``, ``eval``, ``predict``, ``simplify``
(standalone refinement), ``report`` (pretty-print eval outputs).

All randomness flows from the three named seeds in the config (data, model,
train); every command persists outputs deterministically so reruns with
identical inputs are byte-identical.  Exit codes: 0 success, 2 input or
config error, 3 domain error (e.g. a degenerate training split), 1
unexpected failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import torch

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .errors import DomainError, InputError
from .graph_core import LabeledGraph
from .ingest import (RawGraphRecord, TokenEmbedder, fit_token_embeddings,
                     load_corpus_jsonl, load_graph_json, to_labeled_graph, tokenize)
from .metrics import bucketed_accuracy, compute_metrics, export_embeddings
from .sapool import refine_graph
from .synth import write_corpus_jsonl
from .trainer import GraphClassifier, predict_graphs, split_dataset, train

_ABLATIONS = {
    "no-hgr": "train.use_hgr=false",
    "no-gnn": "train.use_gnn=false",
    "no-gt": "train.use_gt=false",
}


def build_model(cfg: RunConfig) -> GraphClassifier:
    return GraphClassifier(
        feature_dim=cfg.model.feature_dim,
        hidden_dim=cfg.model.hidden_dim,
        num_blocks=cfg.model.num_blocks,
        num_heads=cfg.model.num_heads,
        refine=cfg.refine,
        dropout_rate=cfg.model.dropout_rate,
        use_hgr=cfg.train.use_hgr,
        use_gnn=cfg.train.use_gnn,
        use_gt=cfg.train.use_gt,
    )


def featurize(records: Sequence[RawGraphRecord], embedder: TokenEmbedder
              ) -> list[LabeledGraph]:
    return [to_labeled_graph(r, embedder) for r in records]


def _fit_embedder(cfg: RunConfig, records: Sequence[RawGraphRecord],
                  fit_indices: Optional[Sequence[int]] = None) -> TokenEmbedder:
    """Fit the token embedder; skip-gram mode trains on the given subset only."""
    token_corpus: list[list[str]] = []
    if cfg.embedder.mode == "skipgram":
        chosen = records if fit_indices is None else [records[i] for i in fit_indices]
        for rec in chosen:
            for node in rec.nodes:
                token_corpus.append(tokenize(node.code))
    return fit_token_embeddings(token_corpus, dim=cfg.embedder.dim,
                                mode=cfg.embedder.mode,
                                config=cfg.embedder.skipgram_config(),
                                seed=cfg.seeds.data)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = list(getattr(args, "set", None) or [])
    for name in ("data", "model", "train"):
        value = getattr(args, f"seed_{name}", None)
        if value is not None:
            overrides.append(f"seeds.{name}={value}")
    for ab in getattr(args, "ablation", None) or []:
        overrides.append(_ABLATIONS[ab])
    cfg = load_config(getattr(args, "config", None), overrides)
    jobs = getattr(args, "jobs", None)
    if jobs is not None:
        if jobs < 1:
            raise InputError(f"--jobs must be >= 1, got {jobs}")
        torch.set_num_threads(jobs)
    return cfg


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _outdir(raw: str) -> Path:
    out = Path(raw)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_from_checkpoint(ck: Checkpoint) -> tuple[GraphClassifier, RunConfig, TokenEmbedder]:
    cfg = RunConfig.from_dict(ck.config)
    model = build_model(cfg)
    model.load_state_dict(ck.state)
    if ck.embedder is None:
        raise InputError("checkpoint carries no token embedder; cannot featurize input")
    return model, cfg, TokenEmbedder.from_dict(ck.embedder)


def _load_records(path: str) -> list[RawGraphRecord]:
    p = Path(path)
    if not p.exists():
        raise InputError(f"corpus file not found: {p}")
    return load_corpus_jsonl(p)


# --- subcommands -------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    if out.parent != Path("") and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    synth_cfg = replace(cfg.synth, seed=cfg.seeds.data)
    graphs = write_corpus_jsonl(synth_cfg, out)
    vulnerable = sum(g.label for g in graphs)
    print(f"wrote {len(graphs)} graphs ({vulnerable} vulnerable) to {out}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    records = _load_records(args.corpus)
    if not records:
        raise InputError(f"corpus {args.corpus} is empty")
    embedder = _fit_embedder(cfg, records)
    out = _outdir(args.out)
    embedder.save(out / "embedder.json")
    sizes = [r.node_count for r in records]
    labels = [r.label for r in records]
    summary = {
        "graphs": len(records),
        "vulnerable": sum(labels),
        "benign": len(labels) - sum(labels),
        "nodes_min": min(sizes),
        "nodes_max": max(sizes),
        "nodes_mean": sum(sizes) / len(sizes),
        "edges_total": sum(len(r.edges) for r in records),
        "embedder_mode": cfg.embedder.mode,
        "feature_dim": cfg.embedder.dim,
    }
    _write_json(out / "summary.json", summary)
    print(f"validated {summary['graphs']} graphs "
          f"({summary['vulnerable']} vulnerable); embedder + summary in {out}")
    return 0


def _write_history_csv(path: Path, history: list[dict]) -> None:
    cols = ["step", "epoch", "loss", "val_accuracy", "val_precision",
            "val_recall", "val_f1"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in history:
            w.writerow([
                row.get(c, "") if not isinstance(row.get(c), float) else repr(row[c])
                for c in cols
            ])


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    records = _load_records(args.corpus)
    if not records:
        raise InputError(f"corpus {args.corpus} is empty")
    split = split_dataset(len(records), cfg.train.split, cfg.seeds.data)
    embedder = _fit_embedder(cfg, records, fit_indices=split.train)
    graphs = featurize(records, embedder)
    model = build_model(cfg)
    model.reset_parameters(cfg.seeds.model)
    result = train(graphs, model, cfg.train,
                   seed_data=cfg.seeds.data, seed_train=cfg.seeds.train)
    out = _outdir(args.out)
    _write_json(out / "config.json", cfg.to_dict())
    _write_history_csv(out / "history.csv", result.history)
    save_checkpoint(out / "checkpoint.json",
                    state=model.state_dict(), config=cfg.to_dict(),
                    embedder=embedder.to_dict(),
                    extra={"best_step": result.best_step,
                           "best_val_f1": result.best_val_f1})
    best = "n/a" if result.best_val_f1 is None else f"{result.best_val_f1:.4f}"
    print(f"trained {len(result.history)} steps on {len(split.train)} graphs; "
          f"best val F1 {best} at step {result.best_step}; outputs in {out}")
    return 0


def _select_split(graphs: list[LabeledGraph], cfg: RunConfig, which: str) -> list[LabeledGraph]:
    if which == "all":
        return graphs
    split = split_dataset(len(graphs), cfg.train.split, cfg.seeds.data)
    idx = {"train": split.train, "val": split.val, "test": split.test}[which]
    if not idx:
        raise DomainError(f"requested split {which!r} is empty for this corpus size")
    return [graphs[i] for i in idx]


def cmd_eval(args: argparse.Namespace) -> int:
    ck = load_checkpoint(args.checkpoint)
    model, cfg, embedder = _model_from_checkpoint(ck)
    records = _load_records(args.corpus)
    if not records:
        raise InputError(f"corpus {args.corpus} is empty")
    graphs = _select_split(featurize(records, embedder), cfg, args.split)
    preds = predict_graphs(model, graphs, cfg.train.threshold)
    labels = [g.label for g in graphs]
    metrics = compute_metrics([p.probability for p in preds], labels,
                              cfg.train.threshold)
    report = bucketed_accuracy([p.probability for p in preds], labels,
                               [g.node_count for g in graphs],
                               edges=cfg.buckets, threshold=cfg.train.threshold)
    out = _outdir(args.out)
    _write_json(out / "config.json", cfg.to_dict())
    _write_json(out / "metrics.json", {**metrics, "split": args.split,
                                       "graphs": len(graphs)})
    report.write_csv(out / "bucketed.csv")
    export_embeddings(preds, labels, out / "embeddings.tsv")
    print(f"evaluated {len(graphs)} graphs ({args.split} split): "
          f"accuracy {metrics['accuracy']:.4f}, precision {metrics['precision']:.4f}, "
          f"recall {metrics['recall']:.4f}, f1 {metrics['f1']:.4f}; outputs in {out}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    ck = load_checkpoint(args.checkpoint)
    model, cfg, embedder = _model_from_checkpoint(ck)
    path = Path(args.graph)
    if not path.exists():
        raise InputError(f"graph file not found: {path}")
    record = load_graph_json(path.read_text(), where=path.name)
    graph = to_labeled_graph(record, embedder)
    pred = predict_graphs(model, [graph], cfg.train.threshold)[0]
    print(json.dumps({"name": pred.name, "probability": pred.probability,
                      "predicted_label": pred.predicted_label}, sort_keys=True))
    return 0


def _record_dict_from_graph(g: LabeledGraph) -> dict:
    nodes = []
    for i in range(g.node_count):
        meta = g.node_meta[i] if g.node_meta is not None else {}
        nodes.append({
            "id": i,
            "code": meta.get("code") or "stmt ;",
            "kind": meta.get("kind") or "Statement",
            "line": meta.get("line"),
            "key": bool(meta.get("key", False)),
        })
    edges = [{"src": i, "dst": j, "etype": "AST"} for i, j in sorted(g.edges)]
    return {"name": g.name, "label": g.label, "nodes": nodes, "edges": edges}


def cmd_simplify(args: argparse.Namespace) -> int:
    if args.checkpoint:
        ck = load_checkpoint(args.checkpoint)
        model, cfg, embedder = _model_from_checkpoint(ck)
    else:
        cfg = _resolve_config(args)
        model = build_model(cfg)
        model.reset_parameters(cfg.seeds.model)
        embedder = None
    path = Path(args.graph)
    if not path.exists():
        raise InputError(f"graph file not found: {path}")
    record = load_graph_json(path.read_text(), where=path.name)
    if embedder is None:
        token_corpus = [tokenize(n.code) for n in record.nodes]
        embedder = fit_token_embeddings(token_corpus, dim=cfg.embedder.dim,
                                        mode=cfg.embedder.mode,
                                        config=cfg.embedder.skipgram_config(),
                                        seed=cfg.seeds.data)
    graph = to_labeled_graph(record, embedder)
    model.eval()
    with torch.no_grad():
        refined, trace = refine_graph(graph, model.sapool, cfg.refine, training=False)
    out = _outdir(args.out)
    _write_json(out / "simplified.json", _record_dict_from_graph(refined))
    _write_json(out / "trace.json", {
        "name": graph.name,
        "nodes_before": graph.node_count,
        "nodes_after": refined.node_count,
        **trace.to_dict(),
    })
    print(f"simplified {graph.name}: {graph.node_count} -> {refined.node_count} nodes "
          f"in {len(trace.steps)} passes; outputs in {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    d = Path(args.dir)
    metrics_path = d / "metrics.json"
    bucketed_path = d / "bucketed.csv"
    if not metrics_path.exists():
        raise InputError(f"no metrics.json in {d}")
    metrics = json.loads(metrics_path.read_text())
    print(f"evaluation report ({metrics.get('split', '?')} split, "
          f"{metrics.get('graphs', '?')} graphs)")
    for key in ("accuracy", "precision", "recall", "f1"):
        flag = ""
        if metrics.get("degenerate", {}).get(key):
            flag = "  [degenerate: zero denominator]"
        print(f"  {key:<9} {metrics[key]:.4f}{flag}")
    c = metrics.get("counts", {})
    print(f"  counts    tp={c.get('tp')} fp={c.get('fp')} tn={c.get('tn')} fn={c.get('fn')}")
    if bucketed_path.exists():
        print("  accuracy by node count:")
        with open(bucketed_path, newline="") as fh:
            for row in csv.DictReader(fh):
                acc = row["accuracy"]
                shown = f"{float(acc):.4f}" if acc else "-"
                print(f"    {row['range']:<12} n={row['count']:<6} acc={shown}")
    return 0


# --- parser ------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser, ablation: bool = False) -> None:
    p.add_argument("--config", help="JSON config file (defaults used when omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set train.lr=0.01")
    p.add_argument("--seed-data", type=int, help="seed for splits/synthesis/embedder")
    p.add_argument("--seed-model", type=int, help="seed for parameter initialization")
    p.add_argument("--seed-train", type=int, help="seed for shuffling and dropout")
    p.add_argument("--jobs", type=int,
                   help="torch intra-op thread count (output ordering is unaffected)")
    if ablation:
        p.add_argument("--ablation", action="append", choices=sorted(_ABLATIONS),
                       help="disable a component (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vulgraph",
        description="Graph-based vulnerability detector: importance pooling + "
                    "GCN/attention encoding over code graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output JSON-lines path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate a corpus and fit the token embedder")
    _add_config_flags(p)
    p.add_argument("--corpus", required=True, help="JSON-lines corpus path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a classifier on a corpus")
    _add_config_flags(p, ablation=True)
    p.add_argument("--corpus", required=True, help="JSON-lines corpus path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--jobs", type=int, help="torch intra-op thread count")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify a single graph JSON file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simplify", help="run the refinement loop on one graph")
    _add_config_flags(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--checkpoint", help="reuse a trained pooling stage")
    p.set_defaults(func=cmd_simplify)

    p = sub.add_parser("report", help="pretty-print an eval output directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"unexpected error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
