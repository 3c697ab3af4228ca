"""Command-line entry point: ``sigident <command> ...``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or validation
error. Relative output paths resolve against ``$SIGIDENT_OUT`` when set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autoencoder import PRESETS as AE_PRESETS
from .autoencoder import train_convae
from .bootstrap import HoldoutConfig, train_classifier
from .clustering import DbscanConfig, clusters_csv, read_clusters_csv
from .embedding import EmbeddingError, TsneConfig, read_embedding_csv
from .features import FeatureMatrix
from .io import atomic_write_text
from .nn import Network, TrainConfig, TrainingDiverged
from .pipeline import (
    CLASSIFIER_PRESETS, PRESET_NAMES, ExperimentConfig, StageError, apply_overrides, cluster_report, embed,
    extract, plot_embedding, preset, run_all, scoring_extras,
)
from .synth import MODULATIONS, DatasetConfig, build_dataset, read_dataset, write_dataset

OUT_ENV = "SIGIDENT_OUT"
log = logging.getLogger("sigident")


class UsageError(Exception):
    """Bad arguments or invalid inputs (exit code 2)."""


def out_path(p) -> Path:
    p = Path(p)
    base = os.environ.get(OUT_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def in_path(p) -> Path:
    p = Path(p)
    if not p.is_file():
        base = os.environ.get(OUT_ENV)
        alt = Path(base) / p if base and not p.is_absolute() else None
        if alt is not None and alt.is_file():
            return alt
        raise UsageError(f"input file not found: {p}")
    return p


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _eps(text):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("eps must be a positive number or 'auto'") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("eps must be > 0")
    return value


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                       early_stop_patience=args.patience, validation_fraction=args.val_frac,
                       seed=args.seed, precision=args.precision, optimizer=args.optimizer)


def _history_path(args):
    return out_path(args.history) if args.history else out_path(str(args.out) + ".history.csv")


# ---------------------------------------------------------------- commands

def cmd_dataset(args):
    cfg = DatasetConfig.from_dict(json.loads(in_path(args.config).read_text())) if args.config else DatasetConfig()
    changes = {}
    if args.classes:
        changes["classes"] = tuple(_csv_list(args.classes))
    if args.snr:
        changes["snr_grid"] = tuple(int(s) for s in _csv_list(args.snr))
    if args.frames_per_combo is not None:
        changes["frames_per_combo"] = args.frames_per_combo
    cfg = replace(cfg, **changes)
    ds = build_dataset(cfg, seed=args.seed)
    path = out_path(args.out)
    write_dataset(ds, path)
    per_class = {}
    for (name, snr), n in sorted(ds.counts().items(), key=lambda kv: (MODULATIONS.index(kv[0][0]), kv[0][1])):
        per_class.setdefault(name, []).append(f"{snr:+d}:{n}")
    for name, cells in per_class.items():
        print(f"{name:7s} {' '.join(cells)}")
    print(f"wrote {len(ds)} frames ({len(per_class)} classes) to {path}")


def cmd_train_ae(args):
    ds = read_dataset(in_path(args.dataset))
    model, hist = train_convae(ds, AE_PRESETS[args.preset], _train_config(args))
    path = out_path(args.out)
    model.save(path)
    atomic_write_text(_history_path(args), hist.to_csv())
    print(f"best validation MSE {hist.best_val_loss:.6f} (baseline {hist.baseline_val_loss:.6f}) "
          f"at epoch {hist.best_epoch}; wrote {path}")


def cmd_train_clf(args):
    ds = read_dataset(in_path(args.dataset))
    holdout = HoldoutConfig(tuple(_csv_list(args.holdout)))
    model, hist = train_classifier(ds, holdout, CLASSIFIER_PRESETS[args.network], _train_config(args))
    path = out_path(args.out)
    model.save(path)
    atomic_write_text(_history_path(args), hist.to_csv())
    print(f"trained on {len(model.meta['train_classes'])} classes: {','.join(model.meta['train_classes'])}")
    print(f"best validation loss {hist.best_val_loss:.6f} at epoch {hist.best_epoch}; wrote {path}")


def cmd_extract(args):
    model = Network.load(in_path(args.checkpoint))
    ds = read_dataset(in_path(args.dataset))
    if args.min_snr is not None:
        ds = ds.filter(min_snr=args.min_snr)
    try:
        fm = extract(model, ds, role=args.role, conv_maps=args.conv_maps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    path = out_path(args.out)
    fm.save(path)
    print(f"wrote {fm.values.shape[0]} x {fm.values.shape[1]} features to {path}")


def cmd_embed(args):
    fm = FeatureMatrix.load(in_path(args.features))
    tcfg = TsneConfig(perplexity=args.perplexity, iterations=args.iterations, seed=args.seed,
                      learning_rate=args.learning_rate, max_points=args.max_points)
    if args.method == "tsne" and not 1.0 < args.perplexity < (len(fm) - 1) / 3.0:
        raise UsageError(f"perplexity {args.perplexity} infeasible for N={len(fm)}")
    emb = embed(fm, args.method, tcfg)
    path = out_path(args.out)
    atomic_write_text(path, emb.to_csv())
    if args.method == "tsne":
        kl_path = out_path(args.kl_out) if args.kl_out else path.with_name(path.stem + ".kl.csv")
        atomic_write_text(kl_path, emb.kl_csv())
        print(f"final KL {emb.kl_history[-1][1]:.5f}")
    print(f"wrote {len(emb.points)} points to {path}")


def _load_embedding(path):
    emb = read_embedding_csv(in_path(path))
    if emb.labels is None and len(emb.points):
        raise UsageError(f"{path}: embedding has no class column to score against")
    return emb


def _write_report(args, clusters, emb, report):
    if len(emb.points):
        report.update(scoring_extras(clusters, emb.labels))
    report["n_points"] = len(emb.points)
    path = out_path(args.report)
    atomic_write_text(path, json.dumps(report, indent=2, sort_keys=True) + "\n")
    if report.get("status") == "all_noise":
        print("warning: every point is noise; purity undefined", file=sys.stderr)
    else:
        eps = "" if report.get("eps") is None else f" eps {report['eps']:.5g}"
        print(f"clusters {report['discovered_cluster_count']} purity {report['purity']:.4f} "
              f"ARI {report['ari']:.4f} noise {report['noise_fraction']:.4f}{eps}")
    print(f"wrote report to {path}")


def _cluster(emb, eps, min_pts):
    if len(emb.points) == 0:
        raise UsageError("embedding is empty")
    if eps == "auto" and len(emb.points) <= min_pts:
        raise UsageError(f"eps=auto needs more than min_pts={min_pts} points")
    return cluster_report(emb.points, emb.labels, DbscanConfig(eps, min_pts))


def cmd_cluster(args):
    emb = _load_embedding(args.embedding)
    clusters, report = _cluster(emb, args.eps, args.min_pts)
    path = out_path(args.out)
    atomic_write_text(path, clusters_csv(emb.ids, clusters))
    print(f"wrote cluster assignments to {path}")
    if args.report:
        _write_report(args, clusters, emb, report)


def cmd_eval(args):
    emb = _load_embedding(args.embedding)
    if args.clusters:
        ids, clusters = read_clusters_csv(in_path(args.clusters))
        if not np.array_equal(ids, emb.ids):
            raise UsageError("cluster ids do not match embedding ids")
        from .clustering import map_clusters_to_classes

        rep = map_clusters_to_classes(clusters, emb.labels)
        report = rep.to_dict()
        report["status"] = "ok" if rep.purity_defined else "all_noise"
    else:
        clusters, report = _cluster(emb, args.eps, args.min_pts)
    _write_report(args, clusters, emb, report)


def cmd_plot(args):
    emb = read_embedding_csv(in_path(args.embedding))
    clusters, mapping = None, None
    if args.clusters:
        ids, clusters = read_clusters_csv(in_path(args.clusters))
        if not np.array_equal(ids, emb.ids):
            raise UsageError("cluster ids do not match embedding ids")
        if emb.labels is not None and len(clusters):
            from .clustering import map_clusters_to_classes

            mapping = map_clusters_to_classes(clusters, emb.labels).mapping
    path = out_path(args.out)
    atomic_write_text(path, plot_embedding(emb, clusters, args.title, mapping))
    print(f"wrote {path}")


def cmd_run_all(args):
    if args.config:
        d = json.loads(in_path(args.config).read_text())
        if args.seed is not None:
            d["seed"] = args.seed
        d = apply_overrides(d, args.set)
        cfg = ExperimentConfig.from_dict(d)
    else:
        base = preset(args.preset or "bootstrap-embed", seed=0 if args.seed is None else args.seed)
        cfg = ExperimentConfig.from_dict(apply_overrides(base.to_dict(), args.set))
    out_dir = args.out_dir or cfg.output_dir or os.environ.get(OUT_ENV) or f"sigident-{cfg.name}"
    manifest = run_all(cfg, out_dir)
    for stage, secs in manifest.timings.items():
        print(f"{stage:8s} {secs:8.2f} s")
    print(f"{len(manifest.artifacts)} artifacts; manifest at {Path(out_dir) / 'manifest.json'}")


# ---------------------------------------------------------------- parser

def _add_train_args(p, default_epochs):
    p.add_argument("--dataset", required=True, help="RMLD dataset file")
    p.add_argument("--out", required=True, help="RMLW checkpoint to write")
    p.add_argument("--history", help="loss-history CSV (default: <out>.history.csv)")
    p.add_argument("--epochs", type=int, default=default_epochs)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--precision", type=int, choices=(32, 64), default=32)
    p.add_argument("--optimizer", choices=("adam", "rmsprop"), default="adam")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sigident", description="Radio signal identification experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="synthesize an RMLD dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON dataset config")
    p.add_argument("--classes", help="comma-separated class names")
    p.add_argument("--snr", help="comma-separated SNR values in dB")
    p.add_argument("--frames-per-combo", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train-ae", help="train a convolutional autoencoder")
    _add_train_args(p, 30)
    p.add_argument("--preset", choices=sorted(AE_PRESETS), default="convae1")
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("train-clf", help="train the supervised bootstrap classifier")
    _add_train_args(p, 30)
    p.add_argument("--holdout", default="", help="comma-separated classes to exclude, e.g. BPSK,QAM16")
    p.add_argument("--network", choices=sorted(CLASSIFIER_PRESETS), default="desk")
    p.set_defaults(func=cmd_train_clf)

    p = sub.add_parser("extract", help="write an RMLF feature matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--role", choices=("convae", "bootstrap"), help="expected checkpoint role")
    p.add_argument("--conv-maps", action="store_true", help="bootstrap: flattened second-conv maps")
    p.add_argument("--min-snr", type=int)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("embed", help="2-D embedding of a feature matrix")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="id,x,y,class,snr CSV")
    p.add_argument("--method", choices=("tsne", "pca"), default="tsne")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--learning-rate", type=float, default=200.0)
    p.add_argument("--max-points", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kl-out", help="KL history CSV (default: <out stem>.kl.csv)")
    p.set_defaults(func=cmd_embed)

    for name, func in (("cluster", cmd_cluster), ("eval", cmd_eval)):
        p = sub.add_parser(name, help="DBSCAN clustering" if name == "cluster" else "score clusters against classes")
        p.add_argument("--embedding", required=True)
        p.add_argument("--eps", type=_eps, default="auto")
        p.add_argument("--min-pts", type=int, default=5)
        if name == "cluster":
            p.add_argument("--out", required=True, help="id,cluster CSV")
            p.add_argument("--report", help="also write the JSON report")
        else:
            p.add_argument("--clusters", help="existing id,cluster CSV (otherwise cluster now)")
            p.add_argument("--report", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("plot", help="SVG scatter of an embedding")
    p.add_argument("--embedding", required=True)
    p.add_argument("--clusters", help="color by cluster instead of class")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("run-all", help="run every stage of an experiment")
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--config", help="ExperimentConfig JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. train.max_epochs=5")
    p.set_defaults(func=cmd_run_all)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run-all" and args.preset and args.config:
        print("error: give either --preset or --config", file=sys.stderr)
        return 2
    if getattr(args, "min_pts", 1) < 1:
        print("error: --min-pts must be >= 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StageError, TrainingDiverged, EmbeddingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
