"""Command-line entry point: ``scrl <command> [flags]``.

Commands
    build-knn           write the cosine kNN feature graph in edges.txt format
    make-splits         draw a seeded labels-per-class train/val/test split
    train               train one model (or a seed sweep) into a run directory
    evaluate            test ACC / macro-F1 of a checkpoint as JSON
    export-embeddings   TSV of node index, label and consensus representation

Exit codes: 0 success, 1 invalid input (data, flags, checkpoint), 2 numerical
abort during training.

A run directory holds ``manifest.json`` (written before training starts),
``metrics.jsonl`` (one record per epoch, byte-reproducible),
``timings.jsonl`` (wall-clock per epoch), ``summary.json`` and
``model.ckpt``. Passing a manifest back through ``--config`` reproduces the
run; explicit flags override values from the config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import NumericalError, ScrlError
from .graph import (build_knn_graph, load_dataset, make_splits, read_labels, read_meta,
                    write_edges)
from .model import ABLATION_MODES
from .training import (TrainConfig, TrainingDiverged, build_model, embed, evaluate,
                       prepare_inputs, train)

log = logging.getLogger("scrl")

CHECKPOINT_NAME = "model.ckpt"


# --------------------------------------------------------------------------- #
# Helpers
# --------------------------------------------------------------------------- #


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_config_file(path) -> tuple[dict, str | None]:
    """Return ``(config dict, dataset path or None)`` from a config or run manifest."""
    with open(path) as fh:
        obj = json.load(fh)
    if "config" in obj and isinstance(obj["config"], dict):
        return obj["config"], obj.get("dataset")
    return obj, None


def resolve_config(args) -> tuple[TrainConfig, str | None]:
    """Config file values overridden by whichever flags were given explicitly."""
    values, data = {}, None
    if getattr(args, "config", None):
        values, data = _read_config_file(args.config)
    flags = {name: getattr(args, name) for name in CONFIG_FLAGS if hasattr(args, name)}
    values.update(flags)
    cfg = TrainConfig.from_dict(values)
    return cfg, getattr(args, "data", None) or data


def load_for_config(data_dir, cfg: TrainConfig):
    """Load a dataset and, when ``cfg.lpc`` is set, replace its splits with drawn ones."""
    ds = load_dataset(data_dir)
    if cfg.lpc is not None:
        ds = ds.with_splits(make_splits(ds.labels, cfg.lpc, val_size=cfg.val_size,
                                        test_size=cfg.test_size, seed=cfg.split_seed,
                                        num_classes=ds.num_classes,
                                        exclude=read_meta(data_dir).get("unlabeled")))
    return ds


def _checkpoint_header(cfg: TrainConfig, ds) -> dict:
    return {"config": cfg.to_dict(), "num_nodes": ds.num_nodes,
            "num_features": ds.num_features, "num_classes": ds.num_classes}


def load_model(checkpoint, data_dir):
    """Rebuild a trained model and its dataset; checks d and M against the checkpoint."""
    header, params = load_checkpoint(checkpoint)
    try:
        cfg = TrainConfig.from_dict(header["config"])
        d, m = int(header["num_features"]), int(header["num_classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ScrlError(f"checkpoint header is incomplete: {exc}") from None
    ds = load_for_config(data_dir, cfg)
    if ds.num_features != d:
        raise ScrlError(f"checkpoint expects d={d} features, dataset has {ds.num_features}")
    if ds.num_classes != m:
        raise ScrlError(f"checkpoint expects M={m} classes, dataset has {ds.num_classes}")
    model = build_model(cfg, d, m)
    model.load_state_dict(params)
    return model, ds, cfg


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #


def cmd_build_knn(args) -> int:
    data = Path(args.data)
    features = np.loadtxt(data / "features.txt", dtype=np.float64, ndmin=2, comments="#")
    g = build_knn_graph(features, args.k)
    out = Path(args.out) if args.out else data / f"knn_k{args.k}.txt"
    write_edges(out, g.adjacency, header=f"knn k={args.k}")
    print(json.dumps({"out": str(out), "k": args.k, "edges": g.adjacency.nnz // 2}))
    return 0


def cmd_make_splits(args) -> int:
    data = Path(args.data)
    meta = read_meta(data)
    m = meta.get("num_classes")
    labels = read_labels(data / "labels.txt", None if m is None else int(m))
    splits = make_splits(labels, args.lpc, val_size=args.val_size, test_size=args.test_size,
                         seed=args.seed, num_classes=m, exclude=meta.get("unlabeled"))
    out = Path(args.out) if args.out else data / "splits.json"
    with open(out, "w") as fh:
        json.dump(splits, fh)
        fh.write("\n")
    print(json.dumps({"out": str(out), **{k: len(v) for k, v in splits.items()}}))
    return 0


def run_training(cfg: TrainConfig, data_dir: str, out_dir: Path) -> dict:
    """Train one model into ``out_dir``; returns the summary dict."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.to_dict(),
        "dataset": str(Path(data_dir).resolve()),
        "version": version_string(),
        "started": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "out": str(out_dir.resolve()),
        "deterministic": os.environ.get("SCRL_DETERMINISTIC", "1") != "0",
    }
    _write_json(out_dir / "manifest.json", manifest)

    ds = load_for_config(data_dir, cfg)
    with open(out_dir / "metrics.jsonl", "w") as metrics_fh, \
            open(out_dir / "timings.jsonl", "w") as timings_fh:

        def on_epoch(m):
            metrics_fh.write(json.dumps(m.to_record()) + "\n")
            timings_fh.write(json.dumps({"epoch": m.epoch, "wall_ms": round(m.wall_ms, 3)})
                             + "\n")
            if m.val_acc is not None and (m.epoch + 1) % 20 == 0:
                log.info("epoch %d loss %.4f val %.4f test %.4f", m.epoch, m.loss,
                         m.val_acc, m.test_acc or float("nan"))

        try:
            result = train(ds, cfg, on_epoch=on_epoch)
        except TrainingDiverged as exc:
            _write_json(out_dir / "diverged.json", {
                "epoch": exc.epoch, "error": str(exc),
                "last_metrics": [m.to_record() for m in exc.history[-5:]],
            })
            raise

    save_checkpoint(out_dir / CHECKPOINT_NAME, _checkpoint_header(cfg, ds),
                    [(name, p.value) for name, p in result.model.named_parameters()])
    test_acc, test_f1 = evaluate(result.model, ds, ds.test, result.inputs)
    final = result.metrics[-1]
    selected = result.metrics[result.selected_epoch]
    summary = {
        "mode": cfg.ablation,
        "seed": cfg.seed,
        "test_acc": test_acc,
        "test_f1": test_f1,
        "selected_epoch": result.selected_epoch,
        "best_val_acc": selected.val_acc,
        "final": {"epoch": final.epoch, "test_acc": final.test_acc,
                  "test_f1": final.test_f1, "val_acc": final.val_acc},
        "num_train": int(ds.train.size),
        "num_val": int(ds.val.size),
        "num_test": int(ds.test.size),
    }
    _write_json(out_dir / "summary.json", summary)
    return summary


def _sweep_member(args: tuple) -> dict:
    cfg_dict, data_dir, out_dir = args
    return run_training(TrainConfig.from_dict(cfg_dict), data_dir, Path(out_dir))


def cmd_train(args) -> int:
    cfg, data_dir = resolve_config(args)
    if data_dir is None:
        raise ScrlError("--data is required (or a manifest passed via --config)")
    cfg.validate()
    out = Path(args.out)
    if not args.sweep_seeds:
        summary = run_training(cfg, data_dir, out)
        print(json.dumps({"test_acc": summary["test_acc"], "test_f1": summary["test_f1"],
                          "mode": summary["mode"]}))
        return 0

    seeds = [cfg.seed + i for i in range(args.sweep_seeds)]
    jobs = [({**cfg.to_dict(), "seed": s}, data_dir, str(out / f"seed-{s}")) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_sweep_member, jobs))
    else:
        summaries = [_sweep_member(j) for j in jobs]
    accs = np.array([s["test_acc"] for s in summaries])
    f1s = np.array([s["test_f1"] for s in summaries])
    aggregate = {
        "mode": cfg.ablation,
        "seeds": seeds,
        "test_acc": accs.tolist(),
        "test_f1": f1s.tolist(),
        "test_acc_mean": float(accs.mean()),
        "test_acc_std": float(accs.std()),
        "test_f1_mean": float(f1s.mean()),
        "test_f1_std": float(f1s.std()),
    }
    _write_json(out / "aggregate.json", aggregate)
    print(json.dumps({k: aggregate[k] for k in
                      ("mode", "test_acc_mean", "test_acc_std", "test_f1_mean", "test_f1_std")}))
    return 0


def cmd_evaluate(args) -> int:
    model, ds, cfg = load_model(args.checkpoint, args.data)
    inputs = prepare_inputs(ds, cfg)
    acc, f1 = evaluate(model, ds, ds.test, inputs)
    print(json.dumps({"test_acc": acc, "test_f1": f1}))
    return 0


def cmd_export_embeddings(args) -> int:
    model, ds, cfg = load_model(args.checkpoint, args.data)
    rep = embed(model, prepare_inputs(ds, cfg))
    with open(args.out, "w") as fh:
        for i, (label, row) in enumerate(zip(ds.labels, rep)):
            fh.write("\t".join([str(i), str(int(label))] + [repr(float(v)) for v in row])
                     + "\n")
    print(json.dumps({"out": str(args.out), "rows": rep.shape[0], "cols": 2 + rep.shape[1]}))
    return 0


# --------------------------------------------------------------------------- #
# Argument parsing
# --------------------------------------------------------------------------- #

# flag destination -> TrainConfig field (identical names)
CONFIG_FLAGS = ("k", "tau", "prototypes", "sinkhorn_iters", "epsilon", "lr", "weight_decay",
                "dropout", "epochs", "hidden", "embed", "ablation", "self_loops", "lpc",
                "seed", "split_seed", "val_size", "test_size", "eval_every", "select",
                "normalize")


def _model_flags() -> argparse.ArgumentParser:
    """Training hyper-parameters. Unset flags fall through to --config, then defaults."""
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    g = p.add_argument_group("model and optimisation")
    g.add_argument("--seed", type=int, default=S, help="model seed (default 0)")
    g.add_argument("--k", type=int, default=S, help="neighbours in the feature graph (7)")
    g.add_argument("--tau", type=float, default=S, help="softmax temperature (0.1)")
    g.add_argument("--prototypes", type=int, default=S, help="number of prototypes (3*M)")
    g.add_argument("--sinkhorn-iters", dest="sinkhorn_iters", type=int, default=S,
                   help="Sinkhorn iterations (5)")
    g.add_argument("--epsilon", type=float, default=S, help="Sinkhorn regularizer (0.05)")
    g.add_argument("--lr", type=float, default=S, help="Adam learning rate (3e-4)")
    g.add_argument("--weight-decay", dest="weight_decay", type=float, default=S,
                   help="L2 weight decay (5e-4)")
    g.add_argument("--dropout", type=float, default=S, help="dropout rate (0.5)")
    g.add_argument("--epochs", type=int, default=S, help="training epochs (200)")
    g.add_argument("--hidden", type=int, default=S, help="hidden width (256)")
    g.add_argument("--embed", type=int, default=S, help="embedding width U (128)")
    g.add_argument("--ablation", choices=ABLATION_MODES, default=S, help="mode (full)")
    g.add_argument("--no-self-loops", dest="self_loops", action="store_false", default=S,
                   help="propagate with D^-1/2 A D^-1/2 instead of adding I first")
    g.add_argument("--normalize", action="store_true", default=S,
                   help="L2-normalize embeddings and prototypes before scoring")
    g.add_argument("--select", choices=("best-val", "final"), default=S,
                   help="model selection policy (best-val)")
    g.add_argument("--eval-every", dest="eval_every", type=int, default=S)
    g = p.add_argument_group("splits")
    g.add_argument("--lpc", type=int, default=S,
                   help="draw labels-per-class splits instead of reading splits.json")
    g.add_argument("--split-seed", dest="split_seed", type=int, default=S,
                   help="seed for --lpc splits (0)")
    g.add_argument("--val-size", dest="val_size", type=int, default=S)
    g.add_argument("--test-size", dest="test_size", type=int, default=S)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scrl", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"scrl {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-knn", help="write the cosine kNN feature graph")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--k", type=int, default=TrainConfig.k)
    p.add_argument("--out", help="output path (default <data>/knn_k<k>.txt)")
    p.set_defaults(func=cmd_build_knn)

    p = sub.add_parser("make-splits", help="draw a labels-per-class split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--lpc", type=int, required=True, help="labeled nodes per class")
    p.add_argument("--val-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (default <data>/splits.json)")
    p.set_defaults(func=cmd_make_splits)

    p = sub.add_parser("train", parents=[_model_flags()], help="train into a run directory")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="JSON config or a previous run's manifest.json")
    p.add_argument("--sweep-seeds", dest="sweep_seeds", type=int, default=0, metavar="N",
                   help="train seeds seed..seed+N-1 into <out>/seed-<s>/ and aggregate")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("evaluate", cmd_evaluate, "test metrics of a checkpoint"),
                              ("export-embeddings", cmd_export_embeddings,
                               "write consensus representations as TSV")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="dataset directory")
        if name == "export-embeddings":
            p.add_argument("--out", required=True, help="output TSV path")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"scrl: numerical abort: {exc}", file=sys.stderr)
        return 2
    except (ScrlError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"scrl: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
