"""Command-line entry point: ``pairclust <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .harness import CsvRowWriter, GridSpec, run_grid, run_transfer, DEFAULT_RECALLS
from .metrics import acc, nmi
from .spn import SpnModel, eval_pair_recall, nway_test, train_spn
from .trainer import train_clusternet

log = logging.getLogger("pairclust")


def _dump(payload, out):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _seed(args, doc):
    return int(args.seed if args.seed is not None else doc.get("seed", 0))


def cmd_train_cluster(args):
    doc, text = C.read_config(args.config)
    seed = _seed(args, doc)
    train, test = C.build_datasets(doc.get("dataset"))
    cfg = C.build_cluster_config(doc, train, seed)
    result = train_clusternet(cfg, train, test)
    include = bool((doc.get("output") or {}).get("include_assignments", False))
    _dump({"command": "train-cluster", "config": doc, "config_text": text, "seed": seed,
           "dataset": train.name, "num_clusters": cfg.num_clusters,
           "result": result.to_dict(include_assignments=include)}, args.out)


def cmd_diagnose_grid(args):
    doc, _ = C.read_config(args.config)
    seed = _seed(args, doc)
    train, test = C.build_datasets(doc.get("dataset"))
    grid = doc.get("grid") or {}
    template = C.build_cluster_config(doc, train, seed)
    spec = GridSpec(
        dataset=train, template=template, test_set=test,
        recall_similar=tuple(grid.get("recall_similar", DEFAULT_RECALLS)),
        recall_dissimilar=tuple(grid.get("recall_dissimilar", DEFAULT_RECALLS)),
        densities=tuple(grid.get("densities", (1.0, 0.1))),
        cluster_counts=tuple(grid.get("cluster_counts", (10, 100))),
        base_seed=seed, record_all_restarts=bool(grid.get("record_all_restarts", True)))
    with CsvRowWriter(args.out) as writer:
        run_grid(spec, writer.write, threads=args.threads)


def cmd_train_spn(args):
    doc, _ = C.read_config(args.config)
    seed = _seed(args, doc)
    ds_doc = doc.get("dataset")
    source_classes = doc.get("source_classes")
    train, _ = C.build_datasets(ds_doc, classes=source_classes)
    spn_cfg = C.build_spn_config(doc.get("spn"), train.sample_shape, seed)
    model = train_spn(train, spn_cfg)
    eval_classes = doc.get("target_classes", source_classes)
    model.save(args.out, {"eval_dataset": ds_doc, "eval_classes": eval_classes, "seed": seed})
    summary = {"command": "train-spn", "checkpoint": str(args.out), "seed": seed,
               "epoch_losses": model.meta["epoch_losses"]}
    if doc.get("target_classes") is not None:
        target, _ = C.build_datasets(ds_doc, classes=doc["target_classes"])
        rs, rd = eval_pair_recall(model, target, int(doc.get("recall_batches", 20)),
                                  int(doc.get("recall_batch_size", 256)), seed=seed)
        summary.update(target_recall_similar=rs, target_recall_dissimilar=rd)
    _dump(summary, None)


def cmd_transfer(args):
    doc, text = C.read_config(args.config)
    seed = _seed(args, doc)
    train, test = C.build_datasets(doc.get("dataset"))
    src, tgt = doc["source_classes"], doc["target_classes"]
    spn_cfg = C.build_spn_config(doc.get("spn"), train.sample_shape, seed)
    cluster_doc = doc.get("cluster") or {}
    cluster_doc.setdefault("network", {"kind": "mlp", "hidden": [256]})
    cluster_doc["network"] = {**cluster_doc["network"], "clusters":
                              cluster_doc["network"].get("clusters", len(tgt))}
    cfg = C.build_cluster_config(cluster_doc, train, seed, oracle=C.build_oracle(None))
    report = run_transfer(src, tgt, train, spn_cfg, cfg, test,
                          recall_batches=int(doc.get("recall_batches", 20)))
    _dump({"command": "transfer", "config": doc, "config_text": text, "seed": seed,
           "report": report.to_dict()}, args.out)


def cmd_nway(args):
    model = SpnModel.load(args.checkpoint)
    if args.config:
        doc, _ = C.read_config(args.config)
        ds_doc, classes = doc.get("dataset"), doc.get("target_classes")
    else:
        ds_doc, classes = model.meta.get("eval_dataset"), model.meta.get("eval_classes")
    data, _ = C.build_datasets(ds_doc, classes=classes)
    seed = int(args.seed or 0)
    accuracy = nway_test(model, data, args.n, args.trials, seed)
    _dump({"command": "nway", "n": args.n, "trials": args.trials, "seed": seed,
           "dataset": data.name, "accuracy": accuracy, "chance": 1.0 / args.n}, args.out)


def read_partition(path) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    return np.array([int(ln) for ln in lines if ln], dtype=np.int64)


def cmd_eval(args):
    pred, truth = read_partition(args.pred), read_partition(args.truth)
    _dump({"command": "eval", "n": int(len(truth)), "acc": acc(pred, truth),
           "nmi": nmi(pred, truth)}, args.out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")
    common.add_argument("--threads", type=int, default=1, help="concurrent grid cells")
    common.add_argument("--verbose", "-v", action="count", default=0)

    parser = argparse.ArgumentParser(prog="pairclust",
                                     description="Clustering from pairwise similarity constraints.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diagnose-grid", parents=[common], help="recall x density x M grid to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose_grid)

    p = sub.add_parser("train-cluster", parents=[common], help="train a clustering network")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_cluster)

    p = sub.add_parser("train-spn", parents=[common], help="train a similarity prediction network")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_spn)

    p = sub.add_parser("transfer", parents=[common], help="SPN on source classes -> cluster target")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("nway", parents=[common], help="N-way test of an SPN checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--config", help="dataset config (default: the one stored in the checkpoint)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_nway)

    p = sub.add_parser("eval", parents=[common], help="ACC/NMI of stored partitions")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
