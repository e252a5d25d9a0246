"""Command line entry point: preprocess, train, eval, score, stats."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import datatools
from .autodiff import CheckpointError
from .config import build_configs, echo, parse_config
from .evaluate import PROTOCOLS, average_reports, run_protocol, score_groups
from .extract import DegenerateCandidateError, extract
from .graph import GraphFormatError, Vocab, VocabularyError, load_graph, read_triplet_file
from .model import EMPTY_SCORE, Model
from .trainer import ConfigError, _fmt, fit, seeds_for_runs

EXIT_MISSING, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 3, 4, 5, 6

# CLI flag -> config key
FLAG_KEYS = {
    "hop": "hop",
    "iters": "iterations",
    "dim": "dim",
    "lr": "lr",
    "margin": "margin",
    "batch": "batch_size",
    "neg": "neg_per_pos",
    "seed": "seed",
    "workers": "workers",
    "epochs": "epochs",
    "patience": "patience",
    "runs": "runs",
    "edge_dropout": "edge_dropout",
    "data": "data",
    "checkpoint": "checkpoint",
    "log": "log",
}


def _run_path(path: str, seed: int, runs: int) -> Path:
    p = Path(path)
    return p if runs == 1 else p.with_name(f"{p.stem}.seed{seed}{p.suffix}")


def cmd_preprocess(args) -> int:
    report = datatools.preprocess(
        args.dataset_dir, args.out_dir, h=args.hop, seed=args.seed, n_neg=args.neg,
        test_dir=args.test_dir,
    )
    for k, v in report.items():
        print(f"{k}={v}")
    return 0


def cmd_train(args) -> int:
    values: dict = parse_config(args.config) if args.config else {}
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if args.require_subgraph:
        values["require_subgraph"] = True
    if args.undirected:
        values["undirected"] = True
    if args.no_edge_update:
        values["edge_update"] = False
    if args.no_attention:
        values["attention"] = "none"
    if args.grail_attention:
        values["attention"] = "relation"
    if args.no_relation_in_edge_update:
        values["edge_update_relation"] = False
    values.setdefault("workers", os.cpu_count() or 1)
    model_cfg, train_cfg, paths = build_configs(values)
    missing = [k for k in ("data", "checkpoint") if k not in paths]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join(missing)}")
    data = Path(paths["data"])
    valid_file = data / "valid.txt"
    graph = datatools.load_dataset_graph(data)
    valid = graph.encode(read_triplet_file(valid_file), f"{valid_file}: ") if valid_file.exists() else np.zeros((0, 3), dtype=np.int64)
    header = echo(model_cfg, train_cfg, paths)
    for seed in seeds_for_runs(train_cfg.seed, train_cfg.runs):
        run_cfg = type(train_cfg)(**{**train_cfg.to_dict(), "seed": seed})
        ckpt = _run_path(paths["checkpoint"], seed, train_cfg.runs)
        log_path = _run_path(paths["log"], seed, train_cfg.runs) if "log" in paths else Path(f"{ckpt}.log")
        with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_fmt({"kind": "config", **{k: v for k, v in (line.split("=", 1) for line in header.splitlines())}, "run_seed": seed}) + "\n")
            result = fit(graph, valid, model_cfg, run_cfg, log_file=fh, checkpoint=ckpt)
        print(f"seed={seed} checkpoint={ckpt} log={log_path} best_epoch={result.best_epoch} valid_auc_pr={result.best_valid!r}")
    return 0


def _load_test(model: Model, test_dir: Path):
    if model.relation_names is None:
        raise CheckpointError("checkpoint carries no relation vocabulary")
    rels = Vocab(model.relation_names)
    graph = load_graph(test_dir / "train.txt", vocabs=(Vocab(), rels), entity_files=[test_dir / "test.txt"])
    queries = graph.encode(read_triplet_file(test_dir / "test.txt"), f"{test_dir / 'test.txt'}: ")
    return graph, queries


def cmd_eval(args) -> int:
    test_dir = Path(args.test_dir)
    reports = []
    out_lines = []
    for i, path in enumerate(args.checkpoints):
        model = Model.load(path)
        graph, queries = _load_test(model, test_dir)
        if args.negatives:
            groups = datatools.read_negatives(args.negatives, graph)
            positives = [tuple(int(x) for x in q) for q in queries]
            if len(groups) != len(positives):
                raise ConfigError("negative file groups do not match the test queries")
            report = score_groups(model, graph, positives, groups, args.protocol, args.k, args.undirected, args.workers)
        else:
            report = run_protocol(
                graph, queries, model, args.protocol, require_subgraph=args.require_subgraph,
                n_neg=args.neg, k=args.k, seed=args.seed, undirected=args.undirected,
                workers=args.workers,
            )
        reports.append(report)
        text = report.summary({"checkpoint": path, "test_dir": test_dir, "seed": args.seed})
        out_lines.append(text)
        print(text, end="")
        if args.dump:
            dump = Path(args.dump) if len(args.checkpoints) == 1 else Path(args.dump).with_suffix(f".{i}.tsv")
            report.write_tsv(dump, graph)
    if len(reports) > 1:
        avg = average_reports(reports)
        text = "".join(f"mean_{k}={v!r}\n" for k, v in avg.items())
        out_lines.append(text)
        print(text, end="")
    if args.report:
        Path(args.report).write_text("\n".join(out_lines), encoding="utf-8")
    return 0


def _parse_triplet(text: list[str]) -> tuple[str, str, str]:
    parts = text[0].split("\t") if len(text) == 1 else text
    if len(parts) != 3:
        raise GraphFormatError("triplet must be 'head<TAB>relation<TAB>tail' or three arguments")
    return parts[0], parts[1], parts[2]


def cmd_score(args) -> int:
    model = Model.load(args.checkpoint)
    rels = Vocab(model.relation_names or [])
    h, r, t = _parse_triplet(args.triplet)
    graph = load_graph(args.graph, vocabs=(Vocab(), rels))
    ev = graph.entity_vocab
    sub = None
    if h in ev and t in ev:
        try:
            sub = extract(graph, ev.id(h), rels.id(r), ev.id(t), model.cfg.hop, args.undirected)
        except DegenerateCandidateError:
            sub = None
    else:
        rels.id(r)  # unknown relations are still an error
    if sub is None:
        print("NOSUBGRAPH")
        print(f"score={EMPTY_SCORE!r}  # empty-subgraph sentinel")
        return 0
    print(f"score={model.score(sub)!r}")
    print(sub.describe())
    print(f"nodes={sub.num_nodes} edges={sub.num_edges} directed={sub.directed}")
    return 0


def cmd_stats(args) -> int:
    d = Path(args.dataset_dir)
    graph = datatools.load_dataset_graph(d, ("valid.txt", "test.txt"))
    split = d / args.split
    if split.exists() and split.name != "train.txt":
        queries, unknown = datatools.encode_known(graph, read_triplet_file(split))
    else:
        queries, unknown = graph.triplets(), 0
    stats = datatools.dataset_stats(graph, queries, args.hop)
    stats["unknown_names"] = unknown
    print(f"split={split.name}")
    for k, v in stats.items():
        print(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relpred", description="Inductive relation prediction on enclosing subgraphs.")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("preprocess", help="filter empty-subgraph triplets and build negatives")
    pp.add_argument("dataset_dir")
    pp.add_argument("out_dir")
    pp.add_argument("--test-dir", default=None, help="inductive test directory (train.txt + test.txt)")
    pp.add_argument("--hop", type=int, default=3)
    pp.add_argument("--seed", type=int, default=0)
    pp.add_argument("--neg", type=int, default=1, help="negatives per positive")
    pp.set_defaults(func=cmd_preprocess)

    tp = sub.add_parser("train", help="train one model per seed")
    tp.add_argument("--config", help="key=value config file; flags override it")
    tp.add_argument("--data", help="directory with train.txt and valid.txt")
    tp.add_argument("--checkpoint")
    tp.add_argument("--log")
    for flag, kind in (("hop", int), ("iters", int), ("dim", int), ("lr", float), ("margin", float),
                       ("batch", int), ("neg", int), ("seed", int), ("workers", int), ("epochs", int),
                       ("patience", int), ("runs", int), ("edge-dropout", float)):
        tp.add_argument(f"--{flag}", type=kind, default=None)
    tp.add_argument("--require-subgraph", action="store_true", help="training negatives must have a subgraph")
    tp.add_argument("--undirected", action="store_true", help="always extract undirected subgraphs")
    tp.add_argument("--no-edge-update", action="store_true")
    tp.add_argument("--no-attention", action="store_true")
    tp.add_argument("--grail-attention", action="store_true", help="attention on target relation only")
    tp.add_argument("--no-relation-in-edge-update", action="store_true")
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("eval", help="evaluate checkpoints on an inductive test directory")
    ep.add_argument("test_dir")
    ep.add_argument("checkpoints", nargs="+")
    ep.add_argument("--protocol", choices=sorted(PROTOCOLS), default="auc")
    ep.add_argument("--neg", type=int, default=50, help="negatives per positive for hits")
    ep.add_argument("--k", type=int, default=10)
    ep.add_argument("--seed", type=int, default=0)
    ep.add_argument("--require-subgraph", action="store_true")
    ep.add_argument("--undirected", action="store_true")
    ep.add_argument("--negatives", help="materialized negative file (with .idx sidecar)")
    ep.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ep.add_argument("--report", help="write the summary here")
    ep.add_argument("--dump", help="per-triplet TSV dump")
    ep.set_defaults(func=cmd_eval)

    sp = sub.add_parser("score", help="score one triplet")
    sp.add_argument("checkpoint")
    sp.add_argument("graph", help="triplet file of the graph to reason over")
    sp.add_argument("triplet", nargs="+", help="'h<TAB>r<TAB>t' or three arguments")
    sp.add_argument("--undirected", action="store_true")
    sp.set_defaults(func=cmd_score)

    st = sub.add_parser("stats", help="dataset statistics")
    st.add_argument("dataset_dir")
    st.add_argument("--hop", type=int, default=3)
    st.add_argument("--split", default="test.txt")
    st.set_defaults(func=cmd_stats)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error[missing-file]: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphFormatError, VocabularyError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"error[checkpoint]: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
