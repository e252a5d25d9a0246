"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run standalone with ``python3 tests/test_acceptance.py`` or through pytest
(the lines are repeated in the pytest terminal summary).
Criterion 5 needs the WN18RR-v1 inductive split; point ``RELPRED_WN18RR_DIR``
at a directory holding ``train/`` and ``test/`` to run it.
"""
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import make_graph  # noqa: E402
from oracles import ap_quadratic, auc_pairwise, enclosing_oracle, random_graph, rank_sorted, subgraph_as_global  # noqa: E402
from test_autodiff import PRIMITIVES, check_grad  # noqa: E402
from test_model import end_to_end_gradient_errors  # noqa: E402

from relpred import autodiff as ad  # noqa: E402
from relpred.datatools import graph_from_names, load_dataset_graph, preprocess  # noqa: E402
from relpred.evaluate import average_reports, run_protocol  # noqa: E402
from relpred.extract import extract, extract_directed, extract_undirected  # noqa: E402
from relpred.graph import Graph, Vocab, load_graph, read_triplet_file  # noqa: E402
from relpred.metrics import auc_pr, auc_roc, hits_at_k, rank_of  # noqa: E402
from relpred.model import Model, ModelConfig  # noqa: E402
from relpred.synthetic import chain_dataset  # noqa: E402
from relpred.trainer import TrainConfig, fit  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
TOY = ROOT / "data" / "toy"
TOY_CFG = ROOT / "data" / "toy.cfg"


# filled as criteria run; conftest prints them in the pytest terminal summary
VERDICTS: list[str] = []


def report(line: str) -> None:
    VERDICTS.append(line)
    print(line, flush=True)


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'}  {detail}"
    report(line)
    assert ok, line


def test_criterion_1_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_prim = 0.0
    for name in sorted(PRIMITIVES):
        build, shapes = PRIMITIVES[name]
        worst_prim = max(worst_prim, check_grad(build, [rng.normal(size=s) for s in shapes], tol=np.inf))
    x = rng.normal(size=(4, 3))
    x[np.abs(x) < 0.1] = 0.5
    worst_prim = max(worst_prim, check_grad(ad.relu, [x], tol=np.inf))
    names = list(ad.GRU_NAMES)
    gru_in = [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]
    gru_in += [rng.normal(scale=0.7, size=(1, 3) if n.startswith("b_") else (3, 3)) for n in names]
    worst_prim = max(worst_prim, check_grad(
        lambda x, h, *ws: ad.gru_cell(x, h, dict(zip(names, ws))), gru_in, tol=np.inf))
    errors = end_to_end_gradient_errors()
    worst_e2e = max(errors.values())
    elapsed = time.perf_counter() - start
    ok = worst_prim <= 1e-4 and worst_e2e <= 1e-3 and elapsed < 60
    verdict(1, "gradient correctness", ok,
            f"primitive max rel err {worst_prim:.2e} (<=1e-4), end-to-end max rel err {worst_e2e:.2e} "
            f"over {len(errors)} tensors (<=1e-3), {elapsed:.1f}s (<60s)")


def test_criterion_2_extraction_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    compared = nonempty = 0
    mismatches = []
    for gi in range(200):
        n = int(rng.integers(4, 101))
        trips = random_graph(rng, n, int(rng.integers(n, 3 * n + 1)))
        g = make_graph(trips, n_entities=n, n_rels=3)
        for _ in range(3):
            target = trips[int(rng.integers(len(trips)))] if rng.random() < 0.6 else \
                (int(rng.integers(n)), int(rng.integers(3)), int(rng.integers(n)))
            if target[0] == target[2]:
                continue
            h = int(rng.integers(1, 4))
            got = {}
            for undirected, fn in ((False, extract_directed), (True, extract_undirected)):
                sub = fn(g, *target, h)
                want = enclosing_oracle(n, trips, target, h, undirected)
                have = None if sub is None else subgraph_as_global(sub)
                if have != (None if want is None else tuple(want)):
                    mismatches.append((gi, target, h, undirected))
                got[undirected] = sub
                compared += 1
                nonempty += sub is not None
            d, u = got[False], got[True]
            if d is not None and (u is None or not set(d.nodes.tolist()) <= set(u.nodes.tolist())):
                mismatches.append((gi, target, h, "subset"))
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 60 and nonempty > 0
    verdict(2, "extraction equivalence", ok,
            f"{compared} extractions on 200 graphs ({nonempty} nonempty), {len(mismatches)} mismatches, "
            f"{elapsed:.1f}s (<60s)")


def test_criterion_3_metric_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(1000):
        size = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, size=size)
        labels[0], labels[1] = 1, 0
        scores = (rng.integers(0, 8, size=size) / 4.0 if rng.random() < 0.5 else rng.normal(size=size)).tolist()
        labels = labels.tolist()
        k = int(rng.integers(1, size))
        rank = rank_sorted(scores[0], scores[1:])
        bad += auc_pr(labels, scores) != ap_quadratic(labels, scores)
        bad += auc_roc(labels, scores) != auc_pairwise(labels, scores)
        bad += rank_of(scores[0], scores[1:]) != rank
        bad += hits_at_k(scores[0], scores[1:], k) != int(rank <= k)
    elapsed = time.perf_counter() - start
    verdict(3, "metric oracles", bad == 0 and elapsed < 60,
            f"1000 score sets, {bad} inexact results, {elapsed:.1f}s (<60s)")


def _chain_splits(seed=0):
    ds = chain_dataset(seed=seed)
    both = graph_from_names(ds["train"] + ds["valid"])
    train = Graph(both.encode(ds["train"]), both.entity_vocab, both.relation_vocab)
    test_graph = graph_from_names(ds["test_graph"], both.relation_vocab.copy())
    return train, both.encode(ds["valid"]), test_graph, test_graph.encode(ds["test"])


@pytest.mark.slow
def test_criterion_4_asymmetry():
    train, valid, test_graph, test = _chain_splits()
    medians = {}
    for undirected in (False, True):
        aucs = []
        for seed in (1, 2, 3):
            cfg = TrainConfig(epochs=20, seed=seed, patience=100, require_subgraph=True,
                              undirected=undirected, workers=1)
            res = fit(train, valid, ModelConfig(), cfg)
            rep = run_protocol(test_graph, test, res.model, "exchange-ht", undirected=undirected)
            aucs.append(rep.auc_pr)
        medians[undirected] = float(np.median(aucs))
    drop = medians[False] - medians[True]
    ok = medians[False] >= 0.9 and drop >= 0.1
    verdict(4, "asymmetry", ok,
            f"exchange-h&t AUC-PR median directed {medians[False]:.4f} (>=0.9), "
            f"undirected {medians[True]:.4f}, drop {drop:.4f} (>=0.1)")


def test_criterion_5_small_split():
    data = os.environ.get("RELPRED_WN18RR_DIR")
    if not data:
        report("criterion 5 [small-split reproduction]: FAIL (soft gate, not run)  "
               "WN18RR-v1 split not available; set RELPRED_WN18RR_DIR to run")
        pytest.skip("WN18RR-v1 split not available")
    data = Path(data)
    pp = Path(os.environ.get("RELPRED_WN18RR_OUT", "/tmp/relpred_wn18rr"))
    preprocess(data / "train", pp, h=3, seed=0, n_neg=1, test_dir=data / "test")
    graph = load_dataset_graph(pp)
    valid = graph.encode(read_triplet_file(pp / "valid.txt"))
    test_graph = load_graph(pp / "ind" / "train.txt", vocabs=(Vocab(), graph.relation_vocab.copy()),
                            entity_files=[pp / "ind" / "test.txt"])
    test = test_graph.encode(read_triplet_file(pp / "ind" / "test.txt"))
    auc, hits = [], []
    for seed in (1, 2, 3, 4):
        res = fit(graph, valid, ModelConfig(), TrainConfig(seed=seed, workers=os.cpu_count() or 1))
        auc.append(run_protocol(test_graph, test, res.model, "auc", seed=seed))
        hits.append(run_protocol(test_graph, test, res.model, "hits", seed=seed))
    a, h = average_reports(auc)["auc_pr"], average_reports(hits)["hits_at_k"]
    verdict(5, "small-split reproduction", a >= 0.90 and h >= 0.75,
            f"AUC-PR {100 * a:.2f} (>=90), Hits@10 {100 * h:.2f} (>=75)")


def _cli(*argv, cwd=None):
    subprocess.run([sys.executable, "-m", "relpred", *map(str, argv)], check=True, capture_output=True, cwd=cwd)


def test_criterion_6_determinism(tmp_path):
    pp = tmp_path / "pp"
    _cli("preprocess", TOY / "train", pp, "--test-dir", TOY / "test_ind", "--hop", 2)
    blobs = []
    for i in range(2):
        # identical command lines: same config and same relative output paths, separate directories
        run_dir = tmp_path / f"run{i}"
        run_dir.mkdir()
        _cli("train", "--config", TOY_CFG, "--data", pp, "--checkpoint", "m.ckpt", "--log", "m.log", cwd=run_dir)
        blobs.append(((run_dir / "m.ckpt").read_bytes(), (run_dir / "m.log").read_bytes()))
    same_ckpt = blobs[0][0] == blobs[1][0]
    same_log = blobs[0][1] == blobs[1][1]
    verdict(6, "determinism", same_ckpt and same_log,
            f"checkpoints identical={same_ckpt} ({len(blobs[0][0])} bytes), logs identical={same_log}")


def test_criterion_7_entity_independence():
    rng = np.random.default_rng(7)
    checked = changed = 0
    for gi in range(20):
        n = int(rng.integers(10, 40))
        trips = random_graph(rng, n, 3 * n)
        g = make_graph(trips, n_entities=n, n_rels=3)
        # strictly increasing relabel into a larger id space keeps structure and node order
        new_ids = np.sort(rng.choice(10 * n, size=n, replace=False))
        relabelled = make_graph([(int(new_ids[a]), r, int(new_ids[b])) for a, r, b in trips],
                                n_entities=10 * n, n_rels=3)
        model = Model(ModelConfig(hop=2, iterations=2, dim=16, score_hidden=8), 3, seed=gi)
        queries = [t for t in trips if t[0] != t[2]][:8]
        a = [extract(g, *q, 2) for q in queries]
        b = [extract(relabelled, int(new_ids[q[0]]), q[1], int(new_ids[q[2]]), 2) for q in queries]
        sa, sb = model.score_subgraphs(a), model.score_subgraphs(b)
        changed += int(np.sum(sa.view(np.int64) != sb.view(np.int64)))
        for x, y in zip(a, b):
            if x is not None:
                changed += model.score(x) != model.score(y)
        checked += len(queries)
    verdict(7, "entity independence", changed == 0 and checked > 0,
            f"{checked} triplets on 20 relabelled graphs, {changed} scores changed in any bit")


def _empties(graph_dir: Path, split: str, h: int) -> tuple[int, int]:
    g = load_graph(graph_dir / "train.txt")
    pos = g.encode(read_triplet_file(graph_dir / f"{split}.txt"))
    neg = g.encode(read_triplet_file(graph_dir / f"{split}_neg.txt"))
    empty_pos = sum(extract_undirected(g, *t, h) is None for t in pos.tolist())
    empty_neg = sum(extract_undirected(g, *t, h) is None for t in neg.tolist())
    return empty_pos + empty_neg, len(pos) + len(neg)


def _snapshot(root: Path) -> dict:
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_preprocess_contract(tmp_path):
    out, h = tmp_path / "pp", 2
    preprocess(TOY / "train", out, h=h, seed=0, n_neg=1, test_dir=TOY / "test_ind")
    first = _snapshot(out)
    e_valid, n_valid = _empties(out, "valid", h)
    e_test, n_test = _empties(out / "ind", "test", h)
    preprocess(TOY / "train", out, h=h, seed=0, n_neg=1, test_dir=TOY / "test_ind")
    rerun_same = _snapshot(out) == first
    again = tmp_path / "again"
    preprocess(out, again, h=h, seed=0, n_neg=1, test_dir=out / "ind")
    fixpoint = all(
        (again / name).read_bytes() == (out / name).read_bytes()
        for name in ("train.txt", "valid.txt", "ind/train.txt", "ind/test.txt")
    )
    ok = e_valid == e_test == 0 and n_valid > 0 and n_test > 0 and rerun_same and fixpoint
    verdict(8, "preprocess contract", ok,
            f"empty subgraphs {e_valid}/{n_valid} valid, {e_test}/{n_test} test; rerun identical={rerun_same}, "
            f"second pass idempotent={fixpoint}")


if __name__ == "__main__":
    import tempfile

    failed = 0
    for name, fn in sorted(globals().items()):
        if not name.startswith("test_criterion_"):
            continue
        try:
            if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
        except pytest.skip.Exception:
            pass
    sys.exit(1 if failed else 0)
