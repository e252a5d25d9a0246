import numpy as np

from conftest import make_graph
from oracles import random_graph
from relpred.datatools import (
    dataset_stats,
    filter_graph_fixpoint,
    filter_nonempty,
    materialize_negatives,
    preprocess,
    read_negatives,
    write_negatives,
)
from relpred.extract import extract_directed, extract_undirected
from relpred.graph import load_graph, read_triplet_file
from relpred.synthetic import asymmetric_dataset, chain_dataset, write_dataset


def test_filter_examples():
    isolated = make_graph([(0, 0, 1), (2, 0, 3), (3, 0, 4), (2, 0, 4)])
    kept, dropped = filter_nonempty(isolated, [(0, 0, 1), (2, 0, 4)], 2)
    assert kept.tolist() == [[2, 0, 4]] and dropped == 1


def test_filter_matches_extractor_oracle_and_is_idempotent():
    rng = np.random.default_rng(0)
    for _ in range(10):
        trips = random_graph(rng, 30, 50)
        g = make_graph(trips, n_entities=30, n_rels=3)
        kept, dropped = filter_nonempty(g, trips, 2)
        want = [t for t in trips if t[0] != t[2] and extract_undirected(g, *t, 2) is not None]
        assert [tuple(t) for t in kept.tolist()] == want
        assert dropped == len(trips) - len(want)
        again, none = filter_nonempty(g, kept, 2)
        assert np.array_equal(again, kept) and none == 0


def test_materialized_negatives():
    rng = np.random.default_rng(1)
    trips = random_graph(rng, 25, 120)
    g = make_graph(trips, n_entities=25, n_rels=3)
    pos, _ = filter_nonempty(g, trips[:15], 2)
    negs = materialize_negatives(g, pos, 2, 2, seed=5)
    assert len(negs.groups) == len(pos)
    flat = [t for grp in negs.groups for t in grp]
    assert not set(flat) & g.triplet_set()
    assert all(extract_undirected(g, *t, 2) is not None for t in flat)
    assert all(len(grp) == 2 for i, grp in enumerate(negs.groups) if i not in negs.shortfalls)
    assert materialize_negatives(g, pos, 2, 2, seed=5).groups == negs.groups


def test_negative_file_roundtrip(tmp_path):
    g = make_graph([(a, 0, b) for a in range(5) for b in range(5) if a != b][:12], n_entities=5)
    negs = materialize_negatives(g, [(0, 0, 1), (1, 0, 2)], 2, 1, seed=0)
    write_negatives(tmp_path / "n.txt", g, negs)
    idx = (tmp_path / "n.idx").read_text().splitlines()
    assert idx[0].split("\t")[:2] == ["0", "0"]
    assert read_negatives(tmp_path / "n.txt", g) == negs.groups


def test_stats_counts():
    g = make_graph([(0, 0, 1), (1, 0, 2), (0, 0, 2), (3, 0, 4)])
    s = dataset_stats(g, g.triplets(), 2)
    assert (s["entities"], s["relations"], s["graph_triplets"]) == (5, 1, 4)
    assert s["empty_subgraph"] == 1  # the isolated edge 3 -> 4
    directed = sum(extract_directed(g, *t, 2) is not None for t in g.triplets().tolist())
    assert s["directed_subgraph"] == directed
    assert s["empty_rate"] == 0.25


def test_fixpoint_filter_is_stable():
    ds = asymmetric_dataset(n_train=20, n_test=4, noise=1.0, seed=3)
    names, _ = filter_graph_fixpoint(ds["train"], 2)
    again, dropped = filter_graph_fixpoint(names, 2)
    assert again == names and dropped == 0


def _recount_empties(out_dir, test_split, h):
    graph_dir = out_dir if test_split == "valid" else out_dir / "ind"
    g = load_graph(graph_dir / "train.txt")
    empties = 0
    for name in (f"{test_split}.txt", f"{test_split}_neg.txt"):
        rows = g.encode(read_triplet_file(graph_dir / name))
        empties += sum(extract_undirected(g, *t, h) is None for t in rows.tolist())
    return empties, len(read_triplet_file(graph_dir / f"{test_split}.txt"))


def test_preprocess_contract(tmp_path):
    train_dir, test_dir = write_dataset(chain_dataset(seed=2), tmp_path / "raw")
    out = tmp_path / "pp"
    report = preprocess(train_dir, out, h=2, seed=0, n_neg=1, test_dir=test_dir)
    assert report["ind_test_kept"] > 0
    for split in ("valid", "test"):
        empties, kept = _recount_empties(out, split, 2)
        assert empties == 0 and kept > 0
    snapshot = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()}
    preprocess(train_dir, out, h=2, seed=0, n_neg=1, test_dir=test_dir)
    assert snapshot == {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()}
    # feeding the output back in changes nothing
    second = tmp_path / "pp2"
    preprocess(out, second, h=2, seed=0, n_neg=1, test_dir=out / "ind")
    assert (second / "train.txt").read_bytes() == (out / "train.txt").read_bytes()
    assert (second / "ind" / "test.txt").read_bytes() == (out / "ind" / "test.txt").read_bytes()
