import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_graph
from oracles import bfs_hops, random_graph
from relpred.graph import (
    GraphFormatError,
    Vocab,
    VocabularyError,
    bfs_distances,
    induced_edges,
    k_hop_incoming,
    k_hop_outgoing,
    k_hop_undirected,
    load_graph,
    read_triplet_file,
    write_triplet_file,
)


def write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_three_distinct_lines(tmp_path):
    f = write(tmp_path / "g.txt", ["a\tr\tb", "b\tr\tc", "a\ts\tc"])
    g = load_graph(f)
    assert g.num_triplets == 3 and g.duplicates == 0
    assert g.entity_vocab.names == ["a", "b", "c"]
    assert g.relation_vocab.names == ["r", "s"]
    assert sum(len(x) for x in g.out_index) == sum(len(x) for x in g.in_index) == 3
    for e in range(3):
        h, r, t = g.triplet(e)
        assert e in g.out_index[h] and e in g.in_index[t]
        assert g.edge_id(h, r, t) == e


def test_duplicate_line_dropped(tmp_path):
    f = write(tmp_path / "g.txt", ["a\tr\tb", "a\tr\tb"])
    g = load_graph(f)
    assert g.num_triplets == 1 and g.duplicates == 1


def test_crlf_tolerated_and_blank_lines_skipped(tmp_path):
    f = tmp_path / "g.txt"
    f.write_bytes(b"a\tr\tb\r\n\r\nb\tr\tc\r\n")
    assert read_triplet_file(f) == [("a", "r", "b"), ("b", "r", "c")]


def test_malformed_line_reports_line_number(tmp_path):
    f = write(tmp_path / "g.txt", ["a\tr\tb", "oops only two\tfields"])
    with pytest.raises(GraphFormatError, match=r"g\.txt:2"):
        load_graph(f)


def test_reuse_mode_appends_entities_and_rejects_relations(tmp_path):
    train = load_graph(write(tmp_path / "train.txt", ["a\tr\tb", "b\ts\tc"]))
    test = load_graph(write(tmp_path / "test.txt", ["x\ts\ty"]),
                      vocabs=(train.entity_vocab, train.relation_vocab))
    assert test.relation_vocab.names == ["r", "s"]
    assert test.entity_vocab.names[:3] == ["a", "b", "c"]
    assert "x" in test.entity_vocab and "x" not in train.entity_vocab
    assert test.triplet(0) == (3, 1, 4)
    with pytest.raises(VocabularyError, match="unknown relation"):
        load_graph(write(tmp_path / "bad.txt", ["x\tnew\ty"]),
                   vocabs=(train.entity_vocab, train.relation_vocab))


def test_generated_file_count_matches_line_count_oracle(tmp_path):
    # a WN18RR-sized file: count = distinct lines, duplicates = lines - distinct
    rng = np.random.default_rng(7)
    lines = [f"e{a}\tr{r}\te{b}" for a, r, b in rng.integers(0, [800, 9, 800], size=(5500, 3))]
    lines += lines[:40]
    f = write(tmp_path / "train.txt", lines)
    raw = f.read_text().splitlines()
    g = load_graph(f)
    assert g.num_triplets == len(set(raw))
    assert g.duplicates == len(raw) - len(set(raw))


def test_roundtrip_file(tmp_path):
    names = [("a", "r", "b"), ("b", "r", "c")]
    write_triplet_file(tmp_path / "x.txt", names)
    assert read_triplet_file(tmp_path / "x.txt") == names


def test_vocab_errors_are_readable():
    v = Vocab(["a"])
    with pytest.raises(VocabularyError) as exc:
        v.id("zz")
    assert "zz" in str(exc.value)


# -- neighbourhoods --------------------------------------------------------------

CHAIN = make_graph([(0, 0, 1), (1, 0, 2)])  # A -> B -> C


def test_chain_examples():
    assert k_hop_outgoing(CHAIN, 0, 1) == {1}
    assert k_hop_outgoing(CHAIN, 0, 2) == {1, 2}
    assert k_hop_incoming(CHAIN, 2, 1) == {1}
    assert k_hop_incoming(CHAIN, 2, 2) == {0, 1}


def test_start_included_only_on_short_cycle():
    g = make_graph([(0, 0, 1), (1, 0, 2), (2, 0, 0)])
    assert 0 not in k_hop_outgoing(g, 0, 2)
    assert 0 in k_hop_outgoing(g, 0, 3)


def test_exclude_removes_only_the_target_edge():
    g = make_graph([(0, 0, 1), (0, 1, 1), (1, 0, 2)])
    # a parallel edge with another relation keeps 1 reachable
    assert k_hop_outgoing(g, 0, 1, exclude=(0, 0, 1)) == {1}
    g2 = make_graph([(0, 0, 1), (1, 0, 2)])
    assert k_hop_outgoing(g2, 0, 2, exclude=(0, 0, 1)) == set()


def test_random_graphs_against_bfs_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        trips = random_graph(rng, 50, 120)
        g = make_graph(trips, n_entities=50, n_rels=3)
        rev = [(b, r, a) for a, r, b in trips]
        for start in rng.integers(50, size=5).tolist():
            for k in (1, 2, 3):
                assert k_hop_outgoing(g, start, k) == bfs_hops(50, trips, start, k)
                assert k_hop_incoming(g, start, k) == bfs_hops(50, rev, start, k)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 14), st.integers(0, 2), st.integers(0, 14)),
                min_size=1, max_size=60),
       st.integers(0, 14), st.integers(1, 4))
def test_properties(trips, start, k):
    g = make_graph(trips, n_entities=15, n_rels=3)
    assert sum(len(x) for x in g.out_index) == sum(len(x) for x in g.in_index) == g.num_triplets
    assert k_hop_outgoing(g, start, k) <= k_hop_outgoing(g, start, k + 1)
    assert k_hop_outgoing(g, start, k) == k_hop_incoming(g.reversed(), start, k)
    both = bfs_hops(15, trips + [(b, r, a) for a, r, b in trips], start, k)
    assert k_hop_undirected(g, start, k) == both


# -- induced edges -----------------------------------------------------------------


def test_induced_edges_examples():
    g = make_graph([(0, 0, 1), (1, 0, 2), (0, 0, 2)])
    assert [g.triplet(e) for e in induced_edges(g, {0, 1})] == [(0, 0, 1)]
    assert len(induced_edges(g, {0, 1, 2}, exclude=(1, 0, 2))) == 2


def test_induced_edges_linear_scan_oracle():
    rng = np.random.default_rng(3)
    for _ in range(40):
        trips = random_graph(rng, 30, 80)
        g = make_graph(trips, n_entities=30, n_rels=3)
        nodes = set(rng.choice(30, size=int(rng.integers(1, 30)), replace=False).tolist())
        exclude = trips[int(rng.integers(len(trips)))]
        want = sorted(t for t in g.triplets().tolist()
                      if t[0] in nodes and t[2] in nodes and tuple(t) != exclude)
        got = sorted(list(g.triplet(e)) for e in induced_edges(g, nodes, exclude))
        assert got == want


def test_bfs_distances():
    d = bfs_distances(4, [(0, 1), (1, 2)], 0)
    assert d.tolist() == [0, 1, 2, -1]
    assert bfs_distances(3, [(1, 0)], 0, directed=False).tolist() == [0, 1, -1]
