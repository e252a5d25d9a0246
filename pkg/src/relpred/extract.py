"""Directed / undirected enclosing-subgraph extraction and distance labelling."""
from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import (
    Graph,
    bfs_distances,
    induced_edges,
    k_hop_incoming,
    k_hop_outgoing,
    k_hop_undirected,
)

MAX_NODES = 500


class DegenerateCandidateError(ValueError):
    """Candidate triplet has identical head and tail."""


class EmptySubgraphError(ValueError):
    """An operation needs at least one subgraph edge."""


@dataclass(frozen=True, eq=False)
class Subgraph:
    """Enclosing subgraph of one candidate triplet, in local indices.

    ``nodes`` is sorted by distance-from-head then global id; that order is
    also the recurrent (GRU) order. ``edges`` rows are ``(head, rel, tail)``
    in local node indices, sorted lexicographically so that aggregation
    order never depends on how the edge list was produced.
    """

    nodes: np.ndarray  # global entity ids, shape (n,)
    labels: np.ndarray  # (n, 2): distance from head, distance to tail
    edges: np.ndarray  # (e, 3)
    target: tuple[int, int, int]  # local head, relation, local tail
    directed: bool = True
    hop: int = field(default=3)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def same_as(self, other: "Subgraph") -> bool:
        return (
            self.target == other.target
            and self.directed == other.directed
            and self.hop == other.hop
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.edges, other.edges)
        )

    def describe(self) -> str:
        kind = "directed" if self.directed else "undirected"
        return f"{kind} subgraph: {self.num_nodes} nodes, {self.num_edges} edges"


def make_subgraph(
    nodes: Sequence[int],
    labels: np.ndarray,
    edges: Iterable[tuple[int, int, int]],
    target: tuple[int, int, int],
    directed: bool = True,
    hop: int = 3,
) -> Subgraph:
    """Assemble a Subgraph from local pieces, canonicalising the edge order."""
    e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 3)
    if len(e):
        e = e[np.lexsort((e[:, 2], e[:, 1], e[:, 0]))]
    return Subgraph(
        nodes=np.asarray(nodes, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.int64).reshape(-1, 2),
        edges=e,
        target=tuple(int(x) for x in target),  # type: ignore[arg-type]
        directed=directed,
        hop=hop,
    )


def _check_candidate(head: int, tail: int, h: int) -> None:
    if head == tail:
        raise DegenerateCandidateError(f"head and tail are the same entity ({head})")
    if h < 1:
        raise ValueError("hop count must be >= 1")


def extract_directed(
    g: Graph, head: int, rel: int, tail: int, h: int, max_nodes: int = MAX_NODES
) -> Subgraph | None:
    """Directed enclosing subgraph, or ``None`` when none exists.

    The candidate triplet itself is removed from the graph for the whole
    procedure when present.
    """
    _check_candidate(head, tail, h)
    target = (head, rel, tail)
    out_nb = k_hop_outgoing(g, head, h, exclude=target)
    if not out_nb & k_hop_incoming(g, tail, 1, exclude=target):
        return None
    in_nb = k_hop_incoming(g, tail, h, exclude=target)
    nodes = (out_nb & in_nb) | {head, tail}
    return label_and_prune(g, nodes, head, rel, tail, h, directed=True, max_nodes=max_nodes)


def extract_undirected(
    g: Graph, head: int, rel: int, tail: int, h: int, max_nodes: int = MAX_NODES
) -> Subgraph | None:
    """Undirected enclosing subgraph (edge directions kept), ``None`` when empty."""
    _check_candidate(head, tail, h)
    target = (head, rel, tail)
    nodes = (
        k_hop_undirected(g, head, h, exclude=target)
        & k_hop_undirected(g, tail, h, exclude=target)
    ) | {head, tail}
    return label_and_prune(g, nodes, head, rel, tail, h, directed=False, max_nodes=max_nodes)


def extract(
    g: Graph,
    head: int,
    rel: int,
    tail: int,
    h: int,
    undirected: bool = False,
    max_nodes: int = MAX_NODES,
) -> Subgraph | None:
    """Directed extraction with undirected fallback (or undirected only)."""
    if not undirected:
        sub = extract_directed(g, head, rel, tail, h, max_nodes)
        if sub is not None:
            return sub
    return extract_undirected(g, head, rel, tail, h, max_nodes)


def _distances(n, pairs, head_i, tail_i, directed):
    d_head = bfs_distances(n, pairs, head_i, directed)
    rev = [(v, u) for u, v in pairs]
    d_tail = bfs_distances(n, rev, tail_i, directed)
    return d_head, d_tail


def label_and_prune(
    g: Graph,
    nodes: Iterable[int],
    head: int,
    rel: int,
    tail: int,
    h: int,
    directed: bool = True,
    max_nodes: int = MAX_NODES,
) -> Subgraph | None:
    """Label nodes with (distance from head, distance to tail) and prune.

    Distances are measured inside the induced subgraph (ignoring direction
    when ``directed`` is false). Nodes other than head/tail that cannot be
    reached from the head or cannot reach the tail are dropped, repeatedly,
    until nothing changes. Surviving distances are clamped to ``h + 1``.
    Returns ``None`` if no edge survives, or, in directed mode, if the tail
    is unreachable from the head.
    """
    keep = sorted(set(nodes) | {head, tail})
    capped = False
    while True:
        index = {v: i for i, v in enumerate(keep)}
        edge_ids = induced_edges(g, keep, exclude=(head, rel, tail))
        pairs = [(index[int(g.heads[e])], index[int(g.tails[e])]) for e in edge_ids]
        d_head, d_tail = _distances(len(keep), pairs, index[head], index[tail], directed)
        ok = (d_head >= 0) & (d_tail >= 0)
        ok[index[head]] = ok[index[tail]] = True
        if not ok.all():
            keep = [v for v, good in zip(keep, ok) if good]
            continue
        if len(keep) > max_nodes and not capped:
            keep = _cap(keep, d_head, d_tail, head, tail, max_nodes)
            capped = True
            continue
        break

    if not edge_ids:
        return None
    if d_head[index[tail]] < 0:
        # directed mode only: no head-to-tail path survived
        return None

    clamp = h + 1
    d_head = np.minimum(d_head, clamp)
    d_tail = np.minimum(d_tail, clamp)
    order = sorted(range(len(keep)), key=lambda i: (int(d_head[i]), keep[i]))
    pos = np.empty(len(keep), dtype=np.int64)
    pos[order] = np.arange(len(keep))
    local_edges = [
        (int(pos[index[int(g.heads[e])]]), int(g.rels[e]), int(pos[index[int(g.tails[e])]]))
        for e in edge_ids
    ]
    return make_subgraph(
        nodes=[keep[i] for i in order],
        labels=np.stack([d_head[order], d_tail[order]], axis=1),
        edges=local_edges,
        target=(int(pos[index[head]]), rel, int(pos[index[tail]])),
        directed=directed,
        hop=h,
    )


def _cap(keep, d_head, d_tail, head, tail, max_nodes):
    others = [
        (int(d_head[i] + d_tail[i]), v)
        for i, v in enumerate(keep)
        if v != head and v != tail
    ]
    others.sort()
    chosen = {v for _, v in others[: max_nodes - 2]} | {head, tail}
    return sorted(chosen)


@dataclass
class Incidence:
    """One-nonzero-per-column 0/1 matrices mapping nodes/relations to edges.

    Stored as the row index of each column's single 1.
    """

    head_rows: np.ndarray
    rel_rows: np.ndarray
    tail_rows: np.ndarray
    num_nodes: int
    num_relations: int

    @property
    def num_edges(self) -> int:
        return len(self.head_rows)

    def dense(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(head_to_edge, rel_to_edge, tail_to_edge) as dense arrays."""
        cols = np.arange(self.num_edges)
        he = np.zeros((self.num_nodes, self.num_edges))
        re = np.zeros((self.num_relations, self.num_edges))
        te = np.zeros((self.num_nodes, self.num_edges))
        he[self.head_rows, cols] = 1.0
        re[self.rel_rows, cols] = 1.0
        te[self.tail_rows, cols] = 1.0
        return he, re, te


def build_incidence(sub: Subgraph, num_relations: int) -> Incidence:
    if sub.num_edges == 0:
        raise EmptySubgraphError("cannot build incidence for a subgraph without edges")
    return Incidence(
        head_rows=sub.edges[:, 0].copy(),
        rel_rows=sub.edges[:, 1].copy(),
        tail_rows=sub.edges[:, 2].copy(),
        num_nodes=sub.num_nodes,
        num_relations=num_relations,
    )


# -- batch extraction ------------------------------------------------------

_worker_graph: Graph | None = None


def _init_worker(g: Graph) -> None:
    global _worker_graph
    _worker_graph = g


def _extract_one(args):
    head, rel, tail, h, undirected, max_nodes = args
    assert _worker_graph is not None
    if head == tail:
        return None
    return extract(_worker_graph, head, rel, tail, h, undirected, max_nodes)


def extract_many(
    g: Graph,
    triplets: Iterable[tuple[int, int, int]],
    h: int,
    undirected: bool = False,
    workers: int = 1,
    max_nodes: int = MAX_NODES,
) -> list[Subgraph | None]:
    """Extract subgraphs for many candidates, preserving input order.

    Self-loop candidates yield ``None`` instead of raising.
    """
    jobs = [(int(a), int(b), int(c), h, undirected, max_nodes) for a, b, c in triplets]
    if workers <= 1 or len(jobs) < 64:
        out = []
        for a, b, c, *_ in jobs:
            out.append(None if a == c else extract(g, a, b, c, h, undirected, max_nodes))
        return out
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(g,)) as pool:
        return list(pool.map(_extract_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# -- on-disk cache -----------------------------------------------------------
#
# Record layout (all little-endian):
#   u32 payload length, then payload =
#   i64 head, i64 rel, i64 tail, u32 hop, u8 mode (0 directed-with-fallback,
#   1 undirected only), u8 present,
#   and when present: u8 directed, u32 n_nodes, u32 n_edges,
#   i64 target_head, i64 target_rel, i64 target_tail,
#   n_nodes * i64 node ids, n_nodes * 2 * i64 labels, n_edges * 3 * i64 edges.

_KEY = struct.Struct("<qqqIBB")
_HDR = struct.Struct("<BIIqqq")


def encode_record(key: tuple[int, int, int, int, bool], sub: Subgraph | None) -> bytes:
    head, rel, tail, hop, undirected = key
    body = _KEY.pack(head, rel, tail, hop, int(undirected), int(sub is not None))
    if sub is not None:
        body += _HDR.pack(int(sub.directed), sub.num_nodes, sub.num_edges, *sub.target)
        body += sub.nodes.astype("<i8").tobytes()
        body += sub.labels.astype("<i8").tobytes()
        body += sub.edges.astype("<i8").tobytes()
    return struct.pack("<I", len(body)) + body


def decode_record(payload: bytes) -> tuple[tuple[int, int, int, int, bool], Subgraph | None]:
    head, rel, tail, hop, mode, present = _KEY.unpack_from(payload, 0)
    key = (head, rel, tail, hop, bool(mode))
    if not present:
        return key, None
    off = _KEY.size
    directed, n, e, th, tr, tt = _HDR.unpack_from(payload, off)
    off += _HDR.size

    def take(count):
        nonlocal off
        arr = np.frombuffer(payload, dtype="<i8", count=count, offset=off).astype(np.int64)
        off += 8 * count
        return arr

    nodes = take(n)
    labels = take(2 * n).reshape(n, 2)
    edges = take(3 * e).reshape(e, 3)
    sub = Subgraph(nodes, labels, edges, (th, tr, tt), bool(directed), hop)
    return key, sub


class SubgraphCache:
    """Append-only file of extracted subgraphs keyed by candidate and mode."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._mem: dict[tuple, Subgraph | None] = {}
        if self.path.exists():
            data = self.path.read_bytes()
            off = 0
            while off < len(data):
                (size,) = struct.unpack_from("<I", data, off)
                key, sub = decode_record(data[off + 4 : off + 4 + size])
                self._mem[key] = sub
                off += 4 + size

    def __len__(self) -> int:
        return len(self._mem)

    def __contains__(self, key: object) -> bool:
        return key in self._mem

    def get(self, g: Graph, head: int, rel: int, tail: int, h: int, undirected: bool = False):
        key = (head, rel, tail, h, undirected)
        if key not in self._mem:
            sub = extract(g, head, rel, tail, h, undirected)
            self._mem[key] = sub
            with open(self.path, "ab") as fh:
                fh.write(encode_record(key, sub))
        return self._mem[key]
