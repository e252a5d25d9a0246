"""Knowledge-graph storage: vocabularies, triplet files and directed adjacency."""
from __future__ import annotations

import logging
from collections import deque
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """A triplet file line could not be parsed."""


class VocabularyError(KeyError):
    """A name is missing from a vocabulary that is not allowed to grow."""

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class Vocab:
    """Bidirectional name <-> dense id map, ids assigned in first-seen order."""

    def __init__(self, names: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise VocabularyError(f"unknown name {name!r}") from None

    def name(self, idx: int) -> str:
        return self._names[idx]

    def get(self, name: str) -> int | None:
        return self._ids.get(name)

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def copy(self) -> "Vocab":
        return Vocab(self._names)

    def __contains__(self, name: object) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self._names == other._names

    def __repr__(self) -> str:
        return f"Vocab({len(self)} names)"


def read_triplet_file(path: str | Path) -> list[tuple[str, str, str]]:
    """Read ``head<TAB>relation<TAB>tail`` lines; blank lines are skipped."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise GraphFormatError(
                    f"{path}:{lineno}: expected 'head<TAB>relation<TAB>tail', got {line!r}"
                )
            out.append((parts[0], parts[1], parts[2]))
    return out


def write_triplet_file(path: str | Path, names: Iterable[tuple[str, str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in names:
            fh.write(f"{h}\t{r}\t{t}\n")


class Graph:
    """Immutable directed multigraph of (head, relation, tail) triplets.

    Edge ``i`` is ``(heads[i], rels[i], tails[i])``. ``out_index[e]`` holds the
    ids of edges leaving entity ``e``, ``in_index[e]`` those entering it.
    """

    def __init__(
        self,
        triplets: Sequence[tuple[int, int, int]] | np.ndarray,
        entity_vocab: Vocab,
        relation_vocab: Vocab,
        duplicates: int = 0,
    ):
        arr = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
        seen: dict[tuple[int, int, int], int] = {}
        keep = []
        for i, row in enumerate(arr.tolist()):
            key = (row[0], row[1], row[2])
            if key in seen:
                duplicates += 1
                continue
            seen[key] = len(keep)
            keep.append(i)
        arr = arr[keep]
        n_ent, n_rel = len(entity_vocab), len(relation_vocab)
        if len(arr):
            if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= n_ent:
                raise VocabularyError("entity id outside the entity vocabulary")
            if arr[:, 1].min() < 0 or arr[:, 1].max() >= n_rel:
                raise VocabularyError("relation id outside the relation vocabulary")

        self.entity_vocab = entity_vocab
        self.relation_vocab = relation_vocab
        self.duplicates = duplicates
        self.heads = arr[:, 0].copy()
        self.rels = arr[:, 1].copy()
        self.tails = arr[:, 2].copy()
        for a in (self.heads, self.rels, self.tails):
            a.setflags(write=False)
        self._edge_ids = seen
        self.out_index = _bucket(self.heads, n_ent)
        self.in_index = _bucket(self.tails, n_ent)
        # per-entity neighbour lists used by the BFS routines
        self._succ = [np.unique(self.tails[ids]).tolist() for ids in self.out_index]
        self._pred = [np.unique(self.heads[ids]).tolist() for ids in self.in_index]

    @property
    def num_entities(self) -> int:
        return len(self.entity_vocab)

    @property
    def num_relations(self) -> int:
        return len(self.relation_vocab)

    @property
    def num_triplets(self) -> int:
        return len(self.heads)

    def __len__(self) -> int:
        return self.num_triplets

    def __contains__(self, triplet: object) -> bool:
        return tuple(triplet) in self._edge_ids  # type: ignore[arg-type]

    def __repr__(self) -> str:
        return (
            f"Graph(entities={self.num_entities}, relations={self.num_relations}, "
            f"triplets={self.num_triplets})"
        )

    def edge_id(self, head: int, rel: int, tail: int) -> int | None:
        return self._edge_ids.get((head, rel, tail))

    def triplet(self, edge: int) -> tuple[int, int, int]:
        return int(self.heads[edge]), int(self.rels[edge]), int(self.tails[edge])

    def triplets(self) -> np.ndarray:
        return np.stack([self.heads, self.rels, self.tails], axis=1)

    def triplet_set(self) -> set[tuple[int, int, int]]:
        return set(self._edge_ids)

    def names(self, triplet: tuple[int, int, int]) -> tuple[str, str, str]:
        h, r, t = triplet
        return (
            self.entity_vocab.name(h),
            self.relation_vocab.name(r),
            self.entity_vocab.name(t),
        )

    def encode(self, names: Iterable[tuple[str, str, str]], where: str = "") -> np.ndarray:
        """Map name triplets onto this graph's ids; unknown names raise."""
        rows = []
        for i, (h, r, t) in enumerate(names, start=1):
            try:
                rows.append(
                    (self.entity_vocab.id(h), self.relation_vocab.id(r), self.entity_vocab.id(t))
                )
            except VocabularyError as exc:
                raise VocabularyError(f"{where}triplet {i}: {exc}") from None
        return np.asarray(rows, dtype=np.int64).reshape(-1, 3)

    def successors(self, entity: int) -> list[int]:
        return self._succ[entity]

    def predecessors(self, entity: int) -> list[int]:
        return self._pred[entity]

    def reversed(self) -> "Graph":
        """The same graph with every edge direction flipped."""
        return Graph(
            np.stack([self.tails, self.rels, self.heads], axis=1),
            self.entity_vocab,
            self.relation_vocab,
        )


def _bucket(keys: np.ndarray, n: int) -> tuple[np.ndarray, ...]:
    order = np.argsort(keys, kind="stable")
    counts = np.bincount(keys, minlength=n) if len(keys) else np.zeros(n, dtype=np.int64)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    out = []
    for e in range(n):
        ids = order[bounds[e] : bounds[e + 1]].copy()
        ids.setflags(write=False)
        out.append(ids)
    return tuple(out)


def load_graph(
    path: str | Path,
    vocabs: tuple[Vocab, Vocab] | None = None,
    entity_files: Iterable[str | Path] = (),
) -> Graph:
    """Load a triplet file into a :class:`Graph`.

    With ``vocabs=None`` both vocabularies are built from the file. Otherwise
    ``(entity_vocab, relation_vocab)`` is reused: the entity vocabulary is
    copied and extended with unseen entities, while every relation must
    already be known. Entities appearing in ``entity_files`` are registered
    without contributing edges (e.g. validation queries).
    """
    names = read_triplet_file(path)
    if vocabs is None:
        ents, rels, grow_rel = Vocab(), Vocab(), True
    else:
        ents, rels, grow_rel = vocabs[0].copy(), vocabs[1], False
    rows = []
    for lineno, (h, r, t) in enumerate(names, start=1):
        if grow_rel:
            rid = rels.add(r)
        elif r not in rels:
            raise VocabularyError(f"{path}: triplet {lineno}: unknown relation {r!r}")
        else:
            rid = rels.id(r)
        rows.append((ents.add(h), rid, ents.add(t)))
    for extra in entity_files:
        for h, _, t in read_triplet_file(extra):
            ents.add(h)
            ents.add(t)
    g = Graph(rows, ents, rels)
    if g.duplicates:
        log.warning("%s: dropped %d duplicate triplets", path, g.duplicates)
    return g


def _k_hop(neighbors, start: int, k: int) -> set[int]:
    if k < 1:
        raise ValueError("hop count must be >= 1")
    reached: set[int] = set()
    frontier = [start]
    for _ in range(k):
        nxt = []
        for u in frontier:
            for v in neighbors(u):
                if v not in reached:
                    reached.add(v)
                    nxt.append(v)
        if not nxt:
            break
        frontier = nxt
    return reached


def _without(g: Graph, exclude: tuple[int, int, int] | None):
    """Successor/predecessor functions for ``g`` minus one triplet."""
    skip = g.edge_id(*exclude) if exclude is not None else None
    if skip is None:
        return g.successors, g.predecessors
    h, _, t = exclude  # type: ignore[misc]
    parallel = any(
        int(g.tails[e]) == t and e != skip for e in g.out_index[h].tolist()
    )
    if parallel:
        return g.successors, g.predecessors

    def succ(u: int) -> list[int]:
        return [v for v in g.successors(u) if v != t] if u == h else g.successors(u)

    def pred(u: int) -> list[int]:
        return [v for v in g.predecessors(u) if v != h] if u == t else g.predecessors(u)

    return succ, pred


def k_hop_outgoing(
    g: Graph, start: int, k: int, exclude: tuple[int, int, int] | None = None
) -> set[int]:
    """Entities reachable from ``start`` along 1..k directed edges.

    ``start`` itself is included only when it lies on a directed cycle of
    length <= k. ``exclude`` removes one triplet from the walk.
    """
    return _k_hop(_without(g, exclude)[0], start, k)


def k_hop_incoming(
    g: Graph, start: int, k: int, exclude: tuple[int, int, int] | None = None
) -> set[int]:
    """Entities that reach ``start`` along 1..k directed edges."""
    return _k_hop(_without(g, exclude)[1], start, k)


def k_hop_undirected(
    g: Graph, start: int, k: int, exclude: tuple[int, int, int] | None = None
) -> set[int]:
    succ, pred = _without(g, exclude)
    return _k_hop(lambda u: succ(u) + pred(u), start, k)


def induced_edges(
    g: Graph, nodes: Iterable[int], exclude: tuple[int, int, int] | None = None
) -> list[int]:
    """Ids (ascending) of all edges with both endpoints in ``nodes``."""
    node_set = set(nodes)
    skip = g.edge_id(*exclude) if exclude is not None else None
    out = []
    for u in node_set:
        for e in g.out_index[u].tolist():
            if e != skip and int(g.tails[e]) in node_set:
                out.append(e)
    out.sort()
    return out


def bfs_distances(
    n: int, edges: Sequence[tuple[int, int]], source: int, directed: bool = True
) -> np.ndarray:
    """Hop distances from ``source`` over local edges ``(u, v)``; -1 = unreachable."""
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        if not directed:
            adj[v].append(u)
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist
