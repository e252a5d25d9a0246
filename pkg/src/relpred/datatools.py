"""Post-processed datasets: drop empty-subgraph triplets, build non-empty negatives."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .extract import extract_directed, extract_undirected
from .graph import Graph, Vocab, load_graph, read_triplet_file, write_triplet_file
from .trainer import MIXED, RETRY_BUDGET, SamplingExhausted, sample_negative

log = logging.getLogger(__name__)


def has_subgraph(g: Graph, triplet: tuple[int, int, int], h: int) -> bool:
    """True when the undirected enclosing subgraph has at least one edge."""
    a, r, b = (int(x) for x in triplet)
    if a == b:
        return False
    return extract_undirected(g, a, r, b, h) is not None


def filter_nonempty(
    g: Graph, triplets: Sequence[tuple[int, int, int]] | np.ndarray, h: int
) -> tuple[np.ndarray, int]:
    """Keep the triplets whose undirected enclosing subgraph is nonempty."""
    rows = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    keep = [i for i, row in enumerate(rows.tolist()) if has_subgraph(g, row, h)]
    return rows[keep], len(rows) - len(keep)


@dataclass
class NegativeSet:
    groups: list[list[tuple[int, int, int]]]
    shortfalls: list[int] = field(default_factory=list)  # positive indices


def materialize_negatives(
    g: Graph,
    positives: Sequence[tuple[int, int, int]] | np.ndarray,
    n_per_pos: int,
    h: int,
    seed: int,
    known: set | None = None,
    max_tries: int = RETRY_BUDGET,
) -> NegativeSet:
    """Up to ``n_per_pos`` non-empty-subgraph negatives per positive.

    Each group holds distinct negatives absent from ``g`` and ``known``.
    Positives whose group comes up short are listed in ``shortfalls``.
    """
    rng = np.random.default_rng(seed)
    rows = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    taken = set(g.triplet_set()) | {tuple(r) for r in rows.tolist()}
    if known:
        taken |= set(known)
    out = NegativeSet(groups=[])
    for i, pos in enumerate(rows.tolist()):
        grp: list[tuple[int, int, int]] = []
        tries = 0
        while len(grp) < n_per_pos and tries < max_tries:
            tries += 1
            try:
                cand = sample_negative(g, tuple(pos), MIXED, rng, True, h, taken, max_tries=1)
            except SamplingExhausted:
                continue
            grp.append(cand)
            taken.add(cand)
        if len(grp) < n_per_pos:
            out.shortfalls.append(i)
            log.warning("positive %d %s: only %d of %d negatives", i, tuple(pos), len(grp), n_per_pos)
        out.groups.append(grp)
    return out


def write_negatives(path: str | Path, g: Graph, negs: NegativeSet) -> Path:
    """Write grouped negatives plus a sidecar ``.idx`` file.

    Sidecar lines: ``positive_index<TAB>first_line<TAB>count`` (0-based).
    """
    path = Path(path)
    write_triplet_file(path, (g.names(t) for grp in negs.groups for t in grp))
    idx = path.with_suffix(".idx")
    line = 0
    with open(idx, "w", encoding="utf-8", newline="\n") as fh:
        for i, grp in enumerate(negs.groups):
            fh.write(f"{i}\t{line}\t{len(grp)}\n")
            line += len(grp)
    return idx


def read_negatives(path: str | Path, g: Graph) -> list[list[tuple[int, int, int]]]:
    path = Path(path)
    flat = [tuple(int(x) for x in row) for row in g.encode(read_triplet_file(path), f"{path}: ")]
    groups = []
    for line in path.with_suffix(".idx").read_text(encoding="utf-8").splitlines():
        _, first, count = (int(x) for x in line.split("\t"))
        groups.append(flat[first : first + count])
    return groups


def dataset_stats(g: Graph, triplets: Sequence[tuple[int, int, int]] | np.ndarray, h: int) -> dict:
    rows = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    empty = directed = 0
    for a, r, b in rows.tolist():
        if a == b or extract_undirected(g, a, r, b, h) is None:
            empty += 1
        if a != b and extract_directed(g, a, r, b, h) is not None:
            directed += 1
    n = len(rows)
    return {
        "entities": g.num_entities,
        "relations": g.num_relations,
        "graph_triplets": g.num_triplets,
        "duplicates_dropped": g.duplicates,
        "queries": n,
        "empty_subgraph": empty,
        "empty_rate": empty / n if n else 0.0,
        "directed_subgraph": directed,
        "directed_rate": directed / n if n else 0.0,
    }


def encode_known(g: Graph, names: Sequence[tuple[str, str, str]]) -> tuple[np.ndarray, int]:
    """Encode triplets whose names all exist in ``g``; count the rest."""
    rows, unknown = [], 0
    ev, rv = g.entity_vocab, g.relation_vocab
    for h, r, t in names:
        if h in ev and t in ev and r in rv:
            rows.append((ev.id(h), rv.id(r), ev.id(t)))
        else:
            unknown += 1
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3), unknown


def graph_from_names(
    names: Sequence[tuple[str, str, str]], relations: Vocab | None = None
) -> Graph:
    ents = Vocab()
    rels = Vocab() if relations is None else relations
    rows = []
    for h, r, t in names:
        rid = rels.add(r) if relations is None else rels.id(r)
        rows.append((ents.add(h), rid, ents.add(t)))
    return Graph(rows, ents, rels)


RELATIONS_FILE = "relations.txt"


def write_relations(path: str | Path, relations: Vocab) -> None:
    Path(path).write_text("".join(f"{r}\n" for r in relations.names), encoding="utf-8")


def read_relations(path: str | Path) -> Vocab:
    return Vocab(line for line in Path(path).read_text(encoding="utf-8").splitlines() if line)


def load_dataset_graph(data_dir: str | Path, entity_splits: Sequence[str] = ("valid.txt",)) -> Graph:
    """``data_dir/train.txt`` as a graph, using ``relations.txt`` when present."""
    d = Path(data_dir)
    extra = [d / s for s in entity_splits if (d / s).exists()]
    vocab_file = d / RELATIONS_FILE
    vocabs = (Vocab(), read_relations(vocab_file)) if vocab_file.exists() else None
    return load_graph(d / "train.txt", vocabs=vocabs, entity_files=extra)


def filter_graph_fixpoint(names: Sequence[tuple[str, str, str]], h: int) -> tuple[list, int]:
    """Repeatedly drop graph triplets with empty subgraphs until none remain.

    Removing a triplet can empty another's subgraph, hence the loop; the
    result is stable under a second pass.
    """
    current = list(dict.fromkeys(names))
    dropped = 0
    while True:
        g = graph_from_names(current)
        rows = g.encode(current)
        keep = [i for i, row in enumerate(rows.tolist()) if has_subgraph(g, row, h)]
        if len(keep) == len(current):
            return current, dropped
        dropped += len(current) - len(keep)
        current = [current[i] for i in keep]


def preprocess(
    dataset_dir: str | Path,
    out_dir: str | Path,
    h: int = 3,
    seed: int = 0,
    n_neg: int = 1,
    test_dir: str | Path | None = None,
) -> dict:
    """Write a post-processed copy of a dataset.

    ``dataset_dir/train.txt`` is filtered to a fixpoint; ``valid.txt`` and
    ``test.txt`` (when present) are filtered against the filtered train
    graph and get ``*_neg.txt`` / ``*_neg.idx`` negatives. An inductive
    ``test_dir`` keeps its graph (``train.txt``) and has its queries
    filtered and negatives built the same way, written under ``out/ind``.
    """
    dataset_dir, out_dir = Path(dataset_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report: dict = {"hop": h, "seed": seed, "neg_per_pos": n_neg}

    raw_train = read_triplet_file(dataset_dir / "train.txt")
    train_names, dropped = filter_graph_fixpoint(raw_train, h)
    write_triplet_file(out_dir / "train.txt", train_names)
    report["train_kept"], report["train_dropped"] = len(train_names), dropped
    # filtering may remove every edge of a relation; keep the full vocabulary
    relations = Vocab(dict.fromkeys(r for _, r, _ in raw_train))
    write_relations(out_dir / RELATIONS_FILE, relations)
    g = graph_from_names(train_names, relations.copy())

    for split in ("valid", "test"):
        src = dataset_dir / f"{split}.txt"
        if src.exists():
            _process_queries(g, read_triplet_file(src), out_dir, split, h, seed, n_neg, report)

    if test_dir is not None:
        test_dir = Path(test_dir)
        ind_out = out_dir / "ind"
        ind_out.mkdir(exist_ok=True)
        graph_names = read_triplet_file(test_dir / "train.txt")
        write_triplet_file(ind_out / "train.txt", graph_names)
        tg = graph_from_names(graph_names, g.relation_vocab.copy())
        _process_queries(tg, read_triplet_file(test_dir / "test.txt"), ind_out, "test", h, seed, n_neg, report, "ind_")

    with open(out_dir / "preprocess.txt", "w", encoding="utf-8", newline="\n") as fh:
        for k, v in report.items():
            fh.write(f"{k}={v}\n")
    return report


def _process_queries(g, names, out, split, h, seed, n_neg, report, prefix=""):
    rows, unknown = encode_known(g, names)
    kept, dropped = filter_nonempty(g, rows, h)
    write_triplet_file(out / f"{split}.txt", (g.names(tuple(t)) for t in kept.tolist()))
    negs = materialize_negatives(g, kept, n_neg, h, seed)
    write_negatives(out / f"{split}_neg.txt", g, negs)
    report[f"{prefix}{split}_kept"] = len(kept)
    report[f"{prefix}{split}_dropped"] = dropped + unknown
    report[f"{prefix}{split}_neg_shortfalls"] = len(negs.shortfalls)
