"""Evaluation protocols over a test graph and its query triplets."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .extract import extract_many
from .graph import Graph
from .metrics import auc_pr, auc_roc, hits_at_k, rank_of
from .model import Model
from .trainer import EXCHANGE, MIXED, SamplingExhausted, sample_negative

PROTOCOLS = {
    "auc": "auc",
    "auc-one-negative": "auc",
    "hits": "hits",
    "hits-k": "hits",
    "exchange-ht": "exchange-ht",
}


@dataclass
class EvalReport:
    protocol: str
    auc_pr: float
    auc_roc: float
    hits_at_k: float
    k: int
    num_positives: int
    num_negatives: int
    empty_positives: int = 0
    empty_negatives: int = 0
    fallback_positives: int = 0
    fallback_negatives: int = 0
    sampling_shortfalls: int = 0
    rows: list[tuple[tuple[int, int, int], int, float, int]] = field(default_factory=list, repr=False)

    def summary(self, extra: dict | None = None) -> str:
        lines = [
            f"protocol={self.protocol}",
            f"auc_pr={self.auc_pr!r}",
            f"auc_roc={self.auc_roc!r}",
            f"hits_at_{self.k}={self.hits_at_k!r}",
            f"positives={self.num_positives}",
            f"negatives={self.num_negatives}",
            f"empty_positives={self.empty_positives}",
            f"empty_negatives={self.empty_negatives}",
            f"fallback_positives={self.fallback_positives}",
            f"fallback_negatives={self.fallback_negatives}",
            f"sampling_shortfalls={self.sampling_shortfalls}",
        ]
        for key, value in (extra or {}).items():
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def write_tsv(self, path: str | Path, graph: Graph) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("head\trelation\ttail\tlabel\tscore\trank\n")
            for trip, label, score, rank in self.rows:
                h, r, t = graph.names(trip)
                fh.write(f"{h}\t{r}\t{t}\t{label}\t{score!r}\t{rank}\n")


def score_groups(
    model: Model,
    graph: Graph,
    positives: Sequence[tuple[int, int, int]],
    negatives: Sequence[Sequence[tuple[int, int, int]]],
    protocol: str,
    k: int = 10,
    undirected: bool = False,
    workers: int = 1,
    shortfalls: int = 0,
) -> EvalReport:
    """Score each positive with its negative group and aggregate metrics."""
    hop = model.cfg.hop
    flat = list(positives) + [n for grp in negatives for n in grp]
    subs = extract_many(graph, flat, hop, undirected, workers)
    scores = model.score_subgraphs(subs)
    n_pos = len(positives)
    pos_scores = scores[:n_pos]
    neg_flat = scores[n_pos:]
    rows = []
    hits = []
    off = 0
    for i, grp in enumerate(negatives):
        ns = neg_flat[off : off + len(grp)]
        rows.append((tuple(positives[i]), 1, float(pos_scores[i]), rank_of(pos_scores[i], ns)))
        for j, trip in enumerate(grp):
            others = np.r_[pos_scores[i], np.delete(ns, j)]
            rows.append((tuple(trip), 0, float(ns[j]), rank_of(ns[j], others)))
        hits.append(hits_at_k(pos_scores[i], ns, k))
        off += len(grp)
    labels = [1] * n_pos + [0] * len(neg_flat)
    pos_subs, neg_subs = subs[:n_pos], subs[n_pos:]
    return EvalReport(
        protocol=protocol,
        auc_pr=auc_pr(labels, scores),
        auc_roc=auc_roc(labels, scores),
        hits_at_k=float(np.mean(hits)),
        k=k,
        num_positives=n_pos,
        num_negatives=len(neg_flat),
        empty_positives=sum(s is None for s in pos_subs),
        empty_negatives=sum(s is None for s in neg_subs),
        fallback_positives=sum(s is not None and not s.directed for s in pos_subs),
        fallback_negatives=sum(s is not None and not s.directed for s in neg_subs),
        sampling_shortfalls=shortfalls,
        rows=rows,
    )


def sample_groups(
    graph: Graph,
    positives: Sequence[tuple[int, int, int]],
    protocol: str,
    n_neg: int,
    seed: int,
    require_subgraph: bool,
    hop: int,
) -> tuple[list[list[tuple[int, int, int]]], int]:
    """Negative groups for a protocol and the number of constrained-draw failures."""
    rng = np.random.default_rng(seed)
    known = graph.triplet_set() | {tuple(p) for p in positives}
    groups, shortfalls = [], 0
    for pos in positives:
        if protocol == "exchange-ht":
            groups.append([sample_negative(graph, pos, EXCHANGE, rng)])
            continue
        count = 1 if protocol == "auc" else n_neg
        grp = []
        for _ in range(count):
            try:
                grp.append(sample_negative(graph, pos, MIXED, rng, require_subgraph, hop, known))
            except SamplingExhausted:
                shortfalls += 1
                grp.append(sample_negative(graph, pos, MIXED, rng, False, hop, known))
        groups.append(grp)
    return groups, shortfalls


def run_protocol(
    graph: Graph,
    triplets: np.ndarray | Sequence[tuple[int, int, int]],
    model: Model,
    protocol: str,
    require_subgraph: bool = False,
    n_neg: int = 50,
    k: int = 10,
    seed: int = 0,
    undirected: bool = False,
    workers: int = 1,
) -> EvalReport:
    """Evaluate ``model`` on query ``triplets`` over ``graph``.

    ``auc``: one replace-head/tail negative per positive; ``hits``: ``n_neg``
    such negatives; ``exchange-ht``: the reversed triplet. With
    ``require_subgraph`` replacement negatives must have a nonempty
    enclosing subgraph (falling back to unconstrained draws, counted as
    shortfalls, when the retry budget runs out).
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {sorted(PROTOCOLS)}")
    protocol = PROTOCOLS[protocol]
    positives = [tuple(int(x) for x in row) for row in np.asarray(triplets).reshape(-1, 3)]
    positives = [p for p in positives if p[0] != p[2]]
    if not positives:
        raise ValueError("empty test set")
    groups, shortfalls = sample_groups(
        graph, positives, protocol, n_neg, seed, require_subgraph, model.cfg.hop
    )
    return score_groups(model, graph, positives, groups, protocol, k, undirected, workers, shortfalls)


def average_reports(reports: Sequence[EvalReport]) -> dict[str, float]:
    return {
        "auc_pr": float(np.mean([r.auc_pr for r in reports])),
        "auc_roc": float(np.mean([r.auc_roc for r in reports])),
        "hits_at_k": float(np.mean([r.hits_at_k for r in reports])),
    }
