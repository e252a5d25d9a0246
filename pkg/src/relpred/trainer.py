"""Negative sampling, margin ranking loss and the training loop."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from . import autodiff as ad
from .extract import Subgraph, extract, extract_many, extract_undirected
from .graph import Graph
from .metrics import auc_pr
from .model import EMPTY_SCORE, Model, ModelConfig, make_batch

log = logging.getLogger(__name__)

REPLACE_HEAD, REPLACE_TAIL, EXCHANGE, MIXED = "replace-head", "replace-tail", "exchange-ht", "mixed"
RETRY_BUDGET = 200


class ConfigError(ValueError):
    pass


class SamplingExhausted(RuntimeError):
    """No valid negative found within the retry budget."""


@dataclass
class TrainConfig:
    lr: float = 0.001
    epochs: int = 50
    batch_size: int = 16
    margin: float = 10.0
    neg_per_pos: int = 1
    seed: int = 1
    patience: int = 10
    runs: int = 4
    clip_norm: float = 10.0
    require_subgraph: bool = False
    undirected: bool = False
    workers: int = 1
    log_wallclock: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.neg_per_pos < 1:
            raise ConfigError("neg_per_pos must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def sample_negative(
    g: Graph,
    pos: tuple[int, int, int],
    mode: str,
    rng: np.random.Generator,
    require_subgraph: bool = False,
    hop: int = 3,
    known: set | None = None,
    max_tries: int = RETRY_BUDGET,
) -> tuple[int, int, int]:
    """Corrupt ``pos`` into a triplet absent from ``g`` (and from ``known``).

    ``exchange-ht`` swaps head and tail and is returned as is. The replace
    modes draw the new entity uniformly; with ``require_subgraph`` only
    candidates with a nonempty undirected enclosing subgraph are accepted.
    """
    h, r, t = (int(x) for x in pos)
    if mode == EXCHANGE:
        return (t, r, h)
    if g.num_entities < 2:
        raise SamplingExhausted("graph has fewer than two entities")
    for _ in range(max_tries):
        which = mode if mode != MIXED else (REPLACE_HEAD if rng.random() < 0.5 else REPLACE_TAIL)
        e = int(rng.integers(g.num_entities))
        cand = (e, r, t) if which == REPLACE_HEAD else (h, r, e)
        if cand[0] == cand[2] or cand == (h, r, t):
            continue
        if cand in g or (known is not None and cand in known):
            continue
        if require_subgraph and extract_undirected(g, cand[0], r, cand[2], hop) is None:
            continue
        return cand
    raise SamplingExhausted(f"no valid negative for {pos} after {max_tries} draws")


def margin_loss(pos_scores, neg_scores, margin: float) -> ad.Tensor:
    """Mean over pairs of max(0, margin - pos + neg).

    ``neg_scores`` holds ``n`` consecutive negatives per positive.
    """
    pos = pos_scores if isinstance(pos_scores, ad.Tensor) else ad.constant(np.reshape(pos_scores, (-1, 1)))
    neg = neg_scores if isinstance(neg_scores, ad.Tensor) else ad.constant(np.reshape(neg_scores, (-1, 1)))
    if margin <= 0:
        raise ValueError("margin must be > 0")
    if neg.rows % pos.rows:
        raise ad.ShapeError("negatives are not a whole multiple of positives")
    per = neg.rows // pos.rows
    aligned = ad.row_select(pos, np.repeat(np.arange(pos.rows), per))
    return ad.mean_all(ad.relu(ad.shift(neg - aligned, margin)))


@dataclass
class TrainResult:
    model: Model
    records: list[dict]
    best_valid: float
    best_epoch: int


def _fmt(record: dict) -> str:
    parts = []
    for k, v in record.items():
        parts.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(parts)


def evaluate_auc_pr(
    model: Model,
    pos_subs: Sequence[Subgraph | None],
    neg_subs: Sequence[Subgraph | None],
    batch_size: int = 64,
) -> float:
    scores = model.score_subgraphs(list(pos_subs) + list(neg_subs), batch_size=batch_size)
    labels = [1] * len(pos_subs) + [0] * len(neg_subs)
    return auc_pr(labels, scores)


def fit(
    graph: Graph,
    valid: np.ndarray | Sequence[tuple[int, int, int]],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    log_file: TextIO | None = None,
    checkpoint: str | Path | None = None,
    on_record: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train on every triplet of ``graph``; select on validation AUC-PR."""
    hop, undirected = model_cfg.hop, train_cfg.undirected
    rng = np.random.default_rng(train_cfg.seed)
    drop_rng = np.random.default_rng([train_cfg.seed, 1])
    model = Model(model_cfg, graph.num_relations, seed=train_cfg.seed,
                  relation_names=graph.relation_vocab.names)
    opt = ad.Adam(model.parameters(), lr=train_cfg.lr)
    records: list[dict] = []
    t0 = time.monotonic()

    def emit(rec: dict) -> None:
        if train_cfg.log_wallclock:
            rec["timestamp"] = round(time.monotonic() - t0, 3)
        records.append(rec)
        if log_file is not None:
            log_file.write(_fmt(rec) + "\n")
            log_file.flush()
        if on_record is not None:
            on_record(rec)

    triplets = [tuple(int(x) for x in row) for row in graph.triplets() if row[0] != row[2]]
    subs = extract_many(graph, triplets, hop, undirected, train_cfg.workers)
    pairs = [(tr, s) for tr, s in zip(triplets, subs) if s is not None]
    if not pairs:
        raise ConfigError("no training triplet has a nonempty enclosing subgraph")
    emit({"kind": "data", "positives": len(pairs), "skipped_empty": len(triplets) - len(pairs),
          "fallback": sum(not s.directed for _, s in pairs)})

    valid = [tuple(int(x) for x in row) for row in np.asarray(valid).reshape(-1, 3)]
    valid = [v for v in valid if v[0] != v[2]]
    known = graph.triplet_set() | set(valid)
    valid_rng = np.random.default_rng([train_cfg.seed, 2])
    valid_neg = []
    for v in valid:
        try:
            valid_neg.append(sample_negative(graph, v, MIXED, valid_rng, train_cfg.require_subgraph, hop, known))
        except SamplingExhausted:
            valid_neg.append(sample_negative(graph, v, MIXED, valid_rng, False, hop, known))
    valid_pos_subs = extract_many(graph, valid, hop, undirected, train_cfg.workers)
    valid_neg_subs = extract_many(graph, valid_neg, hop, undirected, train_cfg.workers)

    best = -1.0
    best_epoch = 0
    best_params = {k: v.data.copy() for k, v in model.params.items()}
    stale = 0
    n_neg = train_cfg.neg_per_pos
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(pairs))
        epoch_loss = []
        for b, start in enumerate(range(0, len(order), train_cfg.batch_size), start=1):
            chunk = [pairs[i] for i in order[start : start + train_cfg.batch_size]]
            negs = []
            for tr, _ in chunk:
                for _ in range(n_neg):
                    try:
                        negs.append(sample_negative(graph, tr, MIXED, rng, train_cfg.require_subgraph, hop, known))
                    except SamplingExhausted:
                        negs.append(sample_negative(graph, tr, MIXED, rng, False, hop, known))
            neg_subs = [extract(graph, a, r, c, hop, undirected) for a, r, c in negs]
            loss = _train_step(model, opt, chunk, neg_subs, train_cfg, drop_rng)
            epoch_loss.append(loss)
            emit({"kind": "batch", "epoch": epoch, "batch": b, "loss": loss})
        score = evaluate_auc_pr(model, valid_pos_subs, valid_neg_subs) if valid else float("nan")
        improved = bool(valid) and score >= best
        if improved or not valid:
            best, best_epoch, stale = score, epoch, 0
            best_params = {k: v.data.copy() for k, v in model.params.items()}
        else:
            stale += 1
        emit({"kind": "epoch", "epoch": epoch, "mean_loss": float(np.mean(epoch_loss)),
              "valid_auc_pr": score, "best_epoch": best_epoch})
        if valid and stale >= train_cfg.patience:
            break

    for k, v in model.params.items():
        v.data[...] = best_params[k]
    if checkpoint is not None:
        meta = "\n".join(f"train.{k}={v}" for k, v in train_cfg.to_dict().items())
        model.save(checkpoint, metadata=meta)
    return TrainResult(model, records, best, best_epoch)


def _train_step(model: Model, opt: ad.Adam, chunk, neg_subs, cfg: TrainConfig, drop_rng) -> float:
    pos_subs = [s for _, s in chunk]
    live = [i for i, s in enumerate(neg_subs) if s is not None]
    subs = pos_subs + [neg_subs[i] for i in live]
    with ad.Tape() as tape:
        scores = model.forward(make_batch(subs, model.num_relations), train=True, rng=drop_rng)
        pos = ad.row_select(scores, np.arange(len(pos_subs)))
        # negatives without a subgraph take the constant sentinel score
        pool = ad.concat_rows([scores, ad.constant(np.full((1, 1), EMPTY_SCORE))])
        where = np.full(len(neg_subs), scores.rows, dtype=np.int64)
        where[live] = len(pos_subs) + np.arange(len(live))
        neg = ad.row_select(pool, where)
        loss = margin_loss(pos, neg, cfg.margin)
    tape.backward(loss)
    ad.clip_grad_norm(model.parameters(), cfg.clip_norm)
    opt.step()
    return loss.item()


def read_log(path: str | Path) -> list[dict]:
    """Parse a key=value training log back into records."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        rec = {}
        for part in line.split():
            k, v = part.split("=", 1)
            rec[k] = v
        out.append(rec)
    return out


def seeds_for_runs(base_seed: int, runs: int) -> Iterable[int]:
    return range(base_seed, base_seed + runs)
