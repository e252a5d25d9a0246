"""Communicative node-edge message passing over directed enclosing subgraphs.

A forward pass works on a :class:`Batch`, the disjoint union of several
subgraphs; a single subgraph is a batch of one.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import SparseOneHot, Tensor
from .extract import EmptySubgraphError, Subgraph

EMPTY_SCORE = -1.0e4

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "sigmoid": ad.sigmoid}
ATTENTION_MODES = ("enhanced", "relation", "none")


@dataclass
class ModelConfig:
    hop: int = 3
    iterations: int = 3
    dim: int = 32
    f1: str = "relu"
    f2: str = "tanh"
    edge_dropout: float = 0.5
    score_hidden: int = 16
    attention: str = "enhanced"  # "relation" = target-relation-only attention
    edge_update: bool = True
    edge_update_relation: bool = True

    def __post_init__(self):
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        if self.iterations < 2:
            raise ValueError("iterations must be >= 2")
        if self.dim < 1 or self.score_hidden < 1:
            raise ValueError("widths must be >= 1")
        if not 0.0 <= self.edge_dropout < 1.0:
            raise ValueError("edge_dropout must be in [0, 1)")
        if self.f1 not in ACTIVATIONS or self.f2 not in ACTIVATIONS:
            raise ValueError(f"activations must be one of {sorted(ACTIVATIONS)}")
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}")

    @property
    def label_width(self) -> int:
        return self.hop + 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def parameter_shapes(cfg: ModelConfig, num_relations: int) -> dict[str, tuple[int, int]]:
    """Name -> shape of every learnable tensor, in checkpoint order."""
    d, w = cfg.dim, cfg.label_width
    shapes: dict[str, tuple[int, int]] = {
        "rel_emb": (num_relations, d),
        "proj_node": (2 * w, d),
        "proj_edge": (4 * w + d, d),
    }
    for k in range(cfg.iterations):
        if cfg.attention != "none":
            shapes[f"attn{k}_w1"] = (2 * d, d)
            shapes[f"attn{k}_w2"] = (d, 1)
    for k in range(1, cfg.iterations):
        shapes[f"node{k}_w"] = (d, d)
        if cfg.edge_update:
            shapes[f"edge{k}_w"] = (d, d)
    shapes.update(
        {
            "mlp_w1": (3 * d, d),
            "mlp_b1": (1, d),
            "mlp_w2": (d, d),
            "mlp_b2": (1, d),
        }
    )
    for name in ad.GRU_NAMES:
        shapes[f"gru_{name}"] = (1, d) if name.startswith("b_") else (d, d)
    shapes.update(
        {
            "score_w1": (d, cfg.score_hidden),
            "score_b1": (1, cfg.score_hidden),
            "score_w2": (cfg.score_hidden, 1),
            "score_b2": (1, 1),
        }
    )
    return shapes


def count_parameters(cfg: ModelConfig, num_relations: int) -> int:
    return sum(r * c for r, c in parameter_shapes(cfg, num_relations).values())


def init_parameters(
    cfg: ModelConfig, num_relations: int, rng: np.random.Generator
) -> dict[str, Tensor]:
    """Xavier-uniform weights, zero biases, N(0, 1/sqrt(d)) relation table."""
    params = {}
    for name, (r, c) in parameter_shapes(cfg, num_relations).items():
        if name == "rel_emb":
            data = rng.normal(0.0, 1.0 / math.sqrt(cfg.dim), size=(r, c))
        elif "_b" in name:
            data = np.zeros((r, c))
        else:
            bound = math.sqrt(6.0 / (r + c))
            data = rng.uniform(-bound, bound, size=(r, c))
        params[name] = ad.parameter(data, name=name)
    return params


# -- batching ----------------------------------------------------------------


@dataclass
class Batch:
    """Disjoint union of subgraphs with global (batch) node/edge indices."""

    labels: np.ndarray  # (N, 2)
    edge_head: SparseOneHot  # N x E
    edge_rel: SparseOneHot  # R x E
    edge_tail: SparseOneHot  # N x E
    edge_graph: np.ndarray  # (E,) subgraph index of each edge
    target_head: np.ndarray  # (B,) batch node index
    target_tail: np.ndarray  # (B,)
    target_rel: np.ndarray  # (B,)
    sizes: np.ndarray  # (B,) node counts
    offsets: np.ndarray  # (B,) first node index per subgraph

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)

    @property
    def num_nodes(self) -> int:
        return len(self.labels)


def make_batch(subs: Sequence[Subgraph], num_relations: int, rels: Sequence[int] | None = None) -> Batch:
    """Stack subgraphs. ``rels`` overrides each subgraph's target relation."""
    if not subs:
        raise EmptySubgraphError("empty batch")
    sizes = np.array([s.num_nodes for s in subs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    labels, heads, erels, tails, graph_of = [], [], [], [], []
    th, tt, tr = [], [], []
    for i, (s, off) in enumerate(zip(subs, offsets)):
        if s.num_edges == 0:
            raise EmptySubgraphError("subgraph without edges cannot be scored")
        labels.append(s.labels)
        heads.append(s.edges[:, 0] + off)
        erels.append(s.edges[:, 1])
        tails.append(s.edges[:, 2] + off)
        graph_of.append(np.full(s.num_edges, i, dtype=np.int64))
        th.append(s.target[0] + off)
        tr.append(s.target[1] if rels is None else rels[i])
        tt.append(s.target[2] + off)
    n = int(sizes.sum())
    return Batch(
        labels=np.concatenate(labels),
        edge_head=SparseOneHot(np.concatenate(heads), n),
        edge_rel=SparseOneHot(np.concatenate(erels), num_relations),
        edge_tail=SparseOneHot(np.concatenate(tails), n),
        edge_graph=np.concatenate(graph_of),
        target_head=np.array(th, dtype=np.int64),
        target_tail=np.array(tt, dtype=np.int64),
        target_rel=np.array(tr, dtype=np.int64),
        sizes=sizes,
        offsets=offsets,
    )


# -- building blocks -------------------------------------------------------------


def init_node_embeddings(labels: np.ndarray, hop: int) -> np.ndarray:
    """One-hot(distance from head) ++ one-hot(distance to tail), width 2(h+2)."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1, 2)
    w = hop + 2
    if len(labels) and (labels.min() < 0 or labels.max() >= w):
        raise ValueError(f"distance label outside 0..{w - 1}")
    out = np.zeros((len(labels), 2 * w))
    rows = np.arange(len(labels))
    out[rows, labels[:, 0]] = 1.0
    out[rows, w + labels[:, 1]] = 1.0
    return out


def init_edge_embeddings(batch: Batch, node_init: Tensor, rel_emb: Tensor) -> Tensor:
    """Head-node init ++ relation row ++ tail-node init, one row per edge."""
    return ad.concat_cols(
        [
            ad.sparse_matmul(batch.edge_head, node_init, transpose=True),
            ad.sparse_matmul(batch.edge_rel, rel_emb, transpose=True),
            ad.sparse_matmul(batch.edge_tail, node_init, transpose=True),
        ]
    )


def project(node_init: Tensor, edge_init: Tensor, params, f1=ad.relu) -> tuple[Tensor, Tensor]:
    return f1(node_init @ params["proj_node"]), f1(edge_init @ params["proj_edge"])


def _translation(batch: Batch, nodes: Tensor, rel_emb: Tensor, with_relation: bool = True) -> Tensor:
    """Per-edge N[head] + R[rel] - N[tail]."""
    h = ad.sparse_matmul(batch.edge_head, nodes, transpose=True)
    t = ad.sparse_matmul(batch.edge_tail, nodes, transpose=True)
    if with_relation:
        h = h + ad.sparse_matmul(batch.edge_rel, rel_emb, transpose=True)
    return h - t


def target_translation(batch: Batch, nodes: Tensor, rel_emb: Tensor) -> Tensor:
    """Per-subgraph N[target head] + R[target rel] - N[target tail]."""
    return (
        ad.row_select(nodes, batch.target_head)
        + ad.row_select(rel_emb, batch.target_rel)
        - ad.row_select(nodes, batch.target_tail)
    )


def attention_weights(batch: Batch, nodes: Tensor, rel_emb: Tensor, params, k: int, cfg: ModelConfig) -> Tensor:
    """Per-edge scalar weight in (0, 1), shape (E, 1)."""
    f1 = ACTIVATIONS[cfg.f1]
    if cfg.attention == "relation":
        edge_vec = ad.sparse_matmul(batch.edge_rel, rel_emb, transpose=True)
        tgt_vec = ad.row_select(rel_emb, batch.target_rel)
    else:
        edge_vec = _translation(batch, nodes, rel_emb)
        tgt_vec = target_translation(batch, nodes, rel_emb)
    feats = ad.concat_cols([edge_vec, ad.row_select(tgt_vec, batch.edge_graph)])
    return ad.sigmoid(f1(feats @ params[f"attn{k}_w1"]) @ params[f"attn{k}_w2"])


def edge_attention(batch: Batch, nodes: Tensor, edges: Tensor, rel_emb: Tensor, params, k: int, cfg: ModelConfig) -> Tensor:
    """Edge embeddings scaled by their attention weight (identity when disabled)."""
    if cfg.attention == "none":
        return edges
    return ad.scale_rows(edges, attention_weights(batch, nodes, rel_emb, params, k, cfg))


def aggregate_incoming(batch: Batch, attn_edges: Tensor) -> Tensor:
    """Each node sums the embeddings of edges it is the tail of."""
    return ad.sparse_matmul(batch.edge_tail, attn_edges)


def gru_scan(batch: Batch, x: Tensor, params) -> Tensor:
    """Run the GRU along each subgraph's node order from a zero state.

    Row i of the result is the hidden state right after consuming node i.
    Subgraphs are processed together: at step t every subgraph with more
    than t nodes consumes its t-th node.
    """
    gru = {name: params[f"gru_{name}"] for name in ad.GRU_NAMES}
    order = np.argsort(-batch.sizes, kind="stable")
    sizes = batch.sizes[order]
    offsets = batch.offsets[order]
    hidden = ad.constant(np.zeros((len(order), x.cols)))
    steps, step_nodes = [], []
    for t in range(int(sizes[0])):
        active = int((sizes > t).sum())
        if active < hidden.rows:
            hidden = ad.row_select(hidden, np.arange(active))
        idx = offsets[:active] + t
        hidden = ad.gru_cell(ad.row_select(x, idx), hidden, gru)
        steps.append(hidden)
        step_nodes.append(idx)
    stacked = ad.concat_rows(steps)
    where = np.empty(batch.num_nodes, dtype=np.int64)
    where[np.concatenate(step_nodes)] = np.arange(batch.num_nodes)
    return ad.row_select(stacked, where)


def node_update(
    batch: Batch,
    prev: Tensor,
    attn_edges: Tensor,
    params,
    k: int,
    cfg: ModelConfig,
    last: bool = False,
    first: Tensor | None = None,
) -> Tensor:
    f1 = ACTIVATIONS[cfg.f1]
    agg = aggregate_incoming(batch, attn_edges)
    if not last:
        return f1((agg + prev) @ params[f"node{k}_w"])
    if first is None:
        raise ValueError("the last node update needs the projected node embeddings")
    hid = f1(ad.add_bias(ad.concat_cols([agg, prev, first]) @ params["mlp_w1"], params["mlp_b1"]))
    mixed = ad.add_bias(hid @ params["mlp_w2"], params["mlp_b2"])
    return gru_scan(batch, mixed, params)


def edge_update(
    batch: Batch,
    prev: Tensor,
    first: Tensor,
    nodes: Tensor,
    rel_emb: Tensor,
    params,
    k: int,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    f1, f2 = ACTIVATIONS[cfg.f1], ACTIVATIONS[cfg.f2]
    agg = _translation(batch, nodes, rel_emb, with_relation=cfg.edge_update_relation)
    mixed = f1(prev + f2(agg))
    out = f1(mixed @ params[f"edge{k}_w"] + first)
    return ad.dropout(out, cfg.edge_dropout, train, rng)


def score_head(batch: Batch, nodes: Tensor, rel_emb: Tensor, params, cfg: ModelConfig) -> Tensor:
    """(B, 1) scores from f2(N[head] + R[rel] - N[tail]) through a 2-layer MLP."""
    f1, f2 = ACTIVATIONS[cfg.f1], ACTIVATIONS[cfg.f2]
    s = f2(target_translation(batch, nodes, rel_emb))
    hid = f1(ad.add_bias(s @ params["score_w1"], params["score_b1"]))
    return ad.add_bias(hid @ params["score_w2"], params["score_b2"])


def forward(
    batch: Batch,
    params,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> Tensor:
    """Scores for every subgraph in the batch, shape (B, 1)."""
    rel_emb = params["rel_emb"]
    f1 = ACTIVATIONS[cfg.f1]
    node_init = ad.constant(init_node_embeddings(batch.labels, cfg.hop))
    edge_init = init_edge_embeddings(batch, node_init, rel_emb)
    n0, e0 = project(node_init, edge_init, params, f1)
    nodes, edges = n0, e0
    for k in range(1, cfg.iterations + 1):
        last = k == cfg.iterations
        attn = edge_attention(batch, nodes, edges, rel_emb, params, k - 1, cfg)
        if trace is not None:
            trace.append(("attention", k))
        nodes = node_update(batch, nodes, attn, params, k, cfg, last=last, first=n0)
        if trace is not None:
            trace.append(("node_update", k))
        if not last and cfg.edge_update:
            edges = edge_update(batch, edges, e0, nodes, rel_emb, params, k, cfg, train, rng)
            if trace is not None:
                trace.append(("edge_update", k))
    out = score_head(batch, nodes, rel_emb, params, cfg)
    if trace is not None:
        trace.append(("score", cfg.iterations))
    return out


class Model:
    """Parameters plus configuration, with scoring helpers."""

    def __init__(
        self,
        cfg: ModelConfig,
        num_relations: int,
        seed: int = 0,
        params: dict[str, Tensor] | None = None,
        relation_names: Sequence[str] | None = None,
    ):
        self.cfg = cfg
        self.num_relations = num_relations
        self.relation_names = list(relation_names) if relation_names is not None else None
        self.params = params if params is not None else init_parameters(
            cfg, num_relations, np.random.default_rng(seed)
        )
        expected = parameter_shapes(cfg, num_relations)
        got = {k: v.shape for k, v in self.params.items()}
        if got != expected:
            raise ValueError("parameter set does not match the configuration")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return count_parameters(self.cfg, self.num_relations)

    def forward(self, batch: Batch, train: bool = False, rng=None) -> Tensor:
        return forward(batch, self.params, self.cfg, train, rng)

    def score_subgraphs(
        self,
        subs: Sequence[Subgraph | None],
        rels: Sequence[int] | None = None,
        batch_size: int = 64,
    ) -> np.ndarray:
        """Eval-mode scores; ``None`` (empty) subgraphs get ``EMPTY_SCORE``."""
        out = np.full(len(subs), EMPTY_SCORE)
        live = [i for i, s in enumerate(subs) if s is not None]
        for start in range(0, len(live), batch_size):
            chunk = live[start : start + batch_size]
            batch = make_batch(
                [subs[i] for i in chunk],  # type: ignore[misc]
                self.num_relations,
                None if rels is None else [rels[i] for i in chunk],
            )
            out[chunk] = self.forward(batch).data[:, 0]
        return out

    def score(self, sub: Subgraph | None, rel: int | None = None) -> float:
        return float(self.score_subgraphs([sub], None if rel is None else [rel])[0])

    # checkpoints
    def save(self, path, metadata: str = "") -> None:
        meta_lines = [f"{k}={v}" for k, v in self.cfg.to_dict().items()]
        if self.relation_names is not None:
            meta_lines += [f"relation={name}" for name in self.relation_names]
        if metadata:
            meta_lines.append(metadata.rstrip("\n"))
        ad.save_checkpoint(
            path,
            self.params,
            {
                "hop": self.cfg.hop,
                "iterations": self.cfg.iterations,
                "dim": self.cfg.dim,
                "num_relations": self.num_relations,
            },
            "\n".join(meta_lines) + "\n",
        )

    @classmethod
    def load(cls, path) -> "Model":
        arrays, header, metadata = ad.load_checkpoint(path)
        raw: dict[str, str] = {}
        relation_names = []
        for line in metadata.splitlines():
            if "=" not in line:
                continue
            key, value = line.split("=", 1)
            if key == "relation":
                relation_names.append(value)
            else:
                raw.setdefault(key, value)
        cfg = ModelConfig.from_dict({k: _coerce(ModelConfig, k, v) for k, v in raw.items()})
        if (cfg.hop, cfg.iterations, cfg.dim) != (header["hop"], header["iterations"], header["dim"]):
            raise ad.CheckpointError("checkpoint header disagrees with its metadata")
        params = {k: ad.parameter(v, name=k) for k, v in arrays.items()}
        return cls(cfg, header["num_relations"], params=params, relation_names=relation_names or None)


def _coerce(cls, key: str, value: str):
    types = {f.name: f.type for f in fields(cls)}
    kind = types.get(key)
    if kind is None:
        return value
    kind = kind if isinstance(kind, str) else kind.__name__
    if kind == "bool":
        return value.strip().lower() in ("1", "true", "yes", "on")
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value
