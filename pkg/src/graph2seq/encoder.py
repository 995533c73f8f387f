"""Gated graph encoder over augmented Levi graphs.

One propagation step, for node ``v`` with incoming edges ``e = (u, v, l)``
and ``c_v = 1 / |in-edges of v|``::

    r_v  = sigmoid(c_v * sum_e (h_u W^r_l + b^r_l))
    z_v  = sigmoid(c_v * sum_e (h_u W^z_l + b^z_l))
    h~_v = tanh(c_v * sum_e ((r_u * h_u) W_l + b_l))
    h'_v = (1 - z_v) * h_v + z_v * h~_v

The reset gate is applied to the *sender* state.  Parameters are shared by
all steps, so the number of layers costs nothing in parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import AMR_TAGS, NUM_POSITIONS, EdgeTag, LeviGraph
from .numeric import ParamStore, Tensor, ops, xavier_init
from .vocab import Vocabulary


class EncoderError(ValueError):
    pass


@dataclass
class EncoderConfig:
    hidden: int = 576
    layers: int = 8
    pos_dim: int = 64
    tags: tuple[EdgeTag, ...] = AMR_TAGS
    dropout: float = 0.5

    def __post_init__(self) -> None:
        self.tags = tuple(EdgeTag(t) for t in self.tags)
        if self.layers < 0:
            raise ValueError("layers must be non-negative")
        if not 0 < self.pos_dim < self.hidden:
            raise ValueError("pos_dim must lie strictly between 0 and hidden")

    @property
    def node_dim(self) -> int:
        return self.hidden - self.pos_dim


@dataclass
class GraphBatch:
    """Disjoint union of several graphs, flattened for propagation."""

    labels: np.ndarray  # (N,) source-vocabulary ids
    positions: np.ndarray  # (N,)
    edges: dict[EdgeTag, tuple[np.ndarray, np.ndarray]]
    norm: np.ndarray  # (N, 1): 1 / in-degree
    graph_index: np.ndarray  # (N,)
    pad_index: np.ndarray  # (B, Nmax): row of each padded slot in the flat layout
    mask: np.ndarray  # (B, Nmax) bool
    sizes: np.ndarray  # (B,)
    graphs: list[LeviGraph] = field(repr=False, default_factory=list)

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)


def batch_graphs(
    graphs: Sequence[LeviGraph],
    vocab: Vocabulary,
    tags: Sequence[EdgeTag],
    pad_to: Optional[int] = None,
) -> GraphBatch:
    if not graphs:
        raise EncoderError("empty graph batch")
    tags = tuple(tags)
    labels, positions, gidx = [], [], []
    srcs: dict[EdgeTag, list[int]] = {t: [] for t in tags}
    dsts: dict[EdgeTag, list[int]] = {t: [] for t in tags}
    offset = 0
    sizes = []
    for b, g in enumerate(graphs):
        if len(g.positions) != g.num_nodes:
            raise EncoderError("graph has no positions; run compute_positions first")
        labels.extend(vocab.encode(g.labels))
        positions.extend(g.positions)
        gidx.extend([b] * g.num_nodes)
        for s, d, t in g.edges:
            if t not in srcs:
                raise EncoderError(f"edge tag {t.value!r} is not in the configured tag set")
            srcs[t].append(s + offset)
            dsts[t].append(d + offset)
        sizes.append(g.num_nodes)
        offset += g.num_nodes
    indeg = np.zeros(offset)
    for t in tags:
        np.add.at(indeg, np.asarray(dsts[t], dtype=np.int64), 1)
    if np.any(indeg == 0):
        raise EncoderError("node without incoming edges; augment() the graph to add self edges")
    width = max(sizes) if pad_to is None else max(pad_to, max(sizes))
    pad_index = np.zeros((len(graphs), width), dtype=np.int64)
    mask = np.zeros((len(graphs), width), dtype=bool)
    start = 0
    for b, n in enumerate(sizes):
        pad_index[b, :n] = np.arange(start, start + n)
        mask[b, :n] = True
        start += n
    return GraphBatch(
        labels=np.asarray(labels, dtype=np.int64),
        positions=np.asarray(positions, dtype=np.int64),
        edges={t: (np.asarray(srcs[t], dtype=np.int64), np.asarray(dsts[t], dtype=np.int64)) for t in tags},
        norm=(1.0 / indeg)[:, None],
        graph_index=np.asarray(gidx, dtype=np.int64),
        pad_index=pad_index,
        mask=mask,
        sizes=np.asarray(sizes, dtype=np.int64),
        graphs=list(graphs),
    )


def init_encoder_params(params: ParamStore, cfg: EncoderConfig, src_vocab_size: int, rng: np.random.Generator) -> None:
    dt = params.dtype
    params.add("enc.node_embed", xavier_init((src_vocab_size, cfg.node_dim), rng, dt))
    params.add("enc.pos_embed", xavier_init((NUM_POSITIONS, cfg.pos_dim), rng, dt))
    d = cfg.hidden
    for tag in cfg.tags:
        for gate in ("W_r", "W_z", "W"):
            params.add(f"enc.{tag.value}.{gate}", xavier_init((d, d), rng, dt))
        for gate in ("b_r", "b_z", "b"):
            params.add(f"enc.{tag.value}.{gate}", np.zeros(d, dtype=dt))


def propagation_param_count(params: ParamStore) -> int:
    return sum(t.data.size for n, t in params.items() if n.startswith("enc.") and "embed" not in n)


def embed_nodes(
    params: ParamStore,
    batch: GraphBatch,
    cfg: EncoderConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    x = ops.concat(
        [
            ops.embedding_lookup(params["enc.node_embed"], batch.labels),
            ops.embedding_lookup(params["enc.pos_embed"], batch.positions),
        ],
        axis=1,
    )
    return ops.dropout(x, cfg.dropout, rng, training)


def _aggregate(h: Tensor, batch: GraphBatch, params: ParamStore, tags, gate: str, bias: str) -> Tensor:
    total = None
    for tag in tags:
        src, dst = batch.edges[tag]
        if len(src) == 0:
            continue
        msg = ops.embedding_lookup(h, src) @ params[f"enc.{tag.value}.{gate}"] + params[f"enc.{tag.value}.{bias}"]
        part = ops.scatter_add(msg, dst, batch.num_nodes)
        total = part if total is None else total + part
    return total


def ggnn_layer(h: Tensor, batch: GraphBatch, params: ParamStore, tags: Sequence[EdgeTag]) -> Tensor:
    if batch.num_nodes and np.any(batch.norm == np.inf):
        raise EncoderError("isolated node; augment the graph first")
    norm = batch.norm.astype(h.dtype)
    r = ops.sigmoid(_aggregate(h, batch, params, tags, "W_r", "b_r") * norm)
    z = ops.sigmoid(_aggregate(h, batch, params, tags, "W_z", "b_z") * norm)
    cand = ops.tanh(_aggregate(r * h, batch, params, tags, "W", "b") * norm)
    return h + z * (cand - h)


def encode(
    params: ParamStore,
    batch: GraphBatch,
    cfg: EncoderConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Final node states, one row per node of the flattened batch."""
    h = embed_nodes(params, batch, cfg, training, rng)
    for _ in range(cfg.layers):
        h = ggnn_layer(h, batch, params, cfg.tags)
    return h
