"""Two-layer LSTM decoder with bilinear attention over encoder node states."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .encoder import GraphBatch
from .numeric import ParamStore, Tensor, ops, xavier_init


class DecoderError(ValueError):
    pass


@dataclass
class DecoderConfig:
    hidden: int = 512
    embed: int = 512
    layers: int = 2


@dataclass
class DecoderState:
    h: list[Tensor]
    c: list[Tensor]
    context: Tensor


@dataclass
class Memory:
    """Padded encoder output for a batch: ``states`` is ``(B, Nmax, d_h)``."""

    states: Tensor
    keys: Tensor  # states projected through the attention matrix, (B, Nmax, d_dec)
    mask: np.ndarray

    def select(self, rows: np.ndarray) -> "Memory":
        return Memory(ops.take(self.states, rows), ops.take(self.keys, rows), self.mask[rows])


def init_decoder_params(
    params: ParamStore, cfg: DecoderConfig, enc_hidden: int, tgt_vocab_size: int, rng: np.random.Generator
) -> None:
    dt = params.dtype
    H = cfg.hidden
    params.add("dec.init", xavier_init((enc_hidden, 2 * cfg.layers * H), rng, dt))
    params.add("dec.embed", xavier_init((tgt_vocab_size, cfg.embed), rng, dt))
    for layer in range(cfg.layers):
        d_in = cfg.embed if layer == 0 else H
        params.add(f"dec.lstm{layer}.W_x", xavier_init((d_in, 4 * H), rng, dt))
        params.add(f"dec.lstm{layer}.W_h", xavier_init((H, 4 * H), rng, dt))
        # gate order i, f, o, g; every bias (forget included) starts at zero
        params.add(f"dec.lstm{layer}.b", np.zeros(4 * H, dtype=dt))
    params.add("dec.att.W_a", xavier_init((H, enc_hidden), rng, dt))
    params.add("dec.out.W_o", xavier_init((H + enc_hidden, H), rng, dt))
    params.add("dec.out.W_v", xavier_init((H, tgt_vocab_size), rng, dt))
    params.add("dec.out.b_v", np.zeros(tgt_vocab_size, dtype=dt))


def make_memory(params: ParamStore, node_states: Tensor, batch: GraphBatch) -> Memory:
    states = ops.take(node_states, batch.pad_index)
    keys = states @ ops.transpose(params["dec.att.W_a"])
    return Memory(states, keys, batch.mask)


def init_state(params: ParamStore, cfg: DecoderConfig, node_states: Tensor, batch: GraphBatch) -> DecoderState:
    """``tanh(mean(node states) @ W_init)``, split into per-layer hidden and cell vectors."""
    if batch.num_nodes == 0 or np.any(batch.sizes == 0):
        raise DecoderError("cannot initialise the decoder from an empty graph")
    sums = ops.scatter_add(node_states, batch.graph_index, batch.num_graphs)
    mean = sums * (1.0 / batch.sizes[:, None]).astype(node_states.dtype)
    full = ops.tanh(mean @ params["dec.init"])
    H = cfg.hidden
    parts = [full[:, i * H : (i + 1) * H] for i in range(2 * cfg.layers)]
    ctx = Tensor(np.zeros((batch.num_graphs, node_states.shape[1]), dtype=node_states.dtype))
    return DecoderState(h=parts[0::2], c=parts[1::2], context=ctx)


def attention(params: ParamStore, h_dec: Tensor, memory: Memory) -> tuple[Tensor, Tensor]:
    """Bilinear scores ``h_dec^T W_a h_enc``, masked softmax, weighted sum of states."""
    if not np.all(memory.mask.any(axis=1)):
        raise DecoderError("attention over a fully masked graph")
    B = h_dec.shape[0]
    scores = ops.reshape(memory.keys @ ops.reshape(h_dec, (B, -1, 1)), (B, -1))
    weights = ops.masked_softmax(scores, memory.mask, axis=1)
    context = ops.reshape(ops.reshape(weights, (B, 1, -1)) @ memory.states, (B, -1))
    return context, weights


def lstm_cell(params: ParamStore, layer: int, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    gates = x @ params[f"dec.lstm{layer}.W_x"] + h @ params[f"dec.lstm{layer}.W_h"] + params[f"dec.lstm{layer}.b"]
    H = h.shape[1]
    i = ops.sigmoid(gates[:, 0:H])
    f = ops.sigmoid(gates[:, H : 2 * H])
    o = ops.sigmoid(gates[:, 2 * H : 3 * H])
    g = ops.tanh(gates[:, 3 * H : 4 * H])
    c_new = f * c + i * g
    return o * ops.tanh(c_new), c_new


def decode_step(
    params: ParamStore, state: DecoderState, prev_ids: np.ndarray, memory: Memory
) -> tuple[Tensor, DecoderState, Tensor]:
    """One teacher-forced or free-running step for a batch of sentences."""
    prev_ids = np.asarray(prev_ids, dtype=np.int64)
    vocab = params["dec.embed"].shape[0]
    if prev_ids.size and (prev_ids.min() < 0 or prev_ids.max() >= vocab):
        raise DecoderError(f"token id out of range for a vocabulary of {vocab}")
    x = ops.embedding_lookup(params["dec.embed"], prev_ids)
    hs, cs = [], []
    for layer in range(len(state.h)):
        h, c = lstm_cell(params, layer, x, state.h[layer], state.c[layer])
        hs.append(h)
        cs.append(c)
        x = h
    context, weights = attention(params, x, memory)
    combined = ops.tanh(ops.concat([x, context], axis=1) @ params["dec.out.W_o"])
    logits = combined @ params["dec.out.W_v"] + params["dec.out.b_v"]
    return logits, DecoderState(hs, cs, context), weights


def select_state(state: DecoderState, rows: np.ndarray) -> DecoderState:
    return DecoderState(
        h=[ops.take(h, rows) for h in state.h],
        c=[ops.take(c, rows) for c in state.c],
        context=ops.take(state.context, rows),
    )


def sequence_loss(
    params: ParamStore,
    cfg: DecoderConfig,
    node_states: Tensor,
    batch: GraphBatch,
    inputs: np.ndarray,
    outputs: np.ndarray,
    mask: np.ndarray,
) -> Tensor:
    """Teacher-forced mean token cross-entropy.

    ``inputs``/``outputs``/``mask`` are ``(B, T)``: the target shifted right
    behind the start token, the target followed by the end token, and the
    non-padding indicator.
    """
    if mask.sum() == 0:
        raise DecoderError("empty target batch")
    memory = make_memory(params, node_states, batch)
    state = init_state(params, cfg, node_states, batch)
    steps: list[Tensor] = []
    T = inputs.shape[1]
    for t in range(T):
        if not mask[:, t].any():
            break
        logits, state, _ = decode_step(params, state, inputs[:, t], memory)
        steps.append(logits)
    used = len(steps)
    all_logits = ops.concat(steps, axis=0)
    return ops.cross_entropy(all_logits, outputs[:, :used].T.reshape(-1), mask[:, :used].T.reshape(-1))


def pad_targets(seqs: Sequence[Sequence[int]], bos: int, eos: int, pad: int, width: Optional[int] = None):
    """Build teacher-forcing arrays; ``width`` counts the end token."""
    T = max(len(s) for s in seqs) + 1
    if width is not None:
        T = max(T, width)
    B = len(seqs)
    inputs = np.full((B, T), pad, dtype=np.int64)
    outputs = np.full((B, T), pad, dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    for b, s in enumerate(seqs):
        n = len(s)
        inputs[b, 0] = bos
        inputs[b, 1 : n + 1] = s
        outputs[b, :n] = s
        outputs[b, n] = eos
        mask[b, : n + 1] = True
    return inputs, outputs, mask
