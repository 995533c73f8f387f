"""Beam search, ensembles, unknown-word replacement and decoded-output handling."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .graph import LeviGraph
from .vocab import BOS_ID, EOS_ID, UNK_ID, Vocabulary

log = logging.getLogger(__name__)

MAX_DECODE_LEN = 200


class InferenceError(ValueError):
    pass


class StepModel(Protocol):
    tgt_vocab: Vocabulary

    def start(self, graph: LeviGraph): ...

    def step(self, memory, state, prev: np.ndarray): ...

    def reorder(self, memory, state, rows: np.ndarray): ...


@dataclass
class Hypothesis:
    tokens: list[int] = field(default_factory=list)
    logprob: float = 0.0
    attention: list[np.ndarray] = field(default_factory=list)
    finished: bool = False

    @property
    def length(self) -> int:
        # the end token counts when it was emitted
        return len(self.tokens) + (1 if self.finished else 0)

    @property
    def score(self) -> float:
        return self.logprob / max(self.length, 1)


@dataclass
class BeamResult:
    tokens: list[int]
    score: float
    logprob: float
    attention: np.ndarray  # (steps, nodes); one row per emitted token including the end token
    finished: bool


def default_max_len(graph: LeviGraph) -> int:
    return min(2 * graph.num_nodes + 10, MAX_DECODE_LEN)


class Ensemble:
    """Several models decoded in lockstep: log-probabilities and attention are averaged."""

    def __init__(self, models: Sequence[StepModel]):
        if not models:
            raise InferenceError("an ensemble needs at least one model")
        first = models[0].tgt_vocab
        for m in models[1:]:
            if m.tgt_vocab.digest != first.digest:
                raise InferenceError(
                    f"target vocabulary mismatch: {m.tgt_vocab.digest} vs {first.digest}"
                )
        self.models = list(models)
        self.tgt_vocab = first

    def start(self, graph: LeviGraph):
        pairs = [m.start(graph) for m in self.models]
        return [p[0] for p in pairs], [p[1] for p in pairs]

    def step(self, memory, state, prev: np.ndarray):
        return ensemble_step(self.models, memory, state, prev)

    def reorder(self, memory, state, rows: np.ndarray):
        out = [m.reorder(mem, st, rows) for m, mem, st in zip(self.models, memory, state)]
        return [o[0] for o in out], [o[1] for o in out]


def ensemble_step(models: Sequence[StepModel], memories, states, prev: np.ndarray):
    """Arithmetic mean of per-model log-softmax outputs and of attention vectors."""
    if not (len(models) == len(memories) == len(states)):
        raise InferenceError("need exactly one state per model")
    total_lp, total_att, new_states = None, None, []
    for m, mem, st in zip(models, memories, states):
        lp, st2, att = m.step(mem, st, prev)
        total_lp = lp.astype(np.float64) if total_lp is None else total_lp + lp
        total_att = att.astype(np.float64) if total_att is None else total_att + att
        new_states.append(st2)
    k = len(models)
    return total_lp / k, new_states, total_att / k


def _as_step_model(models) -> StepModel:
    if isinstance(models, (list, tuple)):
        return models[0] if len(models) == 1 else Ensemble(models)
    return models


def beam_search(
    models,
    graph: LeviGraph,
    beam: int = 5,
    max_len: Optional[int] = None,
) -> BeamResult:
    """Standard beam search over one graph.

    Candidates are ranked by accumulated log-probability; equal scores go to
    the lower token id, then the lower parent slot.  Hypotheses that emit the
    end token leave the beam, and the beam narrows accordingly.  The search
    ends when ``beam`` hypotheses have finished, none are alive, or
    ``max_len`` tokens were emitted.  The winner maximises log-probability
    divided by length (end token included).
    """
    if beam < 1:
        raise InferenceError("beam size must be at least 1")
    model = _as_step_model(models)
    max_len = default_max_len(graph) if max_len is None else max_len
    memory, state = model.start(graph)
    alive = [Hypothesis()]
    finished: list[Hypothesis] = []
    prev = np.array([BOS_ID], dtype=np.int64)
    for _ in range(max_len):
        logprobs, state, attention = model.step(memory, state, prev)
        logprobs = np.asarray(logprobs, dtype=np.float64)
        width = beam - len(finished)
        base = np.array([h.logprob for h in alive])[:, None]
        cand = base + logprobs  # (K, V)
        K, V = cand.shape
        flat = cand.ravel()
        tok = np.tile(np.arange(V), K)
        parent = np.repeat(np.arange(K), V)
        order = np.lexsort((parent, tok, -flat))
        order = [i for i in order if np.isfinite(flat[i])][:width]
        next_alive, rows, next_tokens = [], [], []
        for i in order:
            k, v = int(parent[i]), int(tok[i])
            h = alive[k]
            child = Hypothesis(h.tokens + ([] if v == EOS_ID else [v]), float(flat[i]), h.attention + [attention[k]])
            if v == EOS_ID:
                child.finished = True
                finished.append(child)
            else:
                next_alive.append(child)
                rows.append(k)
                next_tokens.append(v)
        if len(finished) >= beam or not next_alive:
            alive = next_alive
            break
        alive = next_alive
        rows_arr = np.asarray(rows, dtype=np.int64)
        memory, state = model.reorder(memory, state, rows_arr)
        prev = np.asarray(next_tokens, dtype=np.int64)
    pool = finished if finished else alive
    if not finished:
        log.warning("no hypothesis finished within %d steps; returning best unfinished", max_len)
    best = min(pool, key=lambda h: (-h.score, h.tokens))
    att = np.stack(best.attention) if best.attention else np.zeros((0, graph.num_nodes))
    return BeamResult(best.tokens, best.score, best.logprob, att, best.finished)


def greedy_decode(models, graph: LeviGraph, max_len: Optional[int] = None) -> list[int]:
    """Stepwise argmax (lowest id on ties) until the end token."""
    model = _as_step_model(models)
    max_len = default_max_len(graph) if max_len is None else max_len
    memory, state = model.start(graph)
    prev = np.array([BOS_ID], dtype=np.int64)
    out: list[int] = []
    for _ in range(max_len):
        logprobs, state, _ = model.step(memory, state, prev)
        v = int(np.argmax(logprobs[0]))
        if v == EOS_ID:
            break
        out.append(v)
        prev = np.array([v], dtype=np.int64)
    return out


def replace_unk(tokens: Sequence[str], attention: np.ndarray, labels: Sequence[str], unk: str = "<unk>") -> list[str]:
    """Swap each unknown token for the label of the most-attended node at that step.

    Every node, including relation nodes, is a candidate; ties go to the
    lowest node id.
    """
    out = list(tokens)
    for t, word in enumerate(out):
        if word == unk:
            if t >= len(attention):
                raise InferenceError(f"no attention row for step {t}")
            out[t] = labels[int(np.argmax(attention[t]))]
    return out


@dataclass
class Decoded:
    words: list[str]
    result: BeamResult

    def trace(self, ident: int) -> str:
        return json.dumps(
            {
                "id": ident,
                "tokens": self.words,
                "score": self.result.score,
                "logprob": self.result.logprob,
                "finished": self.result.finished,
                "attention_argmax": [int(i) for i in np.argmax(self.result.attention, axis=1)]
                if len(self.result.attention)
                else [],
            }
        )


def decode_corpus(
    models,
    graphs: Sequence[LeviGraph],
    beam: int = 5,
    max_len: Optional[int] = None,
    unk_replace: bool = False,
) -> list[Decoded]:
    model = _as_step_model(models)
    vocab = model.tgt_vocab
    out = []
    for g in graphs:
        res = beam_search(model, g, beam, max_len)
        words = vocab.decode(res.tokens)
        if unk_replace:
            words = replace_unk(words, res.attention, g.labels, vocab.itos[UNK_ID])
        out.append(Decoded(words, res))
    return out
