"""The full graph-to-sequence model: parameters, loss, and a stepping interface."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import decoder as dec
from .encoder import EncoderConfig, GraphBatch, batch_graphs, encode, init_encoder_params
from .graph import EdgeTag, LeviGraph
from .numeric import ParamStore, Tensor, load_checkpoint, ops
from .vocab import BOS_ID, EOS_ID, PAD_ID, Vocabulary


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: dec.DecoderConfig = field(default_factory=dec.DecoderConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"]["tags"] = [t.value for t in self.encoder.tags]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        enc = dict(d["encoder"])
        enc["tags"] = tuple(EdgeTag(t) for t in enc["tags"])
        return cls(EncoderConfig(**enc), dec.DecoderConfig(**d["decoder"]))


class Graph2Seq:
    def __init__(
        self,
        config: ModelConfig,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.params = ParamStore(dtype)
        rng = np.random.default_rng(seed)
        init_encoder_params(self.params, config.encoder, len(src_vocab), rng)
        dec.init_decoder_params(self.params, config.decoder, config.encoder.hidden, len(tgt_vocab), rng)

    @property
    def dtype(self):
        return self.params.dtype

    def batch(self, graphs: Sequence[LeviGraph], pad_to: Optional[int] = None) -> GraphBatch:
        return batch_graphs(graphs, self.src_vocab, self.config.encoder.tags, pad_to)

    def encode(self, batch: GraphBatch, training: bool = False, rng=None) -> Tensor:
        return encode(self.params, batch, self.config.encoder, training, rng)

    def loss(
        self,
        batch: GraphBatch,
        targets: Sequence[Sequence[int]],
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
        width: Optional[int] = None,
    ) -> Tensor:
        inputs, outputs, mask = dec.pad_targets(targets, BOS_ID, EOS_ID, PAD_ID, width)
        states = self.encode(batch, training, rng)
        return dec.sequence_loss(self.params, self.config.decoder, states, batch, inputs, outputs, mask)

    # stepping interface shared with the ensemble wrapper used by beam search

    def start(self, graph: LeviGraph) -> tuple[dec.Memory, dec.DecoderState]:
        batch = self.batch([graph])
        states = self.encode(batch)
        return dec.make_memory(self.params, states, batch), dec.init_state(
            self.params, self.config.decoder, states, batch
        )

    def step(self, memory: dec.Memory, state: dec.DecoderState, prev: np.ndarray):
        """Log-probabilities ``(K, V)``, new state and attention ``(K, N)`` as numpy arrays."""
        logits, new_state, weights = dec.decode_step(self.params, state, prev, memory)
        return ops.log_softmax(logits, axis=1).data, new_state, weights.data

    @staticmethod
    def reorder(memory: dec.Memory, state: dec.DecoderState, rows: np.ndarray):
        return memory.select(rows), dec.select_state(state, rows)

    # persistence

    def describe(self) -> dict:
        return {
            "model": self.config.to_dict(),
            "src_vocab": self.src_vocab.itos,
            "tgt_vocab": self.tgt_vocab.itos,
            "tgt_vocab_digest": self.tgt_vocab.digest,
        }

    @classmethod
    def from_checkpoint(cls, path: str | Path, dtype=np.float32) -> "Graph2Seq":
        arrays, manifest = load_checkpoint(path)
        extra = manifest["extra"]
        model = cls(
            ModelConfig.from_dict(extra["model"]),
            Vocabulary(extra["src_vocab"]),
            Vocabulary(extra["tgt_vocab"]),
            dtype=dtype,
        )
        model.params.load_state_dict(arrays)
        return model


def config_json(config: ModelConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)
