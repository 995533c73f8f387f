"""Bucketed batching, the learning-rate / early-stopping schedule and the training loop."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .graph import LeviGraph
from .model import Graph2Seq
from .numeric import AdamState, Tape, adam_step, clip_global_norm, save_checkpoint
from .vocab import Vocabulary

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    bucket_size: int = 10
    lr: float = 0.0003
    lr_patience: int = 3
    patience: int = 8
    max_checkpoints: int = 30
    clip: float = 1.0
    dropout: float = 0.5
    max_len: int = 200
    seed: int = 1

    def __post_init__(self) -> None:
        for name in ("batch_size", "bucket_size", "lr", "lr_patience", "patience", "max_checkpoints", "clip", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class Instance:
    graph: LeviGraph
    target: list[str]
    ident: int = 0

    @property
    def size(self) -> tuple[int, int]:
        return self.graph.num_nodes, len(self.target)


@dataclass
class Batch:
    ids: list[int]
    node_bound: int
    target_bound: int


def _ceil_to(n: int, step: int) -> int:
    return max(step, int(math.ceil(n / step)) * step)


def filter_long(instances: Sequence[Instance], max_len: int) -> list[Instance]:
    kept = []
    for inst in instances:
        n, t = inst.size
        if n > max_len or t > max_len:
            log.warning("dropping instance %d: %d nodes / %d tokens exceeds max length %d", inst.ident, n, t, max_len)
            continue
        kept.append(inst)
    return kept


def make_batches(instances: Sequence[Instance], config: TrainConfig, rng: np.random.Generator) -> list[Batch]:
    """Group instance indices by rounded (node count, target length) and cut batches.

    The target bound counts the end token.  Order inside buckets and the
    order of batches both come from ``rng``.
    """
    buckets: dict[tuple[int, int], list[int]] = {}
    for i, inst in enumerate(instances):
        n, t = inst.size
        if n > config.max_len or t > config.max_len:
            log.warning("dropping instance %d: exceeds max length %d", inst.ident, config.max_len)
            continue
        key = (_ceil_to(n, config.bucket_size), _ceil_to(t + 1, config.bucket_size))
        buckets.setdefault(key, []).append(i)
    batches = []
    for key in sorted(buckets):
        members = buckets[key]
        order = rng.permutation(len(members))
        for start in range(0, len(members), config.batch_size):
            chunk = [members[j] for j in order[start : start + config.batch_size]]
            batches.append(Batch(chunk, key[0], key[1]))
    perm = rng.permutation(len(batches))
    return [batches[j] for j in perm]


@dataclass
class Schedule:
    """Pure state machine over the series of dev perplexities.

    Improvement means strictly below the best value so far.  The learning
    rate halves after ``lr_patience`` checkpoints without improvement
    (counted since the last improvement or halving); training stops after
    ``patience`` checkpoints without improvement or after ``max_checkpoints``.
    """

    lr: float
    lr_patience: int = 3
    patience: int = 8
    max_checkpoints: int = 30
    best: float = math.inf
    best_checkpoint: int = 0
    bad: int = 0
    since_halving: int = 0
    checkpoint: int = 0
    stopped: bool = False
    halvings: list[int] = field(default_factory=list)

    def update(self, dev_ppl: float) -> bool:
        """Register one checkpoint; returns True when it is the new best."""
        self.checkpoint += 1
        improved = dev_ppl < self.best
        if improved:
            self.best = dev_ppl
            self.best_checkpoint = self.checkpoint
            self.bad = 0
            self.since_halving = 0
        else:
            self.bad += 1
            self.since_halving += 1
            if self.since_halving >= self.lr_patience:
                self.lr /= 2.0
                self.since_halving = 0
                self.halvings.append(self.checkpoint)
        if self.bad >= self.patience or self.checkpoint >= self.max_checkpoints:
            self.stopped = True
        return improved


def encode_targets(instances: Sequence[Instance], vocab: Vocabulary) -> list[list[int]]:
    return [vocab.encode(inst.target) for inst in instances]


def perplexity(model: Graph2Seq, instances: Sequence[Instance], batch_size: int = 16) -> float:
    """exp of the mean token cross-entropy, teacher-forced, dropout off."""
    total, count = 0.0, 0
    for start in range(0, len(instances), batch_size):
        chunk = instances[start : start + batch_size]
        batch = model.batch([x.graph for x in chunk])
        targets = encode_targets(chunk, model.tgt_vocab)
        tokens = sum(len(t) + 1 for t in targets)
        loss = model.loss(batch, targets)
        total += float(loss.data) * tokens
        count += tokens
    return math.exp(total / count)


def checkpoint_name(k: int) -> str:
    return f"params.{k:05d}"


@dataclass
class TrainResult:
    out_dir: Path
    history: list[dict]
    best_checkpoint: int
    checkpoints: list[Path]

    @property
    def best_path(self) -> Path:
        return self.out_dir / checkpoint_name(self.best_checkpoint)


def train(
    model: Graph2Seq,
    train_set: Sequence[Instance],
    dev_set: Sequence[Instance],
    config: TrainConfig,
    out_dir: str | Path,
    header: Optional[dict] = None,
) -> TrainResult:
    """Epoch-level training with per-epoch checkpoints and early stopping.

    Writes ``params.NNNNN`` per epoch, ``metrics.jsonl`` (a header line,
    then one line per checkpoint), a ``best`` marker file and a
    ``params.best`` symlink.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set = filter_long(train_set, config.max_len)
    if not train_set:
        raise TrainingError("no training instances left after length filtering")
    rng = np.random.default_rng(config.seed)
    adam = AdamState(lr=config.lr)
    schedule = Schedule(config.lr, config.lr_patience, config.patience, config.max_checkpoints)
    model.config.encoder.dropout = config.dropout
    targets = encode_targets(train_set, model.tgt_vocab)
    history: list[dict] = []
    paths: list[Path] = []
    metrics_path = out / "metrics.jsonl"
    with metrics_path.open("w") as fh:
        fh.write(json.dumps({"header": True, "train": asdict(config), "model": model.config.to_dict(), **(header or {})}) + "\n")
    t0 = time.time()
    while not schedule.stopped:
        epoch_loss, epoch_tokens = 0.0, 0
        for batch_spec in make_batches(train_set, config, rng):
            graphs = [train_set[i].graph for i in batch_spec.ids]
            tgt = [targets[i] for i in batch_spec.ids]
            batch = model.batch(graphs, pad_to=batch_spec.node_bound)
            model.params.zero_grad()
            with Tape() as tape:
                loss = model.loss(batch, tgt, training=True, rng=rng, width=batch_spec.target_bound)
                tape.backward(loss)
            grads = model.params.grads()
            clipped, norm = clip_global_norm(grads, config.clip)
            value = float(loss.data)
            if not math.isfinite(value) or not math.isfinite(norm):
                raise TrainingError(
                    f"non-finite loss {value} at checkpoint {schedule.checkpoint + 1}; "
                    f"batch instance ids {[train_set[i].ident for i in batch_spec.ids]}, gradient norm {norm}"
                )
            adam.lr = schedule.lr
            adam_step(model.params, clipped, adam)
            n_tok = sum(len(t) + 1 for t in tgt)
            epoch_loss += value * n_tok
            epoch_tokens += n_tok
        k = schedule.checkpoint + 1
        path = out / checkpoint_name(k)
        save_checkpoint(
            path,
            model.params.state_dict(),
            step=adam.t,
            lr=schedule.lr,
            rng_state=rng.bit_generator.state,
            extra=model.describe(),
        )
        paths.append(path)
        dev_ppl = perplexity(model, list(dev_set), config.batch_size)
        lr_used = schedule.lr
        improved = schedule.update(dev_ppl)
        if improved:
            (out / "best").write_text(checkpoint_name(k) + "\n")
            link = out / "params.best"
            if link.is_symlink() or link.exists():
                link.unlink()
            os.symlink(checkpoint_name(k), link)
        row = {
            "checkpoint": k,
            "train_loss": epoch_loss / epoch_tokens,
            "dev_perplexity": dev_ppl,
            "lr": lr_used,
            "wall_time": round(time.time() - t0, 3),
        }
        history.append(row)
        with metrics_path.open("a") as fh:
            fh.write(json.dumps(row) + "\n")
        log.info("checkpoint %d: train loss %.4f dev ppl %.4f lr %g", k, row["train_loss"], dev_ppl, lr_used)
    return TrainResult(out, history, schedule.best_checkpoint, paths)


def build_vocabularies(
    instances: Iterable[Instance], src_min_freq: int = 2, tgt_min_freq: int = 2
) -> tuple[Vocabulary, Vocabulary]:
    instances = list(instances)
    src = Vocabulary.build((inst.graph.labels for inst in instances), src_min_freq)
    tgt = Vocabulary.build((inst.target for inst in instances), tgt_min_freq)
    return src, tgt
