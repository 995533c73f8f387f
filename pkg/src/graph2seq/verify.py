"""Finite-difference suites over every tape primitive and a tiny end-to-end model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .graph import LabeledGraph, prepare
from .numeric import Tensor, finite_difference_check, inject_bug, ops
from .vocab import Vocabulary

PRIMITIVE_THRESHOLD = {64: 1e-6, 32: 1e-4}
MODEL_THRESHOLD = 1e-4
# float32 tape gradients are compared against float64 difference quotients;
# the larger floor stops tiny gradients from dominating the relative error
FLOOR = {64: 1e-7, 32: 1e-3}
# float64 round-off in a loss of order 1 leaves ~1e-11 noise in each quotient
MODEL_FLOOR = {64: 1e-6, 32: 1e-3}


@dataclass
class CheckResult:
    name: str
    error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.error <= self.threshold


Case = tuple[Callable[[], Tensor], dict[str, Tensor]]


def _leaf(rng: np.random.Generator, shape, dtype, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, shape).astype(dtype), requires_grad=True)


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    """Random linear read-out so every output coordinate matters."""
    return ops.sum(ops.mul(out, Tensor(weights.astype(out.dtype))))


def primitive_cases(dtype=np.float64, seed: int = 0) -> dict[str, Case]:
    rng = np.random.default_rng(seed)
    cases: dict[str, Case] = {}

    def unary(name, fn, shape=(3, 4), low=-1.0, high=1.0):
        x = _leaf(rng, shape, dtype, low, high)
        out_shape = fn(x).shape
        w = rng.normal(size=out_shape)
        cases[name] = (lambda: _project(fn(x), w), {"x": x})

    def binary(name, fn, sa, sb):
        a, b = _leaf(rng, sa, dtype), _leaf(rng, sb, dtype)
        w = rng.normal(size=fn(a, b).shape)
        cases[name] = (lambda: _project(fn(a, b), w), {"a": a, "b": b})

    binary("add", ops.add, (3, 4), (4,))
    binary("sub", ops.sub, (3, 4), (3, 1))
    binary("mul", ops.mul, (2, 3, 4), (3, 4))
    binary("matmul", ops.matmul, (2, 3, 4), (4, 5))
    unary("transpose", lambda x: ops.transpose(x, (2, 0, 1)), (2, 3, 4))
    unary("reshape", lambda x: ops.reshape(x, (4, 3)))
    binary("concat", lambda a, b: ops.concat([a, b], axis=1), (3, 2), (3, 4))
    unary("getitem", lambda x: ops.getitem(x, (slice(None), [0, 2, 2])))
    unary("sum", lambda x: ops.sum(x, axis=0, keepdims=True))
    unary("mean", lambda x: ops.mean(x, axis=1))
    unary("sigmoid", ops.sigmoid, low=-3, high=3)
    unary("tanh", ops.tanh, low=-2, high=2)
    unary("exp", ops.exp)
    unary("log", ops.log, low=0.5, high=2.0)
    mask = np.array([[1, 1, 0, 1], [1, 0, 0, 0], [1, 1, 1, 1]], dtype=bool)
    unary("masked_softmax", lambda x: ops.masked_softmax(x, mask, axis=1), low=-2, high=2)
    unary("log_softmax", lambda x: ops.log_softmax(x, axis=1), low=-2, high=2)
    ids = np.array([[0, 2], [2, 4]])
    unary("embedding_lookup", lambda x: ops.embedding_lookup(x, ids), (5, 3))
    index = np.array([1, 0, 1, 3])
    unary("scatter_add", lambda x: ops.scatter_add(x, index, 4), (4, 3))
    unary("dropout", lambda x: ops.dropout(x, 0.5, np.random.default_rng(7), True))
    targets = np.array([1, 3, 0])
    tmask = np.array([1.0, 1.0, 0.0])
    x = _leaf(rng, (3, 5), dtype, -2, 2)
    cases["cross_entropy"] = (lambda: ops.cross_entropy(x, targets, tmask), {"x": x})
    return cases


def micro_model(dtype=np.float64, seed: int = 0):
    """Two-concept graph (3 Levi nodes) and a 4-token target on a tiny model."""
    from .model import Graph2Seq, ModelConfig

    graph = prepare(LabeledGraph(("want", "boy"), ((0, 1, "ARG0"),), 0))
    src = Vocabulary(["<pad>", "<unk>", "<s>", "</s>", "want", "ARG0", "boy"])
    tgt = Vocabulary(["<pad>", "<unk>", "<s>", "</s>", "the", "boy", "wants"])
    cfg = ModelConfig(
        EncoderConfig(hidden=7, layers=2, pos_dim=3, dropout=0.0),
        DecoderConfig(hidden=5, embed=4, layers=2),
    )
    model = Graph2Seq(cfg, src, tgt, seed=seed, dtype=dtype)
    batch = model.batch([graph])
    target = [tgt.encode(["the", "boy", "wants", "the"])]

    def closure() -> Tensor:
        return model.loss(batch, target)

    return closure, dict(model.params.items()), model


def run_suite(bits: int = 64, inject: Optional[str] = None, samples: int = 60) -> list[CheckResult]:
    """Check every primitive and the full model; ``inject`` corrupts one gradient rule."""
    if bits not in (32, 64):
        raise ValueError("bits must be 32 or 64")
    dtype = np.float64 if bits == 64 else np.float32
    probe = None if bits == 64 else np.float64
    floor = FLOOR[bits]

    def run() -> list[CheckResult]:
        results = []
        for name, (closure, params) in primitive_cases(dtype).items():
            err = finite_difference_check(closure, params, floor=floor, probe_dtype=probe)
            results.append(CheckResult(name, err, PRIMITIVE_THRESHOLD[bits]))
        closure, params, _ = micro_model(dtype)
        err = finite_difference_check(closure, params, samples=samples, floor=MODEL_FLOOR[bits], probe_dtype=probe)
        results.append(CheckResult("model", err, MODEL_THRESHOLD))
        return results

    if inject is None:
        return run()
    with inject_bug(inject):
        return run()
