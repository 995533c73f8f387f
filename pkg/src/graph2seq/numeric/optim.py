"""Parameter storage, initialisation, Adam and gradient clipping."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered name -> trainable tensor mapping.

    Insertion order is the canonical order for initialisation, gradient
    reduction and serialisation.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.ascontiguousarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def count(self, prefix: str = "") -> int:
        return int(np.sum([t.data.size for n, t in self._params.items() if n.startswith(prefix)]))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in self._params.items()
        }

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data) for n, t in self._params.items())

    def load_state_dict(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for n, t in self._params.items():
            a = np.asarray(arrays[n])
            if a.shape != t.shape:
                raise ValueError(f"{n}: shape {a.shape} does not match {t.shape}")
            t.data = np.ascontiguousarray(a, dtype=self.dtype)

    def astype(self, dtype) -> "ParamStore":
        other = ParamStore(dtype)
        for n, t in self._params.items():
            other.add(n, t.data)
        return other


def xavier_init(shape: Sequence[int], seed: int | np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Glorot-uniform draw on ``[-a, a]`` with ``a = sqrt(6 / (fan_in + fan_out))``.

    For a vector, fan_in = 1 and fan_out = its length.
    """
    shape = tuple(shape)
    if len(shape) not in (1, 2):
        raise ValueError("xavier_init supports 1-D and 2-D shapes")
    fan_in, fan_out = (1, shape[0]) if len(shape) == 1 else shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class AdamState:
    lr: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    missing = [n for n in params if n not in grads]
    if missing:
        raise KeyError(f"no gradient for parameters: {missing}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = p.data - (state.lr * update).astype(p.dtype)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_global_norm(grads: Mapping[str, np.ndarray], threshold: float = 1.0) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by ``threshold / N`` when their joint L2 norm ``N`` exceeds it.

    Returns the (possibly rescaled) gradients and the norm before clipping.
    """
    norm = global_norm(grads.values())
    if norm <= threshold:
        return dict(grads), norm
    scale = threshold / norm
    return {n: (g * scale).astype(g.dtype, copy=False) for n, g in grads.items()}, norm
