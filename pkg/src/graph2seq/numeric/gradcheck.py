"""Central finite-difference comparison against tape gradients."""

from __future__ import annotations

import logging
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor

log = logging.getLogger(__name__)


class NondeterministicClosure(RuntimeError):
    pass


def relative_error(analytic: float, numeric: float, floor: float = 1e-7) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference_check(
    closure: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    samples: int = 200,
    seed: int = 0,
    floor: float = 1e-7,
    probe_dtype=None,
) -> float:
    """Largest relative error between tape and central-difference gradients.

    ``closure`` must rebuild the scalar loss from the current ``.data`` of
    ``params`` every time it is called.  Up to ``samples`` coordinates per
    parameter are probed (all of them for small tensors).  With
    ``probe_dtype`` the difference quotients are taken on copies of the
    parameters cast to that dtype, so low-precision tape gradients can be
    checked against an accurate reference.
    """
    base = closure()
    again = closure()
    if base.data.tobytes() != again.data.tobytes():
        raise NondeterministicClosure("closure returned different losses for identical parameters")

    for t in params.values():
        t.grad = None
    with Tape() as tape:
        loss = closure()
        tape.backward(loss)
    analytic = {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in params.items()}

    saved = None
    if probe_dtype is not None:
        saved = {n: t.data for n, t in params.items()}
        for t in params.values():
            t.data = t.data.astype(probe_dtype)
    try:
        return _probe(closure, params, analytic, eps, samples, seed, floor)
    finally:
        if saved is not None:
            for n, t in params.items():
                t.data = saved[n]


def _probe(closure, params, analytic, eps, samples, seed, floor) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in params.items():
        size = t.data.size
        coords = np.arange(size) if size <= samples else rng.choice(size, samples, replace=False)
        flat = t.data.reshape(-1)
        for c in coords:
            old = flat[c]
            flat[c] = old + eps
            up = float(closure().data)
            flat[c] = old - eps
            down = float(closure().data)
            flat[c] = old
            numeric = (up - down) / (2 * eps)
            err = relative_error(float(analytic[name].reshape(-1)[c]), numeric, floor)
            if err > worst:
                worst = err
                log.debug("%s[%d]: analytic %.6g numeric %.6g", name, c, analytic[name].reshape(-1)[c], numeric)
    return worst
