"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """Update ``params`` (tensors or arrays) in place from ``grads``.

    A ``None`` gradient is treated as zero.  Moment buffers are created on the
    first call and must keep matching shapes afterwards.
    """
    arrays = [p if isinstance(p, np.ndarray) else p.data for p in params]
    if not state.m:
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
    if len(state.m) != len(arrays):
        raise ShapeError(f"adam_step: state tracks {len(state.m)} parameters, got {len(arrays)}")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(a)
        if g.shape != a.shape or m.shape != a.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != parameter shape {a.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        a -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
