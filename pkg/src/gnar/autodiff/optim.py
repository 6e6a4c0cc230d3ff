"""Adam with bias correction and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import NonFiniteError, Tensor


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], c: float) -> dict[str, np.ndarray]:
    """Rescale all gradients by ``c / g`` when their joint L2 norm ``g`` exceeds ``c``."""
    if c <= 0:
        raise ValueError(f"clipping bound must be positive, got {c}")
    g = global_norm(grads)
    if not np.isfinite(g) or g <= c:
        return dict(grads)
    scale = c / g
    return {k: v * scale for k, v in grads.items()}


@dataclass
class OptimState:
    """Adam moments keyed by parameter name.

    ``counts`` holds a per-parameter step count so that parameters skipped in a
    step (e.g. another task's encoders) keep a correct bias correction.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: OptimState) -> tuple[Mapping[str, Tensor], OptimState]:
    """Apply one Adam update to every parameter that has a gradient.

    Parameters absent from ``grads`` are left untouched, moments included.
    Parameter arrays are replaced, never mutated, so earlier snapshots stay valid.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        t = state.counts.get(name, 0) + 1
        state.counts[name] = t
        m = b1 * m + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        p.data = (p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype, copy=False)
    state.step += 1
    return params, state
