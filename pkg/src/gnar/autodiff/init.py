"""Weight initialisers for linear layers."""

from __future__ import annotations

import enum
import math

import numpy as np

# Standard deviation of a unit normal truncated to [-2, 2]; dividing by it
# makes the truncated draws hit the requested standard deviation.
_TRUNC_STD = 0.87962566103423978


class InitScheme(enum.Enum):
    XAVIER_UNIFORM = "xavier_uniform"
    LECUN = "lecun"


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal draws truncated at two standard deviations, rescaled to ``std``."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * (std / _TRUNC_STD)


def init_linear(fan_in: int, fan_out: int, scheme: InitScheme, rng: np.random.Generator,
                dtype=np.float64) -> np.ndarray:
    """Return a ``(fan_in, fan_out)`` weight matrix; biases are always zero."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    scheme = InitScheme(scheme)
    if scheme is InitScheme.XAVIER_UNIFORM:
        b = xavier_bound(fan_in, fan_out)
        w = rng.uniform(-b, b, size=(fan_in, fan_out))
    else:
        w = truncated_normal(rng, (fan_in, fan_out), 1.0 / math.sqrt(fan_in))
    return w.astype(dtype)
