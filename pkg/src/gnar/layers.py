"""Named-parameter storage and the dense layer helper used by every model part."""

from __future__ import annotations

from typing import Iterator, MutableMapping

import numpy as np

from .autodiff import InitScheme, Tensor, default_dtype, init_linear, linear


class ParamStore(MutableMapping):
    """Flat ``name -> Tensor`` mapping with an initialiser for linear layers.

    A linear layer ``name`` owns ``name/w`` of shape (in, out) and, unless
    disabled, ``name/b``.
    """

    def __init__(self, rng: np.random.Generator | None = None):
        self._p: dict[str, Tensor] = {}
        self.rng = rng

    def __getitem__(self, key: str) -> Tensor:
        return self._p[key]

    def __setitem__(self, key: str, value: Tensor) -> None:
        self._p[key] = value

    def __delitem__(self, key: str) -> None:
        del self._p[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._p)

    def __len__(self) -> int:
        return len(self._p)

    def add_linear(self, name: str, fan_in: int, fan_out: int, *,
                   scheme: InitScheme = InitScheme.LECUN, bias: bool = True,
                   bias_value: float = 0.0) -> None:
        if self.rng is None:
            raise RuntimeError("ParamStore needs an rng to initialise parameters")
        dt = default_dtype()
        w = init_linear(fan_in, fan_out, scheme, self.rng, dtype=dt)
        self._p[f"{name}/w"] = Tensor(w, requires_grad=True, name=f"{name}/w")
        if bias:
            b = np.full(fan_out, bias_value, dtype=dt)
            self._p[f"{name}/b"] = Tensor(b, requires_grad=True, name=f"{name}/b")

    def add_array(self, name: str, value: np.ndarray) -> None:
        self._p[name] = Tensor(np.asarray(value, dtype=default_dtype()), requires_grad=True, name=name)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._p.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._p) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for k, t in self._p.items():
            a = np.asarray(arrays[k])
            if a.shape != t.shape:
                raise ValueError(f"parameter {k!r}: checkpoint shape {a.shape} != {t.shape}")
            t.data = a.astype(t.dtype)


def dense(params: MutableMapping, name: str, x) -> Tensor:
    """Apply linear layer ``name`` over the last axis of ``x``."""
    return linear(x, params[f"{name}/w"], params.get(f"{name}/b"))
