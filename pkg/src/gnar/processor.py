"""The shared processor: a max-aggregation MPNN with update gates and triplet edges.

One step, for every node ``i`` of a fully connected graph::

    z_i  = x_i || h_i(t-1)
    m_i  = max_j f_m(z_i, z_j, e_ij, g)
    h_i  = layer_norm(f_r(z_i, m_i))
    g_i  = f_g(z_i, m_i)                          (gated)
    h_i  = g_i * h_i + (1 - g_i) * h_i(t-1)       (gated)
    e'_ij = phi_t(max_k psi_t(z_i, z_j, z_k, e_ij, e_ik, e_kj, g))   (triplets)

The first layer of ``f_m`` and the single layer of ``psi_t`` act on
concatenations; both are computed as sums of per-argument projections, which
is the same linear map without materialising the concatenated tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import (
    NonFiniteError,
    Tensor,
    add,
    concat,
    expand_dims,
    layer_norm,
    max_,
    mul,
    relu,
    sigmoid,
    sub,
    transpose,
)
from .codec import LatentState
from .layers import ParamStore, dense

TRIPLET_DIM = 8
GATE_BIAS = -3.0
LN_EPS = 1e-6


@dataclass(frozen=True)
class ProcessorFlags:
    gated: bool = True
    triplets: bool = True


class ProcessorParams(ParamStore):
    """Weights of f_m, f_r, f_g, psi_t, phi_t and the layer-norm affine map."""

    def __init__(self, hidden: int, rng: np.random.Generator, prefix: str = "proc"):
        super().__init__(rng)
        self.hidden = hidden
        self.prefix = prefix
        h, p = hidden, prefix
        for part in ("zi", "zj", "e", "g"):
            self.add_linear(f"{p}/fm1_{part}", 2 * h if part in ("zi", "zj") else h, h,
                            bias=(part == "zi"))
        self.add_linear(f"{p}/fm2", h, h)
        self.add_linear(f"{p}/fm3", h, h)
        self.add_linear(f"{p}/fr", 3 * h, h)
        self.add_array(f"{p}/ln/gamma", np.ones(h))
        self.add_array(f"{p}/ln/beta", np.zeros(h))
        self.add_linear(f"{p}/fg1", 3 * h, h)
        self.add_linear(f"{p}/fg2", h, h, bias_value=GATE_BIAS)
        for part in ("zi", "zj", "zk", "eij", "eik", "ekj", "g"):
            in_dim = 2 * h if part.startswith("z") else h
            self.add_linear(f"{p}/psi_{part}", in_dim, TRIPLET_DIM, bias=(part == "zi"))
        self.add_linear(f"{p}/phi", TRIPLET_DIM, h)

    def names(self, triplets: bool = True, gated: bool = True) -> list[str]:
        """Parameter names a step with the given flags actually reads."""
        out = []
        for k in self:
            if not gated and "/fg" in k:
                continue
            if not triplets and ("/psi_" in k or "/phi" in k):
                continue
            out.append(k)
        return out


def _check(name: str, t: Tensor) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"processor: non-finite values in {name}")
    return t


def messages(params: ProcessorParams, z: Tensor, e: Tensor, g: Tensor) -> Tensor:
    """m_i = max over all j of f_m(z_i, z_j, e_ij, g); shape (B, n, h)."""
    p = params.prefix
    a = expand_dims(dense(params, f"{p}/fm1_zi", z), 2)
    b = expand_dims(dense(params, f"{p}/fm1_zj", z), 1)
    c = dense(params, f"{p}/fm1_e", e)
    d = expand_dims(expand_dims(dense(params, f"{p}/fm1_g", g), 1), 1)
    hid = relu(add(add(add(a, b), c), d))
    hid = relu(dense(params, f"{p}/fm2", hid))
    msg = dense(params, f"{p}/fm3", hid)
    return max_(msg, axis=2)


def triplet_scores(params: ProcessorParams, z: Tensor, e: Tensor, g: Tensor, psi=None) -> Tensor:
    """t_ijk laid out as (B, i, j, k, 8); ``psi`` may replace the learned map."""
    if psi is not None:
        return psi(z, e, g)
    p = params.prefix

    def lin(part, x):
        return dense(params, f"{p}/psi_{part}", x)

    ti = expand_dims(expand_dims(lin("zi", z), 2), 3)
    tj = expand_dims(expand_dims(lin("zj", z), 1), 3)
    tk = expand_dims(expand_dims(lin("zk", z), 1), 1)
    tij = expand_dims(lin("eij", e), 3)
    tik = expand_dims(lin("eik", e), 2)
    tkj = expand_dims(transpose(lin("ekj", e), (0, 2, 1, 3)), 1)
    tg = expand_dims(expand_dims(expand_dims(lin("g", g), 1), 1), 1)
    return add(add(add(add(add(add(ti, tj), tk), tij), tik), tkj), tg)


def triplet_edge_latents(params: ProcessorParams, z: Tensor, e: Tensor, g: Tensor, psi=None) -> Tensor:
    """h_ij = phi_t(max_k t_ijk); shape (B, n, n, h)."""
    t = triplet_scores(params, z, e, g, psi)
    return relu(dense(params, f"{params.prefix}/phi", max_(t, axis=3)))


def mpnn_step(params: ProcessorParams, state: LatentState, flags: ProcessorFlags = ProcessorFlags(),
              *, gate_override: Optional[Tensor] = None) -> tuple[Tensor, Optional[Tensor]]:
    """One processor step -> (node embeddings (B, n, h), edge latents or None).

    ``gate_override`` replaces the learned gate values (used to test the
    closed-gate identity).
    """
    p = params.prefix
    z = concat([state.x, state.h_prev], axis=-1)
    m = _check("messages", messages(params, z, state.e, state.g))
    zm = concat([z, m], axis=-1)
    h = relu(dense(params, f"{p}/fr", zm))
    h = _check("readout", layer_norm(h, params[f"{p}/ln/gamma"], params[f"{p}/ln/beta"], eps=LN_EPS))
    if flags.gated:
        if gate_override is not None:
            gate = gate_override
        else:
            gate = sigmoid(dense(params, f"{p}/fg2", relu(dense(params, f"{p}/fg1", zm))))
        h = add(mul(gate, h), mul(sub(1.0, gate), state.h_prev))
    e_lat = None
    if flags.triplets:
        e_lat = _check("triplets", triplet_edge_latents(params, z, state.e, state.g))
    return h, e_lat


def gate_values(params: ProcessorParams, state: LatentState) -> Tensor:
    p = params.prefix
    z = concat([state.x, state.h_prev], axis=-1)
    zm = concat([z, messages(params, z, state.e, state.g)], axis=-1)
    return sigmoid(dense(params, f"{p}/fg2", relu(dense(params, f"{p}/fg1", zm))))
