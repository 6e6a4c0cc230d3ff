"""Message passing, gating and triplet edge latents of the shared processor."""

import numpy as np
import pytest

from gnar.autodiff import NonFiniteError, Tensor
from gnar.codec import LatentState
from gnar.processor import (
    GATE_BIAS,
    TRIPLET_DIM,
    ProcessorFlags,
    ProcessorParams,
    gate_values,
    messages,
    mpnn_step,
    triplet_edge_latents,
    triplet_scores,
)
from gnar.selftest import equivariance_error


def _state(B=2, n=4, h=6, seed=0, zero=False):
    rng = np.random.default_rng(seed)
    mk = (lambda *s: np.zeros(s)) if zero else (lambda *s: rng.normal(size=s))
    return LatentState(Tensor(mk(B, n, h)), Tensor(mk(B, n, n, h)), Tensor(mk(B, h)), Tensor(mk(B, n, h)))


def _np(params, name):
    return params[f"proc/{name}/w"].data, params[f"proc/{name}/b"].data if f"proc/{name}/b" in params else 0.0


def _relu(a):
    return np.maximum(a, 0.0)


def _reference_messages(params, z, e, g):
    """Explicit concatenation [z_i, z_j, e_ij, g] through a stacked first layer."""
    w1 = np.concatenate([params[f"proc/fm1_{p}/w"].data for p in ("zi", "zj", "e", "g")], axis=0)
    b1 = params["proc/fm1_zi/b"].data
    w2, b2 = _np(params, "fm2")
    w3, b3 = _np(params, "fm3")
    B, n, _ = z.shape
    out = np.zeros((B, n, w3.shape[1]))
    for b in range(B):
        for i in range(n):
            rows = []
            for j in range(n):
                v = np.concatenate([z[b, i], z[b, j], e[b, i, j], g[b]])
                hid = _relu(_relu(v @ w1 + b1) @ w2 + b2)
                rows.append(hid @ w3 + b3)
            out[b, i] = np.max(rows, axis=0)
    return out


class TestMessages:
    def test_matches_concatenated_reference(self):
        params = ProcessorParams(6, np.random.default_rng(0))
        for k in params:
            if k.endswith("/b"):
                params[k].data = np.random.default_rng(len(k)).normal(size=params[k].shape)
        s = _state()
        z = np.concatenate([s.x.data, s.h_prev.data], axis=-1)
        got = messages(params, Tensor(z), s.e, s.g).data
        np.testing.assert_allclose(got, _reference_messages(params, z, s.e.data, s.g.data), atol=1e-12)

    def test_single_node_aggregates_itself(self):
        params = ProcessorParams(5, np.random.default_rng(1))
        s = _state(B=1, n=1, h=5, seed=2)
        z = np.concatenate([s.x.data, s.h_prev.data], axis=-1)
        got = messages(params, Tensor(z), s.e, s.g).data
        np.testing.assert_allclose(got, _reference_messages(params, z, s.e.data, s.g.data), atol=1e-12)


class TestGate:
    def test_initial_gate_value(self):
        params = ProcessorParams(8, np.random.default_rng(0))
        g = gate_values(params, _state(B=1, n=3, h=8, zero=True)).data
        np.testing.assert_allclose(g, 1.0 / (1.0 + np.exp(3.0)), rtol=0, atol=1e-15)
        assert round(float(g.flat[0]), 9) == 0.047425873
        assert GATE_BIAS == -3.0

    def test_initial_gated_update_mixes(self):
        params = ProcessorParams(8, np.random.default_rng(0))
        s = _state(B=1, n=3, h=8, zero=True)
        s.h_prev = Tensor(np.random.default_rng(3).normal(size=(1, 3, 8)))
        ungated, _ = mpnn_step(params, s, ProcessorFlags(gated=False, triplets=False))
        gate = gate_values(params, s).data
        gated, _ = mpnn_step(params, s, ProcessorFlags(gated=True, triplets=False))
        np.testing.assert_allclose(gated.data, gate * ungated.data + (1 - gate) * s.h_prev.data, atol=1e-12)

    def test_closed_gate_is_identity(self):
        params = ProcessorParams(6, np.random.default_rng(0))
        s = _state()
        h, _ = mpnn_step(params, s, gate_override=Tensor(np.zeros((2, 4, 6))))
        np.testing.assert_array_equal(h.data, s.h_prev.data)

    def test_ungated_output_is_layer_normed(self):
        params = ProcessorParams(6, np.random.default_rng(0))
        h, _ = mpnn_step(params, _state(), ProcessorFlags(gated=False, triplets=False))
        np.testing.assert_allclose(h.data.mean(-1), 0.0, atol=1e-9)


class TestTriplets:
    def test_tensor_shape(self):
        params = ProcessorParams(6, np.random.default_rng(0))
        s = _state(n=5)
        z = Tensor(np.concatenate([s.x.data, s.h_prev.data], axis=-1))
        assert triplet_scores(params, z, s.e, s.g).shape == (2, 5, 5, 5, TRIPLET_DIM)

    def test_counting_oracle_selects_last_k(self):
        params = ProcessorParams(6, np.random.default_rng(0))
        s = _state(B=1, n=3)
        z = Tensor(np.concatenate([s.x.data, s.h_prev.data], axis=-1))

        def counting(z, e, g):
            k = np.arange(3, dtype=float)[None, None, None, :, None]
            return Tensor(np.broadcast_to(k, (1, 3, 3, 3, TRIPLET_DIM)).copy())

        got = triplet_edge_latents(params, z, s.e, s.g, psi=counting).data
        w, b = _np(params, "phi")
        want = _relu(np.full(TRIPLET_DIM, 2.0) @ w + b)
        np.testing.assert_allclose(got, np.broadcast_to(want, (1, 3, 3, 6)), atol=1e-12)

    def test_reference_single_triplet(self):
        """n = 1: h_00 = phi(t_000) with t from the explicit concatenation."""
        params = ProcessorParams(4, np.random.default_rng(5))
        s = _state(B=1, n=1, h=4, seed=6)
        z = np.concatenate([s.x.data, s.h_prev.data], axis=-1)[0, 0]
        e = s.e.data[0, 0, 0]
        parts = {"zi": z, "zj": z, "zk": z, "eij": e, "eik": e, "ekj": e, "g": s.g.data[0]}
        t = sum(parts[p] @ params[f"proc/psi_{p}/w"].data for p in parts) + params["proc/psi_zi/b"].data
        w, b = _np(params, "phi")
        got = triplet_edge_latents(params, Tensor(z[None, None]), s.e, s.g).data
        np.testing.assert_allclose(got[0, 0, 0], _relu(t @ w + b), atol=1e-12)

    def test_disabled(self):
        params = ProcessorParams(6, np.random.default_rng(0))
        _, e = mpnn_step(params, _state(), ProcessorFlags(triplets=False))
        assert e is None
        names = params.names(triplets=False, gated=False)
        assert not any("/psi_" in k or "/phi" in k or "/fg" in k for k in names)
        assert len(params.names()) == len(params)


class TestEquivariance:
    @pytest.mark.parametrize("alg", ["bfs", "insertion_sort"])
    def test_node_permutation(self, alg):
        assert equivariance_error(alg, perms=5, n=5, h=8) < 1e-9


def test_non_finite_input_raises():
    params = ProcessorParams(4, np.random.default_rng(0))
    s = _state(h=4)
    s.x.data[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        mpnn_step(params, s)
