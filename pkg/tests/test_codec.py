"""Encoders, decoders, hint feedback, losses, the Sinkhorn operator and permutation rewiring."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnar import autodiff as ad
from gnar.algorithms import get_algorithm
from gnar.autodiff import Tensor
from gnar.codec import (
    FeedbackMode,
    SinkhornSettings,
    TaskCodec,
    feature_loss,
    hard_value,
    permutation_targets,
    soft_hint_feedback,
    to_model_space,
    value_shape,
)
from gnar.permutation import (
    PermutationError,
    SinkhornError,
    decode_permutation,
    pointers_to_permutation,
    permutation_rewire,
    sinkhorn,
    sorted_order,
)
from gnar.sampling import generate
from gnar.specs import FeatureSpec


def _values(codec, trajs, t=0):
    """Model-space inputs plus hints at step ``t`` for a list of same-size trajectories."""
    out = {}
    for f in codec.spec.inputs:
        out[f.name] = np.stack([to_model_space(f, tr.inputs[f.name], tr.n) for tr in trajs])
    for f in codec.spec.hints:
        out[f.name] = np.stack([to_model_space(f, tr.hints[f.name][t], tr.n) for tr in trajs])
    return out


def _bfs_codec(h=8, seed=0):
    return TaskCodec(get_algorithm("bfs").spec, h, np.random.default_rng(seed))


def _bfs_trajs(k=2, n=5):
    rng = np.random.default_rng(4)
    return [generate("bfs", n, rng, p=0.5) for _ in range(k)]


MASK = FeatureSpec("m", "hint", "node", "mask")
PTR = FeatureSpec("p", "hint", "node", "pointer")
ONE = FeatureSpec("o", "hint", "node", "mask_one")
SCALAR = FeatureSpec("s", "hint", "node", "scalar")


class TestEncode:
    def test_zero_weights_give_zero_state(self):
        codec = _bfs_codec()
        for k, t in codec.params.items():
            t.data = np.zeros_like(t.data)
        x, e, g = codec.encode(_values(codec, _bfs_trajs()), 2, 5)
        for a in (x, e, g):
            np.testing.assert_array_equal(a.data, 0.0)

    def test_additive_over_features(self):
        codec = _bfs_codec()
        vals = _values(codec, _bfs_trajs())
        x_all = codec.encode(vals, 2, 5)[0].data
        parts = 0.0
        for keep in ("pos", "s", "reach_h"):
            sub = {k: (v if k == keep else np.zeros_like(v)) for k, v in vals.items()}
            parts = parts + codec.encode(sub, 2, 5)[0].data
        np.testing.assert_allclose(x_all, parts, atol=1e-12)

    def test_node_permutation_permutes_rows(self):
        codec = _bfs_codec()
        vals = _values(codec, _bfs_trajs())
        perm = np.random.default_rng(1).permutation(5)
        inv = np.argsort(perm)
        moved = {}
        for f in codec.spec.inputs + codec.spec.hints:
            v = vals[f.name][:, perm]
            if f.location.value == "edge":
                v = v[:, :, perm]
            if f.ftype.value == "pointer":
                v = v[..., perm]
            moved[f.name] = v
        x0, e0, _ = codec.encode(vals, 2, 5)
        x1, e1, _ = codec.encode(moved, 2, 5)
        np.testing.assert_allclose(x1.data, x0.data[:, perm], atol=1e-12)
        np.testing.assert_allclose(e1.data, e0.data[:, perm][:, :, perm], atol=1e-12)
        assert inv[perm[0]] == 0

    def test_shape_checked(self):
        codec = _bfs_codec()
        vals = _values(codec, _bfs_trajs())
        vals["A"] = vals["A"][:, :4]
        with pytest.raises(ValueError):
            codec.encode(vals, 2, 5)

    def test_value_shapes(self):
        assert value_shape(PTR, 3, 4) == (3, 4, 4)
        assert value_shape(FeatureSpec("c", "hint", "edge", "categorical", num_categories=3), 2, 4) == (2, 4, 4, 3)
        assert value_shape(FeatureSpec("g", "input", "graph", "scalar"), 2, 4) == (2,)


class TestDecode:
    def test_pointer_argmax(self):
        hard = hard_value(PTR, np.array([[[5.0, 1.0, 1.0]]]))
        np.testing.assert_array_equal(hard, [[[1.0, 0.0, 0.0]]])

    def test_soft_pointer_rows_sum_to_one(self):
        scores = Tensor(np.random.default_rng(0).normal(size=(2, 4, 4)) * 10)
        soft = soft_hint_feedback([PTR], {"p": scores})["p"]
        np.testing.assert_allclose(soft.data.sum(-1), 1.0, atol=1e-9)

    def test_mask_logit_zero(self):
        soft = soft_hint_feedback([MASK], {"m": Tensor(np.zeros((1, 3)))})["m"]
        np.testing.assert_array_equal(soft.data, 0.5)

    def test_mask_one_normalised_over_nodes(self):
        soft = soft_hint_feedback([ONE], {"o": Tensor(np.array([[0.0, np.log(3.0)]]))})["o"]
        np.testing.assert_allclose(soft.data, [[0.25, 0.75]])

    def test_planted_copy_fixture(self):
        """Weights that route a node scalar hint through x and straight back out."""
        spec = get_algorithm("bellman_ford").spec
        codec = TaskCodec(spec, 4, np.random.default_rng(0))
        for t in codec.params.values():
            t.data = np.zeros_like(t.data)
        codec.params["bellman_ford/enc/d/w"].data[0, 2] = 1.0
        codec.params["bellman_ford/dec/d/w"].data[2, 0] = 1.0
        tr = generate("bellman_ford", 5, np.random.default_rng(3), p=0.6)
        vals = _values(codec, [tr], t=tr.T - 1)
        x, e, g = codec.encode(vals, 1, 5)
        pred = codec.decode([spec["d"]], x, Tensor(np.zeros_like(x.data)), e, g)["d"]
        np.testing.assert_allclose(pred.data, vals["d"], atol=1e-15)

    def test_every_decoder_shape(self):
        for alg in ("floyd_warshall", "lcs_length", "binary_search", "insertion_sort"):
            spec = get_algorithm(alg).spec
            codec = TaskCodec(spec, 6, np.random.default_rng(0), sinkhorn=None)
            n = 4
            x = Tensor(np.random.default_rng(1).normal(size=(2, n, 6)))
            e = Tensor(np.random.default_rng(2).normal(size=(2, n, n, 6)))
            g = Tensor(np.zeros((2, 6)))
            out = codec.decode(spec.hints + spec.outputs, x, x, e, g)
            for f in spec.hints + spec.outputs:
                assert out[f.name].shape == value_shape(f, 2, n), (alg, f.name)

    def test_sinkhorn_head_adds_first_node(self):
        codec = TaskCodec(get_algorithm("insertion_sort").spec, 6, np.random.default_rng(0))
        assert [f.name for f in codec.output_heads()] == ["pred", "pred__first"]
        plain = TaskCodec(get_algorithm("insertion_sort").spec, 6, np.random.default_rng(0), sinkhorn=None)
        assert [f.name for f in plain.output_heads()] == ["pred"]


class TestFeedback:
    def test_teacher_forcing_one_feeds_truth(self):
        truth = {"m": np.array([[1.0, 0.0, 1.0]]), "p": np.eye(3)[None]}
        preds = {"m": Tensor(np.full((1, 3), -4.0)), "p": Tensor(np.zeros((1, 3, 3)))}
        out = soft_hint_feedback([MASK, PTR], preds, teacher_forcing=1.0, truth=truth)
        np.testing.assert_array_equal(out["m"].data, truth["m"])
        np.testing.assert_array_equal(out["p"].data, truth["p"])

    def test_partial_forcing_selects_whole_samples(self):
        rng = np.random.default_rng(0)
        truth = {"m": np.ones((64, 3))}
        out = soft_hint_feedback([MASK], {"m": Tensor(np.zeros((64, 3)))}, teacher_forcing=0.5,
                                 truth=truth, rng=rng)["m"].data
        rows = set(map(tuple, out))
        assert rows == {(0.5, 0.5, 0.5), (1.0, 1.0, 1.0)}

    def test_soft_has_gradient_hard_does_not(self):
        for mode, nonzero in ((FeedbackMode.SOFT, True), (FeedbackMode.HARD, False)):
            logits = Tensor(np.array([[0.3, -0.2, 1.0]]), requires_grad=True)
            fed = soft_hint_feedback([MASK], {"m": logits}, mode=mode)["m"]
            w = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
            grads = ad.backward(ad.sum_(ad.mul(fed, w)))
            g = grads.get(logits, np.zeros(3))
            assert bool(np.any(g != 0)) is nonzero

    def test_bad_forcing_rate(self):
        with pytest.raises(ValueError):
            soft_hint_feedback([MASK], {"m": Tensor(np.zeros((1, 2)))}, teacher_forcing=1.5)


class TestLosses:
    def test_scalar_squared_error(self):
        loss = feature_loss(FeatureSpec("s", "output", "graph", "scalar"), Tensor(np.array([0.5])), np.array([0.0]))
        np.testing.assert_allclose(loss.data, [0.25])

    def test_perfect_logits(self):
        logits = np.full((1, 4, 4), -1e3)
        logits[0, np.arange(4), [1, 2, 3, 0]] = 1e3
        target = np.zeros((1, 4, 4))
        target[0, np.arange(4), [1, 2, 3, 0]] = 1
        assert feature_loss(PTR, Tensor(logits), target).item() < 1e-12
        m = feature_loss(MASK, Tensor(np.array([[1e3, -1e3]])), np.array([[1.0, 0.0]]))
        assert m.item() < 1e-12

    def test_mask_cross_entropy(self):
        loss = feature_loss(MASK, Tensor(np.array([[0.0, 0.0]])), np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(loss.data, [np.log(2.0)])

    def test_mask_one_over_nodes(self):
        loss = feature_loss(ONE, Tensor(np.zeros((1, 4))), np.array([[0, 0, 1.0, 0]]))
        np.testing.assert_allclose(loss.data, [np.log(4.0)])

    def test_permutation_targets(self):
        mats, firsts = permutation_targets(np.array([[[2.0], [1.0], [1.0]]]))
        np.testing.assert_array_equal(mats[0], np.eye(3)[[2, 0, 1]])
        np.testing.assert_array_equal(firsts[0], [0, 1, 0])


class TestSinkhorn:
    def test_two_by_two_fixed_point(self):
        s = sinkhorn(np.zeros((2, 2)), 60, 0.1).data
        np.testing.assert_allclose(s, [[0, 1], [1, 0]], atol=1e-12)
        again = sinkhorn(np.log(np.maximum(s, 1e-300)) * 0.1, 60, 0.1).data
        np.testing.assert_allclose(again, s, atol=1e-12)

    def test_three_by_three_uniform(self):
        s = sinkhorn(np.zeros((3, 3)), 60, 0.1, mask_diagonal=False).data
        np.testing.assert_allclose(s, 1.0 / 3.0, atol=1e-15)

    def test_columns_exact_after_final_half_step(self):
        y = np.random.default_rng(0).uniform(-5, 5, size=(10, 8, 8))
        s = sinkhorn(y, 60, 0.1).data
        np.testing.assert_allclose(s.sum(-2), 1.0, atol=1e-9)
        np.testing.assert_array_less(np.diagonal(s, axis1=-2, axis2=-1), 1e-300)

    def test_planted_permutation_recovered(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            perm = rng.permutation(6)
            while np.any(perm == np.arange(6)):
                perm = rng.permutation(6)
            y = rng.uniform(0, 1, size=(6, 6))
            y[np.arange(6), perm] += 5.0
            s = sinkhorn(y, 60, 0.1).data
            np.testing.assert_array_equal(np.argmax(s, -1), perm)

    def test_log_space_matches(self):
        y = np.random.default_rng(1).normal(size=(5, 5))
        np.testing.assert_allclose(np.exp(sinkhorn(y, 10, 0.5, log_space=True).data), sinkhorn(y, 10, 0.5).data)

    def test_gumbel_needs_rng(self):
        with pytest.raises(ValueError):
            sinkhorn(np.zeros((3, 3)), 5, 0.1, gumbel=True)

    def test_gumbel_changes_scores_off_diagonal_only(self):
        y = np.zeros((4, 4))
        a = sinkhorn(y, 0, 1.0, gumbel=True, rng=np.random.default_rng(0), log_space=True).data
        np.testing.assert_array_equal(np.diag(a), -1e9)
        assert np.ptp(a[~np.eye(4, dtype=bool)]) > 0

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            sinkhorn(np.zeros((3, 3)), 5, 0.0)
        with pytest.raises(ValueError):
            sinkhorn(np.zeros((3, 4)), 5, 0.1)

    def test_setting_defaults(self):
        s = SinkhornSettings()
        assert (s.l_train, s.l_eval, s.temperature) == (10, 60, 0.1)

    def test_error_type(self):
        assert issubclass(SinkhornError, FloatingPointError)


class TestRewire:
    def test_example(self):
        P, first = pointers_to_permutation([2, 1, 1])
        np.testing.assert_array_equal(np.argmax(P, -1), [2, 0, 1])
        np.testing.assert_array_equal(first, [0, 1, 0])
        np.testing.assert_array_equal(permutation_rewire(P, first), [2, 1, 1])

    def test_singleton(self):
        P, first = pointers_to_permutation([0])
        np.testing.assert_array_equal(P, [[1.0]])
        np.testing.assert_array_equal(first, [1.0])
        np.testing.assert_array_equal(permutation_rewire(P, first), [0])

    def test_round_trip_many(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            order = rng.permutation(n)
            ptr = np.arange(n)
            ptr[order[1:]] = order[:-1]
            ptr[order[0]] = order[0]
            P, first = pointers_to_permutation(ptr)
            np.testing.assert_array_equal(permutation_rewire(P, first), ptr)
            assert sorted_order(ptr) == list(order)

    def test_invalid_argmax(self):
        with pytest.raises(PermutationError):
            permutation_rewire(np.array([[0, 1.0], [0, 1.0]]), np.array([1.0, 0]))

    def test_batched_decode_flags(self):
        P = np.stack([np.eye(3)[[2, 0, 1]], np.eye(3)[[1, 1, 0]]])
        ptr, valid = decode_permutation(P, np.array([[0, 1.0, 0], [1.0, 0, 0]]))
        np.testing.assert_array_equal(ptr[0], [2, 1, 1])
        np.testing.assert_array_equal(valid, [True, False])

    @pytest.mark.parametrize("ptr", [[1, 0], [0, 0, 1, 1], [1, 2, 0]])
    def test_sorted_order_rejects_non_chains(self, ptr):
        with pytest.raises(PermutationError):
            sorted_order(ptr)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 9), seed=st.integers(0, 2**31 - 1))
def test_sinkhorn_doubly_stochastic_when_converged(n, seed):
    """Moderate scores at tau = 1 converge well inside 60 iterations."""
    y = np.random.default_rng(seed).uniform(-1, 1, size=(n, n))
    s = sinkhorn(y, 60, 1.0).data
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(s.sum(-2), 1.0, atol=1e-12)
