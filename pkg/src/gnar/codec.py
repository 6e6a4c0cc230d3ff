"""Per-task encoders and decoders around the shared processor.

Features travel through the model in a *model space* layout with a leading
batch axis:

=============  ================================  ====================
type           value (encoder input / target)    decoder prediction
=============  ================================  ====================
scalar         location shape                    value
mask           location shape, {0, 1}            logit
mask_one       (B, n) one-hot over nodes         logits over nodes
categorical    location shape + (C,) one-hot    logits over C
pointer        location shape + (n,) one-hot    scores over nodes
=============  ================================  ====================

Location shape is (B, n), (B, n, n) or (B,). A sorting output flagged as a
permutation can instead be decoded through the Sinkhorn operator; its
prediction is then ``log S`` and a companion ``<name>__first`` mask_one head
predicts the first node of the order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .autodiff import (
    InitScheme,
    Tensor,
    add,
    as_tensor,
    concat,
    default_dtype,
    expand_dims,
    log_sigmoid,
    log_softmax,
    matmul,
    max_,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum_,
    transpose,
)
from .layers import ParamStore, dense
from .permutation import pointers_to_permutation, sinkhorn
from .specs import FeatureSpec, FType, Location, ProblemSpec, Stage

FIRST_SUFFIX = "__first"


class FeedbackMode(str, enum.Enum):
    SOFT = "soft"
    HARD = "hard"


@dataclass(frozen=True)
class SinkhornSettings:
    l_train: int = 10
    l_eval: int = 60
    temperature: float = 0.1
    gumbel: bool = True


@dataclass
class LatentState:
    """Encoded embeddings for one processor step (leading batch axis)."""

    x: Tensor  # (B, n, h)
    e: Tensor  # (B, n, n, h)
    g: Tensor  # (B, h)
    h_prev: Tensor  # (B, n, h)


# ---------------------------------------------------------------------------
# layout conversion


def _one_hot(idx: np.ndarray, depth: int) -> np.ndarray:
    out = np.zeros(idx.shape + (depth,), dtype=default_dtype())
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def to_model_space(f: FeatureSpec, arr: np.ndarray, n: int) -> np.ndarray:
    """Convert stored arrays (any leading axes, trailing ``f.shape(n)``) to model space."""
    a = np.asarray(arr)
    if f.ftype is FType.POINTER:
        return _one_hot(a[..., 0].astype(np.int64), n)
    if f.ftype is FType.CATEGORICAL:
        return a.astype(default_dtype())
    return a[..., 0].astype(default_dtype())


def permutation_targets(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched stored pointers (B, n, 1) -> permutation matrices and first-node one-hots."""
    mats, firsts = zip(*(pointers_to_permutation(a[:, 0]) for a in np.asarray(arr)))
    dt = default_dtype()
    return np.stack(mats).astype(dt), np.stack(firsts).astype(dt)


# ---------------------------------------------------------------------------
# the codec


class TaskCodec:
    """Encoders and decoders for one algorithm.

    ``sinkhorn`` enables the permutation decoder for outputs flagged as
    permutations; ``None`` decodes them as plain pointers.
    """

    def __init__(self, spec: ProblemSpec, hidden: int, rng: np.random.Generator, *,
                 sinkhorn: Optional[SinkhornSettings] = SinkhornSettings(),
                 xavier_scalar: bool = True, prefix: Optional[str] = None):
        self.spec = spec
        self.hidden = hidden
        self.sinkhorn = sinkhorn
        self.prefix = spec.algorithm_id if prefix is None else prefix
        self.params = ParamStore(rng)
        h = hidden
        for f in spec.inputs + spec.hints:
            name = self._enc(f)
            scalar_hint = f.stage is Stage.HINT and f.ftype is FType.SCALAR
            scheme = InitScheme.XAVIER_UNIFORM if (scalar_hint and xavier_scalar) else InitScheme.LECUN
            if f.ftype is FType.POINTER:
                width = h if f.location is Location.EDGE else 1
                self.params.add_linear(name, width, h, scheme=scheme)
            else:
                self.params.add_linear(name, f.dim, h, scheme=scheme)
        for f in spec.hints + spec.outputs:
            self._add_decoder(f)
            if self.uses_sinkhorn(f):
                first = FeatureSpec(f.name + FIRST_SUFFIX, Stage.OUTPUT, Location.NODE, FType.MASK_ONE)
                self._add_decoder(first)

    # names -----------------------------------------------------------------

    def _enc(self, f: FeatureSpec) -> str:
        return f"{self.prefix}/enc/{f.name}"

    def _dec(self, name: str) -> str:
        return f"{self.prefix}/dec/{name}"

    def uses_sinkhorn(self, f: FeatureSpec) -> bool:
        return self.sinkhorn is not None and f.permutation and f.stage is Stage.OUTPUT

    def output_heads(self) -> list[FeatureSpec]:
        """Output features as decoded, including first-node heads of permutations."""
        heads = []
        for f in self.spec.outputs:
            heads.append(f)
            if self.uses_sinkhorn(f):
                heads.append(FeatureSpec(f.name + FIRST_SUFFIX, Stage.OUTPUT, Location.NODE, FType.MASK_ONE))
        return heads

    def _add_decoder(self, f: FeatureSpec) -> None:
        h, p, d = self.hidden, self.params, self._dec(f.name)
        c = f.dim
        if f.location is Location.NODE:
            if f.ftype is FType.POINTER:
                p.add_linear(d + "/a", 2 * h, h)
                p.add_linear(d + "/b", 2 * h, h)
                p.add_linear(d + "/e", h, h)
                p.add_linear(d + "/o", h, 1)
            else:
                p.add_linear(d, 2 * h, c)
        elif f.location is Location.EDGE:
            if f.ftype is FType.POINTER:
                p.add_linear(d + "/a", 2 * h, h)
                p.add_linear(d + "/e", h, h)
                p.add_linear(d + "/k", 2 * h, h)
            else:
                p.add_linear(d + "/a", 2 * h, c)
                p.add_linear(d + "/b", 2 * h, c)
                p.add_linear(d + "/e", h, c)
        else:
            p.add_linear(d + "/n", 2 * h, c)
            p.add_linear(d + "/g", h, c)

    # encoding --------------------------------------------------------------

    def encode(self, values: Mapping[str, object], batch: int, n: int) -> tuple[Tensor, Tensor, Tensor]:
        """Embed every input and hint value and sum per location -> (x, e, g)."""
        h, p = self.hidden, self.params
        dt = default_dtype()
        x = Tensor(np.zeros((batch, n, h), dtype=dt))
        e = Tensor(np.zeros((batch, n, n, h), dtype=dt))
        g = Tensor(np.zeros((batch, h), dtype=dt))
        edge_ptrs = []
        for f in self.spec.inputs + self.spec.hints:
            v = as_tensor(values[f.name])
            want = value_shape(f, batch, n)
            if v.shape != want:
                raise ValueError(f"{f.name}: value shape {v.shape} != expected {want}")
            name = self._enc(f)
            if f.ftype is FType.POINTER:
                if f.location is Location.NODE:
                    e = add(e, dense(p, name, expand_dims(v, -1)))
                else:
                    edge_ptrs.append((name, v))
                continue
            arg = v if f.ftype is FType.CATEGORICAL else expand_dims(v, -1)
            emb = dense(p, name, arg)
            if f.location is Location.NODE:
                x = add(x, emb)
            elif f.location is Location.EDGE:
                e = add(e, emb)
            else:
                g = add(g, emb)
        for name, v in edge_ptrs:
            # e_ij += sum_k P_ijk u_k with u a projection of the node embeddings.
            u = dense(p, name, x)
            flat = matmul(reshape(v, (batch, n * n, n)), u)
            e = add(e, reshape(flat, (batch, n, n, h)))
        return x, e, g

    # decoding --------------------------------------------------------------

    def decode(self, features, x: Tensor, h_nodes: Tensor, e: Tensor, g: Tensor, *,
               train: bool = False, rng: Optional[np.random.Generator] = None) -> dict[str, Tensor]:
        """Predictions for ``features`` (hint or output specs) from processed embeddings."""
        z = concat([x, h_nodes], axis=-1)
        out = {}
        for f in features:
            out[f.name] = self._decode_one(f, z, e, g)
            if self.uses_sinkhorn(f):
                s = self.sinkhorn
                out[f.name] = sinkhorn(out[f.name], s.l_train if train else s.l_eval, s.temperature,
                                       gumbel=s.gumbel and train, rng=rng, log_space=True)
                first = FeatureSpec(f.name + FIRST_SUFFIX, Stage.OUTPUT, Location.NODE, FType.MASK_ONE)
                out[first.name] = self._decode_one(first, z, e, g)
        return out

    def _decode_one(self, f: FeatureSpec, z: Tensor, e: Tensor, g: Tensor) -> Tensor:
        p, d = self.params, self._dec(f.name)
        B, n = z.shape[0], z.shape[1]
        if f.location is Location.NODE:
            if f.ftype is FType.POINTER:
                a = expand_dims(dense(p, d + "/a", z), 2)
                b = expand_dims(dense(p, d + "/b", z), 1)
                hid = relu(add(add(a, b), dense(p, d + "/e", e)))
                return reshape(dense(p, d + "/o", hid), (B, n, n))
            y = dense(p, d, z)
            return y if f.ftype is FType.CATEGORICAL else reshape(y, (B, n))
        if f.location is Location.EDGE:
            if f.ftype is FType.POINTER:
                q = add(expand_dims(dense(p, d + "/a", z), 2), dense(p, d + "/e", e))
                k = dense(p, d + "/k", z)
                hdim = k.shape[-1]
                s = matmul(reshape(q, (B, n * n, hdim)), transpose(k, (0, 2, 1)))
                return reshape(s, (B, n, n, n))
            y = add(add(expand_dims(dense(p, d + "/a", z), 2), expand_dims(dense(p, d + "/b", z), 1)),
                    dense(p, d + "/e", e))
            return y if f.ftype is FType.CATEGORICAL else reshape(y, (B, n, n))
        y = add(dense(p, d + "/n", max_(z, axis=1)), dense(p, d + "/g", g))
        return y if f.ftype is FType.CATEGORICAL else reshape(y, (B,))


def value_shape(f: FeatureSpec, batch: int, n: int) -> tuple:
    loc = {Location.NODE: (batch, n), Location.EDGE: (batch, n, n), Location.GRAPH: (batch,)}[f.location]
    if f.ftype is FType.CATEGORICAL:
        return loc + (f.num_categories,)
    if f.ftype is FType.POINTER:
        return loc + (n,)
    return loc


# ---------------------------------------------------------------------------
# step-level entry points


def encode_step(codec: TaskCodec, inputs: Mapping, hints: Mapping, h_prev: Tensor,
                e_carry: Optional[Tensor] = None) -> LatentState:
    """Encode inputs (re-read at every step) and current hint values into a LatentState."""
    B, n = h_prev.shape[0], h_prev.shape[1]
    x, e, g = codec.encode({**inputs, **hints}, B, n)
    if e_carry is not None:
        e = add(e, e_carry)
    return LatentState(x, e, g, h_prev)


def decode_step(codec: TaskCodec, features, state: LatentState, h_nodes: Tensor, e_latent: Tensor, *,
                train: bool = False, rng=None) -> dict[str, Tensor]:
    return codec.decode(features, state.x, h_nodes, e_latent, state.g, train=train, rng=rng)


def _soft(f: FeatureSpec, pred: Tensor) -> Tensor:
    if f.ftype is FType.SCALAR:
        return pred
    if f.ftype is FType.MASK:
        return sigmoid(pred)
    if f.ftype is FType.MASK_ONE:
        return softmax(pred, axis=1)
    return softmax(pred, axis=-1)


def hard_value(f: FeatureSpec, pred: np.ndarray) -> np.ndarray:
    """Argmax / threshold of a prediction, in model space."""
    pred = np.asarray(pred)
    dt = default_dtype()
    if f.ftype is FType.SCALAR:
        return pred.astype(dt)
    if f.ftype is FType.MASK:
        return (pred > 0).astype(dt)
    if f.ftype is FType.MASK_ONE:
        return _one_hot(np.argmax(pred, axis=1), pred.shape[1])
    return _one_hot(np.argmax(pred, axis=-1), pred.shape[-1])


def soft_hint_feedback(features, predictions: Mapping[str, Tensor], mode: FeedbackMode = FeedbackMode.SOFT,
                       teacher_forcing: float = 0.0, truth: Optional[Mapping[str, np.ndarray]] = None,
                       rng: Optional[np.random.Generator] = None) -> dict[str, Tensor]:
    """Turn hint predictions into the next step's hint inputs.

    SOFT keeps gradients through softmax / sigmoid; HARD feeds argmax or
    threshold values as constants. With probability ``teacher_forcing`` per
    sample the ground-truth value is fed instead.
    """
    if not 0.0 <= teacher_forcing <= 1.0:
        raise ValueError(f"teacher_forcing must lie in [0, 1], got {teacher_forcing}")
    mode = FeedbackMode(mode)
    out = {}
    force = None
    for f in features:
        pred = predictions[f.name]
        val = _soft(f, pred) if mode is FeedbackMode.SOFT else Tensor(hard_value(f, pred.data))
        if teacher_forcing > 0.0:
            if truth is None:
                raise ValueError("teacher forcing needs ground-truth hints")
            B = pred.shape[0]
            if force is None:
                force = (rng.uniform(size=B) < teacher_forcing) if teacher_forcing < 1.0 else np.ones(B, bool)
            m = force.reshape((B,) + (1,) * (pred.ndim - 1)).astype(val.dtype)
            t = np.asarray(truth[f.name], dtype=val.dtype)
            if teacher_forcing >= 1.0:
                val = Tensor(t)
            else:
                val = add(mul(val, 1.0 - m), t * m)
        out[f.name] = val
    return out


# ---------------------------------------------------------------------------
# losses


def feature_loss(f: FeatureSpec, pred: Tensor, target: np.ndarray, *, log_space: bool = False) -> Tensor:
    """Per-sample loss (shape (B,)) for one feature; ``log_space`` marks Sinkhorn ``log S``."""
    t = np.asarray(target, dtype=pred.dtype)
    B = pred.shape[0]
    if f.ftype is FType.SCALAR:
        d = sub(pred, t)
        per = mul(d, d)
    elif f.ftype is FType.MASK:
        per = neg(add(mul(log_sigmoid(pred), t), mul(log_sigmoid(neg(pred)), 1.0 - t)))
    elif f.ftype is FType.MASK_ONE:
        return neg(sum_(mul(log_softmax(pred, axis=1), t), axis=1))
    else:
        lp = pred if log_space else log_softmax(pred, axis=-1)
        per = neg(sum_(mul(lp, t), axis=-1))
    if per.ndim == 1:
        return per
    return mean(reshape(per, (B, -1)), axis=1)
