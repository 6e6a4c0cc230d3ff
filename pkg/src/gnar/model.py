"""Batching and the encode-process-decode unroll.

An unroll consumes a :class:`Steps` block: per-step inputs, hint targets and
boundary masks for ``B`` lanes. A full-trajectory batch is one block whose lanes
each hold one trajectory from step 0; a chunk is a block whose lanes may switch
trajectories mid-block (``reset`` marks trajectory starts). At step ``t`` the
model reads the hints it predicted at ``t - 1`` (zeros at a trajectory start),
predicts hint ``t`` and, where a trajectory ends, decodes its outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .autodiff import Tensor, add, default_dtype, mul, no_grad, sum_
from .codec import (
    FIRST_SUFFIX,
    FeedbackMode,
    TaskCodec,
    encode_step,
    feature_loss,
    permutation_targets,
    soft_hint_feedback,
    to_model_space,
    value_shape,
)
from .processor import ProcessorFlags, ProcessorParams, mpnn_step
from .specs import Trajectory


class HintTaintError(RuntimeError):
    """Ground-truth hints were read while sealed (e.g. during evaluation)."""


class SealedHints(Mapping):
    """Hint targets that refuse reads while sealed."""

    def __init__(self, arrays: Mapping[str, np.ndarray], sealed: bool = False):
        self._a = dict(arrays)
        self.sealed = sealed

    def __getitem__(self, key):
        if self.sealed:
            raise HintTaintError(f"ground-truth hint {key!r} read while sealed")
        return self._a[key]

    def __iter__(self):
        return iter(self._a)

    def __len__(self):
        return len(self._a)


@dataclass
class Steps:
    """A block of ``L`` steps over ``B`` lanes, all with ``n`` nodes."""

    n: int
    inputs: dict  # name -> (L, B, ...) model space
    hints: SealedHints  # name -> (L, B, ...) model space
    outputs: dict  # head name -> (L, B, ...) model-space targets
    raw_outputs: dict  # name -> (L, B, ...) stored layout
    reset: np.ndarray  # (L, B) trajectory starts here
    valid: np.ndarray  # (L, B) real step
    end: np.ndarray  # (L, B) trajectory ends here
    hint_w: np.ndarray  # (L, B) weight of each position in the hint loss
    out_w: np.ndarray  # (L, B) weight of each end position in the output loss

    @property
    def L(self) -> int:
        return self.reset.shape[0]

    @property
    def B(self) -> int:
        return self.reset.shape[1]


def stack_outputs(codec: TaskCodec, trajs: Sequence[Trajectory]) -> tuple[dict, dict]:
    """Model-space output targets and stored-layout outputs, each (B, ...)."""
    spec = codec.spec
    n = trajs[0].n
    targets, raw = {}, {}
    for f in spec.outputs:
        arr = np.stack([tr.outputs[f.name] for tr in trajs])
        raw[f.name] = arr
        if codec.uses_sinkhorn(f):
            targets[f.name], targets[f.name + FIRST_SUFFIX] = permutation_targets(arr)
        else:
            targets[f.name] = to_model_space(f, arr, n)
    return targets, raw


def make_batch(codec: TaskCodec, trajs: Sequence[Trajectory]) -> Steps:
    """Full-trajectory block: lane ``b`` runs trajectory ``b`` from its first step."""
    spec = codec.spec
    n = trajs[0].n
    if any(tr.n != n for tr in trajs):
        raise ValueError("a batch must hold trajectories of one size")
    B = len(trajs)
    lengths = np.array([tr.T for tr in trajs])
    L = int(lengths.max())
    inputs = {}
    for f in spec.inputs:
        a = to_model_space(f, np.stack([tr.inputs[f.name] for tr in trajs]), n)
        inputs[f.name] = np.broadcast_to(a, (L,) + a.shape)
    hints = {}
    for f in spec.hints:
        padded = []
        for tr in trajs:
            h = tr.hints[f.name]
            if tr.T < L:
                h = np.concatenate([h, np.repeat(h[-1:], L - tr.T, axis=0)])
            padded.append(h)
        hints[f.name] = to_model_space(f, np.stack(padded, axis=1), n)
    targets, raw = stack_outputs(codec, trajs)
    outputs = {k: np.broadcast_to(v, (L,) + v.shape) for k, v in targets.items()}
    raw = {k: np.broadcast_to(v, (L,) + v.shape) for k, v in raw.items()}
    t = np.arange(L)[:, None]
    valid = t < lengths[None, :]
    end = t == (lengths[None, :] - 1)
    reset = np.zeros((L, B), bool)
    reset[0] = True
    hint_w = valid / (lengths[None, :] * B)
    out_w = end / B
    return Steps(n, inputs, SealedHints(hints), outputs, raw, reset, valid, end, hint_w, out_w)


@dataclass
class Carry:
    """Detached recurrent state handed from one block to the next."""

    h: np.ndarray
    e: Optional[np.ndarray]
    fed: dict

    @staticmethod
    def zeros(codec: TaskCodec, B: int, n: int, triplets: bool) -> "Carry":
        dt = default_dtype()
        h = codec.hidden
        fed = {f.name: np.zeros(value_shape(f, B, n), dtype=dt) for f in codec.spec.hints}
        e = np.zeros((B, n, n, h), dtype=dt) if triplets else None
        return Carry(np.zeros((B, n, h), dtype=dt), e, fed)


@dataclass
class UnrollResult:
    hint_preds: list  # per step: name -> Tensor
    out_preds: dict  # step -> head name -> Tensor
    carry: Carry
    loss: Optional[Tensor] = None
    hint_loss: float = 0.0
    output_loss: float = 0.0
    hint_terms: Optional[np.ndarray] = None  # (L, B) mean-over-hints loss per position
    out_terms: dict = field(default_factory=dict)  # step -> (B,) mean-over-heads loss


@dataclass
class Model:
    """One task's codec plus a (possibly shared) processor."""

    codec: TaskCodec
    proc: ProcessorParams
    flags: ProcessorFlags = ProcessorFlags()
    feedback: FeedbackMode = FeedbackMode.SOFT
    teacher_forcing: float = 0.0

    def parameters(self) -> dict[str, Tensor]:
        names = set(self.proc.names(self.flags.triplets, self.flags.gated))
        out = {k: v for k, v in self.proc.items() if k in names}
        out.update(self.codec.params)
        return out


def _lane_mask(mask: np.ndarray, ndim: int, dtype) -> np.ndarray:
    return mask.reshape(mask.shape + (1,) * (ndim - 1)).astype(dtype)


def unroll(model: Model, steps: Steps, carry: Optional[Carry] = None, *, train: bool = False,
           rng: Optional[np.random.Generator] = None) -> UnrollResult:
    """Run the block forward; hint targets are only read for teacher forcing."""
    codec, flags = model.codec, model.flags
    spec = codec.spec
    B, n = steps.B, steps.n
    if carry is None:
        carry = Carry.zeros(codec, B, n, flags.triplets)
    tf = model.teacher_forcing if train else 0.0
    dt = default_dtype()
    h_prev = Tensor(carry.h)
    e_prev = Tensor(carry.e) if carry.e is not None else None
    fed = {k: Tensor(v) for k, v in carry.fed.items()}
    hint_preds, out_preds = [], {}
    for t in range(steps.L):
        if steps.reset[t].any():
            keep = 1.0 - steps.reset[t].astype(dt)
            h_prev = mul(h_prev, _lane_mask(keep, 3, dt))
            if e_prev is not None:
                e_prev = mul(e_prev, _lane_mask(keep, 4, dt))
            fed = {k: mul(v, _lane_mask(keep, v.ndim, dt)) for k, v in fed.items()}
        inputs_t = {k: v[t] for k, v in steps.inputs.items()}
        state = encode_step(codec, inputs_t, fed, h_prev, e_prev)
        h, e_lat = mpnn_step(model.proc, state, flags)
        e_dec = e_lat if e_lat is not None else state.e
        preds = codec.decode(spec.hints, state.x, h, e_dec, state.g, train=train, rng=rng)
        hint_preds.append(preds)
        if steps.end[t].any():
            out_preds[t] = codec.decode(spec.outputs, state.x, h, e_dec, state.g, train=train, rng=rng)
        truth = {k: steps.hints[k][t] for k in steps.hints} if tf > 0 else None
        fed = soft_hint_feedback(spec.hints, preds, model.feedback, tf, truth, rng)
        h_prev, e_prev = h, e_lat
    new_carry = Carry(h_prev.data, None if e_prev is None else e_prev.data,
                      {k: v.data for k, v in fed.items()})
    return UnrollResult(hint_preds, out_preds, new_carry)


def compute_loss(model: Model, steps: Steps, res: UnrollResult) -> UnrollResult:
    """Attach hint, output and total losses to ``res``; total = hint + output."""
    codec = model.codec
    spec = codec.spec
    hints = spec.hints
    total_h = None
    terms = np.zeros((steps.L, steps.B))
    for t, preds in enumerate(res.hint_preds):
        if not hints:
            break
        per = None
        for f in hints:
            l = feature_loss(f, preds[f.name], steps.hints[f.name][t])
            per = l if per is None else add(per, l)
        per = mul(per, 1.0 / len(hints))
        terms[t] = per.data * steps.valid[t]
        w = steps.hint_w[t]
        if w.any():
            c = sum_(mul(per, w))
            total_h = c if total_h is None else add(total_h, c)
    total_o = None
    out_terms = {}
    heads = codec.output_heads()
    for t, preds in res.out_preds.items():
        per = None
        for f in heads:
            l = feature_loss(f, preds[f.name], steps.outputs[f.name][t],
                             log_space=codec.uses_sinkhorn(f))
            per = l if per is None else add(per, l)
        per = mul(per, 1.0 / len(heads))
        out_terms[t] = per.data * steps.end[t]
        c = sum_(mul(per, steps.out_w[t]))
        total_o = c if total_o is None else add(total_o, c)
    zero = Tensor(np.zeros((), dtype=default_dtype()))
    total_h = zero if total_h is None else total_h
    total_o = zero if total_o is None else total_o
    res.loss = add(total_h, total_o)
    res.hint_loss = float(total_h.data)
    res.output_loss = float(total_o.data)
    res.hint_terms = terms
    res.out_terms = out_terms
    return res


def forward_loss(model: Model, steps: Steps, carry: Optional[Carry] = None, *, train: bool = True,
                 rng: Optional[np.random.Generator] = None) -> UnrollResult:
    res = unroll(model, steps, carry, train=train, rng=rng)
    return compute_loss(model, steps, res)


def evaluate_loss_frozen(model: Model, steps: Steps, carry: Optional[Carry] = None) -> UnrollResult:
    with no_grad():
        return forward_loss(model, steps, carry, train=False)
