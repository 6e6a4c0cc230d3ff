"""Micro-F1 over hard-decoded outputs.

Counts are pooled at the element level over all output features of all
samples. For a ``mask`` element only the positive class is scored. Every other
type is multiclass: a correct element is a true positive, a wrong one counts
as one false positive and one false negative, so its F1 equals accuracy.
Scalars are correct within an absolute tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import FIRST_SUFFIX, TaskCodec
from .permutation import PermutationError, decode_permutation, sorted_order
from .specs import FeatureSpec, FType

SCALAR_TOL = 1e-3


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: "Counts") -> "Counts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 1.0 if denom == 0 else 2 * self.tp / denom


def mask_counts(pred: np.ndarray, truth: np.ndarray) -> Counts:
    p = np.asarray(pred) > 0.5
    t = np.asarray(truth) > 0.5
    return Counts(int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & t)))


def multiclass_counts(pred: np.ndarray, truth: np.ndarray) -> Counts:
    ok = np.asarray(pred) == np.asarray(truth)
    wrong = int(ok.size - ok.sum())
    return Counts(int(ok.sum()), wrong, wrong)


def micro_f1(pairs) -> float:
    """F1 of pooled counts over ``(ftype, pred, truth)`` triples in stored layout."""
    total = Counts()
    for ftype, pred, truth in pairs:
        total += feature_counts(ftype, pred, truth)
    return total.f1


def feature_counts(ftype: FType, pred: np.ndarray, truth: np.ndarray) -> Counts:
    """Counts for hard predictions in stored layout (indices for pointers etc.)."""
    ftype = FType(ftype)
    if ftype is FType.MASK:
        return mask_counts(pred, truth)
    if ftype is FType.SCALAR:
        ok = np.abs(np.asarray(pred) - np.asarray(truth)) <= SCALAR_TOL
        wrong = int(ok.size - ok.sum())
        return Counts(int(ok.sum()), wrong, wrong)
    return multiclass_counts(pred, truth)


def is_chain(pointers: np.ndarray) -> bool:
    """True when predecessor pointers describe one ordering of all nodes."""
    try:
        sorted_order(pointers)
    except PermutationError:
        return False
    return True


def hard_outputs(codec: TaskCodec, preds: dict) -> tuple[dict, dict]:
    """Stored-layout hard outputs from decoder predictions, plus permutation validity.

    Pointers and categoricals become index arrays, mask_one a node index per
    sample, masks and scalars keep their location shape.
    """
    out, validity = {}, {}
    for f in codec.spec.outputs:
        p = np.asarray(preds[f.name].data)
        if codec.uses_sinkhorn(f):
            ptr, valid = decode_permutation(p, preds[f.name + FIRST_SUFFIX].data)
            out[f.name] = ptr
            validity[f.name] = valid
            continue
        if f.ftype is FType.MASK:
            out[f.name] = (p > 0).astype(np.float64)
        elif f.ftype is FType.SCALAR:
            out[f.name] = p
        elif f.ftype is FType.MASK_ONE:
            out[f.name] = np.argmax(p, axis=1)
        else:
            out[f.name] = np.argmax(p, axis=-1)
        if f.permutation:
            validity[f.name] = np.array([is_chain(r) for r in out[f.name]])
    return out, validity


def stored_truth(f: FeatureSpec, raw: np.ndarray) -> np.ndarray:
    """Ground truth in the same layout ``hard_outputs`` produces."""
    raw = np.asarray(raw)
    if f.ftype is FType.MASK_ONE:
        return np.argmax(raw[..., 0], axis=1)
    if f.ftype is FType.CATEGORICAL:
        return np.argmax(raw, axis=-1)
    return raw[..., 0]


def output_counts(codec: TaskCodec, preds: dict, raw_truth: dict) -> tuple[Counts, dict]:
    hard, validity = hard_outputs(codec, preds)
    total = Counts()
    for f in codec.spec.outputs:
        total += feature_counts(f.ftype, hard[f.name], stored_truth(f, raw_truth[f.name]))
    return total, validity
