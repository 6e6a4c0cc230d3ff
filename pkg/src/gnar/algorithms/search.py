"""Minimum and Binary Search traces.

Both carry the array structure as a ``pred_h`` pointer hint that never changes;
static-hint elimination turns it into an input.
"""

from __future__ import annotations

import numpy as np

from ..specs import Family, FType, ProblemSpec, Stage
from ._probes import POS, InstanceError, Recorder, array_pointer, graph, node

MINIMUM = ProblemSpec("minimum", (
    POS,
    node("key", Stage.INPUT, FType.SCALAR),
    node("min", Stage.OUTPUT, FType.MASK_ONE),
    node("pred_h", Stage.HINT, FType.POINTER),
    node("min_h", Stage.HINT, FType.MASK_ONE),
    node("i", Stage.HINT, FType.MASK_ONE),
), Family.SEARCH)

BINARY_SEARCH = ProblemSpec("binary_search", (
    POS,
    node("key", Stage.INPUT, FType.SCALAR),
    graph("target", Stage.INPUT, FType.SCALAR),
    node("return", Stage.OUTPUT, FType.MASK_ONE),
    node("pred_h", Stage.HINT, FType.POINTER),
    node("low", Stage.HINT, FType.MASK_ONE),
    node("high", Stage.HINT, FType.MASK_ONE),
    node("mid", Stage.HINT, FType.MASK_ONE),
), Family.SEARCH)


def sample_minimum(rng: np.random.Generator, n: int, **_) -> dict:
    return {"key": rng.uniform(0.0, 1.0, size=n)}


def sample_binary_search(rng: np.random.Generator, n: int, **_) -> dict:
    return {"key": np.sort(rng.uniform(0.0, 1.0, size=n)), "target": rng.uniform(0.0, 1.0)}


def minimum(inst: dict):
    key = np.asarray(inst["key"], dtype=np.float64)
    n = len(key)
    rec = Recorder(MINIMUM, n, inst)
    structure = array_pointer(range(n), n)
    best = 0
    rec.hint(pred_h=structure, min_h=best, i=0)
    for i in range(1, n):
        if key[i] < key[best]:
            best = i
        rec.hint(pred_h=structure, min_h=best, i=i)
    rec.output(min=best)
    return rec.finish()


def binary_search(inst: dict):
    """Locate the first index whose key is >= target (the last index if none)."""
    key = np.asarray(inst["key"], dtype=np.float64)
    n = len(key)
    if np.any(np.diff(key) < 0):
        raise InstanceError("binary_search needs keys sorted ascending")
    target = float(np.asarray(inst["target"]).reshape(-1)[0])
    rec = Recorder(BINARY_SEARCH, n, inst)
    structure = array_pointer(range(n), n)
    low, high = 0, n - 1
    rec.hint(pred_h=structure, low=low, high=high, mid=(low + high) // 2)
    while low < high:
        mid = (low + high) // 2
        if target <= key[mid]:
            high = mid
        else:
            low = mid + 1
        rec.hint(pred_h=structure, low=low, high=high, mid=mid)
    rec.output(**{"return": high})
    return rec.finish()
