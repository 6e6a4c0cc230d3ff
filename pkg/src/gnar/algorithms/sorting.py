"""Insertion Sort and Bubble Sort traces.

Hints track the current arrangement of the array as predecessor pointers
(``pred_h``), plus the two positions the inner loop is working on.
"""

from __future__ import annotations

import numpy as np

from ..specs import Family, FType, ProblemSpec, Stage
from ._probes import POS, Recorder, array_pointer, node


def _spec(algorithm_id: str) -> ProblemSpec:
    return ProblemSpec(algorithm_id, (
        POS,
        node("key", Stage.INPUT, FType.SCALAR),
        node("pred", Stage.OUTPUT, FType.POINTER, permutation=True),
        node("pred_h", Stage.HINT, FType.POINTER),
        node("i", Stage.HINT, FType.MASK_ONE),
        node("j", Stage.HINT, FType.MASK_ONE),
    ), Family.SORTING)


INSERTION_SORT = _spec("insertion_sort")
BUBBLE_SORT = _spec("bubble_sort")


def sample(rng: np.random.Generator, n: int, **_) -> dict:
    return {"key": rng.uniform(0.0, 1.0, size=n)}


def insertion_sort(inst: dict):
    key = np.asarray(inst["key"], dtype=np.float64)
    n = len(key)
    rec = Recorder(INSERTION_SORT, n, inst)
    arr = list(range(n))
    rec.hint(pred_h=array_pointer(arr, n), i=arr[0], j=arr[0])
    for j in range(1, n):
        cur = arr[j]
        i = j - 1
        while i >= 0 and key[arr[i]] > key[cur]:
            arr[i + 1] = arr[i]
            i -= 1
        arr[i + 1] = cur
        rec.hint(pred_h=array_pointer(arr, n), i=cur, j=arr[j])
    rec.output(pred=array_pointer(arr, n))
    return rec.finish()


def bubble_sort(inst: dict):
    key = np.asarray(inst["key"], dtype=np.float64)
    n = len(key)
    rec = Recorder(BUBBLE_SORT, n, inst)
    arr = list(range(n))
    rec.hint(pred_h=array_pointer(arr, n), i=arr[0], j=arr[0])
    for i in range(n - 1):
        for j in reversed(range(i + 1, n)):
            if key[arr[j]] < key[arr[j - 1]]:
                arr[j], arr[j - 1] = arr[j - 1], arr[j]
            rec.hint(pred_h=array_pointer(arr, n), i=arr[i], j=arr[j])
    rec.output(pred=array_pointer(arr, n))
    return rec.finish()
