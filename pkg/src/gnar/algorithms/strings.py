"""Naive String Matcher trace.

The first ``n - m`` nodes are the haystack, the last ``m`` the needle; the
``string`` input marks needle nodes. The output selects the first matching
haystack offset, or the first needle node when there is no match.
"""

from __future__ import annotations

import numpy as np

from ..specs import Family, FType, ProblemSpec, Stage
from ._probes import POS, InstanceError, Recorder, array_pointer, node

ALPHABET = 4

NAIVE_STRING_MATCHER = ProblemSpec("naive_string_matcher", (
    POS,
    node("string", Stage.INPUT, FType.MASK),
    node("key", Stage.INPUT, FType.CATEGORICAL, num_categories=ALPHABET),
    node("match", Stage.OUTPUT, FType.MASK_ONE),
    node("pred_h", Stage.HINT, FType.POINTER),
    node("s", Stage.HINT, FType.MASK_ONE),
    node("i", Stage.HINT, FType.MASK_ONE),
    node("j", Stage.HINT, FType.MASK_ONE),
), Family.STRINGS)


def sample(rng: np.random.Generator, n: int, *, needle_len: int, plant_prob: float = 0.5, **_) -> dict:
    m = int(needle_len)
    if not 1 <= m <= n // 2:
        raise InstanceError(f"needle length {m} outside [1, {n // 2}]")
    hay = n - m
    key = rng.integers(0, ALPHABET, size=n)
    if rng.uniform() < plant_prob:
        at = int(rng.integers(0, hay - m + 1))
        key[at:at + m] = key[hay:]
    return {"string": np.r_[np.zeros(hay), np.ones(m)], "key": key}


def naive_string_matcher(inst: dict):
    string = np.asarray(inst["string"], dtype=np.float64)
    key = np.asarray(inst["key"]).astype(np.int64)
    n = len(key)
    hay = int((string == 0).sum())
    m = n - hay
    if m < 1 or np.any(string[:hay] != 0):
        raise InstanceError("naive_string_matcher: haystack nodes first, then a non-empty needle")
    rec = Recorder(NAIVE_STRING_MATCHER, n, inst)
    structure = array_pointer(range(n), n)
    found = None
    for s in range(hay - m + 1):
        i, j = s, 0
        rec.hint(pred_h=structure, s=s, i=i, j=hay + j)
        while key[i] == key[hay + j]:
            if j == m - 1:
                found = s
                break
            i += 1
            j += 1
            rec.hint(pred_h=structure, s=s, i=i, j=hay + j)
        if found is not None:
            break
    if not rec.steps:
        rec.hint(pred_h=structure, s=0, i=0, j=hay)
    rec.output(match=hay if found is None else found)
    return rec.finish()
