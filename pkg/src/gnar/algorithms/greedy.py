"""Activity Selector trace (earliest-finish greedy)."""

from __future__ import annotations

import numpy as np

from ..specs import Family, FType, ProblemSpec, Stage
from ._probes import POS, InstanceError, Recorder, array_pointer, node

ACTIVITY_SELECTOR = ProblemSpec("activity_selector", (
    POS,
    node("s", Stage.INPUT, FType.SCALAR),
    node("f", Stage.INPUT, FType.SCALAR),
    node("selected", Stage.OUTPUT, FType.MASK),
    node("pred_h", Stage.HINT, FType.POINTER),
    node("selected_h", Stage.HINT, FType.MASK),
    node("m", Stage.HINT, FType.MASK_ONE),
    node("k", Stage.HINT, FType.MASK_ONE),
), Family.GREEDY)


def sample(rng: np.random.Generator, n: int, **_) -> dict:
    ends = rng.uniform(0.0, 1.0, size=(n, 2))
    return {"s": ends.min(axis=1), "f": ends.max(axis=1)}


def activity_selector(inst: dict):
    s = np.asarray(inst["s"], dtype=np.float64)
    f = np.asarray(inst["f"], dtype=np.float64)
    if np.any(f < s):
        raise InstanceError("activity_selector: finish time before start time")
    n = len(s)
    rec = Recorder(ACTIVITY_SELECTOR, n, inst)
    structure = array_pointer(range(n), n)
    order = np.argsort(f, kind="stable")
    selected = np.zeros(n)
    k = int(order[0])
    selected[k] = 1
    rec.hint(pred_h=structure, selected_h=selected, m=k, k=k)
    for m in order[1:]:
        m = int(m)
        if s[m] >= f[k]:
            selected[m] = 1
            k = m
        rec.hint(pred_h=structure, selected_h=selected, m=m, k=k)
    rec.output(selected=selected)
    return rec.finish()
