"""Graham Scan trace."""

from __future__ import annotations

import functools

import numpy as np

from ..specs import Family, FType, ProblemSpec, Stage
from ._probes import POS, InstanceError, Recorder, node

GRAHAM_SCAN = ProblemSpec("graham_scan", (
    POS,
    node("xs", Stage.INPUT, FType.SCALAR),
    node("ys", Stage.INPUT, FType.SCALAR),
    node("in_hull", Stage.OUTPUT, FType.MASK),
    node("best", Stage.HINT, FType.MASK_ONE),
    node("atstack_h", Stage.HINT, FType.MASK),
    node("stack_prev", Stage.HINT, FType.POINTER),
    node("last_stack", Stage.HINT, FType.MASK_ONE),
    node("i", Stage.HINT, FType.MASK_ONE),
), Family.GEOMETRY)

# Triples with |cross product| below this are treated as collinear.
COLLINEAR_EPS = 1e-10


@functools.lru_cache(maxsize=None)
def _triples(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = np.arange(n)
    mask = (idx[:, None, None] < idx[None, :, None]) & (idx[None, :, None] < idx[None, None, :])
    return np.nonzero(mask)


def min_abs_cross(pts: np.ndarray) -> float:
    """Smallest |orientation| over all point triples (inf for n < 3)."""
    n = len(pts)
    if n < 3:
        return np.inf
    d = pts[None, :, :] - pts[:, None, :]
    a, b, c = _triples(n)
    cross = d[a, b, 0] * d[a, c, 1] - d[a, b, 1] * d[a, c, 0]
    return float(np.abs(cross).min())


def sample(rng: np.random.Generator, n: int, **_) -> dict:
    while True:
        pts = rng.uniform(0.0, 1.0, size=(n, 2))
        if min_abs_cross(pts) > COLLINEAR_EPS:
            return {"xs": pts[:, 0], "ys": pts[:, 1]}


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def graham_scan(inst: dict):
    xs = np.asarray(inst["xs"], dtype=np.float64)
    ys = np.asarray(inst["ys"], dtype=np.float64)
    pts = np.stack([xs, ys], axis=1)
    n = len(pts)
    if n >= 3 and min_abs_cross(pts) <= COLLINEAR_EPS:
        raise InstanceError("graham_scan: collinear point triple")
    rec = Recorder(GRAHAM_SCAN, n, inst)
    best = int(np.lexsort((xs, ys))[0])
    others = [i for i in range(n) if i != best]
    angles = np.arctan2(ys[others] - ys[best], xs[others] - xs[best])
    order = [best] + [others[i] for i in np.argsort(angles, kind="stable")]

    def record(stack, i):
        at = np.zeros(n)
        at[stack] = 1
        prev = np.arange(n)
        for lo, hi in zip(stack[:-1], stack[1:]):
            prev[hi] = lo
        rec.hint(best=best, atstack_h=at, stack_prev=prev, last_stack=stack[-1], i=i)

    stack = order[:3]
    record(stack, stack[-1])
    for i in order[3:]:
        while len(stack) >= 2 and _cross(pts[stack[-2]], pts[stack[-1]], pts[i]) <= 0:
            stack.pop()
            record(stack, i)
        stack.append(i)
        record(stack, i)
    hull = np.zeros(n)
    hull[stack] = 1
    rec.output(in_hull=hull)
    return rec.finish()
