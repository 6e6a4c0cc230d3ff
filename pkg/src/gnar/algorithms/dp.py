"""LCS Length trace.

Nodes hold the two strings back to back (``x`` first, then ``y``); the arrow
table lives on the edges between an ``x`` node and a ``y`` node. Edges outside
that block carry the extra category ``NONE``.
"""

from __future__ import annotations

import numpy as np

from ..specs import Family, FType, ProblemSpec, Stage
from ._probes import POS, InstanceError, Recorder, array_pointer, edge, node

ALPHABET = 4
UP, LEFT, DIAG, NONE = range(4)

LCS_LENGTH = ProblemSpec("lcs_length", (
    POS,
    node("string", Stage.INPUT, FType.MASK),
    node("key", Stage.INPUT, FType.CATEGORICAL, num_categories=ALPHABET),
    edge("b", Stage.OUTPUT, FType.CATEGORICAL, num_categories=4),
    node("pred_h", Stage.HINT, FType.POINTER),
    edge("b_h", Stage.HINT, FType.CATEGORICAL, num_categories=4),
    edge("c_h", Stage.HINT, FType.SCALAR),
), Family.DP)


def sample(rng: np.random.Generator, n: int, **_) -> dict:
    if n < 2:
        raise InstanceError("lcs_length needs n >= 2")
    nx = n // 2
    return {
        "string": np.r_[np.zeros(nx), np.ones(n - nx)],
        "key": rng.integers(0, ALPHABET, size=n),
    }


def lcs_length(inst: dict):
    string = np.asarray(inst["string"], dtype=np.float64)
    key = np.asarray(inst["key"]).astype(np.int64)
    n = len(key)
    nx = int((string == 0).sum())
    if nx < 1 or nx == n or np.any(string[:nx] != 0):
        raise InstanceError("lcs_length: nodes must be x-string first, then a non-empty y-string")
    x, y = key[:nx], key[nx:]
    ny = n - nx
    rec = Recorder(LCS_LENGTH, n, inst)
    structure = array_pointer(range(n), n)
    b = np.full((n, n), NONE)
    b[:nx, nx:] = UP
    c = np.zeros((nx + 1, ny + 1))
    c_edge = np.zeros((n, n))
    rec.hint(pred_h=structure, b_h=b, c_h=c_edge)
    for i in range(nx):
        for j in range(ny):
            if x[i] == y[j]:
                c[i + 1, j + 1] = c[i, j] + 1
                b[i, nx + j] = DIAG
            elif c[i, j + 1] >= c[i + 1, j]:
                c[i + 1, j + 1] = c[i, j + 1]
                b[i, nx + j] = UP
            else:
                c[i + 1, j + 1] = c[i + 1, j]
                b[i, nx + j] = LEFT
        c_edge[i, nx:] = c[i + 1, 1:]
        rec.hint(pred_h=structure, b_h=b, c_h=c_edge)
    rec.output(b=b)
    return rec.finish()
