"""BFS, Bellman-Ford and Floyd-Warshall traces.

Rounds are synchronous: every update in a round reads the state left by the
previous round, which is what one message-passing step can emulate.
"""

from __future__ import annotations

import numpy as np

from ..specs import Family, FType, ProblemSpec, Stage
from ._probes import POS, InstanceError, Recorder, edge, node

BFS = ProblemSpec("bfs", (
    POS,
    node("s", Stage.INPUT, FType.MASK_ONE),
    edge("A", Stage.INPUT, FType.MASK),
    node("pi", Stage.OUTPUT, FType.POINTER),
    node("reach_h", Stage.HINT, FType.MASK),
    node("pi_h", Stage.HINT, FType.POINTER),
), Family.GRAPH)

BELLMAN_FORD = ProblemSpec("bellman_ford", (
    POS,
    node("s", Stage.INPUT, FType.MASK_ONE),
    edge("A", Stage.INPUT, FType.SCALAR),
    edge("adj", Stage.INPUT, FType.MASK),
    node("pi", Stage.OUTPUT, FType.POINTER),
    node("pi_h", Stage.HINT, FType.POINTER),
    node("d", Stage.HINT, FType.SCALAR),
    node("msk", Stage.HINT, FType.MASK),
), Family.GRAPH)

FLOYD_WARSHALL = ProblemSpec("floyd_warshall", (
    POS,
    edge("A", Stage.INPUT, FType.SCALAR),
    edge("adj", Stage.INPUT, FType.MASK),
    edge("Pi", Stage.OUTPUT, FType.POINTER),
    edge("Pi_h", Stage.HINT, FType.POINTER),
    edge("D", Stage.HINT, FType.SCALAR),
    edge("msk", Stage.HINT, FType.MASK),
    node("k", Stage.HINT, FType.MASK_ONE),
), Family.GRAPH)


def sample_er_graph(n: int, p: float, rng: np.random.Generator, directed: bool = False) -> np.ndarray:
    """Erdos-Renyi adjacency: each pair (each ordered pair if directed) is an edge w.p. ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    draws = rng.uniform(size=(n, n)) < p
    if directed:
        adj = draws
    else:
        adj = np.triu(draws, 1)
        adj = adj | adj.T
    adj = adj.astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    return adj


def sample_bfs(rng: np.random.Generator, n: int, *, p: float, **_) -> dict:
    return {"A": sample_er_graph(n, p, rng), "s": int(rng.integers(n))}


def _weighted(rng, n, p):
    adj = sample_er_graph(n, p, rng)
    w = np.triu(rng.uniform(0.0, 1.0, size=(n, n)), 1)
    return adj, (w + w.T) * adj


def sample_bellman_ford(rng: np.random.Generator, n: int, *, p: float, **_) -> dict:
    adj, w = _weighted(rng, n, p)
    return {"A": w, "adj": adj, "s": int(rng.integers(n))}


def sample_floyd_warshall(rng: np.random.Generator, n: int, *, p: float, **_) -> dict:
    adj, w = _weighted(rng, n, p)
    return {"A": w, "adj": adj}


def _adjacency(inst: dict, key: str) -> np.ndarray:
    adj = np.asarray(inst[key], dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise InstanceError(f"{key} must be a square matrix")
    if not np.all((adj == 0) | (adj == 1)):
        raise InstanceError(f"{key} must be a 0/1 matrix")
    return adj


def _source(inst: dict) -> int:
    s = np.asarray(inst["s"])
    return int(s) if s.ndim == 0 else int(np.argmax(s))


def bfs(inst: dict):
    adj = _adjacency(inst, "A")
    n = adj.shape[0]
    s = _source(inst)
    inst = dict(inst, s=s)
    rec = Recorder(BFS, n, inst)
    reach = np.zeros(n)
    reach[s] = 1
    pi = np.arange(n)
    rec.hint(reach_h=reach, pi_h=pi)
    while True:
        prev = reach.copy()
        frontier = (prev[:, None] > 0) & (adj > 0)
        for j in range(n):
            if prev[j]:
                continue
            parents = np.flatnonzero(frontier[:, j])
            if parents.size:
                pi[j] = parents[0]
                reach[j] = 1
        if np.array_equal(reach, prev):
            break
        rec.hint(reach_h=reach, pi_h=pi)
    rec.output(pi=pi)
    return rec.finish()


def bellman_ford(inst: dict):
    adj = _adjacency(inst, "adj")
    w = np.asarray(inst["A"], dtype=np.float64)
    n = adj.shape[0]
    s = _source(inst)
    inst = dict(inst, s=s)
    rec = Recorder(BELLMAN_FORD, n, inst)
    d = np.zeros(n)
    msk = np.zeros(n)
    msk[s] = 1
    pi = np.arange(n)
    rec.hint(pi_h=pi, d=d, msk=msk)
    rounds = 0
    while True:
        prev_d, prev_msk = d.copy(), msk.copy()
        cand = np.where((prev_msk[:, None] > 0) & (adj > 0), prev_d[:, None] + w, np.inf)
        best = np.argmin(cand, axis=0)
        val = cand[best, np.arange(n)]
        upd = np.isfinite(val) & ((prev_msk == 0) | (val < prev_d))
        d = np.where(upd, val, d)
        pi = np.where(upd, best, pi)
        msk = np.where(np.isfinite(val), 1.0, msk)
        if np.array_equal(d, prev_d) and np.array_equal(msk, prev_msk):
            break
        rounds += 1
        if rounds > n:
            raise InstanceError("bellman_ford: negative-weight cycle reachable from the source")
        rec.hint(pi_h=pi, d=d, msk=msk)
    rec.output(pi=pi)
    return rec.finish()


def floyd_warshall(inst: dict):
    adj = _adjacency(inst, "adj")
    w = np.asarray(inst["A"], dtype=np.float64)
    n = adj.shape[0]
    rec = Recorder(FLOYD_WARSHALL, n, inst)
    eye = np.eye(n)
    msk = np.maximum(adj, eye)
    D = np.where(adj > 0, w, 0.0) * (1 - eye)
    Pi = np.repeat(np.arange(n)[:, None], n, axis=1)
    rec.hint(Pi_h=Pi, D=D, msk=msk, k=0)
    for k in range(n):
        via = (msk[:, k:k + 1] > 0) & (msk[k:k + 1, :] > 0)
        cand = D[:, k:k + 1] + D[k:k + 1, :]
        upd = via & ((msk == 0) | (cand < D))
        D = np.where(upd, cand, D)
        Pi = np.where(upd, Pi[k:k + 1, :], Pi)
        msk = np.where(via, 1.0, msk)
        if np.any(np.diag(D) < 0):
            raise InstanceError("floyd_warshall: negative-weight cycle")
        rec.hint(Pi_h=Pi, D=D, msk=msk, k=k)
    rec.output(Pi=Pi)
    return rec.finish()
