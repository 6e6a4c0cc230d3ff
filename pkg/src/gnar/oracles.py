"""Brute-force oracles that check recorded traces against independent solvers.

Each checker returns a list of human-readable problems (empty when the trace
agrees with the oracle). The solvers deliberately avoid the recorded
algorithms: Dijkstra for single-source paths, a cubic relaxation loop for all
pairs, exhaustive scans for strings, hulls and activity subsets.
"""

from __future__ import annotations

import bisect
import heapq
import itertools

import numpy as np

from .permutation import PermutationError, sorted_order
from .specs import Trajectory

TOL = 1e-9


def _final_hint(traj: Trajectory, name: str) -> np.ndarray:
    return np.asarray(traj.hints[name][-1])[..., 0]


def _val(a) -> np.ndarray:
    """Stored arrays carry a trailing channel axis; drop it."""
    return np.asarray(a)[..., 0]


def _index(a) -> int:
    """Node index of a one-hot mask_one array."""
    return int(np.argmax(_val(a)))


def _cat(a) -> np.ndarray:
    return np.argmax(np.asarray(a), axis=-1)


def check_sort(traj: Trajectory) -> list[str]:
    key = _val(traj.inputs["key"])
    try:
        order = sorted_order(_val(traj.outputs["pred"]))
    except PermutationError as exc:
        return [f"pred is not a chain: {exc}"]
    want = list(np.argsort(key, kind="stable"))
    return [] if order == want else [f"order {order} != sorted {want}"]


def check_minimum(traj: Trajectory) -> list[str]:
    key = list(_val(traj.inputs["key"]))
    best = 0
    for i, v in enumerate(key):
        if v < key[best]:
            best = i
    got = _index(traj.outputs["min"])
    return [] if got == best else [f"min {got} != {best}"]


def check_binary_search(traj: Trajectory) -> list[str]:
    key = list(_val(traj.inputs["key"]))
    target = float(np.asarray(traj.inputs["target"]).reshape(-1)[0])
    want = min(bisect.bisect_left(key, target), len(key) - 1)
    got = _index(traj.outputs["return"])
    return [] if got == want else [f"return {got} != {want}"]


def _bfs_layers(adj: np.ndarray, s: int) -> np.ndarray:
    n = len(adj)
    dist = np.full(n, -1)
    dist[s] = 0
    layer, d = [s], 0
    while layer:
        nxt = []
        for u in layer:
            for v in range(n):
                if adj[u, v] and dist[v] < 0:
                    dist[v] = d + 1
                    nxt.append(v)
        layer, d = nxt, d + 1
    return dist


def check_bfs(traj: Trajectory) -> list[str]:
    adj = _val(traj.inputs["A"]) > 0
    s = _index(traj.inputs["s"])
    pi = _val(traj.outputs["pi"]).astype(int)
    dist = _bfs_layers(adj, s)
    bad = []
    for v in range(len(adj)):
        if v == s or dist[v] < 0:
            if pi[v] != v:
                bad.append(f"pi[{v}]={pi[v]} but node is source or unreachable")
            continue
        cands = [u for u in range(len(adj)) if adj[u, v] and dist[u] == dist[v] - 1]
        if pi[v] != cands[0]:
            bad.append(f"pi[{v}]={pi[v]}, expected first parent in previous layer {cands[0]}")
    return bad


def dijkstra(w: np.ndarray, adj: np.ndarray, s: int) -> np.ndarray:
    n = len(w)
    dist = np.full(n, np.inf)
    dist[s] = 0.0
    heap = [(0.0, s)]
    done = np.zeros(n, bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in range(n):
            if adj[u, v] and d + w[u, v] < dist[v]:
                dist[v] = d + w[u, v]
                heapq.heappush(heap, (dist[v], v))
    return dist


def check_bellman_ford(traj: Trajectory) -> list[str]:
    w = _val(traj.inputs["A"])
    adj = _val(traj.inputs["adj"]) > 0
    s = _index(traj.inputs["s"])
    pi = _val(traj.outputs["pi"]).astype(int)
    d = _final_hint(traj, "d")
    ref = dijkstra(w, adj, s)
    bad = []
    for v in range(len(w)):
        if not np.isfinite(ref[v]):
            if pi[v] != v:
                bad.append(f"unreachable {v} has pi {pi[v]}")
            continue
        if abs(d[v] - ref[v]) > TOL:
            bad.append(f"d[{v}]={d[v]} != dijkstra {ref[v]}")
        if v != s:
            u = pi[v]
            if not adj[u, v] or abs(ref[u] + w[u, v] - ref[v]) > TOL:
                bad.append(f"pi[{v}]={u} is not on a shortest path")
    return bad


def all_pairs(w: np.ndarray, adj: np.ndarray) -> np.ndarray:
    """Repeated relaxation over every (i, j, k) until nothing changes."""
    n = len(w)
    D = np.where(adj, w, np.inf)
    np.fill_diagonal(D, 0.0)
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    c = D[i, k] + D[k, j]
                    if c < D[i, j] - 1e-15:
                        D[i, j] = c
                        changed = True
    return D


def check_floyd_warshall(traj: Trajectory) -> list[str]:
    w = _val(traj.inputs["A"])
    adj = _val(traj.inputs["adj"]) > 0
    Pi = _val(traj.outputs["Pi"]).astype(int)
    D = _final_hint(traj, "D")
    msk = _final_hint(traj, "msk") > 0
    ref = all_pairs(w, adj)
    bad = []
    n = len(w)
    for i in range(n):
        for j in range(n):
            if not np.isfinite(ref[i, j]):
                if msk[i, j]:
                    bad.append(f"({i},{j}) marked reachable")
                continue
            if not msk[i, j] or abs(D[i, j] - ref[i, j]) > TOL:
                bad.append(f"D[{i},{j}]={D[i, j]} != {ref[i, j]}")
            if i == j:
                if Pi[i, j] != i:
                    bad.append(f"Pi[{i},{i}]={Pi[i, j]}")
                continue
            u = Pi[i, j]
            if not adj[u, j] or abs(ref[i, u] + w[u, j] - ref[i, j]) > TOL:
                bad.append(f"Pi[{i},{j}]={u} is not a last hop of a shortest path")
    return bad


def check_string_matcher(traj: Trajectory) -> list[str]:
    string = _val(traj.inputs["string"])
    key = list(_cat(traj.inputs["key"]))
    hay = int((string == 0).sum())
    needle = key[hay:]
    m = len(needle)
    want = hay
    for s in range(hay - m + 1):
        if key[s:s + m] == needle:
            want = s
            break
    got = _index(traj.outputs["match"])
    return [] if got == want else [f"match {got} != {want}"]


def hull_vertices(pts: np.ndarray) -> set:
    """Endpoints of every pair with all other points strictly on its left."""
    n = len(pts)
    out = set()
    for i, j in itertools.permutations(range(n), 2):
        d = pts[j] - pts[i]
        r = pts - pts[i]
        cross = d[0] * r[:, 1] - d[1] * r[:, 0]
        cross[[i, j]] = 1.0
        if np.all(cross > 0):
            out.update((i, j))
    return out


def check_graham_scan(traj: Trajectory) -> list[str]:
    pts = np.stack([_val(traj.inputs["xs"]), _val(traj.inputs["ys"])], axis=1)
    want = hull_vertices(pts)
    got = set(np.flatnonzero(_val(traj.outputs["in_hull"]) > 0).tolist())
    return [] if got == want else [f"hull {sorted(got)} != {sorted(want)}"]


def lcs_table(x, y) -> np.ndarray:
    c = np.zeros((len(x) + 1, len(y) + 1), int)
    for i in range(1, len(x) + 1):
        for j in range(1, len(y) + 1):
            c[i, j] = c[i - 1, j - 1] + 1 if x[i - 1] == y[j - 1] else max(c[i - 1, j], c[i, j - 1])
    return c


def check_lcs(traj: Trajectory) -> list[str]:
    from .algorithms.dp import DIAG, LEFT, NONE, UP

    string = _val(traj.inputs["string"])
    key = _cat(traj.inputs["key"])
    nx = int((string == 0).sum())
    x, y = key[:nx], key[nx:]
    b = _cat(traj.outputs["b"])
    c = lcs_table(x, y)
    bad = []
    if np.any(b[nx:, :] != NONE) or np.any(b[:nx, :nx] != NONE):
        bad.append("arrows outside the x-by-y block")
    # Follow arrows from the corner; the diagonal count must equal the LCS length
    # and the collected symbols must be a common subsequence.
    i, j, seq = nx - 1, len(y) - 1, []
    while i >= 0 and j >= 0:
        a = b[i, nx + j]
        if a == DIAG:
            if x[i] != y[j]:
                bad.append(f"diagonal arrow at ({i},{j}) on mismatched symbols")
                break
            seq.append(x[i])
            i, j = i - 1, j - 1
        elif a == UP:
            i -= 1
        elif a == LEFT:
            j -= 1
        else:
            bad.append(f"empty arrow at ({i},{j})")
            break
    if len(seq) != c[-1, -1]:
        bad.append(f"traceback length {len(seq)} != LCS length {c[-1, -1]}")
    return bad


def check_activity_selector(traj: Trajectory) -> list[str]:
    s = _val(traj.inputs["s"])
    f = _val(traj.inputs["f"])
    n = len(s)
    sel = _val(traj.outputs["selected"]) > 0
    # Two intervals conflict when neither finishes before the other starts.
    conflict = ~((f[:, None] <= s[None, :]) | (f[None, :] <= s[:, None]))
    np.fill_diagonal(conflict, False)
    if np.any(conflict[np.ix_(sel, sel)]):
        return ["selected activities overlap"]
    masks = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
    masks = masks.astype(bool)
    clash = np.einsum("mi,ij,mj->m", masks, conflict.astype(int), masks) > 0
    best = int(masks[~clash].sum(axis=1).max())
    got = int(sel.sum())
    return [] if got == best else [f"selected {got} activities, maximum is {best}"]


CHECKERS = {
    "insertion_sort": check_sort,
    "bubble_sort": check_sort,
    "binary_search": check_binary_search,
    "minimum": check_minimum,
    "bfs": check_bfs,
    "bellman_ford": check_bellman_ford,
    "floyd_warshall": check_floyd_warshall,
    "activity_selector": check_activity_selector,
    "lcs_length": check_lcs,
    "naive_string_matcher": check_string_matcher,
    "graham_scan": check_graham_scan,
}

# Sizes for the oracle suite; subset enumeration bounds the activity sizes.
ORACLE_SIZES = {"activity_selector": (4, 10), "floyd_warshall": (4, 10)}


def check_trajectory(algorithm_id: str, traj: Trajectory) -> list[str]:
    return CHECKERS[algorithm_id](traj)
