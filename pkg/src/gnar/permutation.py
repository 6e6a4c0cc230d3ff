"""Sinkhorn operator and the permutation form of sorted-order pointers.

A sorted order ``o_0, ..., o_{n-1}`` is stored as predecessor pointers with the
first node pointing to itself. Rewiring that self-loop to the last node turns
the pointer matrix into a permutation matrix; the first node is kept as a
separate one-hot vector.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, as_tensor, exp, logsumexp, mul, add, sub, div

# Finite stand-in for -inf on the masked diagonal; exp(-LARGE / tau) is exactly 0.
LARGE = 1e9


class SinkhornError(FloatingPointError):
    pass


class PermutationError(ValueError):
    pass


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)
    return -np.log(-np.log(u))


def sinkhorn(Y, l_max: int, temperature: float, *, gumbel: bool = False,
             rng: np.random.Generator | None = None, mask_diagonal: bool = True,
             log_space: bool = False) -> Tensor:
    """Project scores ``Y`` of shape (..., n, n) toward a doubly stochastic matrix.

    The iteration runs in the log domain (row then column log-normalisation),
    which is the same fixed-count recursion as normalising ``exp(Y / tau)``
    without overflow. ``log_space`` returns ``log S`` instead of ``S``.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if l_max < 0:
        raise ValueError(f"l_max must be >= 0, got {l_max}")
    Y = as_tensor(Y)
    n = Y.shape[-1]
    if n < 1 or Y.shape[-2] != n:
        raise ValueError(f"sinkhorn needs square (..., n, n) scores, got {Y.shape}")
    eye = np.eye(n, dtype=Y.dtype)
    off = 1.0 - eye
    if mask_diagonal and n > 1:
        Y = add(mul(Y, off), eye * -LARGE)
    if gumbel:
        if rng is None:
            raise ValueError("gumbel noise needs an rng")
        noise = gumbel_noise(rng, Y.shape).astype(Y.dtype) * off
        Y = add(Y, noise)
    logs = div(Y, temperature)
    for _ in range(l_max):
        logs = sub(logs, logsumexp(logs, axis=-1, keepdims=True))
        logs = sub(logs, logsumexp(logs, axis=-2, keepdims=True))
    if not np.all(np.isfinite(logs.data)):
        raise SinkhornError("sinkhorn: a row or column sum underflowed to zero")
    return logs if log_space else exp(logs)


def sorted_order(pointers) -> list[int]:
    """Recover the node order from predecessor pointers (head points to itself)."""
    ptr = np.asarray(pointers).astype(np.int64).reshape(-1)
    n = len(ptr)
    heads = np.flatnonzero(ptr == np.arange(n))
    if len(heads) != 1:
        raise PermutationError(f"expected exactly one self-pointing head, found {len(heads)}")
    succ = {}
    for i, p in enumerate(ptr):
        if i != p:
            if p in succ:
                raise PermutationError(f"node {p} has two successors")
            succ[int(p)] = i
    order = [int(heads[0])]
    while order[-1] in succ:
        order.append(succ[order[-1]])
    if len(order) != n:
        raise PermutationError("pointers do not form a single chain")
    return order


def pointers_to_permutation(pointers) -> tuple[np.ndarray, np.ndarray]:
    """Forward rewiring: pointers -> (permutation matrix, first-node one-hot)."""
    order = sorted_order(pointers)
    n = len(order)
    perm = np.asarray(pointers).astype(np.int64).reshape(-1).copy()
    perm[order[0]] = order[-1]
    P = np.zeros((n, n))
    P[np.arange(n), perm] = 1.0
    first = np.zeros(n)
    first[order[0]] = 1.0
    return P, first


def is_permutation(targets: np.ndarray) -> bool:
    t = np.asarray(targets).reshape(-1)
    return bool(np.array_equal(np.sort(t), np.arange(len(t))))


def permutation_rewire(pred_perm, first_node) -> np.ndarray:
    """Inverse rewiring: cut the cycle at ``first_node`` and return pointers.

    Raises ``PermutationError`` when the row-argmaxes of ``pred_perm`` are not
    a permutation.
    """
    targets = np.argmax(np.asarray(pred_perm), axis=-1)
    if not is_permutation(targets):
        raise PermutationError("row-wise argmax is not a permutation")
    first = int(np.argmax(np.asarray(first_node).reshape(-1)))
    ptr = targets.copy()
    ptr[first] = first
    return ptr


def decode_permutation(pred_perm: np.ndarray, first_scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched lenient inverse rewiring: (pointers (B, n), valid flags (B,))."""
    targets = np.argmax(pred_perm, axis=-1)
    first = np.argmax(first_scores, axis=-1)
    valid = np.array([is_permutation(t) for t in targets])
    ptr = targets.copy()
    ptr[np.arange(len(ptr)), first] = first
    return ptr, valid
