"""Instance sampling and the training-data augmentation pipeline.

Every draw is a pure function of ``(seed, counter)``: item ``k`` of a stream is
generated from ``numpy.random.default_rng([seed, k])`` so workers with disjoint
counters never share state.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .algorithms import ALGORITHMS, InstanceError, get_algorithm
from .algorithms.graphs import sample_er_graph
from .specs import Family, ProblemSpec, Trajectory, static_hint_to_input

DEFAULT_P_SET = tuple(k / 10 for k in range(1, 10))
STRING_N = 20
DEFAULT_NEEDLE_MAX = 8
EVAL_P = 0.5
PROBE_COUNT = 100


def eval_needle(n: int) -> int:
    """Needle length used on evaluation data (the benchmark's n // 5 rule)."""
    return max(1, n // 5)


def is_string_task(algorithm_id: str) -> bool:
    return get_algorithm(algorithm_id).uses_needle


def is_graph_task(algorithm_id: str) -> bool:
    return get_algorithm(algorithm_id).uses_graph


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs of the augmentation pipeline for one algorithm.

    ``size_range`` defaults to ``(4, 16)``, or ``(20, 20)`` for string tasks.
    """

    algorithm_id: str
    size_range: Optional[tuple[int, int]] = None
    p_set: tuple[float, ...] = DEFAULT_P_SET
    needle_max: int = DEFAULT_NEEDLE_MAX
    seed: int = 0
    random_pos: bool = True

    def __post_init__(self):
        get_algorithm(self.algorithm_id)
        if self.size_range is None:
            n = STRING_N if is_string_task(self.algorithm_id) else None
            object.__setattr__(self, "size_range", (n, n) if n else (4, 16))
        lo, hi = (int(v) for v in self.size_range)
        object.__setattr__(self, "size_range", (lo, hi))
        if not 4 <= lo <= hi:
            raise ValueError(f"size_range must satisfy 4 <= n_min <= n_max, got {self.size_range}")
        p_set = tuple(float(p) for p in self.p_set)
        object.__setattr__(self, "p_set", p_set)
        if not p_set or any(not 0.0 < p <= 1.0 for p in p_set):
            raise ValueError(f"p_set values must lie in (0, 1], got {p_set}")
        if self.needle_max < 1:
            raise ValueError(f"needle_max must be >= 1, got {self.needle_max}")


def sample_pos(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` sorted uniform draws on [0, 1], strictly increasing (redrawn on ties)."""
    while True:
        pos = np.sort(rng.uniform(0.0, 1.0, size=n))
        if n < 2 or np.all(np.diff(pos) > 0):
            return pos


def generate(
    algorithm_id: str,
    n: int,
    rng: np.random.Generator,
    *,
    p: Optional[float] = None,
    needle_len: Optional[int] = None,
    random_pos: bool = True,
) -> Trajectory:
    """Sample one instance of size ``n`` with fixed knobs and record its trace.

    Graph tasks need ``p``; string tasks need ``needle_len``. Sizes below the
    augmentation minimum (down to ``n = 1``) are allowed here.
    """
    alg = get_algorithm(algorithm_id)
    if n < 1:
        raise InstanceError(f"n must be >= 1, got {n}")
    knobs = {}
    if alg.uses_graph:
        if p is None:
            raise ValueError(f"{algorithm_id} needs an edge probability p")
        knobs["p"] = p
    if alg.uses_needle:
        if needle_len is None:
            raise ValueError(f"{algorithm_id} needs a needle length")
        knobs["needle_len"] = needle_len
    inst = alg.sample(rng, n, **knobs)
    inst["pos"] = sample_pos(n, rng) if random_pos else np.arange(n) / n
    return alg.execute(inst)


def sample_problem(cfg: SamplerConfig, rng: np.random.Generator, n: Optional[int] = None) -> Trajectory:
    """One augmented training trajectory; ``n`` overrides the size draw."""
    lo, hi = cfg.size_range
    if n is None:
        n = int(rng.integers(lo, hi + 1))
    p = needle = None
    if is_graph_task(cfg.algorithm_id):
        p = float(cfg.p_set[int(rng.integers(len(cfg.p_set)))])
    if is_string_task(cfg.algorithm_id):
        needle = int(rng.integers(1, min(cfg.needle_max, n // 2) + 1))
    return generate(cfg.algorithm_id, n, rng, p=p, needle_len=needle, random_pos=cfg.random_pos)


def sample_eval(algorithm_id: str, n: int, rng: np.random.Generator, random_pos: bool = True) -> Trajectory:
    """Evaluation draw with the benchmark's fixed knobs (p = 0.5, needle n // 5)."""
    return generate(algorithm_id, n, rng, p=EVAL_P, needle_len=eval_needle(n), random_pos=random_pos)


def sample_fixed(algorithm_id: str, n: int, rng: np.random.Generator, random_pos: bool = True) -> Trajectory:
    """Training draw without augmentation: fixed p = 0.5 and needle length 4."""
    needle = min(4, n // 2)
    return generate(algorithm_id, n, rng, p=EVAL_P, needle_len=needle, random_pos=random_pos)


@dataclass
class Sampler:
    """Infinite stream of trajectories; item ``k`` depends only on ``(seed, k)``."""

    cfg: SamplerConfig
    counter: int = field(default=0)

    def at(self, k: int) -> Trajectory:
        return sample_problem(self.cfg, np.random.default_rng([self.cfg.seed, k]))

    def __iter__(self) -> Iterator[Trajectory]:
        return self

    def __next__(self) -> Trajectory:
        traj = self.at(self.counter)
        self.counter += 1
        return traj


def probe_traces(algorithm_id: str, count: int = PROBE_COUNT, seed: int = 0) -> list[Trajectory]:
    """A fixed probe set of augmented traces used for static-hint detection."""
    cfg = SamplerConfig(algorithm_id, seed=seed)
    return [Sampler(cfg).at(k) for k in range(count)]


@functools.lru_cache(maxsize=None)
def static_spec(algorithm_id: str) -> ProblemSpec:
    """The algorithm's spec with empirically static pointer hints staged as inputs."""
    spec = get_algorithm(algorithm_id).spec
    return static_hint_to_input(spec, probe_traces(algorithm_id))


def families() -> dict[str, Family]:
    return {k: a.spec.family for k, a in ALGORITHMS.items()}


__all__ = [
    "DEFAULT_P_SET",
    "EVAL_P",
    "STRING_N",
    "Sampler",
    "SamplerConfig",
    "eval_needle",
    "families",
    "generate",
    "is_graph_task",
    "is_string_task",
    "probe_traces",
    "sample_er_graph",
    "sample_eval",
    "sample_fixed",
    "sample_pos",
    "sample_problem",
    "static_spec",
]
