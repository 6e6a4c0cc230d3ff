"""Reference executors for the in-scope classical algorithms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

from ..specs import ProblemSpec, Trajectory
from . import dp, geometry, graphs, greedy, search, sorting, strings
from ._probes import InstanceError, StepBudgetError, array_pointer, default_pos, step_budget


@dataclass(frozen=True)
class Algorithm:
    """A spec, its executor and an instance sampler ``sample(rng, n, **knobs)``."""

    spec: ProblemSpec
    execute: Callable[[Mapping], Trajectory]
    sample: Callable[..., dict]
    uses_graph: bool = False
    uses_needle: bool = False

    @property
    def algorithm_id(self) -> str:
        return self.spec.algorithm_id


_ALL = (
    Algorithm(sorting.INSERTION_SORT, sorting.insertion_sort, sorting.sample),
    Algorithm(sorting.BUBBLE_SORT, sorting.bubble_sort, sorting.sample),
    Algorithm(search.BINARY_SEARCH, search.binary_search, search.sample_binary_search),
    Algorithm(search.MINIMUM, search.minimum, search.sample_minimum),
    Algorithm(graphs.BFS, graphs.bfs, graphs.sample_bfs, uses_graph=True),
    Algorithm(graphs.BELLMAN_FORD, graphs.bellman_ford, graphs.sample_bellman_ford, uses_graph=True),
    Algorithm(graphs.FLOYD_WARSHALL, graphs.floyd_warshall, graphs.sample_floyd_warshall, uses_graph=True),
    Algorithm(greedy.ACTIVITY_SELECTOR, greedy.activity_selector, greedy.sample),
    Algorithm(dp.LCS_LENGTH, dp.lcs_length, dp.sample),
    Algorithm(strings.NAIVE_STRING_MATCHER, strings.naive_string_matcher, strings.sample, uses_needle=True),
    Algorithm(geometry.GRAHAM_SCAN, geometry.graham_scan, geometry.sample),
)

ALGORITHMS: dict[str, Algorithm] = {a.algorithm_id: a for a in _ALL}


def get_algorithm(algorithm_id: str) -> Algorithm:
    try:
        return ALGORITHMS[algorithm_id]
    except KeyError:
        raise KeyError(f"unknown algorithm {algorithm_id!r}; known: {sorted(ALGORITHMS)}") from None


def run_algorithm(algorithm_id: str, instance: Mapping) -> Trajectory:
    """Execute the reference algorithm on ``instance``; ``pos`` defaults to i/n."""
    return get_algorithm(algorithm_id).execute(dict(instance))


__all__ = [
    "ALGORITHMS",
    "Algorithm",
    "InstanceError",
    "StepBudgetError",
    "array_pointer",
    "default_pos",
    "get_algorithm",
    "run_algorithm",
    "step_budget",
]
