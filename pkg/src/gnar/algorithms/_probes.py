"""Helpers for recording algorithm executions as typed trajectories."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..specs import FeatureSpec, FType, Location, ProblemSpec, Stage, Trajectory


class StepBudgetError(RuntimeError):
    """A trace ran past its step budget; always a generator bug."""


class InstanceError(ValueError):
    """The instance does not satisfy the algorithm's input contract."""


def step_budget(n: int) -> int:
    return 4 * n * n


def array_pointer(order: Sequence[int], n: int) -> np.ndarray:
    """Predecessor pointers of a node ordering; the first node points to itself."""
    ptr = np.arange(n)
    order = list(order)
    if order:
        ptr[order[0]] = order[0]
    for a, b in zip(order[:-1], order[1:]):
        ptr[b] = a
    return ptr


def default_pos(n: int) -> np.ndarray:
    return np.arange(n) / max(n, 1)


def _to_array(spec_feature, value, n: int) -> np.ndarray:
    f = spec_feature
    if f.ftype is FType.MASK_ONE:
        out = np.zeros((n, 1))
        out[int(value), 0] = 1.0
        return out
    v = np.asarray(value, dtype=np.float64)
    if f.ftype is FType.CATEGORICAL:
        labels = v.astype(np.int64)
        out = np.zeros(labels.shape + (f.num_categories,))
        np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
        return out.reshape(f.shape(n))
    return v.reshape(f.shape(n))


class Recorder:
    """Collects inputs, per-step hints and outputs, then builds a Trajectory.

    Values are given in natural form: index for ``mask_one``, integer labels for
    ``categorical``, plain location-shaped arrays otherwise.
    """

    def __init__(self, spec: ProblemSpec, n: int, inputs: Mapping):
        self.spec = spec
        self.n = n
        self.budget = step_budget(n)
        if "pos" not in inputs:
            inputs = dict(inputs, pos=default_pos(n))
        self._inputs = {f.name: _to_array(f, inputs[f.name], n) for f in spec.inputs}
        self._hints: list[dict] = []
        self._outputs: dict = {}

    @property
    def steps(self) -> int:
        return len(self._hints)

    def hint(self, **values) -> None:
        if len(self._hints) >= self.budget:
            raise StepBudgetError(f"{self.spec.algorithm_id}: exceeded {self.budget} steps at n={self.n}")
        names = {f.name for f in self.spec.hints}
        if set(values) != names:
            raise KeyError(f"hint step needs exactly {sorted(names)}, got {sorted(values)}")
        self._hints.append({f.name: _to_array(f, values[f.name], self.n) for f in self.spec.hints})

    def output(self, **values) -> None:
        for f in self.spec.outputs:
            if f.name in values:
                self._outputs[f.name] = _to_array(f, values[f.name], self.n)

    def finish(self) -> Trajectory:
        if not self._hints:
            raise RuntimeError(f"{self.spec.algorithm_id}: no hint steps recorded")
        hints = {f.name: np.stack([h[f.name] for h in self._hints]) for f in self.spec.hints}
        return Trajectory(self.n, len(self._hints), self._inputs, hints, self._outputs)


def node(name: str, stage: Stage, ftype: FType, **kw):
    return FeatureSpec(name, stage, Location.NODE, ftype, **kw)


def edge(name: str, stage: Stage, ftype: FType, **kw):
    return FeatureSpec(name, stage, Location.EDGE, ftype, **kw)


def graph(name: str, stage: Stage, ftype: FType, **kw):
    return FeatureSpec(name, stage, Location.GRAPH, ftype, **kw)


POS = node("pos", Stage.INPUT, FType.SCALAR)
