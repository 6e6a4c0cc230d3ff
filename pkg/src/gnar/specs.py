"""Typed feature schemas and trajectory containers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np


class Stage(str, enum.Enum):
    INPUT = "input"
    HINT = "hint"
    OUTPUT = "output"


class Location(str, enum.Enum):
    NODE = "node"
    EDGE = "edge"
    GRAPH = "graph"


class FType(str, enum.Enum):
    SCALAR = "scalar"
    CATEGORICAL = "categorical"
    MASK = "mask"
    MASK_ONE = "mask_one"
    POINTER = "pointer"


class Family(str, enum.Enum):
    SORTING = "sorting"
    SEARCH = "search"
    GRAPH = "graph"
    GREEDY = "greedy"
    DP = "dp"
    STRINGS = "strings"
    GEOMETRY = "geometry"


@dataclass(frozen=True)
class FeatureSpec:
    """One typed feature.

    ``permutation`` marks a node pointer output that always encodes a
    permutation (the sorted-order predecessor pointer of sorting tasks); such
    features may be decoded with the Sinkhorn operator.
    """

    name: str
    stage: Stage
    location: Location
    ftype: FType
    num_categories: int | None = None
    permutation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "location", Location(self.location))
        object.__setattr__(self, "ftype", FType(self.ftype))
        if self.ftype is FType.CATEGORICAL:
            if not self.num_categories or self.num_categories < 1:
                raise ValueError(f"{self.name}: categorical features need num_categories >= 1")
        elif self.num_categories is not None:
            raise ValueError(f"{self.name}: num_categories only applies to categorical features")
        if self.ftype is FType.POINTER and self.location is Location.GRAPH:
            raise ValueError(f"{self.name}: pointers must be node- or edge-located")
        if self.ftype is FType.MASK_ONE and self.location is not Location.NODE:
            raise ValueError(f"{self.name}: mask_one features are node-located")
        if self.permutation and not (self.ftype is FType.POINTER and self.location is Location.NODE):
            raise ValueError(f"{self.name}: only node pointers can be permutations")

    @property
    def dim(self) -> int:
        """Trailing feature width ``f`` in the stored array."""
        return self.num_categories if self.ftype is FType.CATEGORICAL else 1

    def shape(self, n: int) -> tuple[int, ...]:
        if self.location is Location.NODE:
            return (n, self.dim)
        if self.location is Location.EDGE:
            return (n, n, self.dim)
        return (self.dim,)


@dataclass(frozen=True)
class ProblemSpec:
    algorithm_id: str
    features: tuple[FeatureSpec, ...]
    family: Family

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "family", Family(self.family))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.algorithm_id}: duplicate feature names")
        pos = [f for f in self.features if f.name == "pos"]
        if len(pos) != 1 or (pos[0].stage, pos[0].location, pos[0].ftype) != (
                Stage.INPUT, Location.NODE, FType.SCALAR):
            raise ValueError(f"{self.algorithm_id}: needs exactly one node scalar input 'pos'")
        if not self.outputs:
            raise ValueError(f"{self.algorithm_id}: needs at least one output")

    def stage(self, stage: Stage) -> tuple[FeatureSpec, ...]:
        return tuple(f for f in self.features if f.stage is stage)

    @property
    def inputs(self) -> tuple[FeatureSpec, ...]:
        return self.stage(Stage.INPUT)

    @property
    def hints(self) -> tuple[FeatureSpec, ...]:
        return self.stage(Stage.HINT)

    @property
    def outputs(self) -> tuple[FeatureSpec, ...]:
        return self.stage(Stage.OUTPUT)

    def __getitem__(self, name: str) -> FeatureSpec:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)


def _frozen(arrays: Mapping[str, np.ndarray]) -> Mapping[str, np.ndarray]:
    out = {}
    for k, v in arrays.items():
        a = np.array(v, dtype=np.float64)
        a.setflags(write=False)
        out[k] = a
    return MappingProxyType(out)


@dataclass(frozen=True)
class Trajectory:
    """One sample. Hint arrays are time-major: ``(T, *feature_shape)``."""

    n: int
    T: int
    inputs: Mapping[str, np.ndarray]
    hints: Mapping[str, np.ndarray]
    outputs: Mapping[str, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "inputs", _frozen(self.inputs))
        object.__setattr__(self, "hints", _frozen(self.hints))
        object.__setattr__(self, "outputs", _frozen(self.outputs))

    def group(self, stage: Stage) -> Mapping[str, np.ndarray]:
        return {Stage.INPUT: self.inputs, Stage.HINT: self.hints, Stage.OUTPUT: self.outputs}[Stage(stage)]


@dataclass(frozen=True)
class Violation:
    feature: str
    step: int | None
    axis: str
    message: str

    def __str__(self) -> str:
        at = "" if self.step is None else f" @ step {self.step}"
        return f"{self.feature}{at} [{self.axis}]: {self.message}"


def _check_values(f: FeatureSpec, a: np.ndarray, n: int, step, report: list) -> None:
    if not np.all(np.isfinite(a)):
        report.append(Violation(f.name, step, "value", "non-finite entries"))
        return
    if f.ftype is FType.MASK:
        if not np.all((a == 0) | (a == 1)):
            report.append(Violation(f.name, step, "value", "mask entries outside {0, 1}"))
    elif f.ftype is FType.MASK_ONE:
        if not np.all((a == 0) | (a == 1)) or a.sum() != 1:
            report.append(Violation(f.name, step, "node", f"mask_one sums to {a.sum():g}, expected 1"))
    elif f.ftype is FType.CATEGORICAL:
        if not np.all((a == 0) | (a == 1)) or not np.all(a.sum(axis=-1) == 1):
            report.append(Violation(f.name, step, "category", "rows are not one-hot"))
    elif f.ftype is FType.POINTER:
        if not np.all((a >= 0) & (a < n) & (a == np.floor(a))):
            report.append(Violation(f.name, step, "node", f"pointer values outside [0, {n})"))


def validate_trajectory(spec: ProblemSpec, traj: Trajectory) -> list[Violation]:
    """List every schema violation; an empty list means the trajectory is valid."""
    report: list[Violation] = []
    n = traj.n
    if traj.T < 1:
        report.append(Violation("<trajectory>", None, "time", f"T must be >= 1, got {traj.T}"))
    for stage in Stage:
        declared = {f.name for f in spec.stage(stage)}
        present = set(traj.group(stage))
        for extra in sorted(present - declared):
            report.append(Violation(extra, None, "schema", f"undeclared {stage.value} feature"))
        for missing in sorted(declared - present):
            report.append(Violation(missing, None, "schema", f"missing {stage.value} feature"))
    for f in spec.features:
        arr = traj.group(f.stage).get(f.name)
        if arr is None:
            continue
        want = f.shape(n)
        if f.stage is Stage.HINT:
            if arr.shape != (traj.T,) + want:
                report.append(Violation(f.name, None, "shape", f"got {arr.shape}, expected {(traj.T,) + want}"))
                continue
            for t in range(traj.T):
                _check_values(f, arr[t], n, t, report)
        else:
            if arr.shape != want:
                report.append(Violation(f.name, None, "shape", f"got {arr.shape}, expected {want}"))
                continue
            _check_values(f, arr, n, None, report)
    return report


class StaticHintError(ValueError):
    pass


def find_static_hints(spec: ProblemSpec, traces: Iterable[Trajectory]) -> tuple[str, ...]:
    """Names of pointer hints that never change within any of ``traces``."""
    candidates = {f.name for f in spec.hints if f.ftype is FType.POINTER}
    seen_any = False
    for tr in traces:
        seen_any = True
        for name in list(candidates):
            h = tr.hints[name]
            if not np.all(h == h[:1]):
                candidates.discard(name)
        if not candidates:
            break
    if not seen_any:
        return ()
    return tuple(f.name for f in spec.hints if f.name in candidates)


def static_hint_to_input(spec: ProblemSpec, traces: Sequence[Trajectory]) -> ProblemSpec:
    """Re-stage every static pointer hint as an input feature."""
    static = set(find_static_hints(spec, traces))
    if not static:
        return spec
    feats = tuple(replace(f, stage=Stage.INPUT) if f.name in static else f for f in spec.features)
    return ProblemSpec(spec.algorithm_id, feats, spec.family)


def retag_trajectory(spec: ProblemSpec, traj: Trajectory) -> Trajectory:
    """Move hint arrays that ``spec`` stages as inputs into the inputs map.

    Raises ``StaticHintError`` if a re-staged hint actually varies in ``traj``.
    """
    moved = [f.name for f in spec.inputs if f.name in traj.hints]
    if not moved:
        return traj
    inputs = dict(traj.inputs)
    hints = dict(traj.hints)
    for name in moved:
        h = hints.pop(name)
        if not np.all(h == h[:1]):
            raise StaticHintError(f"{spec.algorithm_id}: hint {name!r} was staged as input but varies over time")
        inputs[name] = h[0]
    return Trajectory(traj.n, traj.T, inputs, hints, dict(traj.outputs))
