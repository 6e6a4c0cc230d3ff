"""Multi-task training with one shared processor, chunked unrolls and ablations.

Chunking: each (task, size) stream owns ``B`` lanes. A lane concatenates its
trajectories back to back and is cut into blocks of ``chunk_len`` steps, so no
step is ever padded. The recurrent state (processed embeddings, triplet edge
latents, fed-back hints) is detached at block boundaries and carried into the
next block of the same stream; it is zeroed where a new trajectory starts.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy import stats

from .autodiff import NonFiniteError, save_checkpoint, set_default_dtype
from .codec import to_model_space
from .model import Carry, Model, SealedHints, Steps, make_batch, stack_outputs
from .processor import ProcessorParams
from .sampling import SamplerConfig, sample_problem
from .specs import Trajectory
from .trainer import (
    _EVAL_IN,
    _EVAL_OOD,
    _INIT,
    _NOISE,
    _TRAIN,
    BatchSource,
    Metrics,
    RunConfig,
    Selector,
    TrainingAborted,
    build_model,
    eval_points,
    eval_trajectories,
    make_optimizer,
    prepare,
    train_step,
)

_CHUNK_STREAM = 7


# ---------------------------------------------------------------------------
# chunking


@dataclass
class Chunk:
    """One lane's block: ``segments`` are (trajectory, first step, stop step)."""

    segments: list
    reset: np.ndarray
    end: np.ndarray

    @property
    def length(self) -> int:
        return len(self.reset)


def make_chunks(trajectories: Iterable[Trajectory], chunk_len: int) -> Iterator[Chunk]:
    """Concatenate trajectories along time and cut into ``chunk_len`` blocks.

    A finite input ends with a shorter final block rather than padding.
    """
    if chunk_len < 1:
        raise ValueError(f"chunk_len must be >= 1, got {chunk_len}")
    segments, reset, end = [], [], []
    for traj in trajectories:
        if traj.T < 1:
            raise ValueError("trajectories need T >= 1")
        t = 0
        while t < traj.T:
            take = min(chunk_len - len(reset), traj.T - t)
            segments.append((traj, t, t + take))
            reset.extend([t == 0] + [False] * (take - 1))
            end.extend([False] * (take - 1) + [t + take == traj.T])
            t += take
            if len(reset) == chunk_len:
                yield Chunk(segments, np.array(reset), np.array(end))
                segments, reset, end = [], [], []
    if reset:
        yield Chunk(segments, np.array(reset), np.array(end))


class _ModelSpaceCache:
    """Model-space arrays per trajectory, computed once."""

    def __init__(self, model: Model):
        self.model = model
        self._cache: dict[int, tuple] = {}

    def get(self, traj: Trajectory):
        key = id(traj)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is traj:
            return hit[1:]
        spec = self.model.codec.spec
        n = traj.n
        inputs = {f.name: to_model_space(f, traj.inputs[f.name], n) for f in spec.inputs}
        hints = {f.name: to_model_space(f, traj.hints[f.name], n) for f in spec.hints}
        targets, raw = stack_outputs(self.model.codec, [traj])
        targets = {k: v[0] for k, v in targets.items()}
        raw = {k: v[0] for k, v in raw.items()}
        self._cache[key] = (traj, inputs, hints, targets, raw)
        return inputs, hints, targets, raw

    def forget(self, live: set) -> None:
        for k in [k for k in self._cache if k not in live]:
            del self._cache[k]


def chunks_to_steps(model: Model, lanes: Sequence[Chunk], cache: Optional[_ModelSpaceCache] = None) -> Steps:
    """Stack equal-length lane chunks into one Steps block."""
    L = lanes[0].length
    if any(c.length != L for c in lanes):
        raise ValueError("lane chunks must have equal length")
    cache = cache or _ModelSpaceCache(model)
    first = lanes[0].segments[0][0]
    n = first.n
    for c in lanes:
        if any(traj.n != n for traj, _, _ in c.segments):
            raise ValueError("a chunk block must hold one size")

    def gather(kind: int, name: str, timed: bool):
        cols = []
        for c in lanes:
            parts = []
            for traj, a, b in c.segments:
                arr = cache.get(traj)[kind][name]
                parts.append(arr[a:b] if timed else np.broadcast_to(arr, (b - a,) + arr.shape))
            cols.append(np.concatenate(parts) if len(parts) > 1 else parts[0])
        return np.stack(cols, axis=1)

    spec = model.codec.spec
    inputs = {f.name: gather(0, f.name, False) for f in spec.inputs}
    hints = {f.name: gather(1, f.name, True) for f in spec.hints}
    heads = [h.name for h in model.codec.output_heads()]
    outputs = {k: gather(2, k, False) for k in heads}
    raw = {f.name: gather(3, f.name, False) for f in spec.outputs}
    reset = np.stack([c.reset for c in lanes], axis=1)
    end = np.stack([c.end for c in lanes], axis=1)
    valid = np.ones((L, len(lanes)), bool)
    hint_w = valid / valid.sum()
    out_w = end / max(int(end.sum()), 1)
    return Steps(n, inputs, SealedHints(hints), outputs, raw, reset, valid, end, hint_w, out_w)


@dataclass
class _Stream:
    lanes: list
    carry: Optional[Carry] = None


class ChunkState:
    """Per-(task, size) lane iterators plus the carried recurrent state."""

    def __init__(self, cfg: RunConfig, chunk_len: int):
        self.cfg = cfg
        self.chunk_len = chunk_len
        self.streams: dict[tuple, _Stream] = {}
        self.caches: dict[str, _ModelSpaceCache] = {}

    def _lane_trajectories(self, task: str, task_idx: int, n: int, lane: int) -> Iterator[Trajectory]:
        sampler = SamplerConfig(task, seed=self.cfg.seed, random_pos=self.cfg.random_pos)
        k = 0
        while True:
            rng = np.random.default_rng([self.cfg.seed, _CHUNK_STREAM, task_idx, n, lane, k])
            yield sample_problem(sampler, rng, n=n)
            k += 1

    def next_block(self, model: Model, task: str, task_idx: int, n: int) -> tuple[Steps, Optional[Carry], tuple]:
        key = (task, n)
        stream = self.streams.get(key)
        if stream is None:
            lanes = []
            for lane in range(self.cfg.batch_size):
                trajs = (prepare(model, tr) for tr in self._lane_trajectories(task, task_idx, n, lane))
                lanes.append(make_chunks(trajs, self.chunk_len))
            stream = self.streams[key] = _Stream(lanes)
        cache = self.caches.setdefault(task, _ModelSpaceCache(model))
        chunks = [next(it) for it in stream.lanes]
        steps = chunks_to_steps(model, chunks, cache)
        if len(cache._cache) > 64 * self.cfg.batch_size:
            live = {id(seg[0]) for c in chunks for seg in c.segments}
            cache.forget(live)
        return steps, stream.carry, key

    def store(self, key: tuple, carry: Carry) -> None:
        self.streams[key].carry = carry


# ---------------------------------------------------------------------------
# multi-task model and loop


@dataclass
class MultiTaskConfig:
    tasks: tuple = ("bfs", "minimum", "insertion_sort")
    cycles: int = 10_000
    chunked: bool = True
    chunk_len: int = 16
    shuffle_tasks: bool = False
    gated: bool = False
    base: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        if len(self.tasks) < 2:
            raise ValueError("multi-task training needs at least two tasks")
        if len(set(self.tasks)) != len(self.tasks):
            raise ValueError("duplicate task in task set")
        if self.cycles < 0:
            raise ValueError("cycles must be >= 0")
        if self.chunk_len < 1:
            raise ValueError("chunk_len must be >= 1")

    def task_cfg(self, task: str) -> RunConfig:
        return self.base.replace(algorithm=task, gated=self.gated)

    def replace(self, **kw) -> "MultiTaskConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class MultiTaskModel:
    proc: ProcessorParams
    models: dict  # task -> Model sharing ``proc``

    @property
    def codecs(self) -> dict:
        return {k: m.codec for k, m in self.models.items()}


@dataclass
class MultiTaskResult:
    model: MultiTaskModel
    metrics: list
    best_step: dict
    nonfinite: dict
    optimizer_steps: int
    step_log: list = field(default_factory=list)

    def final_ood(self) -> dict:
        out = {}
        for m in self.metrics:
            if m.split == "ood":
                out[m.algorithm] = m.micro_f1
        return out

    def mean_ood(self) -> float:
        vals = list(self.final_ood().values())
        return float(np.mean(vals)) if vals else 0.0


def build_multitask(cfg: MultiTaskConfig) -> MultiTaskModel:
    base = cfg.task_cfg(cfg.tasks[0])
    set_default_dtype(base.dtype)
    rng = np.random.default_rng([base.seed, _INIT])
    proc = ProcessorParams(base.hidden, rng)
    models = {t: build_model(cfg.task_cfg(t), proc=proc, rng=rng) for t in cfg.tasks}
    return MultiTaskModel(proc, models)


def train_multi_task(cfg: MultiTaskConfig, *, out_dir: Optional[str] = None) -> MultiTaskResult:
    """Cycle over tasks, taking one optimiser step right after each task's batch."""
    mt = build_multitask(cfg)
    base = cfg.task_cfg(cfg.tasks[0])
    opt = make_optimizer(base)
    noise = np.random.default_rng([base.seed, _NOISE])
    order_rng = np.random.default_rng([base.seed, _TRAIN, 99])
    sources = {t: BatchSource(cfg.task_cfg(t), stream=i) for i, t in enumerate(cfg.tasks)}
    chunk_state = ChunkState(base, cfg.chunk_len) if cfg.chunked else None
    selectors = {t: Selector(t) for t in cfg.tasks}
    params = {t: mt.models[t].parameters() for t in cfg.tasks}
    metrics: list[Metrics] = []
    nonfinite = {t: 0 for t in cfg.tasks}
    consecutive = {t: 0 for t in cfg.tasks}
    step_log = []
    points = set(eval_points(cfg.cycles, base.eval_every))
    sink = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        sink = open(os.path.join(out_dir, "metrics.jsonl"), "w", encoding="utf-8")

    def do_eval(cycle):
        for i, t in enumerate(cfg.tasks):
            tc = cfg.task_cfg(t)
            ins = eval_trajectories(t, tc.in_dist_n, tc.eval_samples, (tc.seed, _EVAL_IN, i, cycle), tc.random_pos)

            def ood(t=t, tc=tc, i=i):
                return eval_trajectories(t, tc.out_dist_n, tc.eval_samples, (tc.seed, _EVAL_OOD, i, cycle),
                                         tc.random_pos)

            rows = selectors[t].record(cycle, mt.models[t], params[t], ins, ood, tc.eval_batch)
            metrics.extend(rows)
            if sink:
                for r in rows:
                    sink.write(r.to_json() + "\n")
                if rows[0].ckpt_step == cycle:
                    save_checkpoint(os.path.join(out_dir, f"best_{t}.ckpt"), selectors[t].best_params)
        if sink:
            sink.flush()

    try:
        if 0 in points:
            do_eval(0)
        for cycle in range(1, cfg.cycles + 1):
            order = list(cfg.tasks)
            if cfg.shuffle_tasks:
                order_rng.shuffle(order)
            for t in order:
                i = cfg.tasks.index(t)
                tc = cfg.task_cfg(t)
                model = mt.models[t]
                n = tc.train_size(cycle)
                carry = key = None
                if chunk_state is not None:
                    steps, carry, key = chunk_state.next_block(model, t, i, n)
                else:
                    steps = make_batch(model.codec, [prepare(model, tr) for tr in sources[t].trajectories(cycle)])
                try:
                    res = train_step(model, params[t], opt, steps, tc, noise, carry)
                    consecutive[t] = 0
                    if key is not None:
                        chunk_state.store(key, res.carry)
                except (NonFiniteError, FloatingPointError) as exc:
                    nonfinite[t] += 1
                    consecutive[t] += 1
                    if key is not None:
                        chunk_state.store(key, None)
                    if consecutive[t] >= tc.max_nonfinite:
                        raise TrainingAborted(
                            f"{t}: {consecutive[t]} consecutive non-finite losses at cycle {cycle} ({exc})",
                            t, cycle, sum(nonfinite.values())) from exc
                step_log.append(t)
            if cycle in points:
                do_eval(cycle)
    except TrainingAborted as exc:
        exc.partial = MultiTaskResult(mt, metrics, {t: s.best_step for t, s in selectors.items()},
                                      nonfinite, opt.step, step_log)
        raise
    finally:
        if sink:
            sink.close()
    if out_dir:
        for t in cfg.tasks:
            save_checkpoint(os.path.join(out_dir, f"final_{t}.ckpt"),
                            {k: v.data for k, v in params[t].items()})
    return MultiTaskResult(mt, metrics, {t: s.best_step for t, s in selectors.items()}, nonfinite,
                           opt.step, step_log)


# ---------------------------------------------------------------------------
# ablations

# Flag name -> value that removes the improvement.
ABLATIONS = {
    "teacher_forcing": ("teacher_forcing", 0.5),
    "soft_hints": ("soft_hints", False),
    "augment": ("augment", False),
    "gated": ("gated", False),
    "triplets": ("triplets", False),
    "static_hint_elim": ("static_hint_elim", False),
    "xavier_scalar": ("xavier_scalar", False),
    "clip": ("clip", False),
    "sinkhorn": ("sinkhorn", False),
    "random_pos": ("random_pos", False),
    "chunked": ("chunked", False),
}


@dataclass
class AblationRow:
    label: str
    removed: tuple
    scores: list
    nonfinite: int
    aborts: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def ci95(self) -> float:
        k = len(self.scores)
        if k < 2:
            return float("nan")
        s = float(np.std(self.scores, ddof=1))
        return float(stats.t.ppf(0.975, k - 1) * s / math.sqrt(k))

    def to_json(self) -> str:
        ci = self.ci95
        return json.dumps({"config": self.label, "removed": list(self.removed), "mean": self.mean,
                           "ci95": None if math.isnan(ci) else ci, "seeds": len(self.scores),
                           "scores": self.scores, "nonfinite": self.nonfinite, "aborts": self.aborts},
                          sort_keys=True)


def apply_ablation(cfg, flag: str):
    """Return ``cfg`` with improvement ``flag`` removed (RunConfig or MultiTaskConfig)."""
    if flag not in ABLATIONS:
        raise KeyError(f"unknown ablation flag {flag!r}; known: {sorted(ABLATIONS)}")
    name, value = ABLATIONS[flag]
    if isinstance(cfg, MultiTaskConfig):
        if name in ("chunked", "gated"):
            return cfg.replace(**{name: value})
        return cfg.replace(base=cfg.base.replace(**{name: value}))
    if name == "chunked":
        raise KeyError("'chunked' only applies to multi-task runs")
    return cfg.replace(**{name: value})


def _with_seed(cfg, seed: int):
    if isinstance(cfg, MultiTaskConfig):
        return cfg.replace(base=cfg.base.replace(seed=seed))
    return cfg.replace(seed=seed)


def default_runner(cfg) -> tuple[float, int, bool]:
    """Train ``cfg`` and return (mean OOD micro-F1, non-finite count, aborted)."""
    from .trainer import train_single_task

    try:
        if isinstance(cfg, MultiTaskConfig):
            r = train_multi_task(cfg)
            return r.mean_ood(), sum(r.nonfinite.values()), False
        r = train_single_task(cfg)
        ood = [m.micro_f1 for m in r.metrics if m.split == "ood"]
        return (ood[-1] if ood else 0.0), r.nonfinite, False
    except TrainingAborted as exc:
        partial = getattr(exc, "partial", None)
        score = partial.mean_ood() if partial is not None else 0.0
        return score, exc.nonfinite, True


def ablation_configs(base, ablations: Sequence[str], mode: str = "cumulative") -> list[tuple[str, tuple, object]]:
    for a in ablations:
        if a not in ABLATIONS:
            raise KeyError(f"unknown ablation flag {a!r}; known: {sorted(ABLATIONS)}")
    out = [("full", (), base)]
    if mode == "cumulative":
        cfg, removed = base, ()
        for a in ablations:
            cfg = apply_ablation(cfg, a)
            removed = removed + (a,)
            out.append(("-" + ",-".join(removed), removed, cfg))
    elif mode == "independent":
        for a in ablations:
            out.append((f"-{a}", (a,), apply_ablation(base, a)))
    else:
        raise ValueError(f"ablation mode must be cumulative or independent, got {mode!r}")
    return out


def run_ablation(base, ablations: Sequence[str], *, mode: str = "cumulative", seeds: Sequence[int] = (0, 1, 2),
                 runner: Callable = default_runner, out_path: Optional[str] = None) -> list[AblationRow]:
    """Mean OOD micro-F1 with a 95% t-interval per configuration over ``seeds``."""
    rows = []
    for label, removed, cfg in ablation_configs(base, ablations, mode):
        scores, nf, aborts = [], 0, 0
        for s in seeds:
            score, k, aborted = runner(_with_seed(cfg, s))
            scores.append(float(score))
            nf += int(k)
            aborts += int(aborted)
        rows.append(AblationRow(label, removed, scores, nf, aborts))
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(r.to_json() + "\n")
    return rows
