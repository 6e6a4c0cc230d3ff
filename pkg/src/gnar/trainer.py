"""Single-task training: batching by size cycle, clipped Adam, model selection.

Evaluation points are step 0, every ``eval_every`` steps and the final step.
Each point scores fresh in-distribution samples; when the in-distribution
micro-F1 beats the best so far, that checkpoint becomes the selected one and is
scored on fresh OOD samples. Otherwise the previous OOD row is repeated with the
current step, so the OOD column always describes the selected checkpoint
(``ckpt_step``).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import (
    NonFiniteError,
    OptimState,
    adam_step,
    backward,
    clip_by_global_norm,
    no_grad,
    save_checkpoint,
    set_default_dtype,
)
from .codec import FeedbackMode, SinkhornSettings, TaskCodec
from .metrics import Counts, output_counts
from .model import Model, Steps, compute_loss, make_batch, unroll
from .processor import ProcessorFlags, ProcessorParams
from .sampling import (
    STRING_N,
    SamplerConfig,
    is_string_task,
    sample_eval,
    sample_fixed,
    sample_problem,
    static_spec,
)
from .specs import Trajectory, retag_trajectory
from .algorithms import get_algorithm

# Independent RNG streams derived from the run seed.
_INIT, _TRAIN, _EVAL_IN, _EVAL_OOD, _POOL, _NOISE = range(6)

# Element budget for one triplet tensor during batched evaluation.
_EVAL_TRIPLET_BUDGET = 8_000_000

ABLATION_FLAGS = ("gated", "triplets", "soft_hints", "augment", "static_hint_elim",
                  "xavier_scalar", "clip", "teacher_forcing", "sinkhorn", "random_pos", "chunked")


class TrainingAborted(RuntimeError):
    """Too many consecutive non-finite losses."""

    def __init__(self, message: str, algorithm: str, step: int, nonfinite: int):
        super().__init__(message)
        self.algorithm = algorithm
        self.step = step
        self.nonfinite = nonfinite


@dataclass
class RunConfig:
    algorithm: str = "bfs"
    steps: int = 10_000
    batch_size: int = 32
    hidden: int = 128
    size_cycle: tuple = (4, 7, 11, 13, 16)
    eval_n: Optional[int] = None
    ood_n: Optional[int] = None
    eval_every: int = 100
    eval_samples: int = 32
    eval_batch: int = 32
    teacher_forcing: float = 0.0
    gated: bool = True
    triplets: bool = True
    soft_hints: bool = True
    augment: bool = True
    static_hint_elim: bool = True
    xavier_scalar: bool = True
    clip: bool = True
    clip_norm: float = 1.0
    random_pos: bool = True
    sinkhorn: bool = True
    sinkhorn_l_train: int = 10
    sinkhorn_l_eval: int = 60
    sinkhorn_temperature: float = 0.1
    sinkhorn_gumbel: bool = True
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_nonfinite: int = 50
    pool_size: int = 1000
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        self.size_cycle = tuple(int(v) for v in self.size_cycle)
        get_algorithm(self.algorithm)
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not self.size_cycle or min(self.size_cycle) < 1:
            raise ValueError("size_cycle needs positive sizes")
        if not 0.0 <= self.teacher_forcing <= 1.0:
            raise ValueError("teacher_forcing must lie in [0, 1]")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        for name in ("batch_size", "hidden", "eval_every", "eval_samples", "eval_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    @property
    def in_dist_n(self) -> int:
        if self.eval_n is not None:
            return self.eval_n
        return STRING_N if is_string_task(self.algorithm) else 16

    @property
    def out_dist_n(self) -> int:
        if self.ood_n is not None:
            return self.ood_n
        return 80 if is_string_task(self.algorithm) else 64

    def train_size(self, step: int) -> int:
        if is_string_task(self.algorithm):
            return STRING_N
        if not self.augment:
            return max(self.size_cycle)
        return self.size_cycle[step % len(self.size_cycle)]


@dataclass
class Metrics:
    step: int
    algorithm: str
    split: str
    micro_f1: float
    hint_loss: float
    output_loss: float
    ckpt_step: int
    perm_valid: Optional[float] = None

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        if d["perm_valid"] is None:
            del d["perm_valid"]
        return json.dumps(d, sort_keys=True)


@dataclass
class EvalResult:
    micro_f1: float
    hint_loss: float
    output_loss: float
    counts: Counts
    perm_valid: Optional[float] = None


@dataclass
class TrainResult:
    model: Model
    metrics: list
    best_step: int
    best_params: dict
    nonfinite: int = 0
    steps_done: int = 0


# ---------------------------------------------------------------------------
# construction


def task_spec(cfg: RunConfig, algorithm: Optional[str] = None):
    alg = algorithm or cfg.algorithm
    return static_spec(alg) if cfg.static_hint_elim else get_algorithm(alg).spec


def build_codec(cfg: RunConfig, algorithm: str, rng: np.random.Generator) -> TaskCodec:
    sk = SinkhornSettings(cfg.sinkhorn_l_train, cfg.sinkhorn_l_eval, cfg.sinkhorn_temperature,
                          cfg.sinkhorn_gumbel) if cfg.sinkhorn else None
    return TaskCodec(task_spec(cfg, algorithm), cfg.hidden, rng, sinkhorn=sk, xavier_scalar=cfg.xavier_scalar)


def build_model(cfg: RunConfig, proc: Optional[ProcessorParams] = None, algorithm: Optional[str] = None,
                rng: Optional[np.random.Generator] = None) -> Model:
    set_default_dtype(cfg.dtype)
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, _INIT])
    if proc is None:
        proc = ProcessorParams(cfg.hidden, rng)
    codec = build_codec(cfg, algorithm or cfg.algorithm, rng)
    flags = ProcessorFlags(gated=cfg.gated, triplets=cfg.triplets)
    mode = FeedbackMode.SOFT if cfg.soft_hints else FeedbackMode.HARD
    return Model(codec, proc, flags, mode, cfg.teacher_forcing)


def prepare(model: Model, traj: Trajectory) -> Trajectory:
    return retag_trajectory(model.codec.spec, traj)


class BatchSource:
    """Per-step training batches; a pure function of (seed, stream, step)."""

    def __init__(self, cfg: RunConfig, algorithm: Optional[str] = None, stream: int = 0):
        self.cfg = cfg
        self.algorithm = algorithm or cfg.algorithm
        self.stream = stream
        self.sampler = SamplerConfig(self.algorithm, seed=cfg.seed, random_pos=cfg.random_pos)
        self._pool: Optional[list] = None

    def pool(self) -> list:
        if self._pool is None:
            n = self.cfg.train_size(0)
            self._pool = [sample_fixed(self.algorithm, n, np.random.default_rng(
                [self.cfg.seed, _POOL, self.stream, i]), self.cfg.random_pos) for i in range(self.cfg.pool_size)]
        return self._pool

    def trajectories(self, step: int, count: Optional[int] = None) -> list[Trajectory]:
        count = self.cfg.batch_size if count is None else count
        rng = np.random.default_rng([self.cfg.seed, _TRAIN, self.stream, step])
        if not self.cfg.augment:
            pool = self.pool()
            return [pool[i] for i in rng.integers(0, len(pool), size=count)]
        n = self.cfg.train_size(step)
        return [sample_problem(self.sampler, rng, n=n) for _ in range(count)]


def eval_trajectories(algorithm: str, n: int, count: int, seed_key: Sequence[int],
                      random_pos: bool = True) -> list[Trajectory]:
    rng = np.random.default_rng(list(seed_key))
    return [sample_eval(algorithm, n, rng, random_pos) for _ in range(count)]


# ---------------------------------------------------------------------------
# evaluation


def _eval_chunk_size(cfg_batch: int, n: int, triplets: bool) -> int:
    if not triplets:
        return cfg_batch
    return int(max(1, min(cfg_batch, _EVAL_TRIPLET_BUDGET // (n ** 3 * 8))))


def evaluate(model: Model, samples: Sequence[Trajectory], *, batch_size: int = 32) -> EvalResult:
    """Hard-decoded micro-F1 with hints fed back from the model's own predictions.

    Ground-truth hints are sealed during the forward pass; they are read only
    afterwards to report the hint loss.
    """
    samples = [prepare(model, s) for s in samples]
    total = Counts()
    hint_sum = out_sum = 0.0
    valid_flags = []
    mb = _eval_chunk_size(batch_size, samples[0].n, model.flags.triplets)
    with no_grad():
        for lo in range(0, len(samples), mb):
            chunk = samples[lo:lo + mb]
            steps = make_batch(model.codec, chunk)
            steps.hints.sealed = True
            res = unroll(model, steps, train=False)
            steps.hints.sealed = False
            compute_loss(model, steps, res)
            hint_sum += res.hint_loss * len(chunk)
            out_sum += res.output_loss * len(chunk)
            c, v = _score_steps(model, steps, res)
            total += c
            valid_flags.extend(v)
    k = len(samples)
    perm = float(np.mean(valid_flags)) if valid_flags else None
    return EvalResult(total.f1, hint_sum / k, out_sum / k, total, perm)


def _score_steps(model: Model, steps: Steps, res) -> tuple[Counts, list]:
    total = Counts()
    flags = []
    for t, preds in res.out_preds.items():
        lanes = np.flatnonzero(steps.end[t])
        sub = {k: _Take(v.data[lanes]) for k, v in preds.items()}
        raw = {k: v[t][lanes] for k, v in steps.raw_outputs.items()}
        c, validity = output_counts(model.codec, sub, raw)
        total += c
        for v in validity.values():
            flags.extend(bool(x) for x in v)
    return total, flags


class _Take:
    __slots__ = ("data",)

    def __init__(self, data):
        self.data = data


# ---------------------------------------------------------------------------
# training


def param_arrays(params: dict) -> dict:
    return {k: t.data for k, t in params.items()}


def load_arrays(params: dict, arrays: dict) -> None:
    for k, t in params.items():
        t.data = arrays[k]


def train_step(model: Model, params: dict, opt: OptimState, steps: Steps, cfg: RunConfig,
               rng: np.random.Generator, carry=None):
    """One forward/backward/update. Returns the unroll result; raises NonFiniteError."""
    res = unroll(model, steps, carry, train=True, rng=rng)
    compute_loss(model, steps, res)
    leaves = backward(res.loss)
    grads = {}
    for t, g in leaves.items():
        if t.name in params:
            grads[t.name] = g
        t.grad = None
    if cfg.clip:
        grads = clip_by_global_norm(grads, cfg.clip_norm)
    adam_step(params, grads, opt)
    return res


def make_optimizer(cfg: RunConfig) -> OptimState:
    return OptimState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def eval_points(steps: int, every: int) -> list[int]:
    pts = list(range(0, steps + 1, every))
    if pts[-1] != steps:
        pts.append(steps)
    return pts


class Selector:
    """Tracks the best in-distribution checkpoint and emits metric rows."""

    def __init__(self, algorithm: str):
        self.algorithm = algorithm
        self.best_f1 = -1.0
        self.best_step = 0
        self.best_params: dict = {}
        self.ood_row: Optional[Metrics] = None

    def record(self, step: int, model: Model, params: dict, in_samples, ood_fn: Callable,
               eval_batch: int) -> list[Metrics]:
        r = evaluate(model, in_samples, batch_size=eval_batch)
        rows = []
        improved = r.micro_f1 > self.best_f1
        if improved:
            self.best_f1 = r.micro_f1
            self.best_step = step
            self.best_params = param_arrays(params)
        rows.append(Metrics(step, self.algorithm, "in_dist", r.micro_f1, r.hint_loss, r.output_loss,
                            self.best_step, r.perm_valid))
        if improved:
            o = evaluate(model, ood_fn(), batch_size=eval_batch)
            self.ood_row = Metrics(step, self.algorithm, "ood", o.micro_f1, o.hint_loss, o.output_loss,
                                   self.best_step, o.perm_valid)
            rows.append(self.ood_row)
        else:
            rows.append(dataclasses.replace(self.ood_row, step=step))
        return rows


def _open_metrics(out_dir: Optional[str]):
    if out_dir is None:
        return None
    os.makedirs(out_dir, exist_ok=True)
    return open(os.path.join(out_dir, "metrics.jsonl"), "w", encoding="utf-8")


def train_single_task(cfg: RunConfig, algorithm_id: Optional[str] = None, *,
                      out_dir: Optional[str] = None) -> TrainResult:
    """Train one algorithm; optionally stream metrics and checkpoints to ``out_dir``."""
    if algorithm_id is not None and algorithm_id != cfg.algorithm:
        cfg = cfg.replace(algorithm=algorithm_id)
    alg = cfg.algorithm
    model = build_model(cfg)
    params = model.parameters()
    opt = make_optimizer(cfg)
    source = BatchSource(cfg)
    noise = np.random.default_rng([cfg.seed, _NOISE])
    selector = Selector(alg)
    metrics: list[Metrics] = []
    sink = _open_metrics(out_dir)
    nonfinite = consecutive = 0
    points = set(eval_points(cfg.steps, cfg.eval_every))

    def ood_fn(step):
        return lambda: eval_trajectories(alg, cfg.out_dist_n, cfg.eval_samples,
                                         (cfg.seed, _EVAL_OOD, step), cfg.random_pos)

    def do_eval(step):
        ins = eval_trajectories(alg, cfg.in_dist_n, cfg.eval_samples, (cfg.seed, _EVAL_IN, step),
                                cfg.random_pos)
        rows = selector.record(step, model, params, ins, ood_fn(step), cfg.eval_batch)
        metrics.extend(rows)
        if sink:
            for r in rows:
                sink.write(r.to_json() + "\n")
            sink.flush()
            if rows[0].ckpt_step == step:
                save_checkpoint(os.path.join(out_dir, "best.ckpt"), selector.best_params)

    try:
        if 0 in points:
            do_eval(0)
        for step in range(1, cfg.steps + 1):
            trajs = [prepare(model, tr) for tr in source.trajectories(step)]
            steps = make_batch(model.codec, trajs)
            try:
                train_step(model, params, opt, steps, cfg, noise)
                consecutive = 0
            except (NonFiniteError, FloatingPointError) as exc:
                nonfinite += 1
                consecutive += 1
                if consecutive >= cfg.max_nonfinite:
                    raise TrainingAborted(
                        f"{alg}: {consecutive} consecutive non-finite losses at step {step} ({exc})",
                        alg, step, nonfinite) from exc
            if step in points:
                do_eval(step)
    finally:
        if sink:
            sink.close()
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "final.ckpt"), param_arrays(params))
    return TrainResult(model, metrics, selector.best_step, selector.best_params, nonfinite, cfg.steps)
