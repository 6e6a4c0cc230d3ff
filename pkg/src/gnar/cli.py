"""Command-line entry point: ``gnar VERB [--config PATH] [--set k=v ...] [--out DIR] [--seed N]``.

Verbs: train, train-multi, eval, dump, ablate, selftest. Every verb that takes
``--out`` writes ``resolved.cfg`` there and holds ``.lock`` while running.
Failures print one JSON line ``{"error": KIND, "detail": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import config as cfgmod
from .algorithms import get_algorithm
from .autodiff import CheckpointError, load_checkpoint
from .container import write_container
from .multitask import run_ablation, train_multi_task
from .sampling import SamplerConfig, sample_eval, sample_problem
from .trainer import (
    _EVAL_IN,
    _EVAL_OOD,
    TrainingAborted,
    build_model,
    eval_trajectories,
    evaluate,
    train_single_task,
)

VERBS = ("train", "train-multi", "eval", "dump", "ablate", "selftest")
# Eval-sample stream index for the eval verb, distinct from training-time eval points.
_CLI_EVAL = 2 ** 31
EXIT_CODES = {"config": 2, "checkpoint": 3, "lock": 4, "selftest": 1, "aborted": 5, "io": 6}


class CliError(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(detail)
        self.kind = kind
        self.detail = detail


@contextmanager
def locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError("lock", f"output directory {out} is in use (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override one key (repeatable)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, help="shorthand for --set train.seed=N")
    p = argparse.ArgumentParser(prog="gnar", description="Generalist neural algorithmic learner.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        sub.add_parser(verb, parents=[common])
    return p


def _load(args) -> cfgmod.Config:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    try:
        return cfgmod.load(args.config, tuple(overrides))
    except cfgmod.ConfigError as exc:
        raise CliError("config", str(exc)) from None


def _snapshot(out: Path, cfg: cfgmod.Config) -> None:
    (out / "resolved.cfg").write_text(cfgmod.format_config(cfg), encoding="utf-8")


def _out_dir(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_train(args, cfg: cfgmod.Config, echo) -> int:
    out = _out_dir(args, "runs/train")
    with locked(out):
        _snapshot(out, cfg)
        try:
            r = train_single_task(cfg.train, out_dir=str(out))
        except TrainingAborted as exc:
            raise CliError("aborted", str(exc)) from None
    last = [m for m in r.metrics if m.step == r.steps_done]
    for m in last:
        echo(m.to_json())
    return 0


def cmd_train_multi(args, cfg: cfgmod.Config, echo) -> int:
    out = _out_dir(args, "runs/train-multi")
    with locked(out):
        _snapshot(out, cfg)
        try:
            r = train_multi_task(cfg.multi_config(), out_dir=str(out))
        except TrainingAborted as exc:
            raise CliError("aborted", str(exc)) from None
    final = {}
    for m in r.metrics:
        final[(m.algorithm, m.split)] = m
    for m in final.values():
        echo(m.to_json())
    return 0


def _checkpoint_for(path: Path, algorithm: str) -> Path:
    if path.is_dir():
        for name in (f"best_{algorithm}.ckpt", "best.ckpt"):
            if (path / name).exists():
                return path / name
        raise CliError("checkpoint", f"no checkpoint for {algorithm} in {path}")
    if not path.exists():
        raise CliError("checkpoint", f"checkpoint {path} not found")
    return path


def cmd_eval(args, cfg: cfgmod.Config, echo) -> int:
    ev = cfg.eval
    src = ev.checkpoint or args.out
    if not src:
        raise CliError("config", "eval needs eval.checkpoint or --out pointing at a run directory")
    algorithms = ev.algorithms or ((cfg.multi.tasks if ev.multi else (cfg.train.algorithm,)))
    for i, alg in enumerate(algorithms):
        run = cfg.train.replace(algorithm=alg)
        if ev.multi:
            run = run.replace(gated=cfg.multi.gated)
        path = _checkpoint_for(Path(src), alg)
        try:
            arrays = load_checkpoint(path)
        except CheckpointError as exc:
            raise CliError("checkpoint", f"{path}: {exc}") from None
        model = build_model(run)
        params = model.parameters()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise CliError("checkpoint", f"{path}: missing tensor {missing[0]}")
        for k, t in params.items():
            if arrays[k].shape != t.shape:
                raise CliError("checkpoint", f"{path}: tensor {k} has shape {arrays[k].shape}, expected {t.shape}")
            t.data = arrays[k].astype(t.dtype)
        for split, n, stream in (("in_dist", run.in_dist_n, _EVAL_IN), ("ood", run.out_dist_n, _EVAL_OOD)):
            samples = eval_trajectories(alg, n, run.eval_samples, (run.seed, stream, i, _CLI_EVAL), run.random_pos)
            r = evaluate(model, samples, batch_size=run.eval_batch)
            row = {"algorithm": alg, "split": split, "n": n, "micro_f1": r.micro_f1}
            if r.perm_valid is not None:
                row["perm_valid"] = r.perm_valid
            echo(json.dumps(row, sort_keys=True))
    return 0


def cmd_dump(args, cfg: cfgmod.Config, echo) -> int:
    out = _out_dir(args, "runs/dump")
    run, d = cfg.train, cfg.dump
    alg = run.algorithm
    n = d.n if d.n is not None else (run.in_dist_n if d.split == "eval" else None)
    with locked(out):
        _snapshot(out, cfg)
        rng = np.random.default_rng([run.seed, 11])
        if d.split == "eval":
            trajs = [sample_eval(alg, n, rng, run.random_pos) for _ in range(d.count)]
        else:
            sampler = SamplerConfig(alg, seed=run.seed, random_pos=run.random_pos)
            trajs = [sample_problem(sampler, rng, n=n) for _ in range(d.count)]
        path = out / f"{alg}.gnartrj"
        write_container(path, get_algorithm(alg).spec, trajs)
        (out / "manifest.txt").write_text(
            f"algorithm = {alg}\nseed = {run.seed}\nsplit = {d.split}\ncount = {d.count}\n"
            f"n = {'sampled' if n is None else n}\nfile = {path.name}\n", encoding="utf-8")
    echo(json.dumps({"file": str(path), "count": d.count}))
    return 0


def cmd_ablate(args, cfg: cfgmod.Config, echo) -> int:
    out = _out_dir(args, "runs/ablate")
    a = cfg.ablate
    base = cfg.multi_config() if a.target == "multi" else cfg.train
    with locked(out):
        _snapshot(out, cfg)
        rows = run_ablation(base, a.flags, mode=a.mode, seeds=a.seeds, out_path=str(out / "ablation.jsonl"))
    for r in rows:
        echo(r.to_json())
    return 0


def cmd_selftest(args, cfg: cfgmod.Config, echo) -> int:
    from .selftest import SUITES, run_selftest

    unknown = [s for s in cfg.selftest.suites if s not in SUITES]
    if unknown:
        raise CliError("config", f"unknown selftest suite(s) {unknown}; known: {sorted(SUITES)}")
    if not run_selftest(list(cfg.selftest.suites), report=echo):
        raise CliError("selftest", "one or more suites failed")
    return 0


COMMANDS = {"train": cmd_train, "train-multi": cmd_train_multi, "eval": cmd_eval, "dump": cmd_dump,
            "ablate": cmd_ablate, "selftest": cmd_selftest}


def main(argv: Optional[Sequence[str]] = None, echo=print) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
        return COMMANDS[args.verb](args, cfg, echo)
    except CliError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "detail": exc.detail}) + "\n")
        return EXIT_CODES[exc.kind]
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io", "detail": f"{exc.filename}: {exc.strerror}"}) + "\n")
        return EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
