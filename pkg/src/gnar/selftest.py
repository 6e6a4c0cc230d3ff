"""Property suites runnable from the command line and from the test-suite.

Each suite returns a :class:`SuiteResult`; ``run_selftest`` runs them all.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .codec import LatentState, TaskCodec, to_model_space, value_shape
from .oracles import CHECKERS, ORACLE_SIZES
from .permutation import sinkhorn
from .processor import GATE_BIAS, ProcessorFlags, ProcessorParams, gate_values, mpnn_step
from .sampling import SamplerConfig, sample_problem, static_spec
from .specs import FType, Location


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> SuiteResult:
    t = time.perf_counter()
    ok, detail = fn()
    return SuiteResult(name, ok, detail, time.perf_counter() - t)


# ---------------------------------------------------------------------------
# sinkhorn


def sinkhorn_stats(count: int, n: int, *, l_max: int = 60, temperature: float = 0.1,
                   scale: float = 5.0, seed: int = 0) -> dict:
    """Marginal errors and row-argmax validity over i.i.d. U[-scale, scale] scores."""
    rng = np.random.default_rng([seed, n])
    Y = rng.uniform(-scale, scale, size=(count, n, n))
    with ad.no_grad():
        S = sinkhorn(Y, l_max, temperature).data
    am = S.argmax(axis=-1)
    valid = np.array([len(set(r.tolist())) == n for r in am])
    return {"row_err": float(np.abs(S.sum(axis=-1) - 1).max()),
            "col_err": float(np.abs(S.sum(axis=-2) - 1).max()),
            "valid_frac": float(valid.mean())}


def planted_recovery(count: int, n: int, *, l_max: int = 60, temperature: float = 0.1,
                     seed: int = 0) -> float:
    """Fraction of noisy planted derangement scores whose row-argmax returns the plant."""
    rng = np.random.default_rng([seed, n, 1])
    hits = 0
    for _ in range(count):
        while True:
            perm = rng.permutation(n)
            if n == 1 or np.all(perm != np.arange(n)):
                break
        Y = rng.uniform(0.0, 1.0, size=(n, n))
        Y[np.arange(n), perm] += 5.0
        with ad.no_grad():
            S = sinkhorn(Y, l_max, temperature).data
        hits += bool(np.array_equal(S.argmax(axis=-1), perm))
    return hits / count


def sinkhorn_suite(count: int = 1000, sizes=(8, 16)) -> SuiteResult:
    """Properties that hold for any correct implementation.

    Fixed points, exact column normalisation, shrinking row error, recovery of
    planted permutations and finite-difference gradients at ``l = 10``.
    """
    def run():
        problems = []
        with ad.no_grad():
            two = sinkhorn(np.zeros((2, 2)), 60, 0.1).data
            three = sinkhorn(np.zeros((3, 3)), 60, 0.1, mask_diagonal=False).data
        if not np.allclose(two, [[0, 1], [1, 0]], atol=1e-12):
            problems.append("n=2 fixed point")
        if not np.allclose(three, 1 / 3, atol=1e-12):
            problems.append("n=3 uniform")
        for n in sizes:
            short = sinkhorn_stats(count, n, l_max=10)
            long = sinkhorn_stats(count, n, l_max=60)
            if long["col_err"] > 1e-9:
                problems.append(f"n={n} column sums off by {long['col_err']:.1e}")
            if long["row_err"] > short["row_err"]:
                problems.append(f"n={n} row error grew with iterations")
            rec = planted_recovery(min(count, 200), n)
            if rec < 1.0:
                problems.append(f"n={n} planted recovery {rec:.3f}")
        rng = np.random.default_rng(3)
        prev = ad.default_dtype()
        ad.set_default_dtype("float64")
        try:
            err = check_gradients(lambda y: sinkhorn(y, 10, 1.0), [rng.normal(size=(2, 4, 4))])
        finally:
            ad.set_default_dtype(prev)
        if err > 1e-3:
            problems.append(f"gradient rel. err {err:.1e}")
        return not problems, "; ".join(problems) or f"fixed points, marginals, recovery, grad err {err:.1e}"

    return _timed("sinkhorn", run)


# ---------------------------------------------------------------------------
# gradients


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        hi = f()
        arr[i] = old - eps
        lo = f()
        arr[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(build: Callable[..., ad.Tensor], arrays: list[np.ndarray], seed: int = 0,
                    eps: float = 1e-6) -> float:
    """Max relative error between tape and numeric gradients of ``sum(build(*xs) * R)``."""
    rng = np.random.default_rng(seed)
    xs = [ad.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*xs)
    R = rng.normal(size=out.shape)

    def value() -> float:
        with ad.no_grad():
            return float(np.sum(build(*xs).data * R))

    loss = ad.sum_(ad.mul(build(*xs), R))
    grads = ad.backward(loss)
    worst = 0.0
    for x in xs:
        num = numeric_grad(value, x.data, eps)
        worst = max(worst, rel_error(grads.get(x, np.zeros_like(x.data)), num))
    return worst


def _away_from_zero(rng, shape, lo=0.2):
    v = rng.uniform(lo, 1.5, size=shape)
    return v * rng.choice([-1.0, 1.0], size=shape)


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list]]:
    """One small case per differentiable op."""
    def a(*shape):
        return rng.normal(size=shape)

    def distinct(*shape):
        return rng.permutation(np.arange(int(np.prod(shape)), dtype=np.float64)).reshape(shape) * 0.1

    return {
        "add": (ad.add, [a(3, 4), a(4)]),
        "sub": (ad.sub, [a(3, 1), a(3, 4)]),
        "neg": (ad.neg, [a(3, 4)]),
        "mul": (ad.mul, [a(2, 3, 4), a(3, 1)]),
        "div": (ad.div, [a(3, 4), _away_from_zero(rng, (3, 4), 0.5)]),
        "matmul": (ad.matmul, [a(2, 3, 4), a(2, 4, 5)]),
        "linear": (ad.linear, [a(2, 3, 4), a(4, 5), a(5)]),
        "concat": (lambda x, y: ad.concat([x, y], axis=1), [a(2, 3), a(2, 2)]),
        "relu": (ad.relu, [_away_from_zero(rng, (3, 4))]),
        "sigmoid": (ad.sigmoid, [a(3, 4)]),
        "log_sigmoid": (ad.log_sigmoid, [a(3, 4) * 3]),
        "exp": (ad.exp, [a(3, 4)]),
        "log": (ad.log, [rng.uniform(0.5, 2.0, size=(3, 4))]),
        "softmax": (lambda x: ad.softmax(x, axis=-1), [a(3, 4)]),
        "log_softmax": (lambda x: ad.log_softmax(x, axis=1), [a(3, 4, 2)]),
        "logsumexp": (lambda x: ad.logsumexp(x, axis=-2, keepdims=True), [a(3, 4)]),
        "max": (lambda x: ad.max_(x, axis=1), [distinct(3, 4, 2)]),
        "sum": (lambda x: ad.sum_(x, axis=(0, 2)), [a(2, 3, 4)]),
        "mean": (lambda x: ad.mean(x, axis=-1, keepdims=True), [a(3, 4)]),
        "layer_norm": (lambda x, g, b: ad.layer_norm(x, g, b, eps=1e-6), [a(3, 5), a(5), a(5)]),
        "reshape": (lambda x: ad.reshape(x, (4, 3)), [a(3, 4)]),
        "transpose": (lambda x: ad.transpose(x, (2, 0, 1)), [a(2, 3, 4)]),
        "broadcast_to": (lambda x: ad.broadcast_to(x, (2, 3, 4)), [a(3, 1)]),
    }


def _triplet_step_case(n: int = 6, h: int = 8, seed: int = 0):
    rng = np.random.default_rng(seed)
    proc = ProcessorParams(h, rng)
    names = proc.names(True, True)
    x, e, g, hp = rng.normal(size=(1, n, h)), rng.normal(size=(1, n, n, h)), rng.normal(size=(1, h)), \
        rng.normal(size=(1, n, h))
    R1, R2 = rng.normal(size=(1, n, h)), rng.normal(size=(1, n, n, h))

    def loss_of(xs):
        state = LatentState(*xs[:4])
        out, e_lat = mpnn_step(proc, state, ProcessorFlags(True, True))
        return ad.add(ad.sum_(ad.mul(out, R1)), ad.sum_(ad.mul(e_lat, R2)))

    return proc, names, [x, e, g, hp], loss_of


def full_step_error(n: int = 6, h: int = 8, seed: int = 0, eps: float = 1e-6) -> float:
    """Finite-difference check of one gated Triplet-GMPNN step over inputs and weights."""
    proc, names, arrays, loss_of = _triplet_step_case(n, h, seed)
    xs = [ad.Tensor(a, requires_grad=True) for a in arrays]

    def value() -> float:
        with ad.no_grad():
            return float(loss_of(xs).data)

    grads = ad.backward(loss_of(xs))
    leaves = xs + [proc[k] for k in names]
    num = np.concatenate([numeric_grad(value, t.data, eps).ravel() for t in leaves])
    ana = np.concatenate([grads.get(t, np.zeros_like(t.data)).ravel() for t in leaves])
    for t in leaves:
        t.grad = None
    return rel_error(ana, num)


def gradient_suite(op_tol: float = 1e-4, step_tol: float = 1e-3) -> SuiteResult:
    def run():
        prev = ad.default_dtype()
        ad.set_default_dtype("float64")
        try:
            rng = np.random.default_rng(0)
            errs = {k: check_gradients(fn, xs) for k, (fn, xs) in op_cases(rng).items()}
            worst_op = max(errs, key=errs.get)
            step_err = full_step_error()
        finally:
            ad.set_default_dtype(prev)
        ok = errs[worst_op] < op_tol and step_err < step_tol
        return ok, f"{len(errs)} ops, worst {worst_op} {errs[worst_op]:.1e}; full step {step_err:.1e}"

    return _timed("gradients", run)


# ---------------------------------------------------------------------------
# trace oracles


def oracle_suite(count: int = 1000, seed: int = 0) -> SuiteResult:
    def run():
        failures = []
        for alg, check in CHECKERS.items():
            cfg = SamplerConfig(alg, size_range=ORACLE_SIZES.get(alg), seed=seed)
            rng = np.random.default_rng([seed, len(alg)])
            bad = 0
            for _ in range(count):
                if check(sample_problem(cfg, rng)):
                    bad += 1
            if bad:
                failures.append(f"{alg} {bad}/{count}")
        detail = f"{len(CHECKERS)} algorithms x {count}"
        return not failures, detail + ("; mismatches: " + ", ".join(failures) if failures else "")

    return _timed("oracles", run)


# ---------------------------------------------------------------------------
# equivariance and gate


def node_axes(f) -> tuple:
    """Axes of a model-space value (leading batch axis) that index nodes."""
    k = {Location.NODE: 1, Location.EDGE: 2, Location.GRAPH: 0}[f.location]
    if f.ftype is FType.POINTER:
        k += 1
    return tuple(range(1, 1 + k))


def permute_nodes(arr: np.ndarray, axes: tuple, perm: np.ndarray) -> np.ndarray:
    for ax in axes:
        arr = np.take(arr, perm, axis=ax)
    return arr


def equivariance_error(algorithm: str = "bfs", perms: int = 100, n: int = 7, h: int = 16,
                       seed: int = 0) -> float:
    """Max deviation of encode+process under node relabelling."""
    rng = np.random.default_rng(seed)
    spec = static_spec(algorithm)
    codec = TaskCodec(spec, h, rng)
    proc = ProcessorParams(h, rng)
    traj = sample_problem(SamplerConfig(algorithm), rng, n=n)
    feats = spec.inputs + spec.hints
    vals = {}
    for f in feats:
        src = traj.inputs[f.name] if f.name in traj.inputs else traj.hints[f.name][0]
        vals[f.name] = to_model_space(f, src[None], n)
    hp = rng.normal(size=(1, n, h))
    ep = rng.normal(size=(1, n, n, h))

    def run(values, h_prev, e_prev):
        with ad.no_grad():
            x, e, g = codec.encode(values, 1, n)
            state = LatentState(x, ad.add(e, e_prev), g, ad.Tensor(h_prev))
            out, e_lat = mpnn_step(proc, state, ProcessorFlags(True, True))
        return out.data, e_lat.data

    base_h, base_e = run(vals, hp, ep)
    worst = 0.0
    for _ in range(perms):
        perm = rng.permutation(n)
        pv = {}
        for f in feats:
            v = vals[f.name]
            v = permute_nodes(v, node_axes(f), perm)
            if f.ftype is FType.POINTER:
                assert v.shape == value_shape(f, 1, n)
            pv[f.name] = v
        ph, pe = run(pv, hp[:, perm], ep[:, perm][:, :, perm])
        worst = max(worst, float(np.abs(ph - base_h[:, perm]).max()),
                    float(np.abs(pe - base_e[:, perm][:, :, perm]).max()))
    return worst


def gate_checks(n: int = 5, h: int = 8, seed: int = 0) -> tuple[bool, float, float]:
    """(closed-gate identity holds exactly, initial gate value error, observed gate)."""
    rng = np.random.default_rng(seed)
    proc = ProcessorParams(h, rng)
    state = LatentState(ad.Tensor(rng.normal(size=(1, n, h))), ad.Tensor(rng.normal(size=(1, n, n, h))),
                        ad.Tensor(rng.normal(size=(1, h))), ad.Tensor(rng.normal(size=(1, n, h))))
    with ad.no_grad():
        closed, _ = mpnn_step(proc, state, ProcessorFlags(True, False),
                              gate_override=ad.Tensor(np.zeros((1, n, h))))
        identity = bool(np.array_equal(closed.data, state.h_prev.data))
        # With the second gate layer's weights zeroed the gate is its bias alone.
        proc[f"{proc.prefix}/fg2/w"].data = np.zeros_like(proc[f"{proc.prefix}/fg2/w"].data)
        gv = gate_values(proc, state).data
    exact = 1.0 / (1.0 + math.exp(-GATE_BIAS))
    return identity, float(np.abs(gv - exact).max()), float(gv.flat[0])


def equivariance_suite(perms: int = 100, tol: float = 1e-9) -> SuiteResult:
    def run():
        prev = ad.default_dtype()
        ad.set_default_dtype("float64")
        try:
            errs = {alg: equivariance_error(alg, perms) for alg in ("bfs", "floyd_warshall", "insertion_sort")}
            identity, gate_err, gate = gate_checks()
        finally:
            ad.set_default_dtype(prev)
        worst = max(errs.values())
        ok = worst < tol and identity and gate_err < 1e-12 and round(gate, 9) == 0.047425873
        return ok, (f"permutation error {worst:.1e}; closed gate identity {identity}; "
                    f"initial gate {gate:.9f} (err {gate_err:.1e})")

    return _timed("equivariance+gate", run)


SUITES = {
    "sinkhorn": sinkhorn_suite,
    "gradients": gradient_suite,
    "oracles": oracle_suite,
    "equivariance": equivariance_suite,
}


def run_selftest(names: Optional[list] = None, report: Callable[[str], None] = print) -> bool:
    results = []
    for name in names or list(SUITES):
        r = SUITES[name]()
        report(r.line())
        results.append(r)
    passed = sum(r.passed for r in results)
    report(f"selftest: {passed}/{len(results)} suites passed")
    return passed == len(results)
