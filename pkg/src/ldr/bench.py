"""Timing harness: dense vs circulant vs Toeplitz-like transforms.

Three scenarios are timed for each kind of ``n x n`` transform:

``inference``
    ``b`` instances multiplied one at a time, parameter spectra computed
    fresh once per call (``2r + 2b(r + 1)`` FFTs for Toeplitz-like).
``forward_minibatch``
    one batched product of an ``n x b`` block, fresh spectra
    (``2(rb + b + r)`` FFTs).
``gradient_minibatch``
    parameter gradients of ``<Z, M X>`` for an ``n x b`` batch, fresh spectra
    (``4br + 4r + 2b`` FFTs).

The dense baseline is a single-threaded blocked product by default; setting
``dense_mode="blas"`` uses numpy's BLAS with ``LDR_THREADS`` threads. Circulant
rows carry ``r = 0`` in the output, following the convention that rank 0
labels the plain circulant transform.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import itertools
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ldr import kernels
from ldr.fft_core import audit, fft_rows, ifft_rows
from ldr.toeplitz_like import ToeplitzLikeTransform, fast_gradients, fast_multiply

SCENARIOS = ("inference", "forward_minibatch", "gradient_minibatch")
KINDS = ("dense", "circulant", "toeplitz_like")
CSV_COLUMNS = (
    "scenario", "kind", "n", "r", "b",
    "median_ns", "p10_ns", "p90_ns", "fft_count", "speedup_vs_dense",
)
DENSE_MODES = ("blocked", "blas")


@dataclass
class BenchRecord:
    scenario: str
    kind: str
    n: int
    r: int
    b: int
    median_ns: float
    p10_ns: float
    p90_ns: float
    fft_count: int
    speedup_vs_dense: float = float("nan")

    def row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


def _threads():
    try:
        return max(1, int(os.environ.get("LDR_THREADS", "1")))
    except ValueError:
        return 1


def _dense_limits(dense_mode):
    if dense_mode == "blocked":
        return threadpool_limits(limits=1)
    return threadpool_limits(limits=_threads())


def _circ_forward(spec_v, X):
    return ifft_rows(spec_v * fft_rows(X.T)).real.T


def _circ_gradient(X, Z):
    # d<Z, Z_1(v) X>/dv = sum_k Z_1(x_k)^T z_k
    s = np.sum(np.conj(fft_rows(X.T)) * fft_rows(Z.T), axis=0)
    return ifft_rows(s).real


def _make_workload(scenario, kind, n, r, b, seed, dense_mode):
    """Return a zero-argument callable performing one timed operation."""
    rng = np.random.default_rng([seed, n, r, b])
    X = rng.standard_normal((n, b))
    Z = rng.standard_normal((n, b))
    if kind == "dense":
        W = rng.standard_normal((n, n))
        W *= 1.0 / math.sqrt(n)  # in place: at n = 16384 W alone is 2 GB
        if dense_mode == "blas":
            mul = np.matmul
        else:
            mul = kernels.blocked_matmul
        if scenario == "inference":
            cols = [np.ascontiguousarray(X[:, k : k + 1]) for k in range(b)]
            return lambda: [mul(W, x) for x in cols]
        if scenario == "forward_minibatch":
            return lambda: mul(W, X)
        Xt = np.ascontiguousarray(X.T)
        return lambda: mul(Z, Xt)
    if kind == "circulant":
        v = rng.standard_normal(n) / math.sqrt(n)
        if scenario == "inference":
            cols = [X[:, k : k + 1] for k in range(b)]

            def run():
                s = fft_rows(v[None, :])[0]
                return [_circ_forward(s, x) for x in cols]

            return run
        if scenario == "forward_minibatch":
            return lambda: _circ_forward(fft_rows(v[None, :])[0], X)
        return lambda: _circ_gradient(X, Z)
    if kind == "toeplitz_like":
        T = ToeplitzLikeTransform.random(n, r, rng)
        if scenario == "inference":
            cols = [X[:, k] for k in range(b)]

            def run():
                T.cache_spectra()
                out = [fast_multiply(T, x) for x in cols]
                T.invalidate()
                return out

            return run
        if scenario == "forward_minibatch":
            return lambda: fast_multiply(T, X)
        return lambda: fast_gradients(T, X, Z)
    raise ValueError(f"unknown kind {kind!r}")


def time_scenario(scenario, kind, n, r, b, trials=15, warmup=3, seed=0, dense_mode="blocked"):
    """Time one configuration; ``r`` is ignored for dense and reported as 0 for dense/circulant."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    if trials < 5 or warmup < 1:
        raise ValueError("need trials >= 5 and warmup >= 1")
    if dense_mode not in DENSE_MODES:
        raise ValueError(f"dense_mode must be one of {DENSE_MODES}")
    run = _make_workload(scenario, kind, n, r, b, seed, dense_mode)
    limits = _dense_limits(dense_mode) if kind == "dense" else contextlib.nullcontext()
    with limits:
        for _ in range(warmup):
            run()
        with audit.track() as tally:
            run()
        samples = []
        for _ in range(trials):
            t0 = time.perf_counter_ns()
            run()
            samples.append(time.perf_counter_ns() - t0)
    p10, med, p90 = np.percentile(samples, [10, 50, 90])
    return BenchRecord(
        scenario, kind, n, r if kind == "toeplitz_like" else 0, b,
        float(med), float(p10), float(p90), tally.count,
        1.0 if kind == "dense" else float("nan"),
    )


@dataclass
class SweepConfig:
    n_values: list
    r_values: list = field(default_factory=lambda: [1])
    b_values: list = field(default_factory=lambda: [1])
    scenarios: list = field(default_factory=lambda: list(SCENARIOS))
    kinds: list = field(default_factory=lambda: list(KINDS))
    trials: int = 15
    warmup: int = 3
    seed: int = 0
    dense_mode: str = "blocked"

    def __post_init__(self):
        if list(self.n_values) != sorted(self.n_values) or min(self.n_values) < 64:
            raise ValueError("n values must be ascending and each >= 64")
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise ValueError(f"unknown scenario {s!r}")
        for k in self.kinds:
            if k not in KINDS:
                raise ValueError(f"unknown kind {k!r}")


def _fill_speedups(records):
    dense = {(x.scenario, x.n, x.b): x.median_ns for x in records if x.kind == "dense"}
    for rec in records:
        base = dense.get((rec.scenario, rec.n, rec.b))
        rec.speedup_vs_dense = base / rec.median_ns if base is not None else float("nan")
    return records


def scaling_sweep(config, progress=None):
    """Full cross product scenarios x kinds x n x r x b (one record per point).

    Dense and circulant records do not depend on ``r`` but are still emitted
    once per ``r`` value so the row count equals the cross-product size;
    they are timed once per ``(scenario, n, b)`` and reused.
    """
    records = []
    memo = {}
    for scenario, kind, n, r, b in itertools.product(
        config.scenarios, config.kinds, config.n_values, config.r_values, config.b_values
    ):
        key = (scenario, kind, n, r if kind == "toeplitz_like" else None, b)
        if key not in memo:
            memo[key] = time_scenario(
                scenario, kind, n, r, b, config.trials, config.warmup, config.seed, config.dense_mode
            )
            if progress is not None:
                progress(memo[key])
        records.append(dataclasses.replace(memo[key]))
    return _fill_speedups(records)


def machine_metadata(dense_mode="blocked"):
    cpu = platform.processor() or "unknown"
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {
        "cpu_model": cpu,
        "cpu_count": os.cpu_count(),
        "threads": _threads(),
        "dense_mode": dense_mode,
        "dense_threads": 1 if dense_mode == "blocked" else _threads(),
        "kernel_backend": kernels.backend(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "clock": "time.perf_counter_ns",
    }


def write_csv(path, records, meta=None):
    """Write records as CSV; ``meta`` goes to a ``<path>.meta.json`` sidecar."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow(rec.row())
    if meta is not None:
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


def read_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(BenchRecord(
                row["scenario"], row["kind"], int(row["n"]), int(row["r"]), int(row["b"]),
                float(row["median_ns"]), float(row["p10_ns"]), float(row["p90_ns"]),
                int(row["fft_count"]), float(row["speedup_vs_dense"]),
            ))
    return out


def fit_loglog_slope(ns, times):
    """Least-squares slope of ``log(time)`` against ``log(n)``."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(times, dtype=float))
    if x.size < 2:
        raise ValueError("need at least two points")
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


@dataclass
class BudgetAudit:
    forward_count: int
    gradient_count: int
    expected_forward: int
    expected_gradient: int
    passed: bool


def fft_budget_audit(n, r, b, seed=0):
    """Count FFTs of one forward product and one gradient, both with fresh spectra."""
    rng = np.random.default_rng([seed, n, r, b])
    T = ToeplitzLikeTransform.random(n, r, rng)
    X = rng.standard_normal((n, b))
    Z = rng.standard_normal((n, b))
    T.invalidate()
    with audit.track() as fwd:
        fast_multiply(T, X)
    T.invalidate()
    with audit.track() as grad:
        fast_gradients(T, X, Z)
    ef = 2 * (r * b + b + r)
    eg = 4 * b * r + 4 * r + 2 * b
    return BudgetAudit(fwd.count, grad.count, ef, eg, fwd.count == ef and grad.count == eg)


def compare_backends(n_values, r=2, b=1, trials=15, warmup=3, seed=0):
    """Median forward and gradient times for each available kernel backend.

    Returns a list of dicts with keys ``backend, scenario, n, r, b, median_ns``.
    """
    backends = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
    out = []
    for name in backends:
        with kernels.use_backend(name):
            for n in n_values:
                for scenario in ("forward_minibatch", "gradient_minibatch"):
                    rec = time_scenario(scenario, "toeplitz_like", n, r, b, trials, warmup, seed)
                    out.append({
                        "backend": name, "scenario": scenario, "n": n, "r": r, "b": b,
                        "median_ns": rec.median_ns,
                    })
    return out
