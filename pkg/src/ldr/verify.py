"""Property suites over the displacement algebra, used by ``ldr verify``.

Each suite returns a list of :class:`PropertyResult`. Equality checks compare
a relative error against a tolerance that can be overridden; displacement
ranks are measured with :func:`ldr.displacement.numeric_rank`.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from ldr import displacement as dsp
from ldr.circulant import dense_f_circulant
from ldr.displacement import (
    Cauchy,
    Diagonal,
    GeneratorPair,
    Hankel,
    Toeplitz,
    UnitCirculant,
    UnitCirculantTranspose,
    Vandermonde,
    apply_sylvester,
    densify_family,
    extract_generators,
    numeric_rank,
    stein_reconstruct,
    sylvester_to_stein,
    toeplitz_like_reconstruct,
)
from ldr.toeplitz_like import from_displacement_generators, fast_multiply, to_dense

DEFAULT_TOLERANCE = 1e-9
RANK_SIZES = (4, 8, 16)
DRAWS = 20


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str


def _rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


# ---------------------------------------------------------------------------
# fixtures


def random_toeplitz(n, rng):
    c = rng.standard_normal(n)
    r = rng.standard_normal(n)
    r[0] = c[0]
    return densify_family(Toeplitz(c, r))


def random_hankel(n, rng):
    c = rng.standard_normal(n)
    r = rng.standard_normal(n)
    r[0] = c[-1]
    return densify_family(Hankel(c, r))


def well_conditioned_toeplitz(n, rng):
    """Random Toeplitz plus ``n I``: diagonally dominant, hence invertible."""
    return random_toeplitz(n, rng) + n * np.eye(n)


def random_vandermonde_nodes(n, rng):
    return rng.uniform(-1.0, 1.0, n)


def interlaced_cauchy_nodes(n, rng):
    """Nodes ``s ~ k``, ``t ~ k + 1/2`` with small jitter: poles stay apart."""
    k = np.arange(n, dtype=float)
    s = k + rng.uniform(-0.2, 0.2, n)
    t = k + 0.5 + rng.uniform(-0.2, 0.2, n)
    return s, t


Z1 = UnitCirculant(1.0)
Zm1 = UnitCirculant(-1.0)
Z0 = UnitCirculant(0.0)
Z0T = UnitCirculantTranspose(0.0)


class _Sum:
    """``Z_0 + Z_0^T`` as an operator spec."""

    def apply(self, x):
        return Z0.apply(x) + Z0T.apply(x)

    def dense(self, n):
        return Z0.dense(n) + Z0T.dense(n)

    @property
    def T(self):
        return self


def figure1_cases(n, rng):
    """``(label, A, B, M, bound)`` for one random draw of every row of the rank table."""
    T = random_toeplitz(n, rng)
    Tw = well_conditioned_toeplitz(n, rng)
    H = random_hankel(n, rng)
    v = random_vandermonde_nodes(n, rng)
    V = densify_family(Vandermonde(v))
    s, t = interlaced_cauchy_nodes(n, rng)
    C = densify_family(Cauchy(s, t))
    return [
        ("Toeplitz T", Z1, Zm1, T, 2),
        ("Toeplitz inverse", Z1, Zm1, np.linalg.inv(Tw), 2),
        ("Hankel H", Z1, Z0T, H, 2),
        ("T + H", _Sum(), _Sum(), random_toeplitz(n, rng) + random_hankel(n, rng), 4),
        ("Vandermonde V", Diagonal(v), Z0, V, 1),
        ("Vandermonde transpose", Z0T, Diagonal(v), V.T, 1),
        ("Cauchy C", Diagonal(s), Diagonal(t), C, 1),
        ("Cauchy inverse", Diagonal(t), Diagonal(s), np.linalg.inv(C), 1),
    ]


# ---------------------------------------------------------------------------
# suites


def figure1_suite(seed=0, sizes=RANK_SIZES, draws=DRAWS, rel_tol=dsp.DEFAULT_REL_TOL):
    """Max measured displacement rank per row against the row's bound."""
    worst = {}
    bounds = {}
    rng = np.random.default_rng(seed)
    for n in sizes:
        for _ in range(draws):
            for label, A, B, M, bound in figure1_cases(n, rng):
                rk = numeric_rank(apply_sylvester(A, B, M), rel_tol)
                worst[label] = max(worst.get(label, 0), rk)
                bounds[label] = bound
    return [
        PropertyResult(f"rank table: {label}", worst[label] <= bounds[label],
                       f"max rank {worst[label]} (bound {bounds[label]})")
        for label in worst
    ]


def operator_power_suite(tolerance=DEFAULT_TOLERANCE):
    worst = 0.0
    for n in range(2, 17):
        worst = max(worst, _rel_err(np.linalg.matrix_power(Z1.dense(n), n), np.eye(n)))
        worst = max(worst, _rel_err(np.linalg.matrix_power(Zm1.dense(n), n), -np.eye(n)))
    return [PropertyResult("operator powers Z1^n = I, Z-1^n = -I", worst <= tolerance, f"max err {worst:.2e}")]


def _random_gen(n, r, rng):
    return GeneratorPair(rng.standard_normal((n, r)), rng.standard_normal((n, r)))


def theorem2_roundtrip_suite(seed=0, tolerance=DEFAULT_TOLERANCE, trials=20):
    """Sylvester displacement of the reconstruction returns ``G H^T``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 13))
        gen = _random_gen(n, int(rng.integers(1, n + 1)), rng)
        M = toeplitz_like_reconstruct(gen)
        worst = max(worst, _rel_err(apply_sylvester(Z1, Zm1, M), gen.G @ gen.H.T))
    return [PropertyResult("Theorem 2 round trip", worst <= tolerance, f"max rel err {worst:.2e}")]


def theorem1_consistency_suite(seed=0, tolerance=DEFAULT_TOLERANCE, trials=20):
    """Krylov (Stein) and circulant x skew-circulant reconstructions agree."""
    rng = np.random.default_rng(seed + 1)
    A, a, B, b = dsp.TOEPLITZ_STEIN_OPERATORS
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 13))
        gen = _random_gen(n, int(rng.integers(1, n + 1)), rng)
        M2 = toeplitz_like_reconstruct(gen)
        M1 = stein_reconstruct(A, a, B, b, sylvester_to_stein(gen))
        worst = max(worst, _rel_err(M1, M2))
    return [PropertyResult("Theorem 1 / Theorem 2 consistency", worst <= tolerance, f"max rel err {worst:.2e}")]


def extraction_suite(seed=0, tolerance=DEFAULT_TOLERANCE, trials=20):
    """Dense -> generators -> dense recovers the matrix (generators need not match)."""
    rng = np.random.default_rng(seed + 2)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 13))
        M = toeplitz_like_reconstruct(_random_gen(n, int(rng.integers(1, n + 1)), rng))
        worst = max(worst, _rel_err(toeplitz_like_reconstruct(extract_generators(M)), M))
    return [PropertyResult("generator extraction round trip", worst <= tolerance, f"max rel err {worst:.2e}")]


def richness_suite(seed=0, n=16, rel_tol=dsp.DEFAULT_REL_TOL, tolerance=DEFAULT_TOLERANCE):
    """Rank bounds for circulants, Toeplitz products and sums; full rank for dense."""
    rng = np.random.default_rng(seed + 3)
    out = []
    circ = dense_f_circulant(1.0, rng.standard_normal(n))
    rk = dsp.displacement_rank(circ, rel_tol)
    out.append(PropertyResult("richness: circulant", rk <= 1, f"rank {rk} (bound 1)"))
    for t in (1, 2, 3):
        P = np.eye(n)
        for _ in range(t):
            P = P @ random_toeplitz(n, rng)
        rk = dsp.displacement_rank(P, rel_tol)
        out.append(PropertyResult(f"richness: product of {t} Toeplitz", rk <= 2 * t, f"rank {rk} (bound {2 * t})"))
    S = rng.standard_normal() * random_toeplitz(n, rng) + rng.standard_normal() * random_toeplitz(n, rng)
    rk = dsp.displacement_rank(S, rel_tol)
    out.append(PropertyResult("richness: 2-term Toeplitz combination", rk <= 4, f"rank {rk} (bound 4)"))
    D = rng.standard_normal((8, 8))
    gen = extract_generators(D, rel_tol)
    err = _rel_err(toeplitz_like_reconstruct(gen), D)
    out.append(PropertyResult("richness: dense 8x8 is rank 8", gen.r == 8 and err <= tolerance,
                              f"rank {gen.r}, reconstruction err {err:.2e}"))
    return out


def fast_multiply_suite(seed=0, tolerance=DEFAULT_TOLERANCE):
    rng = np.random.default_rng(seed + 4)
    worst = 0.0
    for n in (4, 8, 12, 16):
        for r in (1, 2, 4):
            T = from_displacement_generators(_random_gen(n, r, rng))
            X = rng.standard_normal((n, 3))
            worst = max(worst, _rel_err(fast_multiply(T, X), to_dense(T) @ X))
    return [PropertyResult("fast multiply vs dense", worst <= tolerance, f"max rel err {worst:.2e}")]


@contextlib.contextmanager
def fault_injection(scale=0.5 * (1 + 1e-3)):
    """Temporarily replace the reconstruction's 1/2 factor (test hook)."""
    prev = dsp.RECONSTRUCT_SCALE
    dsp.RECONSTRUCT_SCALE = scale
    try:
        yield
    finally:
        dsp.RECONSTRUCT_SCALE = prev


def run_all(seed=0, tolerance=None, fault=False):
    tol = DEFAULT_TOLERANCE if tolerance is None else tolerance
    ctx = fault_injection() if fault else contextlib.nullcontext()
    with ctx:
        results = []
        results += figure1_suite(seed)
        results += operator_power_suite(tol)
        results += theorem2_roundtrip_suite(seed, tol)
        results += theorem1_consistency_suite(seed, tol)
        results += extraction_suite(seed, tol)
        results += richness_suite(seed, tolerance=tol)
        results += fast_multiply_suite(seed, tol)
    return results


def format_report(results):
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}" for r in results]
    failed = [r.name for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} properties passed")
    if failed:
        lines.append("failed: " + "; ".join(failed))
    return "\n".join(lines)
