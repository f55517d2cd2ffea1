"""Sylvester and Stein displacement operators on dense matrices.

This module is the slow, dense reference: it applies operators by explicit
products, measures displacement rank by SVD, and rebuilds matrices from
their low-displacement generators. The fast transforms in
:mod:`ldr.toeplitz_like` are checked against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ldr.circulant import dense_f_circulant, shift_scale
from ldr.exceptions import (
    CauchyPoleCollision,
    DimensionMismatch,
    InvalidOperatorPowers,
    SingularDisplacement,
)

DEFAULT_REL_TOL = 1e-8
# leading factor of the circulant x skew-circulant reconstruction, 1 / (1 - ab)
# with a = 1, b = -1; module-level so fault-injection tests can perturb it
RECONSTRUCT_SCALE = 0.5


# ---------------------------------------------------------------------------
# operator matrices


@dataclass(frozen=True)
class UnitCirculant:
    """``Z_f``: the downward shift that wraps the last entry to the top, scaled by f."""

    f: float

    def apply(self, x):
        return shift_scale(self.f, x)

    def dense(self, n):
        out = np.zeros((n, n))
        out[np.arange(1, n), np.arange(n - 1)] = 1.0
        out[0, n - 1] += self.f
        return out

    @property
    def T(self):
        return UnitCirculantTranspose(self.f)


@dataclass(frozen=True)
class UnitCirculantTranspose:
    """``Z_f^T``: shift up, the first entry wraps to the bottom scaled by f."""

    f: float

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[:-1] = x[1:]
        out[-1] = self.f * x[0]
        return out

    def dense(self, n):
        return UnitCirculant(self.f).dense(n).T

    @property
    def T(self):
        return UnitCirculant(self.f)


@dataclass(frozen=True, eq=False)
class Diagonal:
    d: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.ndim != 1:
            raise ValueError("diagonal must be a vector")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return self.d * x if x.ndim == 1 else self.d[:, None] * x

    def dense(self, n):
        if self.d.size != n:
            raise DimensionMismatch(f"diagonal of length {self.d.size} used at size {n}")
        return np.diag(self.d)

    @property
    def T(self):
        return self


@dataclass(frozen=True)
class SymmetrizedShift:
    """``Z_0 + Z_0^T``, the operator pair used for Toeplitz-plus-Hankel matrices."""

    def apply(self, x):
        return UnitCirculant(0.0).apply(x) + UnitCirculantTranspose(0.0).apply(x)

    def dense(self, n):
        z = UnitCirculant(0.0).dense(n)
        return z + z.T

    @property
    def T(self):
        return self


def densify(spec, n):
    return spec.dense(n)


def _square(M):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    return M


def apply_sylvester(A, B, M):
    """``A M - M B``."""
    M = _square(M)
    n = M.shape[0]
    return densify(A, n) @ M - M @ densify(B, n)


def apply_stein(A, B, M):
    """``M - A M B``."""
    M = _square(M)
    n = M.shape[0]
    return M - densify(A, n) @ M @ densify(B, n)


def numeric_rank(M, rel_tol=DEFAULT_REL_TOL):
    """Count singular values above ``rel_tol`` times the largest one."""
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def displacement_rank(M, rel_tol=DEFAULT_REL_TOL):
    """Numeric rank of ``M`` under the Toeplitz-like operator ``(Z_1, Z_-1)``."""
    return numeric_rank(apply_sylvester(UnitCirculant(1.0), UnitCirculant(-1.0), M), rel_tol)


def krylov_matrix(A, v):
    """``[v, Av, ..., A^{n-1} v]`` by repeated application of ``A``."""
    v = np.asarray(v, dtype=float)
    n = v.size
    out = np.empty((n, n))
    col = v
    for k in range(n):
        out[:, k] = col
        if k + 1 < n:
            col = A.apply(col)
    return out


# ---------------------------------------------------------------------------
# generators and reconstruction


@dataclass(frozen=True, eq=False)
class GeneratorPair:
    """Low-displacement generators ``G, H`` (n x r each) with ``L[M] = G H^T``.

    ``r`` may be 0 for the zero matrix.
    """

    G: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        H = np.array(self.H, dtype=float)
        if G.ndim == 1:
            G = G[:, None]
        if H.ndim == 1:
            H = H[:, None]
        if G.shape != H.shape or G.ndim != 2:
            raise DimensionMismatch(f"G {G.shape} and H {H.shape} must share an n x r shape")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "H", H)

    @property
    def n(self):
        return self.G.shape[0]

    @property
    def r(self):
        return self.G.shape[1]


def _matrix_power_check(spec, scalar, n, name):
    P = np.eye(n)
    for _ in range(n):
        P = spec.apply(P)
    if not np.allclose(P, scalar * np.eye(n), rtol=0.0, atol=1e-10 * max(1.0, abs(scalar))):
        raise InvalidOperatorPowers(f"{name}^n != {scalar} I for the supplied operator")


def stein_reconstruct(A, a, B, b, gen):
    """Rebuild ``M`` from ``M - A M B = G H^T`` when ``A^n = aI`` and ``B^n = bI``.

    ``M = 1/(1 - ab) * sum_j krylov(A, g_j) krylov(B^T, h_j)^T``.
    """
    if abs(1.0 - a * b) < 1e-12:
        raise SingularDisplacement(f"1 - ab = {1.0 - a * b!r} is zero")
    n = gen.n
    if n <= 32:
        _matrix_power_check(A, a, n, "A")
        _matrix_power_check(B, b, n, "B")
    Bt = B.T
    M = np.zeros((n, n))
    for j in range(gen.r):
        M += krylov_matrix(A, gen.G[:, j]) @ krylov_matrix(Bt, gen.H[:, j]).T
    return M / (1.0 - a * b)


def toeplitz_like_reconstruct(gen):
    """Rebuild ``M`` from ``Z_1 M - M Z_-1 = G H^T`` as ``1/2 sum Z_1(g_j) Z_-1(J h_j)``."""
    n = gen.n
    M = np.zeros((n, n))
    for j in range(gen.r):
        M += dense_f_circulant(1.0, gen.G[:, j]) @ dense_f_circulant(-1.0, gen.H[::-1, j])
    return RECONSTRUCT_SCALE * M


def sylvester_to_stein(gen):
    """Generators of the same matrix under the Stein operator ``(Z_1, Z_-1^T)``.

    From ``Z_1 M - M Z_-1 = G H^T``, right-multiplying by ``Z_-1^{-1} = Z_-1^T``
    gives ``M - Z_1 M Z_-1^T = -G (Z_-1 H)^T``. With ``A = Z_1`` (a = 1) and
    ``B = Z_-1^T`` (b = -1) the Krylov factors of :func:`stein_reconstruct`
    become the circulant ``Z_1(g)`` and skew-circulant ``Z_-1(h)``.
    """
    return GeneratorPair(gen.G.copy(), -shift_scale(-1.0, gen.H))


TOEPLITZ_STEIN_OPERATORS = (UnitCirculant(1.0), 1.0, UnitCirculantTranspose(-1.0), -1.0)


def extract_generators(M, rel_tol=DEFAULT_REL_TOL):
    """Factor the ``(Z_1, Z_-1)`` displacement of ``M`` by a truncated SVD.

    The rank is the numeric rank at ``rel_tol``; singular values are split
    evenly, ``G = U sqrt(S)`` and ``H = V sqrt(S)``.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    M = _square(M)
    D = apply_sylvester(UnitCirculant(1.0), UnitCirculant(-1.0), M)
    U, s, Vt = np.linalg.svd(D)
    r = 0 if s[0] == 0.0 else int(np.count_nonzero(s > rel_tol * s[0]))
    root = np.sqrt(s[:r])
    return GeneratorPair(U[:, :r] * root, Vt[:r].T * root)


# ---------------------------------------------------------------------------
# classical structured families


@dataclass(frozen=True, eq=False)
class Toeplitz:
    """Constant diagonals; ``t_col`` is the first column, ``t_row`` the first row."""

    t_col: np.ndarray
    t_row: np.ndarray


@dataclass(frozen=True, eq=False)
class Hankel:
    """Constant anti-diagonals; ``first_col`` and ``last_row`` share their corner entry."""

    first_col: np.ndarray
    last_row: np.ndarray


@dataclass(frozen=True, eq=False)
class Vandermonde:
    v: np.ndarray


@dataclass(frozen=True, eq=False)
class Cauchy:
    s: np.ndarray
    t: np.ndarray


def densify_family(fam):
    if isinstance(fam, Toeplitz):
        c, r = np.asarray(fam.t_col, float), np.asarray(fam.t_row, float)
        if c.shape != r.shape or c[0] != r[0]:
            raise ValueError("t_col and t_row must have equal length and share t_col[0]")
        return scipy.linalg.toeplitz(c, r)
    if isinstance(fam, Hankel):
        c, r = np.asarray(fam.first_col, float), np.asarray(fam.last_row, float)
        if c.shape != r.shape or c[-1] != r[0]:
            raise ValueError("first_col and last_row must have equal length and share a corner")
        return scipy.linalg.hankel(c, r)
    if isinstance(fam, Vandermonde):
        v = np.asarray(fam.v, float)
        return np.vander(v, increasing=True)
    if isinstance(fam, Cauchy):
        s, t = np.asarray(fam.s, float), np.asarray(fam.t, float)
        if s.shape != t.shape:
            raise DimensionMismatch("s and t must have equal length")
        diff = s[:, None] - t[None, :]
        if np.any(diff == 0.0):
            raise CauchyPoleCollision("some s_i equals some t_j")
        return 1.0 / diff
    raise TypeError(f"unknown structured family {type(fam).__name__}")
