"""Learnable Toeplitz-like transforms ``M(G, H) = sum_i Z_1(g_i) Z_-1(h_i)``.

The transform is parameterized directly by its generators ``G, H`` (both
``n x r``). Products with ``M`` and ``M^T`` and the gradients of
``<Z, M X>`` with respect to ``G`` and ``H`` run entirely in the Fourier
domain; parameter spectra, input spectra and the final inverse transform are
shared across the batch and across the ``r`` terms, so a forward product
costs ``2(rb + b + r)`` length-n FFTs and a gradient ``4br + 4r + 2b``.

Matrices passed in and out are ``n x b`` with one example per column.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ldr import kernels
from ldr.circulant import dense_f_circulant, skew_matvec, take_real
from ldr.displacement import GeneratorPair, Toeplitz, densify_family, extract_generators
from ldr.exceptions import DimensionMismatch, IncompatibleDimensions
from ldr.fft_core import eta_vector, fft_rows, ifft_rows


def init_scale(n, r, gain=np.sqrt(2.0)):
    """Generator entry std giving ``Var(M_ij) = gain**2 / n``.

    Each entry of ``M(G, H)`` sums ``r * n`` products of two generator
    entries, so its variance is ``r * n * sigma**4``.
    """
    return np.sqrt(gain) * (r * n * n) ** -0.25


class ToeplitzLikeTransform:
    """Square ``n x n`` Toeplitz-like matrix held by its generators.

    ``G`` and ``H`` are exposed read-only; change them through
    :meth:`set_generators` or :meth:`apply_update` so that cached spectra are
    dropped together with the write.
    """

    def __init__(self, G, H):
        G = np.array(G, dtype=np.float64)
        H = np.array(H, dtype=np.float64)
        if G.ndim == 1:
            G = G[:, None]
        if H.ndim == 1:
            H = H[:, None]
        if G.ndim != 2 or G.shape != H.shape:
            raise DimensionMismatch(f"G {G.shape} and H {H.shape} must share an n x r shape")
        n, r = G.shape
        # r > n is allowed: the sum is merely over-parameterized (rank stays <= n)
        if n < 1 or r < 1:
            raise DimensionMismatch(f"need n >= 1 and r >= 1, got n={n}, r={r}")
        self._G = G
        self._H = H
        self._spectra = None

    @classmethod
    def random(cls, n, r, rng=None, gain=np.sqrt(2.0)):
        rng = np.random.default_rng(rng)
        sigma = init_scale(n, r, gain)
        return cls(rng.normal(0.0, sigma, (n, r)), rng.normal(0.0, sigma, (n, r)))

    @property
    def n(self):
        return self._G.shape[0]

    @property
    def r(self):
        return self._G.shape[1]

    @property
    def G(self):
        v = self._G.view()
        v.flags.writeable = False
        return v

    @property
    def H(self):
        v = self._H.view()
        v.flags.writeable = False
        return v

    @property
    def parameter_count(self):
        return 2 * self.n * self.r

    def set_generators(self, G=None, H=None):
        if G is not None:
            G = np.array(G, dtype=np.float64).reshape(self._G.shape)
        if H is not None:
            H = np.array(H, dtype=np.float64).reshape(self._H.shape)
        self._spectra = None
        if G is not None:
            self._G = G
        if H is not None:
            self._H = H

    def apply_update(self, dG=None, dH=None, lr=1.0):
        """In-place ``G -= lr * dG``, ``H -= lr * dH``; invalidates spectra."""
        self._spectra = None
        if dG is not None:
            self._G -= lr * dG
        if dH is not None:
            self._H -= lr * dH

    # -- spectra -----------------------------------------------------------

    def compute_spectra(self):
        """Fresh ``(fft(G), fft(diag(eta) H))`` as ``r x n`` row stacks (2r FFTs)."""
        eta = eta_vector(self.n)
        return fft_rows(self._G.T), fft_rows(eta * self._H.T)

    def cache_spectra(self):
        self._spectra = self.compute_spectra()
        return self._spectra

    def invalidate(self):
        self._spectra = None

    @property
    def cached_spectra(self):
        """Cached ``(G~, H~)`` as ``n x r`` matrices, or ``None``."""
        if self._spectra is None:
            return None
        return self._spectra[0].T, self._spectra[1].T

    def spectra(self):
        """Cached spectra if present, otherwise freshly computed (and not stored)."""
        return self._spectra if self._spectra is not None else self.compute_spectra()

    def _gen_bound(self):
        # |M x|_inf <= sum_i |g_i|_1 |h_i|_1 |x|_inf
        return float(np.sum(np.abs(self._G).sum(0) * np.abs(self._H).sum(0)))

    # -- products ----------------------------------------------------------

    def dense(self):
        return to_dense(self)

    def __matmul__(self, X):
        return fast_multiply(self, X)

    # -- serialization -----------------------------------------------------

    def to_record(self):
        return {
            "n": self.n,
            "r": self.r,
            "G": self._G.ravel().tolist(),
            "H": self._H.ravel().tolist(),
        }

    @classmethod
    def from_record(cls, rec):
        n, r = int(rec["n"]), int(rec["r"])
        G = np.asarray(rec["G"], dtype=np.float64).reshape(n, r)
        H = np.asarray(rec["H"], dtype=np.float64).reshape(n, r)
        return cls(G, H)

    def __repr__(self):
        cached = "cached" if self._spectra is not None else "uncached"
        return f"ToeplitzLikeTransform(n={self.n}, r={self.r}, {cached})"


def save_transform(path, T, **extra):
    rec = T.to_record()
    rec.update(extra)
    with open(path, "w") as fh:
        json.dump(rec, fh)


def load_transform(path):
    with open(path) as fh:
        return ToeplitzLikeTransform.from_record(json.load(fh))


# ---------------------------------------------------------------------------
# dense oracle


def to_dense(T):
    """``sum_i Z_1(g_i) @ Z_-1(h_i)`` by dense products; the brute-force reference."""
    M = np.zeros((T.n, T.n))
    for i in range(T.r):
        M += dense_f_circulant(1.0, T.G[:, i]) @ dense_f_circulant(-1.0, T.H[:, i])
    return M


# ---------------------------------------------------------------------------
# fast products


def _as_columns(X, n, what="X"):
    X = np.asarray(X, dtype=np.float64)
    vector = X.ndim == 1
    if vector:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != n:
        raise DimensionMismatch(f"{what} must have {n} rows, got shape {X.shape}")
    return X, vector


def fast_multiply(T, X):
    """``M(G, H) @ X`` with ``2(rb + b + r)`` FFTs (``2(rb + b)`` if spectra are cached).

    ``X~ = fft(eta * X)``; per term ``U = conj(eta) * ifft(h~_i * X~)`` is
    ``Z_-1(h_i) X``, then ``g~_i * fft(U)`` is accumulated; a single inverse
    FFT of the sum gives ``Y``.
    """
    n = T.n
    X, vector = _as_columns(X, n)
    Gt, Ht = T.spectra()
    eta = eta_vector(n)
    Xt = fft_rows(eta * X.T)
    U = ifft_rows(kernels.expand(Ht, Xt))
    kernels.scale_last(U, np.conj(eta))
    Y = ifft_rows(kernels.contract(Gt, fft_rows(U)))
    bound = T._gen_bound() * float(np.max(np.abs(X), initial=0.0))
    out = take_real(Y, bound).T
    return out[:, 0] if vector else out


def transpose_multiply(T, D):
    """``M(G, H).T @ D`` with the same FFT budget as :func:`fast_multiply`.

    Uses ``M^T = sum_i Z_-1(h_i)^T Z_1(g_i)^T``: per term
    ``W = ifft(conj(g~_i) * fft(D))`` is ``Z_1(g_i)^T D``; the skew
    transpose ``conj(eta) * ifft(conj(h~_i) * fft(eta * W))`` shares its
    final inverse FFT across terms.
    """
    n = T.n
    D, vector = _as_columns(D, n, "D")
    Gt, Ht = T.spectra()
    eta = eta_vector(n)
    Dt = fft_rows(D.T)
    W = ifft_rows(kernels.expand(np.conj(Gt), Dt))
    kernels.scale_last(W, eta)
    Y = ifft_rows(kernels.contract(np.conj(Ht), fft_rows(W)))
    kernels.scale_last(Y, np.conj(eta))
    bound = T._gen_bound() * float(np.max(np.abs(D), initial=0.0))
    out = take_real(Y, bound).T
    return out[:, 0] if vector else out


# ---------------------------------------------------------------------------
# Jacobians and gradients


def jacobian_g(T, x, j):
    """Dense Jacobian of ``x -> M x`` with respect to ``g_j``: ``Z_1(Z_-1(h_j) x)``."""
    x = np.asarray(x, dtype=np.float64)
    return dense_f_circulant(1.0, skew_matvec(T.H[:, j], x))


def jacobian_h(T, x, j):
    """Dense Jacobian with respect to ``h_j``: ``Z_1(g_j) Z_-1(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return dense_f_circulant(1.0, T.G[:, j]) @ dense_f_circulant(-1.0, x)


@dataclass
class GradientPair:
    dG: np.ndarray
    dH: np.ndarray


def fast_gradients(T, X, Z):
    """Gradients of ``<Z, M(G, H) X>`` with respect to ``G`` and ``H``.

    Column j of ``dG`` is ``sum_k J_{g_j}(x_k)^T z_k`` and likewise for
    ``dH``. Costs ``4br + 4r + 2b`` FFTs with fresh spectra.
    """
    n = T.n
    X, _ = _as_columns(X, n)
    Z, _ = _as_columns(Z, n, "Z")
    if X.shape != Z.shape:
        raise DimensionMismatch(f"X {X.shape} and Z {Z.shape} differ")
    Gt, Ht = T.spectra()
    eta = eta_vector(n)
    Zt = fft_rows(Z.T)
    Xt = fft_rows(eta * X.T)

    # wrt g_j: ifft( sum_k conj(fft(Z_-1(h_j) x_k)) * z~_k )
    U = ifft_rows(kernels.expand(Ht, Xt))
    kernels.scale_last(U, np.conj(eta))
    dG = ifft_rows(kernels.conj_reduce(fft_rows(U), Zt))

    # wrt h_j: conj(eta) * ifft( sum_k conj(x~_k) * fft(eta * Z_1(g_j)^T z_k) )
    W = ifft_rows(kernels.expand(np.conj(Gt), Zt))
    kernels.scale_last(W, eta)
    S = np.conj(kernels.conj_reduce(fft_rows(W), Xt))
    dH = ifft_rows(S)
    kernels.scale_last(dH, np.conj(eta))

    xz = float(np.sum(np.abs(X).sum(0) * np.abs(Z).sum(0)))
    g1 = float(np.abs(T.G).sum(0).max())
    h1 = float(np.abs(T.H).sum(0).max())
    return GradientPair(take_real(dG, xz * h1).T.copy(), take_real(dH, xz * g1).T.copy())


# ---------------------------------------------------------------------------
# constructors


def from_displacement_generators(gen):
    """Eq.-6 form of the matrix with ``Z_1 M - M Z_-1 = G H^T``.

    ``M = 1/2 sum Z_1(g_j) Z_-1(J h_j)``; the ``1/2`` and the reversal are
    folded into ``H``.
    """
    if gen.r == 0:
        return ToeplitzLikeTransform(np.zeros((gen.n, 1)), np.zeros((gen.n, 1)))
    return ToeplitzLikeTransform(gen.G, 0.5 * gen.H[::-1])


def from_dense(M, rel_tol=1e-8):
    return from_displacement_generators(extract_generators(M, rel_tol))


def from_circulant(v):
    """Exact r = 1 transform equal to the circulant ``Z_1(v)`` (``h_1 = e_1``)."""
    v = np.asarray(v, dtype=np.float64)
    e1 = np.zeros_like(v)
    e1[0] = 1.0
    return ToeplitzLikeTransform(v[:, None], e1[:, None])


def from_toeplitz(t_col, t_row, rel_tol=1e-8):
    """Transform equal to the Toeplitz matrix with first column ``t_col`` and row ``t_row``."""
    M = densify_family(Toeplitz(np.asarray(t_col, float), np.asarray(t_row, float)))
    return from_dense(M, rel_tol)


def to_displacement_generators(T):
    """Inverse of :func:`from_displacement_generators`."""
    return GeneratorPair(T.G.copy(), 2.0 * T.H[::-1])


# ---------------------------------------------------------------------------
# rectangular transforms


class RectangularTransform:
    """``m x n`` map built from square ``n x n`` Toeplitz-like blocks.

    ``m < n`` keeps the first ``m`` outputs of one block; ``m > n`` (a
    multiple of ``n``) stacks ``m / n`` blocks; ``m == n`` is one block.
    """

    def __init__(self, m, n, inner):
        inner = list(inner)
        if m < 1 or n < 1:
            raise IncompatibleDimensions(f"dimensions must be positive, got m={m}, n={n}")
        if m > n and m % n:
            raise IncompatibleDimensions(f"m={m} is not a multiple of n={n}")
        want = m // n if m > n else 1
        if len(inner) != want:
            raise IncompatibleDimensions(f"m={m}, n={n} needs {want} inner transforms, got {len(inner)}")
        for T in inner:
            if T.n != n:
                raise IncompatibleDimensions(f"inner transform has n={T.n}, expected {n}")
        self.m = m
        self.n = n
        self.inner = inner

    @classmethod
    def random(cls, m, n, r, rng=None, gain=np.sqrt(2.0)):
        if m > n and m % n:
            raise IncompatibleDimensions(f"m={m} is not a multiple of n={n}")
        rng = np.random.default_rng(rng)
        k = m // n if m > n else 1
        return cls(m, n, [ToeplitzLikeTransform.random(n, r, rng, gain) for _ in range(k)])

    @property
    def parameter_count(self):
        return sum(T.parameter_count for T in self.inner)

    def dense(self):
        blocks = np.vstack([to_dense(T) for T in self.inner])
        return blocks[: self.m]

    def cache_spectra(self):
        for T in self.inner:
            T.cache_spectra()

    def invalidate(self):
        for T in self.inner:
            T.invalidate()


def rect_forward(R, X):
    if R.m > R.n and R.m % R.n:
        raise IncompatibleDimensions(f"m={R.m} is not a multiple of n={R.n}")
    if R.m <= R.n:
        return fast_multiply(R.inner[0], X)[: R.m]
    return np.vstack([fast_multiply(T, X) for T in R.inner])


def _split_rows(R, D):
    D = np.asarray(D, dtype=np.float64)
    if D.ndim == 1:
        D = D[:, None]
    if D.shape[0] != R.m:
        raise DimensionMismatch(f"D must have {R.m} rows, got {D.shape[0]}")
    if R.m < R.n:
        padded = np.zeros((R.n, D.shape[1]))
        padded[: R.m] = D
        return [padded]
    return [D[k * R.n : (k + 1) * R.n] for k in range(len(R.inner))]


def rect_gradients(R, X, D):
    """Per-block gradients of ``<D, R X>``; ``D`` has ``m`` rows."""
    return [fast_gradients(T, X, Dk) for T, Dk in zip(R.inner, _split_rows(R, D))]


def rect_transpose(R, D):
    """``R^T D``: gradient of ``<D, R X>`` with respect to ``X``."""
    parts = [transpose_multiply(T, Dk) for T, Dk in zip(R.inner, _split_rows(R, D))]
    return parts[0] if len(parts) == 1 else np.sum(parts, axis=0)
