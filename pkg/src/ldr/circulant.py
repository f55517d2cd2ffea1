"""f-unit-circulant shifts, f-circulant matrices and their FFT matvec kernels.

``Z_f(v)`` is the matrix whose k-th column is ``Z_f^k v``: ``f = 1`` gives a
circulant, ``f = -1`` a skew-circulant. The four kernels multiply by
``Z_1(v)``, ``Z_1(v)^T``, ``Z_-1(v)`` and ``Z_-1(v)^T`` with three
length-n FFTs per input column (two when the parameter spectrum is supplied).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ldr.exceptions import DimensionMismatch, ImaginaryResidueExceeded
from ldr.fft_core import eta_vector, fft, ifft

RESIDUE_TOL = 1e-10


def shift_scale(f, x):
    """Return ``Z_f @ x``: shift entries down one place, wrap the last scaled by f.

    Works column-wise when ``x`` is an ``n x b`` matrix.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    out[1:] = x[:-1]
    out[0] = f * x[-1]
    return out


def dense_f_circulant(f, v):
    """Dense ``Z_f(v)``, built column by column as the Krylov matrix of ``Z_f``."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("v must be a non-empty vector")
    n = v.size
    out = np.empty((n, n))
    col = v
    for k in range(n):
        out[:, k] = col
        col = shift_scale(f, col)
    return out


@dataclass(frozen=True, eq=False)
class FCirculant:
    """The matrix ``Z_f(v)`` held by its first column."""

    f: float
    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("v must be a non-empty vector")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def n(self):
        return self.v.size

    def dense(self):
        return dense_f_circulant(self.f, self.v)

    def matvec(self, x):
        if self.f == 1:
            return circ_matvec(self.v, x)
        if self.f == -1:
            return skew_matvec(self.v, x)
        if self.f == 0:
            return self.dense() @ np.asarray(x, dtype=float)
        raise ValueError("fast matvec supports f in {1, -1, 0}")

    def rmatvec(self, x):
        if self.f == 1:
            return circ_transpose_matvec(self.v, x)
        if self.f == -1:
            return skew_transpose_matvec(self.v, x)
        if self.f == 0:
            return self.dense().T @ np.asarray(x, dtype=float)
        raise ValueError("fast matvec supports f in {1, -1, 0}")


def circ_spectrum(v):
    """``fft(v)``, the shareable parameter spectrum for the f = 1 kernels."""
    return fft(np.asarray(v, dtype=float))


def skew_spectrum(v):
    """``fft(eta * v)``, the shareable parameter spectrum for the f = -1 kernels."""
    v = np.asarray(v, dtype=float)
    return fft(eta_vector(v.shape[0]) * v)


def take_real(y, bound):
    """Drop the imaginary part of ``y`` after checking it is pure roundoff.

    ``bound`` is an a-priori bound on ``max |y|``; the residue must stay
    below ``RESIDUE_TOL * max(1, bound)``.
    """
    scale = max(1.0, float(bound))
    resid = float(np.max(np.abs(y.imag), initial=0.0))
    if resid > RESIDUE_TOL * scale:
        raise ImaginaryResidueExceeded(
            f"imaginary residue {resid:.3e} exceeds {RESIDUE_TOL * scale:.3e}"
        )
    return np.ascontiguousarray(y.real)


def _real(y, v_l1, x):
    # |Z_f(v) x|_inf <= |v|_1 |x|_inf for |f| <= 1
    return take_real(y, float(np.max(np.abs(x), initial=0.0)) * v_l1)


def _prepare(v, x, spectrum, make_spectrum):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if spectrum is None:
        if v is None:
            raise ValueError("need v or its spectrum")
        v = np.asarray(v, dtype=float)
        if v.shape != (n,):
            raise DimensionMismatch(f"v has shape {v.shape}, x has {n} rows")
        spectrum = make_spectrum(v)
        v_l1 = float(np.abs(v).sum())
    else:
        spectrum = np.asarray(spectrum, dtype=np.complex128)
        if spectrum.shape != (n,):
            raise DimensionMismatch(f"spectrum has shape {spectrum.shape}, x has {n} rows")
        # ||v||_1 <= sqrt(n) ||v||_2 = ||spectrum||_2
        v_l1 = float(np.linalg.norm(spectrum)) if v is None else float(np.abs(v).sum())
    if x.ndim == 2:
        spectrum = spectrum[:, None]
    return x, spectrum, v_l1


def circ_matvec(v, x, spectrum=None):
    """``Z_1(v) @ x`` via ``ifft(fft(v) * fft(x))``."""
    x, s, v_l1 = _prepare(v, x, spectrum, circ_spectrum)
    return _real(ifft(s * fft(x)), v_l1, x)


def circ_transpose_matvec(v, x, spectrum=None):
    """``Z_1(v).T @ x`` via ``ifft(conj(fft(v)) * fft(x))``."""
    x, s, v_l1 = _prepare(v, x, spectrum, circ_spectrum)
    return _real(ifft(np.conj(s) * fft(x)), v_l1, x)


def _eta_for(x):
    eta = eta_vector(x.shape[0])
    return eta[:, None] if x.ndim == 2 else eta


def skew_matvec(v, x, spectrum=None):
    """``Z_-1(v) @ x`` via ``conj(eta) * ifft(fft(eta * v) * fft(eta * x))``."""
    x, s, v_l1 = _prepare(v, x, spectrum, skew_spectrum)
    eta = _eta_for(x)
    return _real(np.conj(eta) * ifft(s * fft(eta * x)), v_l1, x)


def skew_transpose_matvec(v, x, spectrum=None):
    """``Z_-1(v).T @ x`` via ``conj(eta) * ifft(conj(fft(eta * v)) * fft(eta * x))``.

    The conjugate is taken of the spectrum, not of ``eta * v`` before the
    transform; the latter is not the transpose.
    """
    x, s, v_l1 = _prepare(v, x, spectrum, skew_spectrum)
    eta = _eta_for(x)
    return _real(np.conj(eta) * ifft(np.conj(s) * fft(eta * x)), v_l1, x)
