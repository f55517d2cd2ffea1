"""Hot inner loops, each in a numba and a pure-numpy flavour.

The numba path is used when numba imports and the environment variable
``LDR_NUMBA`` is not set to ``0``. Both paths compute identical results
(up to floating point summation order) and are exercised by the test suite;
:mod:`ldr.bench` can time them against each other.

Spectral arrays use a ``(terms, batch, n)`` layout so that every length-n
transform runs over a contiguous last axis.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_FLAG = os.environ.get("LDR_NUMBA", "1").strip().lower()
_backend = "numba" if HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off") else "numpy"

DENSE_BLOCK = 64


def backend():
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    """Temporarily switch the kernel backend."""
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


# ---------------------------------------------------------------------------
# numpy reference implementations


def _expand_np(spec, xt):
    # spec (r, n), xt (b, n) -> (r, b, n)
    return spec[:, None, :] * xt[None, :, :]


def _contract_np(spec, v):
    # spec (r, n), v (r, b, n) -> (b, n)
    return np.einsum("rn,rbn->bn", spec, v)


def _conj_reduce_np(a, z):
    # a (r, b, n), z (b, n) -> (r, n); sum over the batch of conj(a) * z
    return np.einsum("rbn,bn->rn", np.conj(a), z)


def _scale_last_np(a, s):
    a *= s
    return a


def _blocked_matmul_np(a, x, block):
    m, k = a.shape
    out = np.zeros((m, x.shape[1]))
    for i0 in range(0, m, block):
        i1 = min(i0 + block, m)
        for k0 in range(0, k, block):
            k1 = min(k0 + block, k)
            out[i0:i1] += a[i0:i1, k0:k1] @ x[k0:k1]
    return out


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def _expand_nb(spec, xt):
        r, n = spec.shape
        b = xt.shape[0]
        out = np.empty((r, b, n), dtype=np.complex128)
        for i in range(r):
            for k in range(b):
                for t in range(n):
                    out[i, k, t] = spec[i, t] * xt[k, t]
        return out

    @njit(cache=True)
    def _contract_nb(spec, v):
        r, n = spec.shape
        b = v.shape[1]
        out = np.zeros((b, n), dtype=np.complex128)
        for i in range(r):
            for k in range(b):
                for t in range(n):
                    out[k, t] += spec[i, t] * v[i, k, t]
        return out

    @njit(cache=True)
    def _conj_reduce_nb(a, z):
        r, b, n = a.shape
        out = np.zeros((r, n), dtype=np.complex128)
        for i in range(r):
            for k in range(b):
                for t in range(n):
                    out[i, t] += np.conj(a[i, k, t]) * z[k, t]
        return out

    @njit(cache=True)
    def _scale_last_nb(a, s):
        flat = a.reshape(-1, s.shape[0])
        for row in range(flat.shape[0]):
            for t in range(s.shape[0]):
                flat[row, t] *= s[t]
        return a

    @njit(cache=True)
    def _blocked_matmul_nb(a, x, block):
        m, k = a.shape
        b = x.shape[1]
        out = np.zeros((m, b))
        for i0 in range(0, m, block):
            i1 = min(i0 + block, m)
            for k0 in range(0, k, block):
                k1 = min(k0 + block, k)
                for i in range(i0, i1):
                    for kk in range(k0, k1):
                        aik = a[i, kk]
                        for j in range(b):
                            out[i, j] += aik * x[kk, j]
        return out


# ---------------------------------------------------------------------------
# dispatch


def _c128(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


def expand(spec, xt):
    """Outer Hadamard products: ``out[i, k] = spec[i] * xt[k]`` along n."""
    spec, xt = _c128(spec), _c128(xt)
    if _backend == "numba":
        return _expand_nb(spec, xt)
    return _expand_np(spec, xt)


def contract(spec, v):
    """``out[k] = sum_i spec[i] * v[i, k]`` along n."""
    spec, v = _c128(spec), _c128(v)
    if _backend == "numba":
        return _contract_nb(spec, v)
    return _contract_np(spec, v)


def conj_reduce(a, z):
    """``out[i] = sum_k conj(a[i, k]) * z[k]`` along n."""
    a, z = _c128(a), _c128(z)
    if _backend == "numba":
        return _conj_reduce_nb(a, z)
    return _conj_reduce_np(a, z)


def scale_last(a, s):
    """Multiply ``a`` in place by ``s`` broadcast along the last axis."""
    if not (a.flags.c_contiguous and a.dtype == np.complex128):
        raise ValueError("scale_last needs a C-contiguous complex128 array")
    s = _c128(s)
    if _backend == "numba":
        return _scale_last_nb(a, s)
    return _scale_last_np(a, s)


def blocked_matmul(a, x, block=DENSE_BLOCK):
    """Straightforward cache-blocked dense product ``a @ x`` (single thread)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 1:
        return blocked_matmul(a, x[:, None], block)[:, 0]
    if _backend == "numba":
        return _blocked_matmul_nb(a, x, block)
    return _blocked_matmul_np(a, x, block)
