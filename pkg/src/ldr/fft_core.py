"""Length-n complex FFTs with an exact transform counter.

Conventions: ``fft`` computes ``Omega @ x`` with ``omega_n = exp(-2 pi i / n)``
and no scaling; ``ifft`` carries the ``1/n``. Inputs are vectors or ``n x b``
matrices whose columns are transformed independently. One audited "FFT" is
one length-n transform of one column.
"""

from __future__ import annotations

import contextlib
import os
import threading

import numpy as np
import scipy.fft


def _workers():
    try:
        return max(1, int(os.environ.get("LDR_THREADS", "1")))
    except ValueError:
        return 1


class FftAudit:
    """Thread-safe tally of length-n transforms executed since the last reset."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    @property
    def count(self):
        return self._count

    def add(self, k):
        with self._lock:
            self._count += int(k)

    def reset(self):
        with self._lock:
            self._count = 0

    @contextlib.contextmanager
    def track(self):
        """Yield a ``Tally`` whose ``count`` is the number of FFTs run inside the block."""
        tally = Tally(self._count)
        try:
            yield tally
        finally:
            tally.count = self._count - tally.start


class Tally:
    def __init__(self, start):
        self.start = start
        self.count = 0


audit = FftAudit()


def _columns(a):
    return 1 if a.ndim == 1 else int(np.prod(a.shape[1:]))


def fft(x):
    """DFT of a vector, or of each column of an ``n x b`` matrix."""
    x = np.asarray(x, dtype=np.complex128)
    audit.add(_columns(x))
    return scipy.fft.fft(x, axis=0, workers=_workers())


def ifft(y):
    """Inverse DFT (with the ``1/n`` factor) of a vector or of each column."""
    y = np.asarray(y, dtype=np.complex128)
    audit.add(_columns(y))
    return scipy.fft.ifft(y, axis=0, workers=_workers())


def batched_fft(X, direction="forward"):
    """Column-wise forward or inverse transform of an ``n x b`` matrix."""
    X = np.asarray(X, dtype=np.complex128)
    if X.ndim != 2:
        raise ValueError(f"expected an n x b matrix, got shape {X.shape}")
    if direction == "forward":
        return fft(X)
    if direction == "inverse":
        return ifft(X)
    raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")


def fft_rows(a):
    """Transform along the last axis; every other axis counts as a batch."""
    a = np.asarray(a, dtype=np.complex128)
    audit.add(a.size // a.shape[-1])
    return scipy.fft.fft(a, axis=-1, workers=_workers())


def ifft_rows(a):
    a = np.asarray(a, dtype=np.complex128)
    audit.add(a.size // a.shape[-1])
    return scipy.fft.ifft(a, axis=-1, workers=_workers())


def eta_vector(n):
    """Powers of the primitive 2n-th root of unity: ``exp(i pi k / n)``, k < n."""
    if n < 1:
        raise ValueError("n must be positive")
    return np.exp(1j * np.pi * np.arange(n) / n)
