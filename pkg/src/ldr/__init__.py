"""Structured linear transforms of low displacement rank.

Toeplitz-like transforms ``M = sum_i Z_1(g_i) Z_-1(h_i)`` with FFT-based
products and gradients, the displacement algebra behind them, a small
network trainer, and a timing harness.
"""

from ldr.toeplitz_like import (
    RectangularTransform,
    ToeplitzLikeTransform,
    fast_gradients,
    fast_multiply,
    to_dense,
    transpose_multiply,
)

__version__ = "0.1.0"

__all__ = [
    "RectangularTransform",
    "ToeplitzLikeTransform",
    "fast_gradients",
    "fast_multiply",
    "to_dense",
    "transpose_multiply",
]
