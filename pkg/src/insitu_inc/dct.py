"""Orthonormal DCT-II and its inverse (DCT-III) in O(n log n) via one FFT.

Uses Makhoul's even/odd reordering, so any length n >= 1 works without padding.
"""

from __future__ import annotations

import numpy as np


def _twiddle(n, dtype):
    k = np.arange(n)
    return np.exp(-1j * np.pi * k / (2 * n)).astype(np.result_type(dtype, np.complex64))


def _ortho_weights(n, dtype):
    w = np.full(n, np.sqrt(2.0 / n))
    w[0] = np.sqrt(1.0 / n)
    return w.astype(dtype)


def dct_orthonormal(x, axis: int = 0):
    """Orthonormal DCT-II of ``x`` along ``axis``; preserves the l2 norm."""
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    n = x.shape[axis]
    if n < 1:
        raise ValueError("DCT needs at least one sample")
    xm = np.moveaxis(x, axis, -1)
    v = np.concatenate([xm[..., 0::2], xm[..., 1::2][..., ::-1]], axis=-1)
    V = np.fft.fft(v, axis=-1)
    y = (V * _twiddle(n, x.dtype)).real * _ortho_weights(n, x.dtype)
    return np.moveaxis(y.astype(x.dtype, copy=False), -1, axis)


def idct_orthonormal(y, axis: int = 0):
    """Inverse of :func:`dct_orthonormal` (an orthonormal DCT-III)."""
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.floating):
        y = y.astype(np.float64)
    n = y.shape[axis]
    if n < 1:
        raise ValueError("DCT needs at least one sample")
    ym = np.moveaxis(y, axis, -1) / _ortho_weights(n, y.dtype)
    # Y_{n-k}, with Y_n := 0
    rev = np.concatenate([np.zeros_like(ym[..., :1]), ym[..., :0:-1]], axis=-1)
    V = np.conj(_twiddle(n, y.dtype)) * (ym - 1j * rev)
    v = np.fft.ifft(V, axis=-1).real
    half = (n + 1) // 2
    x = np.empty_like(ym)
    x[..., 0::2] = v[..., :half]
    x[..., 1::2] = v[..., half:][..., ::-1]
    return np.moveaxis(x.astype(y.dtype, copy=False), -1, axis)
