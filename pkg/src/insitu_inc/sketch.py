"""Seed-reconstructible linear sketches of n-row fields.

Every operator is fully determined by ``(kind, n, k, seed)``; only the seed
has to be stored next to a sketched snapshot. Derived state is drawn from a
Philox counter-based generator in a fixed order (signs first, then indices),
so regeneration is bit-identical across runs.

Kinds
-----
subsample  rows ``U[idx]``, no rescaling
fjlt       ``sqrt(n/k) * DCT(d * U)[idx]`` with Rademacher signs ``d``
gaussian   dense ``G @ U`` with ``G_ij ~ N(0, 1/k)`` (reference only)

Index sets are sorted ascending after drawing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dct import dct_orthonormal, idct_orthonormal

KINDS = ("subsample", "fjlt", "gaussian")

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(master: int, index: int) -> int:
    """64-bit seed for stream position ``index`` derived from ``master``."""
    return splitmix64(splitmix64(master & _MASK64) ^ (index & _MASK64))


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed & _MASK64))


@dataclass(frozen=True)
class SketchOperator:
    kind: str
    n: int
    k: int
    seed: int
    indices: np.ndarray | None = field(default=None, repr=False, compare=False)
    signs: np.ndarray | None = field(default=None, repr=False, compare=False)
    gauss: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.n / self.k)) if self.kind == "fjlt" else 1.0

    def apply(self, U, axis: int = -2):
        return apply(self, U, axis)

    def adjoint(self, G, axis: int = -2):
        return adjoint(self, G, axis)

    def matrix(self, dtype=np.float64) -> np.ndarray:
        """Dense k x n matrix (tests and small problems only)."""
        return self.apply(np.eye(self.n, dtype=dtype), axis=0)


def construct_sketch(kind: str, n: int, k: int, seed: int) -> SketchOperator:
    if kind not in KINDS:
        raise ValueError(f"unknown sketch kind {kind!r}; expected one of {KINDS}")
    n, k = int(n), int(k)
    if k < 1:
        raise ValueError("sketch size k must be at least 1")
    if k > n:
        raise ValueError(f"sketch size k={k} exceeds row count n={n}")
    rng = rng_from_seed(seed)
    signs = indices = gauss = None
    if kind == "gaussian":
        gauss = rng.standard_normal((k, n)) / np.sqrt(k)
    else:
        if kind == "fjlt":
            signs = (2 * rng.integers(0, 2, size=n) - 1).astype(np.int8)
        indices = np.sort(rng.choice(n, size=k, replace=False))
    return SketchOperator(kind, n, k, int(seed) & _MASK64, indices, signs, gauss)


def _check_rows(op, U, axis):
    if U.shape[axis] != op.n:
        raise ValueError(f"sketch expects {op.n} rows along axis {axis}, got {U.shape[axis]}")


def apply(op: SketchOperator, U, axis: int = -2):
    """Sketch ``U`` along ``axis`` (rows); other axes are broadcast (channels)."""
    U = np.asarray(U)
    if U.ndim == 1:
        axis = 0
    _check_rows(op, U, axis)
    dtype = U.dtype if np.issubdtype(U.dtype, np.floating) else np.dtype(np.float64)
    U = U.astype(dtype, copy=False)
    if op.kind == "subsample":
        return np.take(U, op.indices, axis=axis)
    if op.kind == "fjlt":
        d = _along(op.signs.astype(dtype), U.ndim, axis)
        mixed = dct_orthonormal(U * d, axis=axis)
        return np.take(mixed, op.indices, axis=axis) * dtype.type(op.scale)
    G = op.gauss.astype(dtype, copy=False)
    Um = np.moveaxis(U, axis, 0)
    return np.moveaxis(np.tensordot(G, Um, axes=(1, 0)), 0, axis)


def adjoint(op: SketchOperator, G, axis: int = -2):
    """Apply the transpose ``S^T``: k-row input to n-row output."""
    G = np.asarray(G)
    if G.ndim == 1:
        axis = 0
    if G.shape[axis] != op.k:
        raise ValueError(f"adjoint expects {op.k} rows along axis {axis}, got {G.shape[axis]}")
    dtype = np.dtype(G.dtype)
    if op.kind == "gaussian":
        Gm = np.moveaxis(G, axis, 0)
        return np.moveaxis(np.tensordot(op.gauss.T.astype(dtype), Gm, axes=(1, 0)), 0, axis)
    shape = list(G.shape)
    shape[axis] = op.n
    out = np.zeros(shape, dtype=dtype)
    index = [slice(None)] * G.ndim
    index[axis] = op.indices
    out[tuple(index)] = G
    if op.kind == "subsample":
        return out
    d = _along(op.signs.astype(dtype), G.ndim, axis)
    return idct_orthonormal(out, axis=axis) * d * dtype.type(op.scale)


def _along(v, ndim, axis):
    shape = [1] * ndim
    shape[axis] = v.shape[0]
    return v.reshape(shape)


class SketchBatch:
    """Several same-shape operators applied to a stacked ``(B, n, c)`` array,
    one operator per leading index. Used inside the training loss."""

    def __init__(self, ops: Sequence[SketchOperator]):
        if not ops:
            raise ValueError("empty sketch batch")
        kinds = {op.kind for op in ops}
        nk = {(op.n, op.k) for op in ops}
        if len(kinds) != 1 or len(nk) != 1:
            raise ValueError("all operators in a batch must share kind, n and k")
        self.ops = list(ops)
        self.kind = ops[0].kind
        self.n, self.k = ops[0].n, ops[0].k
        if self.kind == "gaussian":
            self._G = np.stack([op.gauss for op in ops])
        else:
            self._idx = np.stack([op.indices for op in ops])[:, :, None]
        if self.kind == "fjlt":
            self._d = np.stack([op.signs for op in ops])[:, :, None]

    def apply(self, U):
        U = np.asarray(U)
        if U.ndim != 3 or U.shape[0] != len(self.ops) or U.shape[1] != self.n:
            raise ValueError(f"expected ({len(self.ops)}, {self.n}, c) array, got {U.shape}")
        dt = U.dtype
        if self.kind == "gaussian":
            return np.matmul(self._G.astype(dt), U)
        if self.kind == "fjlt":
            U = dct_orthonormal(U * self._d.astype(dt), axis=1)
        out = np.take_along_axis(U, self._idx, axis=1)
        if self.kind == "fjlt":
            out = out * dt.type(np.sqrt(self.n / self.k))
        return out

    def adjoint(self, G):
        G = np.asarray(G)
        dt = G.dtype
        if self.kind == "gaussian":
            return np.matmul(np.swapaxes(self._G, 1, 2).astype(dt), G)
        out = np.zeros((G.shape[0], self.n, G.shape[2]), dtype=dt)
        out[np.arange(G.shape[0])[:, None], self._idx[:, :, 0]] = G
        if self.kind == "subsample":
            return out
        return idct_orthonormal(out, axis=1) * self._d.astype(dt) * dt.type(np.sqrt(self.n / self.k))
