"""Snapshot datasets: containers, synthetic generators, the INCD file format.

INCD layout (little-endian)::

    magic  b"INCD"
    u16    version (1)
    u16    d         spatial dimension
    u16    c         channels
    u64    n         mesh nodes
    u64    T         snapshots
    f32    X[n, d]           row-major
    f32    U[T, n, c]        row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .sketch import rng_from_seed

DATA_MAGIC = b"INCD"
DATA_VERSION = 1
_HEADER = struct.Struct("<4sHHHQQ")
HEADER_BYTES = _HEADER.size


class DatasetFormatError(ValueError):
    pass


class StreamExhaustedError(RuntimeError):
    pass


@dataclass
class MeshDataset:
    X: np.ndarray
    snapshots: np.ndarray
    name: str = "dataset"
    dt: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X)
        self.snapshots = np.asarray(self.snapshots)
        if self.X.ndim != 2:
            raise ValueError(f"X must be (n, d), got {self.X.shape}")
        if self.snapshots.ndim != 3 or self.snapshots.shape[1] != self.X.shape[0]:
            raise ValueError(f"snapshots must be (T, n, c) with n={self.X.shape[0]}, got {self.snapshots.shape}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def T(self) -> int:
        return self.snapshots.shape[0]

    @property
    def c(self) -> int:
        return self.snapshots.shape[2]

    @property
    def nbytes_float32(self) -> int:
        return 4 * (self.n * self.d + self.T * self.n * self.c)

    @property
    def file_bytes(self) -> int:
        return HEADER_BYTES + self.nbytes_float32


class SnapshotStream:
    """Single-pass iterator of ``(t, U_t)``.

    ``X`` (the fixed mesh) and ``n_snapshots`` (the run length known from the
    run configuration) are available up front; snapshot data is not.
    """

    def __init__(self, X, items, n_snapshots: int):
        self.X = np.asarray(X)
        self.n_snapshots = int(n_snapshots)
        self._items = items
        self._started = False
        self.reads = 0

    def __iter__(self) -> Iterator[tuple[int, np.ndarray]]:
        if self._started:
            raise StreamExhaustedError("snapshot stream is single-pass and was already consumed")
        self._started = True
        return self._gen()

    def _gen(self):
        last = None
        for t, U in self._items:
            if last is not None and t <= last:
                raise ValueError(f"stream times must increase strictly ({last} then {t})")
            last = t
            self.reads += 1
            yield t, U

    def __len__(self):
        return self.n_snapshots


def stream_from(dataset: MeshDataset) -> SnapshotStream:
    items = ((t, dataset.snapshots[t]) for t in range(dataset.T))
    return SnapshotStream(dataset.X, items, dataset.T)


# generators -------------------------------------------------------------------

def gen_pulse2d(grid_side: int = 32, T: int = 64, seed: int = 0) -> MeshDataset:
    """Gaussian pulse drifting across the unit square while it spreads.

    ``u(x, t) = exp(-|x - p(t)|^2 / (2 sigma(t)^2))`` with p linear in t and
    sigma growing linearly. The start point sits on a grid node, so the first
    snapshot peaks at exactly 1.
    """
    if grid_side < 8:
        raise ValueError("grid_side must be >= 8")
    if T < 2:
        raise ValueError("T must be >= 2")
    rng = rng_from_seed(seed)
    axis = np.linspace(0.0, 1.0, grid_side)
    gx, gy = np.meshgrid(axis, axis, indexing="xy")
    X = np.stack([gx.ravel(), gy.ravel()], axis=1)

    start = rng.uniform(0.3, 0.45, size=2)
    start = axis[np.abs(axis[:, None] - start[None, :]).argmin(axis=0)]
    angle = rng.uniform(0.0, np.pi / 2)
    end = start + 0.3 * np.array([np.cos(angle), np.sin(angle)])
    sigma0 = 0.08 + 0.01 * rng.uniform()
    sigma1 = sigma0 + 0.06

    s = np.arange(T) / (T - 1)
    centers = start[None, :] + s[:, None] * (end - start)[None, :]
    sigmas = sigma0 + s * (sigma1 - sigma0)
    U = pulse2d_field(X, centers, sigmas)[:, :, None]
    params = dict(kind="pulse2d", grid_side=grid_side, T=T, seed=seed, start=start.tolist(),
                  end=end.tolist(), sigma0=sigma0, sigma1=sigma1)
    return MeshDataset(X.astype(np.float32), U.astype(np.float32), "pulse2d", 1.0 / (T - 1), params)


def pulse2d_field(X, centers, sigmas) -> np.ndarray:
    """Analytic pulse at mesh ``X`` for each (center, sigma); shape ``(T, n)``."""
    X = np.asarray(X, dtype=np.float64)
    centers = np.atleast_2d(centers)
    sigmas = np.atleast_1d(sigmas)
    r2 = ((X[None, :, :] - centers[:, None, :]) ** 2).sum(-1)
    return np.exp(-r2 / (2 * sigmas[:, None] ** 2))


def _branch_tree(rng, depth=3, length=1.0, shrink=0.7):
    """Segments (start, end, arc-length at start) of a random binary tree rooted at 0."""
    segments = []

    def grow(p, direction, s0, length, level):
        direction = direction / np.linalg.norm(direction)
        q = p + length * direction
        segments.append((p, q, s0))
        if level == depth:
            return
        for _ in range(2):
            turn = rng.normal(size=3)
            turn -= turn.dot(direction) * direction
            turn /= np.linalg.norm(turn)
            angle = rng.uniform(0.35, 0.8)
            child = np.cos(angle) * direction + np.sin(angle) * turn
            grow(q, child, s0 + length, length * shrink, level + 1)

    grow(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.0, length, 0)
    return segments


def gen_branch3d(n_points: int = 600, T: int = 32, seed: int = 0, jitter: float = 0.01) -> MeshDataset:
    """Diffusion from the root of a random 3D branching tree.

    Nodes are scattered along the branches (root node included) with a small
    positional jitter. The field depends on the along-tree distance ``s``::

        u(s, t) = sqrt(t0 / (t + t0)) * exp(-s^2 / (4 D (t + t0)))
    """
    if n_points < 100:
        raise ValueError("n_points must be >= 100")
    if T < 2:
        raise ValueError("T must be >= 2")
    rng = rng_from_seed(seed)
    segments = _branch_tree(rng)
    lengths = np.array([np.linalg.norm(q - p) for p, q, _ in segments])
    which = rng.choice(len(segments), size=n_points - 1, p=lengths / lengths.sum())
    frac = rng.uniform(0.0, 1.0, size=n_points - 1)
    starts = np.array([segments[i][0] for i in which])
    ends = np.array([segments[i][1] for i in which])
    X = starts + frac[:, None] * (ends - starts) + jitter * rng.normal(size=(n_points - 1, 3))
    dist = np.array([segments[i][2] for i in which]) + frac * lengths[which]
    X = np.vstack([np.zeros((1, 3)), X])
    dist = np.concatenate([[0.0], dist])

    diffusivity, t0 = 0.675, 1.0 / 15
    times = np.arange(T) / (T - 1)
    U = branch3d_field(dist, times, diffusivity, t0)[:, :, None]
    params = dict(kind="branch3d", n_points=n_points, T=T, seed=seed, jitter=jitter,
                  diffusivity=diffusivity, t0=t0, total_length=float(lengths.sum()))
    ds = MeshDataset(X.astype(np.float32), U.astype(np.float32), "branch3d", 1.0 / (T - 1), params)
    ds.params["graph_distance"] = dist
    return ds


def branch3d_field(dist, times, diffusivity, t0) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    tt = np.asarray(times, dtype=np.float64)[:, None] + t0
    return np.sqrt(t0 / tt) * np.exp(-dist[None, :] ** 2 / (4 * diffusivity * tt))


# INCD I/O ------------------------------------------------------------------------

def dataset_to_bytes(dataset: MeshDataset) -> bytes:
    head = _HEADER.pack(DATA_MAGIC, DATA_VERSION, dataset.d, dataset.c, dataset.n, dataset.T)
    X = np.ascontiguousarray(dataset.X, dtype="<f4")
    U = np.ascontiguousarray(dataset.snapshots, dtype="<f4")
    return head + X.tobytes() + U.tobytes()


def dataset_from_bytes(data: bytes, name: str = "dataset") -> MeshDataset:
    if len(data) < HEADER_BYTES:
        raise DatasetFormatError(f"truncated INCD header: file ends at byte offset {len(data)}, "
                                 f"header needs {HEADER_BYTES}")
    magic, version, d, c, n, T = _HEADER.unpack_from(data, 0)
    if magic != DATA_MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {DATA_MAGIC!r}")
    if version != DATA_VERSION:
        raise DatasetFormatError(f"unsupported INCD version {version}")
    need = HEADER_BYTES + 4 * (n * d + T * n * c)
    if len(data) < need:
        raise DatasetFormatError(f"truncated INCD file: data ends at byte offset {len(data)}, expected {need}")
    if len(data) > need:
        raise DatasetFormatError(f"trailing bytes after offset {need}")
    X = np.frombuffer(data, dtype="<f4", count=n * d, offset=HEADER_BYTES).reshape(n, d)
    U = np.frombuffer(data, dtype="<f4", count=T * n * c, offset=HEADER_BYTES + 4 * n * d).reshape(T, n, c)
    return MeshDataset(X.astype(np.float32), U.astype(np.float32), name)


def write_dataset(path, dataset: MeshDataset) -> int:
    data = dataset_to_bytes(dataset)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_dataset(path) -> MeshDataset:
    with open(path, "rb") as fh:
        data = fh.read()
    return dataset_from_bytes(data, name=str(path))
