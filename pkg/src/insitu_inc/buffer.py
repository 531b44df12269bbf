"""Two-part replay buffer: a short FIFO of full snapshots plus a long FIFO of
sketched snapshots stored with the seed that regenerates their sketch.

Stored values never exceed ``(T_f * n + T_s * k) * c`` plus ``T_s`` seeds.

Persistence (INCB, little-endian)::

    magic b"INCB", u16 version, u8 kind code, u64 n, k, c, T_f, T_s,
    u64 full count, u64 sketch count,
    full records:   u64 t, f32[n*c]
    sketch records: u64 t, u64 seed, f32[k*c]
"""

from __future__ import annotations

import struct
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from .sketch import KINDS, SketchOperator, construct_sketch


@dataclass
class FullRecord:
    t: int
    U: np.ndarray


@dataclass
class SketchRecord:
    t: int
    seed: int
    k: int
    SU: np.ndarray

    def operator(self, kind: str, n: int) -> SketchOperator:
        return construct_sketch(kind, n, self.k, self.seed)


class BufferFormatError(ValueError):
    pass


class ReplayBuffer:
    def __init__(self, n: int, c: int, k: int, T_f: int = 1, T_s: int = 0, kind: str = "fjlt"):
        if T_f < 1:
            raise ValueError("full-queue capacity T_f must be >= 1")
        if T_s < 0:
            raise ValueError("sketch-queue capacity T_s must be >= 0")
        if kind not in KINDS:
            raise ValueError(f"unknown sketch kind {kind!r}")
        if not 1 <= k <= n:
            raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
        self.n, self.c, self.k = int(n), int(c), int(k)
        self.T_f, self.T_s = int(T_f), int(T_s)
        self.kind = kind
        self.full_queue: deque[FullRecord] = deque()
        self.sketch_queue: deque[SketchRecord] = deque()
        self._lock = threading.Lock()
        self.peak_values = 0

    # pushes ----------------------------------------------------------------
    def push_full(self, record: FullRecord) -> FullRecord | None:
        if record.U.shape != (self.n, self.c):
            raise ValueError(f"full record shape {record.U.shape} != {(self.n, self.c)}")
        with self._lock:
            _check_new_t(self.full_queue, record.t)
            evicted = self.full_queue.popleft() if len(self.full_queue) == self.T_f else None
            self.full_queue.append(record)
            self._track()
        return evicted

    def push_sketch(self, record: SketchRecord) -> SketchRecord | None:
        if record.k != self.k or record.SU.shape != (self.k, self.c):
            raise ValueError(f"sketch record k={record.k}, shape {record.SU.shape} does not match "
                             f"buffer k={self.k}, c={self.c}")
        if self.T_s == 0:
            raise ValueError("sketch queue has zero capacity")
        with self._lock:
            _check_new_t(self.sketch_queue, record.t)
            evicted = self.sketch_queue.popleft() if len(self.sketch_queue) == self.T_s else None
            self.sketch_queue.append(record)
            self._track()
        return evicted

    # sampling ----------------------------------------------------------------
    def sample_sketch_batch(self, b_s: int, rng: np.random.Generator) -> list[SketchRecord]:
        if b_s < 1:
            raise ValueError("b_s must be >= 1")
        with self._lock:
            return _draw(self.sketch_queue, b_s, rng)

    def sample_full_batch(self, b_f: int, rng: np.random.Generator) -> list[FullRecord]:
        if b_f < 1:
            raise ValueError("b_f must be >= 1")
        with self._lock:
            return _draw(self.full_queue, b_f, rng)

    # accounting ----------------------------------------------------------------
    def stored_values(self) -> int:
        return sum(r.U.size for r in self.full_queue) + sum(r.SU.size for r in self.sketch_queue)

    def capacity_values(self) -> int:
        return (self.T_f * self.n + self.T_s * self.k) * self.c

    def _track(self):
        v = self.stored_values()
        if v > self.capacity_values():
            raise AssertionError(f"buffer holds {v} values, bound is {self.capacity_values()}")
        self.peak_values = max(self.peak_values, v)

    def accounting(self, bytes_per_value: int = 4) -> dict:
        full = sum(r.U.size for r in self.full_queue)
        sk = sum(r.SU.size for r in self.sketch_queue)
        return {
            "full_queue_bytes": full * bytes_per_value,
            "sketch_queue_bytes": sk * bytes_per_value,
            "seed_bytes": 8 * len(self.sketch_queue),
            "full_records": len(self.full_queue),
            "sketch_records": len(self.sketch_queue),
            "bound_values": self.capacity_values(),
            "peak_values": self.peak_values,
        }

    # persistence ----------------------------------------------------------------
    def to_bytes(self) -> bytes:
        with self._lock:
            parts = [_HEAD.pack(BUFFER_MAGIC, BUFFER_VERSION, KINDS.index(self.kind), self.n, self.k,
                                self.c, self.T_f, self.T_s, len(self.full_queue), len(self.sketch_queue))]
            for r in self.full_queue:
                parts.append(struct.pack("<Q", r.t) + np.ascontiguousarray(r.U, "<f4").tobytes())
            for r in self.sketch_queue:
                parts.append(struct.pack("<QQ", r.t, r.seed) + np.ascontiguousarray(r.SU, "<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReplayBuffer":
        if len(data) < _HEAD.size:
            raise BufferFormatError(f"truncated INCB header at byte {len(data)}")
        magic, version, kind, n, k, c, T_f, T_s, nf, ns = _HEAD.unpack_from(data, 0)
        if magic != BUFFER_MAGIC:
            raise BufferFormatError(f"bad magic {magic!r}")
        if version != BUFFER_VERSION:
            raise BufferFormatError(f"unsupported INCB version {version}")
        buf = cls(n, c, k, T_f, T_s, KINDS[kind])
        pos = _HEAD.size
        need = pos + nf * (8 + 4 * n * c) + ns * (16 + 4 * k * c)
        if len(data) != need:
            raise BufferFormatError(f"INCB size {len(data)} != expected {need}")
        for _ in range(nf):
            (t,) = struct.unpack_from("<Q", data, pos)
            U = np.frombuffer(data, "<f4", n * c, pos + 8).reshape(n, c).astype(np.float32)
            buf.full_queue.append(FullRecord(int(t), U))
            pos += 8 + 4 * n * c
        for _ in range(ns):
            t, seed = struct.unpack_from("<QQ", data, pos)
            SU = np.frombuffer(data, "<f4", k * c, pos + 16).reshape(k, c).astype(np.float32)
            buf.sketch_queue.append(SketchRecord(int(t), int(seed), k, SU))
            pos += 16 + 4 * k * c
        buf._track()
        return buf


BUFFER_MAGIC = b"INCB"
BUFFER_VERSION = 1
_HEAD = struct.Struct("<4sHBQQQQQQQ")


def _check_new_t(queue, t):
    if any(r.t == t for r in queue):
        raise ValueError(f"snapshot t={t} is already queued")


def _draw(queue, b, rng):
    m = len(queue)
    if m == 0:
        return []
    if b >= m:
        return list(queue)
    idx = rng.choice(m, size=b, replace=False)
    items = list(queue)
    return [items[i] for i in idx]
