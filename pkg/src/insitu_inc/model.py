"""Hypernetwork + SIREN compressor.

Both networks share one building block layout::

    h = sin(omega0 * (x W0 + b0))                      first layer
    h = h + sin(w * (sin(w * (h W1 + b1)) W2 + b2))    per residual block, w = hidden_omega
    y = h Wf + bf                                      final affine, no activation

The hypernetwork maps a normalised time ``tau`` in [-1, 1] to the flat
parameter vector of the target network, which maps ``(x, tau)`` to the field.
Weights are stored (in, out) and flattened row-major, layer by layer.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .numcore import autodiff as ad
from .sketch import rng_from_seed, mix_seed


@dataclass(frozen=True)
class SirenLayout:
    in_dim: int
    out_dim: int
    width: int
    blocks: int
    omega0: float = 30.0
    hidden_omega: float = 1.0

    def __post_init__(self):
        if self.blocks < 1 or self.width < 1 or self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"invalid layout {self}")

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        w = self.width
        out = [("W0", (self.in_dim, w)), ("b0", (w,))]
        for i in range(self.blocks):
            out += [(f"W{i}a", (w, w)), (f"b{i}a", (w,)), (f"W{i}b", (w, w)), (f"b{i}b", (w,))]
        out += [("Wf", (w, self.out_dim)), ("bf", (self.out_dim,))]
        return out

    def offsets(self) -> dict[str, tuple[int, int, tuple[int, ...]]]:
        table, pos = {}, 0
        for name, shape in self.shapes():
            size = int(np.prod(shape))
            table[name] = (pos, pos + size, shape)
            pos += size
        return table

    @property
    def n_params(self) -> int:
        w, b = self.width, self.blocks
        return self.in_dim * w + w + b * 2 * (w * w + w) + w * self.out_dim + self.out_dim


def unflatten(layout: SirenLayout, theta) -> dict[str, np.ndarray]:
    theta = np.asarray(theta)
    if theta.shape[-1] != layout.n_params:
        raise ValueError(f"expected {layout.n_params} parameters, got {theta.shape[-1]}")
    lead = theta.shape[:-1]
    return {k: theta[..., a:b].reshape(lead + s) for k, (a, b, s) in layout.offsets().items()}


def flatten(layout: SirenLayout, parts: dict) -> np.ndarray:
    arrays = [np.asarray(parts[name]) for name, _ in layout.shapes()]
    lead = arrays[0].shape[: arrays[0].ndim - 2]
    return np.concatenate([a.reshape(lead + (-1,)) for a in arrays], axis=-1)


def init_siren(layout: SirenLayout, seed: int, dtype=np.float32) -> np.ndarray:
    """SIREN initialisation: first layer U(-1/in, 1/in), later weights
    U(-sqrt(6/fan_in)/omega0, +...), biases zero."""
    rng = rng_from_seed(seed)
    parts = {}
    for name, shape in layout.shapes():
        if name.startswith("b"):
            parts[name] = np.zeros(shape)
        elif name == "W0":
            bound = 1.0 / layout.in_dim
            parts[name] = rng.uniform(-bound, bound, size=shape)
        else:
            bound = np.sqrt(6.0 / shape[0]) / layout.omega0
            parts[name] = rng.uniform(-bound, bound, size=shape)
    return flatten(layout, parts).astype(dtype)


def siren_graph(layout: SirenLayout, x: ad.Node, theta: ad.Node) -> ad.Node:
    """Record a SIREN evaluation on ``x``'s graph.

    ``theta`` is either flat ``(P,)`` (shared weights, ``x`` is ``(..., in)``)
    or batched ``(B, P)`` with ``x`` shaped ``(B, n, in)``.
    """
    batched = theta.value.ndim == 2
    lead = (theta.value.shape[0],) if batched else ()

    def part(name):
        a, b, shape = offsets[name]
        idx = (slice(None), slice(a, b)) if batched else slice(a, b)
        node = ad.getitem(theta, idx)
        if name.startswith("b"):
            shape = (1,) * (x.value.ndim - 1 - len(lead)) + shape
        return ad.reshape(node, lead + shape)

    offsets = layout.offsets()
    h = ad.sin(ad.scale(ad.affine(x, part("W0"), part("b0")), layout.omega0))
    w = layout.hidden_omega
    for i in range(layout.blocks):
        z = ad.affine(h, part(f"W{i}a"), part(f"b{i}a"))
        z = ad.sin(z if w == 1 else ad.scale(z, w))
        z = ad.affine(z, part(f"W{i}b"), part(f"b{i}b"))
        z = ad.sin(z if w == 1 else ad.scale(z, w))
        h = ad.add(h, z)
    return ad.affine(h, part("Wf"), part("bf"))


def siren_eval(layout: SirenLayout, x, theta) -> np.ndarray:
    g = ad.Graph(record=False)
    return siren_graph(layout, g.input("x", x), g.const(theta)).value


@dataclass
class CompressorModel:
    hyper_layout: SirenLayout
    target_layout: SirenLayout
    hyper_params: np.ndarray
    t_max: int

    @property
    def n_params(self) -> int:
        return int(self.hyper_params.size)

    @property
    def dtype(self):
        return self.hyper_params.dtype

    def normalize_time(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.t_max <= 1:
            return np.zeros_like(t)
        return 2.0 * t / (self.t_max - 1) - 1.0

    def astype(self, dtype) -> "CompressorModel":
        return CompressorModel(self.hyper_layout, self.target_layout,
                               self.hyper_params.astype(dtype), self.t_max)

    def copy(self) -> "CompressorModel":
        return self.astype(self.dtype)


def build_model(d: int, c: int, t_max: int, hyper_width: int = 16, hyper_blocks: int = 1,
                target_width: int = 8, target_blocks: int = 1, omega0: float = 30.0,
                hyper_omega0: float | None = None, hidden_omega: float = 1.0,
                scale: float = 0.01, seed: int = 0, dtype=np.float32) -> CompressorModel:
    """Layouts plus the hypernetwork initialisation in one call."""
    target = SirenLayout(d + 1, c, target_width, target_blocks, omega0, hidden_omega)
    hyper = SirenLayout(1, target.n_params, hyper_width, hyper_blocks,
                        omega0 if hyper_omega0 is None else hyper_omega0, hidden_omega)
    model = CompressorModel(hyper, target, np.zeros(hyper.n_params, dtype=dtype), t_max)
    return hyper_init(model, scale, seed)


def hyper_init(model: CompressorModel, scale: float, seed: int) -> CompressorModel:
    """Hypernetwork starts out emitting the target network's SIREN init.

    Final-layer bias := flat target init; final-layer weights *= ``scale``.
    """
    dtype = model.hyper_params.dtype
    params = init_siren(model.hyper_layout, mix_seed(seed, 0), dtype=np.float64)
    target0 = init_siren(model.target_layout, mix_seed(seed, 1), dtype=np.float64)
    offs = model.hyper_layout.offsets()
    a, b, _ = offs["Wf"]
    params[a:b] *= scale
    a, b, _ = offs["bf"]
    params[a:b] = target0
    model.hyper_params = params.astype(dtype)
    return model


def target_init(model: CompressorModel) -> np.ndarray:
    """The target parameters the hypernetwork emits at zero last-layer weight."""
    a, b, _ = model.hyper_layout.offsets()["bf"]
    return model.hyper_params[a:b].copy()


def hyper_graph(model: CompressorModel, params: ad.Node, t) -> ad.Node:
    """theta(t) for a batch of times: ``(B, P_target)``."""
    tau = model.normalize_time(np.atleast_1d(t)).reshape(-1, 1).astype(params.value.dtype)
    return siren_graph(model.hyper_layout, params.graph.const(tau), params)


def target_inputs(model: CompressorModel, X, t, dtype) -> np.ndarray:
    """``(B, n, d+1)`` array of mesh coordinates with the normalised time appended."""
    X = np.asarray(X)
    tau = model.normalize_time(np.atleast_1d(t))
    B, n = tau.shape[0], X.shape[0]
    out = np.empty((B, n, X.shape[1] + 1), dtype=dtype)
    out[:, :, :-1] = X
    out[:, :, -1] = tau[:, None]
    return out


def full_graph(model: CompressorModel, params: ad.Node, X, t) -> ad.Node:
    """Reconstructions for a batch of times, ``(B, n, c)``."""
    if np.asarray(X).shape[1] + 1 != model.target_layout.in_dim:
        raise ValueError(f"mesh has {np.asarray(X).shape[1]} coordinates, model expects "
                         f"{model.target_layout.in_dim - 1}")
    theta = hyper_graph(model, params, t)
    xin = params.graph.const(target_inputs(model, X, t, params.value.dtype))
    return siren_graph(model.target_layout, xin, theta)


def hyper_forward(model: CompressorModel, t) -> np.ndarray:
    """theta(t); a scalar ``t`` gives a flat vector, an array gives ``(B, P)``."""
    g = ad.Graph(record=False)
    out = hyper_graph(model, g.const(model.hyper_params), t).value
    return out[0] if np.ndim(t) == 0 else out


def target_forward(model: CompressorModel, theta, X, t) -> np.ndarray:
    """Evaluate the target INR with explicit parameters at mesh ``X`` and time ``t``."""
    theta = np.asarray(theta)
    if theta.shape[-1] != model.target_layout.n_params:
        raise ValueError(f"theta has {theta.shape[-1]} entries, layout needs {model.target_layout.n_params}")
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] + 1 != model.target_layout.in_dim:
        raise ValueError(f"X must be (n, {model.target_layout.in_dim - 1}), got {X.shape}")
    xin = target_inputs(model, X, t, theta.dtype)[0]
    return siren_eval(model.target_layout, xin, theta)


def full_forward(model: CompressorModel, X, t, chunk: int = 64) -> np.ndarray:
    """Reconstruction at a scalar time (``(n, c)``) or times (``(B, n, c)``)."""
    ts = np.atleast_1d(t)
    outs = []
    for i in range(0, len(ts), chunk):
        g = ad.Graph(record=False)
        outs.append(full_graph(model, g.const(model.hyper_params), X, ts[i:i + chunk]).value)
    out = np.concatenate(outs, axis=0)
    return out[0] if np.ndim(t) == 0 else out


def compression_rate(T: int, n: int, c: int, param_count: int) -> float:
    if param_count <= 0:
        raise ValueError("param_count must be positive")
    return (T * n * c) / param_count


# serialization ---------------------------------------------------------------

MODEL_MAGIC = b"INCM"
MODEL_VERSION = 1
_PRECISION = {np.dtype(np.float32): 32, np.dtype(np.float64): 64}
_LAYOUT = struct.Struct("<IIIIdd")
_HEADER = struct.Struct("<4sHHQ")


class ModelFormatError(ValueError):
    pass


def _pack_layout(lay: SirenLayout) -> bytes:
    return _LAYOUT.pack(lay.in_dim, lay.out_dim, lay.width, lay.blocks, lay.omega0, lay.hidden_omega)


def model_to_bytes(model: CompressorModel) -> bytes:
    """Header {magic, version, precision bits, t_max}, two layouts, then the
    flat hypernetwork parameters, little-endian."""
    bits = _PRECISION.get(np.dtype(model.dtype))
    if bits is None:
        raise ModelFormatError(f"unsupported precision {model.dtype}")
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, bits, model.t_max))
    buf.write(_pack_layout(model.hyper_layout))
    buf.write(_pack_layout(model.target_layout))
    buf.write(model.hyper_params.astype(model.dtype.newbyteorder("<"), copy=False).tobytes())
    return buf.getvalue()


def model_from_bytes(data: bytes) -> CompressorModel:
    if len(data) < _HEADER.size + 2 * _LAYOUT.size:
        raise ModelFormatError(f"model artifact truncated at byte {len(data)}")
    magic, version, bits, t_max = _HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    dtype = {32: np.dtype("<f4"), 64: np.dtype("<f8")}.get(bits)
    if dtype is None:
        raise ModelFormatError(f"unknown precision tag {bits}")
    pos = _HEADER.size
    hyper = SirenLayout(*_LAYOUT.unpack_from(data, pos))
    target = SirenLayout(*_LAYOUT.unpack_from(data, pos + _LAYOUT.size))
    pos += 2 * _LAYOUT.size
    need = pos + hyper.n_params * dtype.itemsize
    if len(data) != need:
        raise ModelFormatError(f"model artifact has {len(data)} bytes, expected {need}")
    params = np.frombuffer(data, dtype=dtype, count=hyper.n_params, offset=pos).astype(dtype.newbyteorder("="))
    return CompressorModel(hyper, target, params, int(t_max))


def save_model(path, model: CompressorModel) -> int:
    data = model_to_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_model(path) -> CompressorModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
