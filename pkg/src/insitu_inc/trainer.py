"""Losses, metrics and the offline / in-situ training loops.

Modes::

    offline-baseline   time mini-batches over the whole dataset
    offline-subsample  same, but every snapshot is sketched once and only
    offline-fjlt       the sketched targets are ever trained against
    insitu-baseline    single pass, full-snapshot queue only (T_s = 0)
    insitu-subsample   single pass, full queue + sketched replay queue
    insitu-fjlt
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .buffer import FullRecord, ReplayBuffer, SketchRecord
from .dataio import MeshDataset, SnapshotStream
from .model import CompressorModel, build_model, compression_rate, full_forward, full_graph
from .numcore import autodiff as ad
from .numcore.radam import RAdamState, radam_step
from .sketch import SketchBatch, construct_sketch, mix_seed, rng_from_seed

MODES = ("offline-baseline", "offline-subsample", "offline-fjlt",
         "insitu-baseline", "insitu-subsample", "insitu-fjlt")

# stream ids for mix_seed(master, .); snapshot sketches use the snapshot index
_INIT_STREAM = 1 << 40
_BATCH_STREAM = (1 << 40) + 1


class DivergenceError(FloatingPointError):
    """Training hit a non-finite loss or update; carries the partial run."""

    def __init__(self, message, model=None, report=None):
        super().__init__(message)
        self.model = model
        self.report = report


# metrics ----------------------------------------------------------------------------

def _channel_norms(U, axis):
    norms = np.sqrt(np.sum(np.asarray(U, dtype=np.float64) ** 2, axis=axis))
    if np.any(norms == 0):
        raise ValueError("a channel of the reference data has zero norm")
    return norms


def loss_frame(U, U_rec) -> float:
    """Channel-mean relative l2 error of one ``(n, c)`` snapshot."""
    U = np.asarray(U, dtype=np.float64)
    R = np.asarray(U_rec, dtype=np.float64)
    if U.shape != R.shape:
        raise ValueError(f"shape mismatch {U.shape} vs {R.shape}")
    if U.ndim == 1:
        U, R = U[:, None], R[:, None]
    den = _channel_norms(U, 0)
    return float(np.mean(np.sqrt(np.sum((U - R) ** 2, axis=0)) / den))


def loss_ideal(snapshots, reconstructions) -> float:
    """Mean frame loss over a set of snapshots."""
    if len(snapshots) != len(reconstructions) or len(snapshots) == 0:
        raise ValueError("need matching, non-empty snapshot lists")
    return float(np.mean([loss_frame(u, r) for u, r in zip(snapshots, reconstructions)]))


def rfe(U, U_rec) -> float:
    """Channel-mean relative Frobenius error over a ``(T, n, c)`` dataset."""
    U = np.asarray(U, dtype=np.float64)
    R = np.asarray(U_rec, dtype=np.float64)
    if U.shape != R.shape or U.ndim != 3:
        raise ValueError(f"expected matching (T, n, c) arrays, got {U.shape} vs {R.shape}")
    den = _channel_norms(U, (0, 1))
    return float(np.mean(np.sqrt(np.sum((U - R) ** 2, axis=(0, 1))) / den))


class PSNRUndefinedError(ValueError):
    pass


def psnr(U, U_rec) -> float:
    """Frame PSNR in dB, channel mean of ``20 log10(max(U_rec) / ||U - U_rec||)``.

    The peak is taken from the reconstruction and the denominator is the raw
    l2 error norm. Returns ``inf`` when the error is exactly zero.
    """
    U = np.asarray(U, dtype=np.float64)
    R = np.asarray(U_rec, dtype=np.float64)
    if U.shape != R.shape:
        raise ValueError(f"shape mismatch {U.shape} vs {R.shape}")
    if U.ndim == 1:
        U, R = U[:, None], R[:, None]
    err = np.sqrt(np.sum((U - R) ** 2, axis=0))
    if np.all(err == 0):
        return math.inf
    peak = R.max(axis=0)
    if np.any(peak <= 0):
        raise PSNRUndefinedError("reconstruction maximum is not positive in some channel")
    with np.errstate(divide="ignore"):
        return float(np.mean(20 * np.log10(peak / err)))


# graph losses ---------------------------------------------------------------------

def _relative_graph(pred: ad.Node, target: np.ndarray) -> ad.Node:
    """Mean over (batch, channel) of ||pred - target|| / ||target|| along rows."""
    den = _channel_norms(target, 1).astype(pred.value.dtype)
    diff = ad.sub(pred, target.astype(pred.value.dtype))
    num = ad.sqrt(ad.reduce_sum(ad.square(diff), axis=1))
    return ad.reduce_mean(ad.divide(num, den))


def insitu_objective(model: CompressorModel, params: ad.Node, X, full_batch, sketch_batch,
                     kind: str | None, lam: float):
    """Record ``L_full + lam * L_sketch`` on ``params``' graph.

    Returns ``(total, L_full, L_sketch)`` nodes; ``L_sketch`` is ``None`` when
    the sketch batch is empty. Sketched reconstructions are formed by
    sketching the full reconstruction with the stored seed.
    """
    if not full_batch:
        raise ValueError("full batch must not be empty")
    times = [r.t for r in full_batch] + [r.t for r in sketch_batch]
    recon = full_graph(model, params, X, times)
    bf = len(full_batch)
    target = np.stack([r.U for r in full_batch])
    full_part = recon if not sketch_batch else ad.getitem(recon, slice(0, bf))
    L_full = _relative_graph(full_part, target)
    if not sketch_batch or lam == 0:
        return L_full, L_full, None
    n = np.asarray(X).shape[0]
    ops = SketchBatch([r.operator(kind, n) for r in sketch_batch])
    sk = ad.linear_map(ad.getitem(recon, slice(bf, None)), ops.apply, ops.adjoint, op="sketch")
    L_sketch = _relative_graph(sk, np.stack([r.SU for r in sketch_batch]))
    total = ad.add(L_full, ad.scale(L_sketch, lam))
    return total, L_full, L_sketch


def loss_insitu(model: CompressorModel, X, full_batch, sketch_batch, lam: float = 1.0,
                kind: str = "fjlt") -> float:
    g = ad.Graph(record=False)
    total, _, _ = insitu_objective(model, g.const(model.hyper_params), X, full_batch,
                                   sketch_batch, kind, lam)
    return float(total.value)


# configuration / report ----------------------------------------------------------------

@dataclass
class TrainConfig:
    mode: str = "insitu-fjlt"
    lr: float = 1e-4
    lam: float = 1.0
    b_f: int = 1
    b_s: int = 32
    cycles_per_snapshot: int = 300
    sample_factor: float = 5.0
    T_f: int = 1
    T_s: int | None = None
    time_batch: int = 8
    offline_steps: int | None = None
    master_seed: int = 0
    precision: str = "float32"
    hyper_width: int = 16
    hyper_blocks: int = 1
    target_width: int = 8
    target_blocks: int = 1
    omega0: float = 30.0
    hyper_omega0: float | None = None
    hidden_omega: float = 1.0
    init_scale: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0 < self.sample_factor <= 100:
            raise ValueError("sample_factor must be in (0, 100]")
        if self.b_s < 1 or self.b_f < 1 or self.time_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.cycles_per_snapshot < 0:
            raise ValueError("cycles_per_snapshot must be >= 0")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    @property
    def sketch_kind(self) -> str | None:
        tail = self.mode.split("-")[1]
        return None if tail == "baseline" else tail

    @property
    def offline(self) -> bool:
        return self.mode.startswith("offline")

    @property
    def dtype(self):
        return np.dtype(self.precision)


# Settings tuned for small CPU runs (tens of seconds per run on the bundled
# generators); the TrainConfig defaults follow the published setup instead.
DESK_PRESET = dict(lr=1e-3, b_s=16, cycles_per_snapshot=50, hyper_omega0=5.0)


def sketch_rows(sample_factor: float, n: int) -> int:
    """k = round(sample_factor / 100 * n), half away from zero, at least 1, at most n."""
    return int(min(n, max(1, math.floor(sample_factor / 100.0 * n + 0.5))))


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)            # (t, cycle, L_full, L_sketch, lr)
    snapshot_loss: dict = field(default_factory=dict)   # t -> (L_full, L_sketch) after its last cycle
    test_loss: dict = field(default_factory=dict)       # t -> frame loss of the final model
    metrics: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    seeds: dict = field(default_factory=dict)
    buffer: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def cycles(self) -> int:
        return len(self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["snapshot_t", "cycle", "L_full", "L_sketch", "lr"])
            for t, cyc, lf, ls, lr in self.rows:
                w.writerow([t, cyc, repr(lf), "" if ls is None else repr(ls), repr(lr)])

    def summary(self) -> dict:
        out = {k: _jsonable(v) for k, v in self.metrics.items()}
        out.update(config=self.config, seeds={k: str(v) for k, v in self.seeds.items()},
                   buffer=self.buffer, wall_clock_s=self.wall_clock, cycles=self.cycles,
                   test_loss={str(t): v for t, v in sorted(self.test_loss.items())})
        return out

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


# training -------------------------------------------------------------------------

def _new_model(config: TrainConfig, d: int, c: int, T: int) -> CompressorModel:
    return build_model(d, c, T, config.hyper_width, config.hyper_blocks, config.target_width,
                       config.target_blocks, config.omega0, config.hyper_omega0, config.hidden_omega,
                       config.init_scale, mix_seed(config.master_seed, _INIT_STREAM), config.dtype)


def _step(model, state, objective):
    g = ad.Graph()
    params = g.param("hyper", model.hyper_params)
    total, L_full, L_sketch = objective(params)
    grads = g.backward(total)
    new, _ = radam_step({"hyper": model.hyper_params}, grads, state)
    model.hyper_params = new["hyper"]
    return float(total.value), float(L_full.value), None if L_sketch is None else float(L_sketch.value)


def train_insitu(config: TrainConfig, stream: SnapshotStream, reference: MeshDataset | None = None,
                 on_snapshot=None):
    """Single-pass training over ``stream`` with the replay buffer.

    ``reference`` (full data held by the harness, never by the compressor) is
    only used after training to fill ``report.test_loss`` and metrics.
    """
    if config.offline:
        raise ValueError(f"mode {config.mode} is offline; use train_offline")
    t0 = time.perf_counter()
    X = np.asarray(stream.X)
    n, d = X.shape
    T = stream.n_snapshots
    kind = config.sketch_kind
    report = TrainReport(config=asdict(config), seeds={"master": config.master_seed})
    model = None
    buffer = None
    rng = rng_from_seed(mix_seed(config.master_seed, _BATCH_STREAM))
    state = RAdamState(lr=config.lr)
    T_s = 0 if kind is None else (max(T - 1, 0) if config.T_s is None else config.T_s)
    k = sketch_rows(config.sample_factor, n)
    last_t = None

    for t, U in stream:
        U = np.asarray(U, dtype=config.dtype)
        if U.ndim != 2 or U.shape[0] != n:
            raise ValueError(f"snapshot {t} has shape {U.shape}, stream mesh has {n} nodes")
        if model is None:
            c = U.shape[1]
            model = _new_model(config, d, c, T)
            buffer = ReplayBuffer(n, c, k, config.T_f, T_s, kind or "fjlt")
        elif U.shape[1] != buffer.c:
            raise ValueError(f"snapshot {t} has {U.shape[1]} channels, expected {buffer.c}")
        last_t = t
        buffer.push_full(FullRecord(t, U))
        if T_s > 0 and t < T - 1:
            seed = mix_seed(config.master_seed, t)
            op = construct_sketch(kind, n, k, seed)
            buffer.push_sketch(SketchRecord(t, seed, k, op.apply(U)))
            report.seeds[f"t{t}"] = seed

        for cycle in range(config.cycles_per_snapshot):
            full = buffer.sample_full_batch(config.b_f, rng)
            sk = buffer.sample_sketch_batch(config.b_s, rng) if T_s > 0 else []
            try:
                _, lf, ls = _step(model, state, lambda p: insitu_objective(
                    model, p, X, full, sk, kind, config.lam))
            except ad.NonFiniteError as exc:
                report.wall_clock = time.perf_counter() - t0
                raise DivergenceError(f"diverged at snapshot {t}, cycle {cycle}: {exc}", model, report)
            report.rows.append((t, cycle, lf, ls, config.lr))
        if config.cycles_per_snapshot:
            report.snapshot_loss[t] = report.rows[-1][2:4]
        if on_snapshot is not None:
            on_snapshot(t, model, buffer)

    if model is None:
        raise ValueError("empty snapshot stream")
    report.buffer = buffer.accounting()
    report.buffer.update(k=k, T_s=T_s, T_f=config.T_f, last_t=last_t)
    report.wall_clock = time.perf_counter() - t0
    if reference is not None:
        _final_metrics(model, reference, report)
    return model, report


def train_offline(config: TrainConfig, dataset: MeshDataset):
    """Time-minibatched training with access to every snapshot.

    The sketched variants sketch each snapshot once (seed from the master
    seed and snapshot index) and then only see the sketched targets.
    """
    if not config.offline:
        raise ValueError(f"mode {config.mode} is in-situ; use train_insitu")
    t0 = time.perf_counter()
    X = dataset.X
    n, T, c = dataset.n, dataset.T, dataset.c
    kind = config.sketch_kind
    model = _new_model(config, dataset.d, c, T)
    report = TrainReport(config=asdict(config), seeds={"master": config.master_seed})
    rng = rng_from_seed(mix_seed(config.master_seed, _BATCH_STREAM))
    state = RAdamState(lr=config.lr)
    steps = T * config.cycles_per_snapshot if config.offline_steps is None else config.offline_steps
    data = dataset.snapshots.astype(config.dtype)

    if kind is not None:
        k = sketch_rows(config.sample_factor, n)
        records = []
        for t in range(T):
            seed = mix_seed(config.master_seed, t)
            records.append(SketchRecord(t, seed, k, construct_sketch(kind, n, k, seed).apply(data[t])))
            report.seeds[f"t{t}"] = seed
        report.buffer = {"k": k}

    def objective(params, idx):
        if kind is None:
            recon = full_graph(model, params, X, idx)
            loss = _relative_graph(recon, data[idx])
            return loss, loss, None
        recs = [records[i] for i in idx]
        recon = full_graph(model, params, X, idx)
        ops = SketchBatch([r.operator(kind, n) for r in recs])
        sk = ad.linear_map(recon, ops.apply, ops.adjoint, op="sketch")
        loss = _relative_graph(sk, np.stack([r.SU for r in recs]))
        return loss, loss, loss

    for step in range(steps):
        idx = np.sort(rng.choice(T, size=min(config.time_batch, T), replace=False))
        try:
            _, lf, ls = _step(model, state, lambda p: objective(p, idx))
        except ad.NonFiniteError as exc:
            report.wall_clock = time.perf_counter() - t0
            raise DivergenceError(f"diverged at step {step}: {exc}", model, report)
        report.rows.append((-1, step, lf, ls, config.lr))
    report.wall_clock = time.perf_counter() - t0
    _final_metrics(model, dataset, report)
    return model, report


def train(config: TrainConfig, dataset: MeshDataset):
    """Dispatch on mode; in-situ modes stream ``dataset`` once."""
    from .dataio import stream_from

    if config.offline:
        return train_offline(config, dataset)
    return train_insitu(config, stream_from(dataset), reference=dataset)


# evaluation ------------------------------------------------------------------------

def reconstruct(model: CompressorModel, X, times) -> np.ndarray:
    return full_forward(model, X, np.asarray(times))


def evaluate(model: CompressorModel, dataset: MeshDataset, recon=None) -> dict:
    """RFE, per-snapshot PSNR / frame loss, and the compression rate."""
    if recon is None:
        recon = reconstruct(model, dataset.X, np.arange(dataset.T))
    return metrics_from(dataset.snapshots, recon, model.n_params)


def metrics_from(U, recon, n_params: int | None = None) -> dict:
    U = np.asarray(U)
    T, n, c = U.shape
    psnrs = []
    for t in range(T):
        try:
            psnrs.append(psnr(U[t], recon[t]))
        except PSNRUndefinedError:
            psnrs.append(math.nan)
    finite = [p for p in psnrs if not math.isnan(p)]
    out = {
        "rfe": rfe(U, recon),
        "psnr": float(np.mean(finite)) if finite else math.nan,
        "psnr_per_snapshot": psnrs,
        "frame_loss": [loss_frame(U[t], recon[t]) for t in range(T)],
    }
    if n_params is not None:
        out["n_params"] = int(n_params)
        out["compression_rate"] = compression_rate(T, n, c, n_params)
    return out


def _final_metrics(model, dataset, report):
    m = evaluate(model, dataset)
    report.test_loss = dict(enumerate(m["frame_loss"]))
    report.metrics = {k: m[k] for k in ("rfe", "psnr", "compression_rate", "n_params")}
    report.metrics["psnr_per_snapshot"] = m["psnr_per_snapshot"]
