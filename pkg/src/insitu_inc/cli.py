"""Command-line entry point: ``insitu-inc {gen,compress,reconstruct,eval,dimest,sweep}``.

Exit codes: 0 success, 1 training diverged, 2 usage error, 3 data mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import fields

import numpy as np

from . import dataio, dimest
from .model import load_model, save_model
from .trainer import DESK_PRESET, MODES, DivergenceError, TrainConfig, metrics_from, reconstruct, train

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE, EXIT_MISMATCH = 0, 1, 2, 3


class DataMismatch(Exception):
    pass


def _fmt(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    if isinstance(v, list):
        return [_fmt(x) for x in v]
    return v


def _dump(obj, path=None):
    text = json.dumps({k: _fmt(v) for k, v in obj.items()}, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    print(text)


# gen ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.kind == "pulse2d":
        ds = dataio.gen_pulse2d(args.side, args.T, args.seed)
    else:
        ds = dataio.gen_branch3d(args.n_points, args.T, args.seed)
    size = dataio.write_dataset(args.output, ds)
    print(json.dumps({"path": args.output, "kind": args.kind, "n": ds.n, "d": ds.d, "T": ds.T, "c": ds.c,
                      "bytes": size, "data_MB": 4e-6 * ds.T * ds.n * ds.c}, sort_keys=True))
    return EXIT_OK


# compress -------------------------------------------------------------------------

_CONFIG_FLAGS = {f.name for f in fields(TrainConfig)} - {"mode"}


def _config_from(args) -> TrainConfig:
    kw = dict(DESK_PRESET) if getattr(args, "desk", False) else {}
    kw.update({name: getattr(args, name) for name in _CONFIG_FLAGS if getattr(args, name, None) is not None})
    return TrainConfig(mode=args.mode, **kw)


def cmd_compress(args) -> int:
    ds = dataio.read_dataset(args.data)
    config = _config_from(args)
    os.makedirs(args.out, exist_ok=True)
    try:
        model, report = train(config, ds)
    except DivergenceError as exc:
        if exc.report is not None:
            exc.report.write_csv(os.path.join(args.out, "report.csv"))
            exc.report.metrics["diverged"] = str(exc)
            exc.report.write_summary(os.path.join(args.out, "summary.json"))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    artifact = os.path.join(args.out, "model.incm")
    nbytes = save_model(artifact, model)
    report.metrics["artifact_bytes"] = nbytes
    report.metrics["byte_compression_rate"] = 4 * ds.T * ds.n * ds.c / nbytes
    report.config["data"] = os.path.abspath(args.data)
    report.write_csv(os.path.join(args.out, "report.csv"))
    report.write_summary(os.path.join(args.out, "summary.json"))
    print(json.dumps({k: _fmt(report.metrics[k]) for k in ("rfe", "psnr", "compression_rate", "artifact_bytes")},
                     sort_keys=True))
    return EXIT_OK


# reconstruct / eval -----------------------------------------------------------------

def _parse_times(spec, T):
    if not spec:
        return list(range(T))
    out = []
    for part in spec.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if any(t < 0 or t >= T for t in out):
        raise DataMismatch(f"requested times outside [0, {T - 1}]")
    return out


def cmd_reconstruct(args) -> int:
    model = load_model(args.model)
    mesh = dataio.read_dataset(args.data)
    if mesh.d + 1 != model.target_layout.in_dim:
        raise DataMismatch(f"mesh has d={mesh.d}, model expects d={model.target_layout.in_dim - 1}")
    if mesh.c != model.target_layout.out_dim:
        raise DataMismatch(f"mesh file has c={mesh.c}, model emits c={model.target_layout.out_dim}")
    T = args.T or model.t_max
    times = _parse_times(args.times, T)
    recon = reconstruct(model, mesh.X, times).astype(np.float32)
    dataio.write_dataset(args.output, dataio.MeshDataset(mesh.X, recon, "reconstruction"))
    print(json.dumps({"path": args.output, "times": len(times), "n": mesh.n}))
    return EXIT_OK


def cmd_eval(args) -> int:
    ref = dataio.read_dataset(args.reference)
    rec = dataio.read_dataset(args.reconstruction)
    if ref.snapshots.shape != rec.snapshots.shape or ref.X.shape != rec.X.shape:
        raise DataMismatch(f"shape mismatch: {ref.snapshots.shape} vs {rec.snapshots.shape}")
    m = metrics_from(ref.snapshots, rec.snapshots)
    out = {"rfe": m["rfe"], "psnr_mean": m["psnr"], "psnr": m["psnr_per_snapshot"]}
    _dump(out, args.output)
    return EXIT_OK


# dimest ---------------------------------------------------------------------------

def cmd_dimest(args) -> int:
    M = args.M
    n = args.n
    if args.model:
        model = load_model(args.model)
        mesh = dataio.read_dataset(args.data)
        M = float(dimest.lpca_dimension(model, mesh.X, args.t, args.samples, args.perturb,
                                        args.threshold, args.seed))
        n = mesh.n if n is None else n
    if M is None or n is None:
        raise UsageError("need --M and --n, or --model with --data")
    try:
        est = dimest.estimate(args.full_loss, args.sketch_loss, M, n)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _dump(est.to_dict(), args.output)
    return EXIT_OK


# sweep ---------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    if not args.factors:
        raise UsageError("empty sample-factor list")
    ds = dataio.read_dataset(args.data)
    rows = []
    for sf in args.factors:
        for trial in range(args.trials):
            seed = args.seed + trial
            args_cfg = argparse.Namespace(**vars(args))
            args_cfg.sample_factor, args_cfg.master_seed = sf, seed
            try:
                _, report = train(_config_from(args_cfg), ds)
            except DivergenceError as exc:
                print(f"error: factor {sf} seed {seed}: {exc}", file=sys.stderr)
                return EXIT_DIVERGED
            rows.append((sf, seed, report.metrics["rfe"], report.metrics["psnr"]))
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_factor", "seed", "rfe", "psnr"])
        w.writerows(rows)
    summary_path = os.path.splitext(args.output)[0] + "_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_factor", "rfe_mean", "rfe_std", "psnr_mean", "psnr_std", "trials"])
        for sf in args.factors:
            r = np.array([x[2] for x in rows if x[0] == sf])
            p = np.array([x[3] for x in rows if x[0] == sf])
            w.writerow([sf, r.mean(), r.std(), p.mean(), p.std(), len(r)])
            print(f"sample_factor={sf:g}: RFE {r.mean():.4g} +- {r.std():.2g}  PSNR {p.mean():.4g} +- {p.std():.2g}")
    return EXIT_OK


# parser ---------------------------------------------------------------------------

class UsageError(Exception):
    pass


def _train_flags(p):
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--desk", action="store_true", help="start from the desk-scale preset instead of the defaults")
    p.add_argument("--sample-factor", dest="sample_factor", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--lam", "--lambda", dest="lam", type=float)
    p.add_argument("--b-f", dest="b_f", type=int)
    p.add_argument("--b-s", dest="b_s", type=int)
    p.add_argument("--cycles", dest="cycles_per_snapshot", type=int)
    p.add_argument("--T-f", dest="T_f", type=int)
    p.add_argument("--T-s", dest="T_s", type=int)
    p.add_argument("--time-batch", dest="time_batch", type=int)
    p.add_argument("--offline-steps", dest="offline_steps", type=int)
    p.add_argument("--precision", choices=("float32", "float64"))
    p.add_argument("--hyper-width", dest="hyper_width", type=int)
    p.add_argument("--hyper-blocks", dest="hyper_blocks", type=int)
    p.add_argument("--target-width", dest="target_width", type=int)
    p.add_argument("--target-blocks", dest="target_blocks", type=int)
    p.add_argument("--omega0", type=float)
    p.add_argument("--hyper-omega0", dest="hyper_omega0", type=float)
    p.add_argument("--hidden-omega", dest="hidden_omega", type=float)
    p.add_argument("--init-scale", dest="init_scale", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="insitu-inc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic INCD dataset")
    p.add_argument("--kind", choices=("pulse2d", "branch3d"), required=True)
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--n-points", dest="n_points", type=int, default=1000)
    p.add_argument("--T", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("compress", help="train a compressor; writes model.incm, report.csv, summary.json")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", dest="master_seed", type=int)
    _train_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("reconstruct", help="evaluate a model on the mesh of an INCD file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="INCD file providing the mesh")
    p.add_argument("--times", help="e.g. 0,5,10-12 (default: all)")
    p.add_argument("--T", type=int, help="number of snapshots (default: the model's run length)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="RFE and PSNR between two INCD files")
    p.add_argument("reference")
    p.add_argument("reconstruction")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dimest", help="estimate the sketch sample factor")
    p.add_argument("--full-loss", dest="full_loss", type=float, required=True)
    p.add_argument("--sketch-loss", dest="sketch_loss", type=float, required=True)
    p.add_argument("--M", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--t", type=int, default=0)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--perturb", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_dimest)

    p = sub.add_parser("sweep", help="repeated trials over sample factors")
    p.add_argument("--data", required=True)
    p.add_argument("--factors", type=float, nargs="*", default=[])
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except dataio.DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
