# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: light
#       format_version: '1.5'
#       jupytext_version: 1.16.3
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# # Forgetting, and how a sketched buffer prevents it
#
# Three runs on the same drifting pulse:
#
# * offline: every optimiser step sees a random mini-batch of snapshots
# * in-situ baseline: each snapshot is seen once, then thrown away
# * in-situ FJLT: as above, but 5% sketches of old snapshots stay in a buffer
#
# A smaller grid than the acceptance run keeps this under a minute.

# +
import time

import numpy as np

from insitu_inc.dataio import gen_pulse2d
from insitu_inc.trainer import DESK_PRESET, TrainConfig, train
# -

ds = gen_pulse2d(grid_side=20, T=32, seed=0)
ds.n, ds.T

runs = {}
for mode in ("offline-baseline", "insitu-baseline", "insitu-fjlt"):
    t0 = time.perf_counter()
    cfg = TrainConfig(mode=mode, sample_factor=5.0, **DESK_PRESET)
    model, report = train(cfg, ds)
    runs[mode] = report
    print(f"{mode:17s} RFE {report.metrics['rfe']:.4f}  PSNR {report.metrics['psnr']:6.2f} dB  "
          f"({time.perf_counter() - t0:.1f}s)")

# All three share one layout, so they share one compression rate. On this
# small grid it is modest; the 32x32 acceptance grid gets 17.6x.

print(f"compression rate {runs['insitu-fjlt'].metrics['compression_rate']:.1f}x")

# ## Per-snapshot error of the final model
#
# The baseline fits the last snapshot and loses the early ones. The sketched
# buffer keeps them close to the offline curve.

header = "t     " + "  ".join(f"{m:>17s}" for m in runs)
print(header)
for t in range(0, ds.T, 4):
    print(f"{t:<5d} " + "  ".join(f"{runs[m].test_loss[t]:17.4f}" for m in runs))

# ## Training trace
#
# Each row of the report is one optimiser step. For the FJLT run the two
# terms of the objective are kept apart.

rows = runs["insitu-fjlt"].rows
last = {}
for t, cycle, lf, ls, lr in rows:
    last[t] = (lf, ls)
for t in (0, 8, 16, 31):
    lf, ls = last[t]
    print(f"after snapshot {t:2d}: L_full {lf:.4f}  L_sketch {ls if ls is None else round(ls, 4)}")
