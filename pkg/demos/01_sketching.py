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

# # Sketches you can rebuild from a seed
#
# The replay buffer never stores a sketch matrix. It stores the product
# `S U` and the integer seed that produced `S`. This script shows what that
# buys and what the two sketch kinds do to a spiky field.

# +
import numpy as np

from insitu_inc.dataio import gen_pulse2d
from insitu_inc.sketch import apply, construct_sketch, mix_seed
# -

# A single pulse snapshot: 1024 grid nodes, one channel.

ds = gen_pulse2d(32, 8, seed=3)
U = ds.snapshots[0]
n = ds.n
U.shape, float(U.max())

# Keep 5% of the rows. `mix_seed` gives every snapshot its own 64-bit seed.

k = round(0.05 * n)
seed = mix_seed(0, 0)
fjlt = construct_sketch("fjlt", n, k, seed)
sub = construct_sketch("subsample", n, k, seed)
k, seed

# Rebuilding the operator from `(kind, n, k, seed)` gives the same bytes,
# which is all the buffer relies on.

again = construct_sketch("fjlt", n, k, seed)
apply(fjlt, U).tobytes() == apply(again, U).tobytes()

# ## Norm preservation
#
# Subsampling only sees the rows it happens to pick. The pulse is compact, so
# most picks land on near-zero values and the sketched norm swings a lot
# between seeds. The FJLT mixes every row into every output first.

# +
def norm_ratios(kind, trials=300):
    full = np.sum(U.astype(np.float64) ** 2)
    out = []
    for s in range(trials):
        op = construct_sketch(kind, n, k, mix_seed(1, s))
        SU = apply(op, U.astype(np.float64))
        if kind == "subsample":
            SU = SU * np.sqrt(n / k)         # rescale so both are unbiased
        out.append(np.sum(SU**2) / full)
    return np.array(out)


for kind in ("subsample", "fjlt"):
    r = norm_ratios(kind)
    print(f"{kind:10s} mean {r.mean():.3f}  std {r.std():.3f}  range [{r.min():.2f}, {r.max():.2f}]")
# -

# Both are right on average; the FJLT has a much smaller spread, and
# that spread is what the sketched loss term inherits.

# ## Cost of the buffer
#
# One full snapshot plus T-1 sketches at 5% costs far less than keeping every
# snapshot.

T = 64
full_values = T * n
buffer_values = 1 * n + (T - 1) * k
print(f"all snapshots: {full_values} values; buffer: {buffer_values} values "
      f"+ {T - 1} seeds ({buffer_values / full_values:.1%})")
