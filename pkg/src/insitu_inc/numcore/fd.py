"""Central finite differences, used as the oracle for the reverse pass."""

from __future__ import annotations

import numpy as np


def finite_diff_gradient(f, params, h: float = 1e-6, indices=None):
    """Central-difference gradient of scalar ``f`` at ``params`` in float64.

    ``indices`` restricts the probe to a subset of flat positions; the other
    entries of the returned array stay zero.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(params, dtype=np.float64, copy=True)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        old = flat[i]
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value probing index {i}")
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(x.shape)
