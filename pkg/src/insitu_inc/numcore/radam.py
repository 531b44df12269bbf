"""Rectified Adam.

Follows Liu et al.'s variance-rectified update: while the approximated SMA
length ``rho_t`` is at or below the threshold the step is plain bias-corrected
momentum, afterwards the adaptive step is scaled by the rectification term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError


@dataclass
class RAdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rho_threshold: float = 4.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self) -> "RAdamState":
        return RAdamState(self.lr, self.beta1, self.beta2, self.eps, self.rho_threshold, self.step,
                          {k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()})


def rho(step: int, beta2: float) -> float:
    """Length of the approximated simple moving average at ``step``."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2**step
    return rho_inf - 2.0 * step * b2t / (1.0 - b2t)


def rectification(step: int, beta2: float) -> float:
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    r = rho(step, beta2)
    return math.sqrt((r - 4.0) * (r - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * r))


def radam_step(params: dict, grads: dict, state: RAdamState):
    """One RAdam update. Returns ``(new_params, state)``; inputs are not mutated
    except for ``state``, which is advanced in place and also returned."""
    if set(params) != set(grads):
        raise KeyError("params and grads must have the same keys")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    rectified = rho(t, b2) > state.rho_threshold
    r = rectification(t, b2) if rectified else 0.0

    new = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        dt = p.dtype.type
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = dt(b1) * m + dt(1.0 - b1) * g
        v = dt(b2) * v + dt(1.0 - b2) * (g * g)
        m_hat = m / dt(bc1)
        if rectified:
            step = dt(state.lr * r) * m_hat * (dt(math.sqrt(bc2)) / (np.sqrt(v) + dt(state.eps)))
        else:
            step = dt(state.lr) * m_hat
        out = p - step
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite RAdam update for {name!r} at step {t}")
        state.m[name] = m
        state.v[name] = v
        new[name] = out
    return new, state
