"""Theory-driven sketch-size estimate.

1. Local PCA dimension ``M`` of the network's output manifold, sampled by
   tiny Gaussian perturbations of the parameters around a trained point.
2. JL distortion ``eps`` from the ratio of sketched to full training losses:
   with relative losses squared, ``(1 + eps) / (1 - eps) = (sketch / full)^2``.
3. ``k = M / eps^2`` (log factors dropped), reported as ``100 k / n``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import CompressorModel, full_forward


@dataclass
class DimEstimate:
    M: float
    epsilon: float
    k_est: float
    sample_factor_pct: float

    def to_dict(self) -> dict:
        return asdict(self)


def pca_dimension(points, threshold: float = 0.95) -> int:
    """Number of principal components needed to explain ``threshold`` of the
    variance of a point cloud (rows are points)."""
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 2:
        raise ValueError("need at least two points in a 2-D array")
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    C = P - P.mean(axis=0)
    s = np.linalg.svd(C, compute_uv=False)
    var = s**2
    total = var.sum()
    if total <= 0 or not np.isfinite(total):
        raise ValueError("degenerate point cloud: all points identical")
    ratio = np.cumsum(var) / total
    # tiny slack so an exactly-attained threshold is not missed by rounding
    return int(np.searchsorted(ratio, threshold - 1e-12) + 1)


def perturbation_cloud(fn, p0, n_samples: int = 200, perturb_scale: float = 1e-5,
                       seed: int = 0) -> np.ndarray:
    """Rows ``fn(p0 + perturb_scale * z)`` for standard Gaussian ``z``, flattened."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    p0 = np.asarray(p0, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return np.array([np.ravel(fn(p0 + perturb_scale * rng.standard_normal(p0.shape)))
                     for _ in range(n_samples)])


def local_pca_dimension(fn, p0, n_samples: int = 200, perturb_scale: float = 1e-5,
                        threshold: float = 0.95, seed: int = 0) -> int:
    """Intrinsic dimension of the image of ``fn`` near ``p0``."""
    return pca_dimension(perturbation_cloud(fn, p0, n_samples, perturb_scale, seed), threshold)


def lpca_dimension(model: CompressorModel, X, t, n_samples: int = 200, perturb_scale: float = 1e-5,
                   threshold: float = 0.95, seed: int = 0) -> int:
    """Local PCA dimension of the reconstruction at time ``t`` in float64."""
    base = model.astype(np.float64)

    def recon(p):
        base.hyper_params = p
        return full_forward(base, X, t)

    return local_pca_dimension(recon, base.hyper_params.copy(), n_samples, perturb_scale, threshold, seed)


def epsilon_from_losses(full_loss: float, sketch_loss: float) -> float:
    if not full_loss > 0:
        raise ValueError("full_loss must be positive")
    if sketch_loss < full_loss:
        raise ValueError("sketch_loss < full_loss gives a negative distortion")
    r2 = (sketch_loss / full_loss) ** 2
    return (r2 - 1.0) / (r2 + 1.0)


def estimated_sample_factor(M: float, epsilon: float, n: int) -> float:
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if not M > 0 or n < 1:
        raise ValueError("need M > 0 and n >= 1")
    return 100.0 * (M / epsilon**2) / n


def estimate(full_loss: float, sketch_loss: float, M: float, n: int) -> DimEstimate:
    eps = epsilon_from_losses(full_loss, sketch_loss)
    pct = estimated_sample_factor(M, eps, n)
    return DimEstimate(float(M), eps, M / eps**2, pct)
