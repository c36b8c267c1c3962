"""Transformed-depth parameterization.

Depth D in [0, inf) is mapped to rho = alpha / (D + alpha) in (0, 1], where
alpha is the mean depth of the map. Invalid pixels carry rho = 1 (D = 0) and
an explicit boolean grid so sentinels never leak into losses.
"""

from dataclasses import dataclass

import numpy as np

RHO_MIN = 1e-4


@dataclass
class DepthMap:
    d: np.ndarray
    valid: np.ndarray

    @classmethod
    def from_array(cls, d, valid=None):
        d = np.asarray(d, dtype=np.float64)
        if valid is None:
            valid = np.isfinite(d) & (d > 0)
        valid = np.asarray(valid, dtype=bool)
        return cls(np.where(valid, d, 0.0), valid)

    @property
    def shape(self):
        return self.d.shape


@dataclass
class TransformedDepth:
    rho: np.ndarray
    alpha: float
    valid: np.ndarray

    @property
    def shape(self):
        return self.rho.shape


def _check_alpha(alpha):
    if not np.isfinite(alpha) or alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")


def encode(d: DepthMap, alpha: float) -> TransformedDepth:
    _check_alpha(alpha)
    if np.any(d.d[d.valid] < 0):
        raise ValueError("depth must be non-negative on valid pixels")
    depth = np.where(d.valid, d.d, 0.0)
    rho = alpha / (depth + alpha)
    return TransformedDepth(rho, float(alpha), d.valid.copy())


def decode(t: TransformedDepth, rho_min: float = RHO_MIN) -> DepthMap:
    _check_alpha(t.alpha)
    rho = np.clip(t.rho, rho_min, 1.0)
    depth = t.alpha * (1.0 - rho) / rho
    return DepthMap(np.where(t.valid, depth, 0.0), t.valid.copy())


def rho_to_depth(rho, alpha):
    """Array form of :func:`decode` without clamping or masks."""
    return alpha * (1.0 - rho) / rho


def alpha_loss(t: TransformedDepth) -> float:
    """Squared deviation of alpha from the mean of the decoded depth, in units of alpha."""
    n = int(np.count_nonzero(t.valid))
    if n == 0:
        raise ValueError("alpha_loss needs at least one valid pixel")
    rho = t.rho[t.valid]
    mean_ratio = np.sum((1.0 - rho) / rho) / n
    return float((1.0 - mean_ratio) ** 2)


def alpha_loss_grad(rho, valid=None):
    """Loss value and its derivative with respect to each rho entry."""
    if valid is None:
        valid = np.ones(rho.shape, dtype=bool)
    n = int(np.count_nonzero(valid))
    if n == 0:
        raise ValueError("alpha_loss needs at least one valid pixel")
    ratio = np.where(valid, (1.0 - rho) / rho, 0.0)
    m = np.sum(ratio) / n
    grad = np.where(valid, 2.0 * (1.0 - m) / (n * rho**2), 0.0)
    return float((1.0 - m) ** 2), grad
