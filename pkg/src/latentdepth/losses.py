"""Photometric, depth-consistency, supervised and total self-supervised losses."""

from dataclasses import dataclass, field

import numpy as np

from .codec import alpha_loss, TransformedDepth

LAMBDA_PHOTO = 100.0
LAMBDA_DEPTH = 10.0
LAMBDA_Z = 1e-4
LAMBDA_W = 1e-4
HUBER_DELTA = 0.1


@dataclass
class LossBreakdown:
    photo: float = 0.0
    depth: float = 0.0
    alpha: float = 0.0
    z_reg: float = 0.0
    w_reg: float = 0.0
    total: float = 0.0
    pixels_used: dict = field(default_factory=dict)
    flagged: list = field(default_factory=list)

    def finalize(self):
        self.total = self.photo + self.depth + self.alpha + self.z_reg + self.w_reg
        return self


def huber(e, delta=HUBER_DELTA):
    if delta <= 0:
        raise ValueError("huber delta must be positive")
    a = np.abs(e)
    return np.where(a <= delta, 0.5 * a * a / delta, a - 0.5 * delta)


def huber_grad(e, delta=HUBER_DELTA):
    return np.clip(e / delta, -1.0, 1.0)


def _masked_mean_huber(residual, mask, delta, raw_sum):
    n = int(np.count_nonzero(mask))
    if n == 0:
        return 0.0, 0
    s = float(np.sum(huber(residual[mask], delta)))
    return (s if raw_sum else s / n), n


def photometric_loss(view_i, warped_images, masks, lam=LAMBDA_PHOTO, delta=HUBER_DELTA,
                     raw_sum=False):
    """Photometric term for reference view i.

    warped_images holds I_j o q_ij for each neighbour, masks the matching
    MaskGrid (or boolean grid). Returns (loss, kept pixel counts, flagged neighbour indices).
    """
    if len(warped_images) == 0:
        raise ValueError("photometric loss needs at least one neighbour")
    image_i = view_i.image if hasattr(view_i, "image") else np.asarray(view_i, dtype=np.float64)
    if image_i.ndim == 2:
        image_i = image_i[..., None]
    total, counts, flagged = 0.0, [], []
    for j, (warped, m) in enumerate(zip(warped_images, masks)):
        m = getattr(m, "combined", m)
        warped = warped if warped.ndim == 3 else warped[..., None]
        residual = np.mean(warped - image_i, axis=-1)
        term, n = _masked_mean_huber(residual, m, delta, raw_sum)
        if n == 0:
            flagged.append(j)
        total += term
        counts.append(n)
    return lam * total, counts, flagged


def depth_consistency_loss(neighbors, lam=LAMBDA_DEPTH, delta=HUBER_DELTA, raw_sum=False):
    """neighbors: iterable of (D_j sampled at q_ij, D_ij, alpha_j, mask)."""
    total, counts, flagged = 0.0, [], []
    for j, (d_sampled, d_proj, alpha_j, m) in enumerate(neighbors):
        if alpha_j <= 0:
            raise ValueError("alpha_j must be positive")
        m = getattr(m, "combined", m)
        residual = (np.asarray(d_sampled) - np.asarray(d_proj)) / alpha_j
        term, n = _masked_mean_huber(residual, m, delta, raw_sum)
        if n == 0:
            flagged.append(j)
        total += term
        counts.append(n)
    return lam * total, counts, flagged


def supervised_loss(D, D_gt, z, weights_norm, lam1=LAMBDA_Z, lam2=LAMBDA_W):
    if D.shape != D_gt.shape:
        raise ValueError("depth maps differ in shape")
    if lam1 < 0 or lam2 < 0:
        raise ValueError("regularization weights must be non-negative")
    overlap = D.valid & D_gt.valid
    if not overlap.any():
        raise ValueError("no valid overlap between prediction and ground truth")
    diff = D.d[overlap] - D_gt.d[overlap]
    z = np.asarray(z, dtype=np.float64)
    return float(np.sum(diff * diff) + lam1 * np.sum(z * z) + lam2 * weights_norm**2)


@dataclass
class ViewTerms:
    """Per-view inputs to the total loss: already-evaluated photo/depth terms plus rho and z."""
    photo: float
    depth: float
    rho: TransformedDepth
    z: np.ndarray
    pixels_used: int = 0


def total_self_supervised(parts, weights_norm=0.0, lam1=LAMBDA_Z, lam2=LAMBDA_W):
    """Sum of per-view photo, depth, alpha and code terms plus the weight penalty."""
    parts = list(parts)
    if len(parts) < 2:
        raise ValueError("a co-visible set needs at least two views")
    out = LossBreakdown()
    for i, p in enumerate(parts):
        out.photo += p.photo
        out.depth += p.depth
        out.alpha += alpha_loss(p.rho)
        z = np.asarray(p.z, dtype=np.float64)
        out.z_reg += lam1 * float(np.sum(z * z))
        out.pixels_used[i] = p.pixels_used
    out.w_reg = lam2 * weights_norm**2
    return out.finalize()
