"""Per-pixel validity masks for a view pair: bounds, chirality, occlusion, viewing angle."""

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

TAU = 4.44
MAX_VIEW_ANGLE_DEG = 85.0
MIN_ROBUST_SAMPLES = 16


@dataclass
class MaskGrid:
    bounds: np.ndarray
    chirality: np.ndarray
    occlusion: np.ndarray
    viewing_angle: np.ndarray
    combined: np.ndarray
    counts: dict = field(default_factory=dict)


def median_mad(values):
    """Median and raw (unscaled) median absolute deviation."""
    med = np.median(values)
    return med, np.median(np.abs(values - med))


def occlusion_mask(D_j_sampled, D_ij, valid, tau=TAU, rule="one_sided"):
    """True = keep. Occluded pixels have sampled depth far below the projected depth.

    rule="one_sided" drops pixels with delta <= med - tau*mad.
    rule="literal" applies the inequality delta >= med - tau*mad as printed,
    which drops almost every pixel; it is kept only for comparison.
    """
    valid = np.asarray(valid, dtype=bool)
    keep = np.ones(valid.shape, dtype=bool)
    if np.count_nonzero(valid) < MIN_ROBUST_SAMPLES:
        log.warning("occlusion test skipped: %d valid pixels", np.count_nonzero(valid))
        return keep
    delta = np.asarray(D_j_sampled, dtype=np.float64) - np.asarray(D_ij, dtype=np.float64)
    med, mad = median_mad(delta[valid])
    thresh = med - tau * mad
    if rule == "one_sided":
        if mad == 0:
            return keep
        occluded = delta <= thresh
    elif rule == "literal":
        occluded = delta >= thresh
    else:
        raise ValueError(f"unknown occlusion rule {rule!r}")
    keep[valid & occluded] = False
    return keep


def viewing_angles(normals, X):
    """Angle in degrees between the surface normal and the viewing ray (0 = head-on)."""
    dirs = X / np.maximum(np.linalg.norm(X, axis=-1, keepdims=True), 1e-300)
    cosang = np.abs(np.sum(normals * dirs, axis=-1))
    return np.degrees(np.arccos(np.clip(cosang, 0.0, 1.0)))


def viewing_angle_mask(normals, X, normals_valid=None, max_angle_deg=MAX_VIEW_ANGLE_DEG):
    keep = viewing_angles(normals, X) <= max_angle_deg
    if normals_valid is not None:
        keep &= normals_valid
    return keep


def combine(bounds, chirality, occlusion, viewing_angle):
    grids = [np.asarray(g, dtype=bool) for g in (bounds, chirality, occlusion, viewing_angle)]
    if len({g.shape for g in grids}) != 1:
        raise ValueError("mask grids must share a shape")
    combined = grids[0] & grids[1] & grids[2] & grids[3]
    counts = {
        "total": combined.size,
        "kept": int(combined.sum()),
        "out_of_bounds": int((~grids[0]).sum()),
        "behind_camera": int((~grids[1]).sum()),
        "occluded": int((~grids[2]).sum()),
        "shallow_angle": int((~grids[3]).sum()),
    }
    return MaskGrid(*grids, combined=combined, counts=counts)
