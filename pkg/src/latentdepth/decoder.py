"""Linear latent decoder: rho(z) = clamp(mean + sum_k z_k B_k).

Stands in for an image-conditioned network. Two ways to build the basis:
an SVD fit to training rho maps, or a fixed coarse grid whose cells are
bilinearly upsampled to full resolution.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .codec import RHO_MIN, TransformedDepth

log = logging.getLogger(__name__)

LATENT_GRID = (12, 16)
MAGIC = b"LDBASIS1"
MODES = ("svd", "grid", "mean")


@dataclass(frozen=True)
class ShapeBasis:
    mean_rho: np.ndarray
    basis: np.ndarray  # latent_dim x H x W
    mode: str = "svd"
    latent_grid_shape: tuple = LATENT_GRID
    trained_on: dict = field(default_factory=dict)

    @property
    def latent_dim(self):
        return self.basis.shape[0]

    @property
    def shape(self):
        return self.mean_rho.shape

    def flat(self):
        return self.basis.reshape(self.latent_dim, -1)

    def with_mean(self, mean_rho):
        mean_rho = np.broadcast_to(np.asarray(mean_rho, dtype=np.float64), self.shape).copy()
        return ShapeBasis(mean_rho, self.basis, self.mode, self.latent_grid_shape, self.trained_on)


def affine_rho(basis: ShapeBasis, z):
    """Unclamped mean + B^T z, flattened. einsum keeps the reduction order fixed."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (basis.latent_dim,):
        raise ValueError(f"latent code has shape {z.shape}, expected ({basis.latent_dim},)")
    flat = basis.mean_rho.reshape(-1)
    if basis.latent_dim == 0:
        return flat.copy()
    return flat + np.einsum("k,kn->n", z, basis.flat(), optimize=False)


def decode(basis: ShapeBasis, z, alpha=1.0, rho_min=RHO_MIN):
    """Decode a latent code to a transformed depth map.

    Pixels that hit the clamp are reported in ``clamped`` so linearity checks
    can exclude them.
    """
    raw = affine_rho(basis, z).reshape(basis.shape)
    rho = np.clip(raw, rho_min, 1.0)
    t = TransformedDepth(rho, float(alpha), np.ones(basis.shape, dtype=bool))
    t.clamped = raw != rho
    return t


def _bilinear_weights(n_out, n_in):
    """n_out x n_in interpolation matrix mapping coarse nodes to fine pixel centres.

    Coarse node k sits at fine coordinate k * (n_out - 1) / (n_in - 1), so the
    corner nodes land on the corner pixels.
    """
    A = np.zeros((n_out, n_in))
    if n_in == 1:
        A[:, 0] = 1.0
        return A
    pos = np.arange(n_out) * (n_in - 1) / max(n_out - 1, 1)
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
    f = pos - i0
    A[np.arange(n_out), i0] = 1.0 - f
    A[np.arange(n_out), i0 + 1] = f
    return A


def upsample(coarse, h, w):
    """Bilinear upsampling of a coarse grid to h x w pixels."""
    coarse = np.asarray(coarse, dtype=np.float64)
    Ay = _bilinear_weights(h, coarse.shape[0])
    Ax = _bilinear_weights(w, coarse.shape[1])
    return np.einsum("ia,ab,jb->ij", Ay, coarse, Ax, optimize=False)


def coarse_grid_basis(h, w, coarse=LATENT_GRID, mean_rho=0.5):
    """One basis map per coarse cell; the maps form a partition of unity."""
    gh, gw = coarse
    Ay = _bilinear_weights(h, gh)
    Ax = _bilinear_weights(w, gw)
    basis = np.einsum("ia,jb->abij", Ay, Ax, optimize=False).reshape(gh * gw, h, w)
    mean = np.broadcast_to(np.asarray(mean_rho, dtype=np.float64), (h, w)).copy()
    return ShapeBasis(mean, basis, "grid", (gh, gw), {"source": "coarse-grid"})


def fit_basis(train_rho, latent_dim, features=None):
    """Fit mean and orthonormal basis maps from a stack of rho grids.

    Without features the mean is the per-pixel average. With features (one
    vector per grid) the mean is replaced by the least-squares projection of
    the stack onto the feature column space, evaluated at the feature average,
    and the basis comes from the residual that features cannot explain.
    """
    stack = np.stack([np.asarray(r, dtype=np.float64) for r in train_rho])
    n, h, w = stack.shape
    Y = stack.reshape(n, -1)
    if features is None:
        mean = Y.mean(axis=0)
        resid = Y - mean
        trained = {"source": "svd", "n_train": n}
    else:
        F = np.column_stack([np.ones(n), np.asarray(features, dtype=np.float64).reshape(n, -1)])
        coef, *_ = np.linalg.lstsq(F, Y, rcond=None)
        resid = Y - F @ coef
        mean = F.mean(axis=0) @ coef
        trained = {"source": "svd+features", "n_train": n, "feature_dim": F.shape[1] - 1}
    k = int(latent_dim)
    if k < 0:
        raise ValueError("latent_dim must be non-negative")
    if k > n - 1:
        log.warning("only %d training grids; reducing latent_dim %d -> %d", n, k, max(n - 1, 0))
        k = max(n - 1, 0)
    if k == 0:
        basis = np.zeros((0, h, w))
    else:
        _, s, Vt = np.linalg.svd(resid, full_matrices=False)
        basis = Vt[:k].reshape(k, h, w)
        trained["singular_values"] = s[:k].tolist()
    return ShapeBasis(mean.reshape(h, w), basis, "svd", LATENT_GRID, trained)


def project_codes(basis: ShapeBasis, rho):
    """Least-squares latent code reproducing rho (orthonormal or not)."""
    if basis.latent_dim == 0:
        return np.zeros(0)
    r = np.asarray(rho, dtype=np.float64).reshape(-1) - basis.mean_rho.reshape(-1)
    z, *_ = np.linalg.lstsq(basis.flat().T, r, rcond=None)
    return z


def save_basis(path, basis: ShapeBasis):
    """Layout (little-endian): magic[8], u32 H, u32 W, u32 latent_dim, u32 grid_h,
    u32 grid_w, u8[8] mode (NUL padded), then float32 mean (H*W) and basis (K*H*W)."""
    h, w = basis.shape
    mode = basis.mode.encode("ascii")[:8].ljust(8, b"\0")
    header = MAGIC + struct.pack("<5I", h, w, basis.latent_dim, *basis.latent_grid_shape) + mode
    with open(path, "wb") as f:
        f.write(header)
        f.write(basis.mean_rho.astype("<f4").tobytes())
        f.write(basis.basis.astype("<f4").tobytes())


def load_basis(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a basis file")
    h, w, k, gh, gw = struct.unpack("<5I", data[8:28])
    mode = data[28:36].rstrip(b"\0").decode("ascii")
    body = np.frombuffer(data, dtype="<f4", offset=36).astype(np.float64)
    if body.size != h * w * (k + 1):
        raise ValueError(f"{path}: truncated basis file")
    mean = body[: h * w].reshape(h, w)
    basis = body[h * w:].reshape(k, h, w)
    return ShapeBasis(mean, basis, mode, (gh, gw), {"source": str(path)})
