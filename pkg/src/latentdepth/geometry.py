"""Pinhole camera machinery.

Conventions: x right, y down, z forward. Pixel (0, 0) is the centre of the
top-left pixel. Poses map world to camera: X_cam = R @ X_world + t.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def normalized_grid(self, h, w):
        """H x W x 2 grid of normalized coordinates K^-1 (u, v, 1)."""
        u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy], axis=-1)

    def to_pixels(self, q):
        return self.fx * q[..., 0] + self.cx, self.fy * q[..., 1] + self.cy

    def as_tuple(self):
        return (self.fx, self.fy, self.cx, self.cy)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def inverse(self):
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other):
        """self after other: x -> self(other(x))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def apply(self, X):
        return X @ self.rotation.T + self.translation

    @property
    def center(self):
        """Camera centre in world coordinates when this is a world-to-camera pose."""
        return -self.rotation.T @ self.translation

    def is_rotation_valid(self, tol=1e-9):
        R = self.rotation
        return (np.abs(R @ R.T - np.eye(3)).max() <= tol
                and abs(np.linalg.det(R) - 1.0) <= tol)


def relative_transform(pose_i: RigidTransform, pose_j: RigidTransform) -> RigidTransform:
    """T_ij taking camera-i coordinates to camera-j coordinates."""
    return pose_j.compose(pose_i.inverse())


@dataclass
class PosedView:
    image: np.ndarray
    pose: RigidTransform
    intrinsics: Intrinsics
    Q: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim == 2:
            img = img[..., None]
        self.image = img
        if self.Q is None:
            self.Q = self.intrinsics.normalized_grid(*img.shape[:2])
        if not self.pose.is_rotation_valid():
            raise ValueError("pose rotation is not orthonormal with det +1")

    @property
    def shape(self):
        return self.image.shape[:2]


def backproject(Q, D):
    """X(p) = (Q(p), 1) * D(p)."""
    Q = np.asarray(Q, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if Q.shape[:-1] != D.shape:
        raise ValueError(f"shape mismatch {Q.shape} vs {D.shape}")
    return np.concatenate([Q, np.ones(D.shape + (1,))], axis=-1) * D[..., None]


def warp(X, T: RigidTransform, eps=0.0):
    """Transform points into camera j and project.

    Returns (q, depth, chirality). q is NaN where the third coordinate is
    exactly zero.
    """
    Y = T.apply(X)
    depth = Y[..., 2]
    chirality = depth > eps
    with np.errstate(divide="ignore", invalid="ignore"):
        q = Y[..., :2] / depth[..., None]
    q[depth == 0] = np.nan
    return q, depth, chirality


def bilinear_taps(x, y, h, w):
    """Top-left tap indices and in-bounds flags for continuous pixel positions."""
    finite = np.isfinite(x) & np.isfinite(y)
    xs = np.where(finite, x, -1.0)
    ys = np.where(finite, y, -1.0)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    # the last row/column is reachable: shift the cell inwards so the fraction is 1
    x0 = np.where(xs == w - 1, w - 2, x0)
    y0 = np.where(ys == h - 1, h - 2, y0)
    in_bounds = finite & (x0 >= 0) & (y0 >= 0) & (x0 + 1 <= w - 1) & (y0 + 1 <= h - 1)
    x0 = np.clip(x0, 0, max(w - 2, 0)).astype(np.int64)
    y0 = np.clip(y0, 0, max(h - 2, 0)).astype(np.int64)
    return x0, y0, in_bounds


def sample_with_taps(grid, x, y, x0, y0):
    """Bilinear sample using fixed top-left taps; fractions may leave [0, 1].

    Returns (values, d/dx, d/dy) each with trailing channel axis when grid has one.
    """
    squeeze = grid.ndim == 2
    g = grid[..., None] if squeeze else grid
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    v00 = g[y0, x0]
    v01 = g[y0, x0 + 1]
    v10 = g[y0 + 1, x0]
    v11 = g[y0 + 1, x0 + 1]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    val = top + fy * (bot - top)
    ddx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10)
    ddy = bot - top
    if squeeze:
        return val[..., 0], ddx[..., 0], ddy[..., 0]
    return val, ddx, ddy


def sample_bilinear(grid, coords):
    """Sample grid (H x W or H x W x C) at continuous pixel positions.

    coords has a trailing axis (x, y). Out-of-bounds samples are zero and
    flagged false in the returned mask; nothing is extrapolated.
    """
    grid = np.asarray(grid, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    h, w = grid.shape[:2]
    x, y = coords[..., 0], coords[..., 1]
    x0, y0, ok = bilinear_taps(x, y, h, w)
    xs = np.where(ok, x, x0)
    ys = np.where(ok, y, y0)
    val, _, _ = sample_with_taps(grid, xs, ys, x0, y0)
    mask = ok if val.ndim == ok.ndim else ok[..., None]
    return np.where(mask, val, 0.0), ok


def estimate_normals(X, min_norm=1e-12):
    """Unit normals from central-difference tangents (one-sided at borders).

    Normals face the camera (n . X <= 0). Returns (normals, valid).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 3 or X.shape[1] < 3:
        raise ValueError("normal estimation needs at least a 3x3 grid")
    du = np.gradient(X, axis=1)
    dv = np.gradient(X, axis=0)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1)
    scale = np.linalg.norm(du, axis=-1) * np.linalg.norm(dv, axis=-1)
    valid = np.isfinite(norm) & (norm > min_norm * np.maximum(scale, min_norm))
    n = np.where(valid[..., None], n / np.where(valid, norm, 1.0)[..., None], 0.0)
    flip = np.sum(n * X, axis=-1) > 0
    n[flip] *= -1.0
    return n, valid


def rotation_about(axis, angle):
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def look_at(center, target, up=(0.0, -1.0, 0.0)):
    """World-to-camera pose for a camera at `center` looking at `target` (y down)."""
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return RigidTransform(R, -R @ center)
