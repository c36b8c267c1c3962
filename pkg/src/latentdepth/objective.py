"""Multi-view objective over latent codes with analytic gradients.

Masks and bilinear tap cells are frozen between refreshes; with them fixed the
loss is a smooth function of the codes and mean depths, and the gradient
below is its exact derivative.
"""

from dataclasses import dataclass, field

import numpy as np

from .codec import RHO_MIN, alpha_loss_grad
from .decoder import ShapeBasis, affine_rho
from .geometry import backproject, bilinear_taps, estimate_normals, relative_transform
from .losses import (HUBER_DELTA, LAMBDA_DEPTH, LAMBDA_PHOTO, LAMBDA_W, LAMBDA_Z,
                     LossBreakdown, huber, huber_grad)
from .masking import (MAX_VIEW_ANGLE_DEG, TAU, combine, occlusion_mask, viewing_angle_mask)


@dataclass
class LossConfig:
    lambda_photo: float = LAMBDA_PHOTO
    lambda_depth: float = LAMBDA_DEPTH
    lambda_z: float = LAMBDA_Z
    lambda_w: float = LAMBDA_W
    huber_photo: float = HUBER_DELTA
    huber_depth: float = HUBER_DELTA
    tau: float = TAU
    max_view_angle: float = MAX_VIEW_ANGLE_DEG
    raw_sum: bool = False
    occlusion_rule: str = "one_sided"
    weights_norm: float = 0.0


@dataclass
class PairState:
    i: int
    j: int
    idx: np.ndarray  # flat indices of kept pixels in view i
    x0: np.ndarray
    y0: np.ndarray
    n_kept: int
    masks: object = None


@dataclass
class FrozenState:
    pairs: list = field(default_factory=list)


class _PairGeometry:
    """Per-pixel ray directions of view i expressed in camera j (constant per pair)."""

    def __init__(self, view_i, view_j):
        T = relative_transform(view_i.pose, view_j.pose)
        R, t = T.rotation, T.translation
        qx = view_i.Q[..., 0].reshape(-1)
        qy = view_i.Q[..., 1].reshape(-1)
        # explicit products keep results independent of BLAS threading
        self.r = [R[k, 0] * qx + R[k, 1] * qy + R[k, 2] for k in range(3)]
        self.t = t
        self.intr = view_j.intrinsics


class MultiViewObjective:
    def __init__(self, views, basis: ShapeBasis, config: LossConfig = None):
        if len(views) < 2:
            raise ValueError("need at least two views")
        self.views = views
        self.basis = basis
        self.cfg = config or LossConfig()
        self.M = len(views)
        self.shape = views[0].shape
        for v in views:
            if v.shape != self.shape:
                raise ValueError("all views must share a resolution")
        if basis.shape != self.shape:
            raise ValueError(f"basis shape {basis.shape} != view shape {self.shape}")
        self.N = self.shape[0] * self.shape[1]
        self.images = [v.image.reshape(self.N, -1) for v in views]
        self.pairs = [(i, j) for i in range(self.M) for j in range(self.M) if i != j]
        self.geom = {(i, j): _PairGeometry(views[i], views[j]) for i, j in self.pairs}
        self.B = basis.flat()

    # -- decoding -----------------------------------------------------------
    def decode(self, z, alpha):
        """Per view: (rho, unclamped flag, depth), all flattened."""
        out = []
        for i in range(self.M):
            raw = affine_rho(self.basis, z[i])
            rho = np.clip(raw, RHO_MIN, 1.0)
            out.append((rho, raw == rho, alpha[i] * (1.0 / rho - 1.0)))
        return out

    def depths(self, z, alpha):
        return [d.reshape(self.shape) for _, _, d in self.decode(z, alpha)]

    def _project(self, g, D):
        Y = [g.r[k] * D + g.t[k] for k in range(3)]
        intr = g.intr
        u = intr.fx * Y[0] / Y[2] + intr.cx
        v = intr.fy * Y[1] / Y[2] + intr.cy
        return Y, u, v

    # -- masks --------------------------------------------------------------
    def freeze(self, z, alpha):
        """Recompute masks and tap cells at the current parameters."""
        cfg = self.cfg
        h, w = self.shape
        dec = self.decode(z, alpha)
        normals = []
        for i in range(self.M):
            X = backproject(self.views[i].Q, dec[i][2].reshape(h, w))
            n, nvalid = estimate_normals(X)
            normals.append(viewing_angle_mask(n, X, nvalid, cfg.max_view_angle).reshape(-1))
        state = FrozenState()
        for i, j in self.pairs:
            g = self.geom[(i, j)]
            with np.errstate(divide="ignore", invalid="ignore"):
                Y, u, v = self._project(g, dec[i][2])
            chir = Y[2] > 1e-9
            x0, y0, inb = bilinear_taps(np.where(chir, u, np.nan), np.where(chir, v, np.nan), h, w)
            Dj = dec[j][2].reshape(h, w)
            ok = chir & inb
            fx = np.where(ok, u - x0, 0.0)
            fy = np.where(ok, v - y0, 0.0)
            Djs = self._bilerp(Dj, x0, y0, fx, fy)
            occ = occlusion_mask(Djs, np.where(ok, Y[2], 0.0), ok, cfg.tau, cfg.occlusion_rule)
            masks = combine(inb, chir, occ, normals[i])
            idx = np.flatnonzero(masks.combined)
            state.pairs.append(PairState(i, j, idx, x0[idx], y0[idx], idx.size, masks))
        return state

    @staticmethod
    def _bilerp(grid, x0, y0, fx, fy):
        v00 = grid[y0, x0]
        v01 = grid[y0, x0 + 1]
        v10 = grid[y0 + 1, x0]
        v11 = grid[y0 + 1, x0 + 1]
        top = v00 + fx * (v01 - v00)
        bot = v10 + fx * (v11 - v10)
        return top + fy * (bot - top)

    # -- loss and gradient ----------------------------------------------------
    def evaluate(self, z, alpha, frozen: FrozenState, grad=True):
        """Loss breakdown and (optionally) gradients w.r.t. z (M x K) and alpha (M)."""
        cfg = self.cfg
        h, w = self.shape
        z = np.asarray(z, dtype=np.float64)
        alpha = np.asarray(alpha, dtype=np.float64)
        dec = self.decode(z, alpha)
        out = LossBreakdown()
        gD = [np.zeros(self.N) for _ in range(self.M)]
        galpha = np.zeros(self.M)
        for ps in frozen.pairs:
            i, j, idx = ps.i, ps.j, ps.idx
            out.pixels_used[(i, j)] = ps.n_kept
            if ps.n_kept == 0:
                out.flagged.append((i, j))
                continue
            g = self.geom[(i, j)]
            Di = dec[i][2][idx]
            r = [g.r[k][idx] for k in range(3)]
            Y = [r[k] * Di + g.t[k] for k in range(3)]
            intr = g.intr
            inv_z = 1.0 / Y[2]
            u = intr.fx * Y[0] * inv_z + intr.cx
            v = intr.fy * Y[1] * inv_z + intr.cy
            fx = u - ps.x0
            fy = v - ps.y0
            norm = 1.0 if cfg.raw_sum else 1.0 / ps.n_kept

            # photometric
            Ij = self.views[j].image
            c00 = Ij[ps.y0, ps.x0]
            c01 = Ij[ps.y0, ps.x0 + 1]
            c10 = Ij[ps.y0 + 1, ps.x0]
            c11 = Ij[ps.y0 + 1, ps.x0 + 1]
            fxc, fyc = fx[:, None], fy[:, None]
            top = c00 + fxc * (c01 - c00)
            bot = c10 + fxc * (c11 - c10)
            warped = top + fyc * (bot - top)
            e = np.mean(warped - self.images[i][idx], axis=1)
            out.photo += cfg.lambda_photo * norm * float(np.sum(huber(e, cfg.huber_photo)))

            # depth consistency
            Dj = dec[j][2].reshape(h, w)
            d00 = Dj[ps.y0, ps.x0]
            d01 = Dj[ps.y0, ps.x0 + 1]
            d10 = Dj[ps.y0 + 1, ps.x0]
            d11 = Dj[ps.y0 + 1, ps.x0 + 1]
            dtop = d00 + fx * (d01 - d00)
            dbot = d10 + fx * (d11 - d10)
            Djs = dtop + fy * (dbot - dtop)
            res = (Djs - Y[2]) / alpha[j]
            out.depth += cfg.lambda_depth * norm * float(np.sum(huber(res, cfg.huber_depth)))

            if not grad:
                continue
            du = intr.fx * (r[0] * Y[2] - Y[0] * r[2]) * inv_z * inv_z
            dv = intr.fy * (r[1] * Y[2] - Y[1] * r[2]) * inv_z * inv_z

            ge = cfg.lambda_photo * norm * huber_grad(e, cfg.huber_photo)
            dIdx = np.mean((1.0 - fyc) * (c01 - c00) + fyc * (c11 - c10), axis=1)
            dIdy = np.mean(bot - top, axis=1)
            gDi = ge * (dIdx * du + dIdy * dv)

            gr = cfg.lambda_depth * norm * huber_grad(res, cfg.huber_depth) / alpha[j]
            dDdx = (1.0 - fy) * (d01 - d00) + fy * (d11 - d10)
            dDdy = dbot - dtop
            gDi += gr * (dDdx * du + dDdy * dv - r[2])
            gD[i] += np.bincount(idx, weights=gDi, minlength=self.N)

            # sampled depth of view j depends on its own depth grid
            base = ps.y0 * w + ps.x0
            contrib = (np.bincount(base, weights=gr * (1 - fx) * (1 - fy), minlength=self.N)
                       + np.bincount(base + 1, weights=gr * fx * (1 - fy), minlength=self.N)
                       + np.bincount(base + w, weights=gr * (1 - fx) * fy, minlength=self.N)
                       + np.bincount(base + w + 1, weights=gr * fx * fy, minlength=self.N))
            gD[j] += contrib
            # explicit 1/alpha_j normalisation
            galpha[j] -= float(np.sum(gr * res))

        gz = np.zeros_like(z)
        for i in range(self.M):
            rho, free, D = dec[i]
            la, ga = alpha_loss_grad(rho)
            out.alpha += la
            out.z_reg += cfg.lambda_z * float(np.sum(z[i] * z[i]))
            if grad:
                galpha[i] += float(np.sum(gD[i] * D)) / alpha[i]
                grho = (gD[i] * (-alpha[i] / (rho * rho)) + ga) * free
                if self.basis.latent_dim:
                    gz[i] = np.einsum("kn,n->k", self.B, grho, optimize=False)
                gz[i] += 2.0 * cfg.lambda_z * z[i]
        out.w_reg = cfg.lambda_w * cfg.weights_norm ** 2
        out.finalize()
        if not grad:
            return out
        return out, gz, galpha
