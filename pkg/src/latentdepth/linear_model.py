"""Linear feature/latent model on an orthographic three-object toy scene.

Each object is a 3 x p point template moved rigidly in the xy-plane. A scene
row stacks (w1, w2, w3) per object; the image drops the depth row w2. The
image cannot reveal each object's depth offset, which a low-dimensional
latent code recovers.
"""

from dataclasses import dataclass, field

import numpy as np

RANK_TOL = 1e-8
N_OBJECTS = 3


@dataclass
class OrthoScene:
    objects: list
    poses: np.ndarray  # n_scenes x n_objects x 7, rows (a, -b, b, a, 1, t1, t2)
    noise_sigma: float = 0.0


@dataclass
class StackedData:
    Y: np.ndarray
    X: np.ndarray
    X_noisy: np.ndarray
    scene: OrthoScene = field(default=None, repr=False)


@dataclass
class LinearPredictor:
    FGx: np.ndarray
    Gz: np.ndarray
    X10: np.ndarray  # orthonormal rows spanning the retained image subspace; None = no projection
    feature_dim: int
    latent_dim: int


def object_templates(p, n_objects=N_OBJECTS):
    """Fixed polyline templates, roughly unit scale, with s1, s2 and 1 independent."""
    if p < 4:
        raise ValueError("need at least 4 points per object")
    t = np.linspace(0.0, 1.0, p)
    shapes = []
    for k in range(n_objects):
        ang = 2 * np.pi * (0.55 + 0.15 * k) * t + 0.7 * k
        r = 0.4 + 0.35 * t ** (k + 1)
        s1 = r * np.cos(ang)
        s2 = r * np.sin(ang)
        s3 = 0.6 * np.sin(np.pi * (k + 1.5) * t) + 0.2 * k
        shapes.append(np.vstack([s1, s2, s3]))
    return shapes


def block_structure(S):
    """7 x 3p block matrix so that (a, -b, b, a, 1, t1, t2) @ S_bar = (w1, w2, w3)."""
    s1, s2, s3 = S
    p = S.shape[1]
    z, one = np.zeros(p), np.ones(p)
    return np.array([
        np.concatenate([s1, z, z]),
        np.concatenate([s2, z, z]),
        np.concatenate([z, s1, z]),
        np.concatenate([z, s2, z]),
        np.concatenate([z, z, s3]),
        np.concatenate([one, z, z]),
        np.concatenate([z, one, z]),
    ])


def image_selector(p):
    """3p x 2p matrix dropping the depth row w2."""
    Pi = np.zeros((3 * p, 2 * p))
    Pi[:p, :p] = np.eye(p)
    Pi[2 * p:, p:] = np.eye(p)
    return Pi


def stacked_selector(p, n_objects=N_OBJECTS):
    Pi = image_selector(p)
    out = np.zeros((n_objects * 3 * p, n_objects * 2 * p))
    for k in range(n_objects):
        out[3 * p * k:3 * p * (k + 1), 2 * p * k:2 * p * (k + 1)] = Pi
    return out


def pose_vector(angle, t1, t2):
    a, b = np.cos(angle), np.sin(angle)
    return np.array([a, -b, b, a, 1.0, t1, t2])


def generate_scenes(n_scenes, p_per_object=20, noise_sigma=0.05, seed=0, identity=False):
    if n_scenes < 1 or p_per_object < 4:
        raise ValueError("need n_scenes >= 1 and p_per_object >= 4")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    templates = object_templates(p_per_object)
    bars = [block_structure(S) for S in templates]
    if identity:
        poses = np.tile(pose_vector(0.0, 0.0, 0.0), (n_scenes, N_OBJECTS, 1))
    else:
        angle = rng.uniform(0.0, 2 * np.pi, size=(n_scenes, N_OBJECTS))
        trans = rng.uniform(-1.0, 1.0, size=(n_scenes, N_OBJECTS, 2))
        poses = np.stack([[pose_vector(angle[i, k], *trans[i, k]) for k in range(N_OBJECTS)]
                          for i in range(n_scenes)])
    Y = np.hstack([poses[:, k, :] @ bars[k] for k in range(N_OBJECTS)])
    X = Y @ stacked_selector(p_per_object)
    X_noisy = X + rng.normal(0.0, noise_sigma, size=X.shape) if noise_sigma > 0 else X.copy()
    return StackedData(Y, X, X_noisy, OrthoScene(templates, poses, noise_sigma))


def numerical_rank(M, tol=RANK_TOL):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def truncate(X, rank):
    """Best rank-r approximation and the orthonormal row-space basis."""
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    return (U[:, :rank] * s[:rank]) @ Vt[:rank], U[:, :rank], Vt[:rank]


def _check_dim(data, dim):
    if dim < 0 or dim > min(data.X_noisy.shape):
        raise ValueError(f"feature dimension {dim} exceeds data dimensions {data.X_noisy.shape}")


def fit_without_z(data: StackedData, feature_dim, denoise=True):
    """Fit x -> x FGx with a feature_dim-dimensional bottleneck.

    denoise=True replaces the noisy images by their best rank-feature_dim
    approximation and regresses Y on it. denoise=False is the naive
    reduced-rank regression on the raw noisy images, which can interpolate the
    training set when the feature space is large enough.
    """
    _check_dim(data, feature_dim)
    Xn = data.X_noisy
    if denoise:
        Xr, U, Vt = truncate(Xn, feature_dim)
        PY = U @ (U.T @ data.Y)
        FGx = np.linalg.pinv(Xr) @ PY
        return LinearPredictor(FGx, np.zeros((0, data.Y.shape[1])), Vt, feature_dim, 0)
    B = np.linalg.pinv(Xn) @ data.Y
    _, _, Vt = np.linalg.svd(Xn @ B, full_matrices=False)
    Vf = Vt[:feature_dim]
    FGx = B @ Vf.T @ Vf
    return LinearPredictor(FGx, np.zeros((0, data.Y.shape[1])), None, feature_dim, 0)


def fit_with_z(data: StackedData, feature_dim, latent_dim):
    """Feature regression on the denoised images plus a latent block for the rest.

    Returns the predictor and the training codes Z (orthogonal to the image
    column space) with Z @ Gz the best rank-latent_dim approximation of the
    part of Y the images cannot explain.
    """
    _check_dim(data, feature_dim)
    if latent_dim < 0 or latent_dim > data.Y.shape[0]:
        raise ValueError(f"latent_dim {latent_dim} exceeds number of scenes")
    pred = fit_without_z(data, feature_dim, denoise=True)
    if latent_dim == 0:
        return pred, np.zeros((data.Y.shape[0], 0))
    _, U, _ = truncate(data.X_noisy, feature_dim)
    resid = data.Y - U @ (U.T @ data.Y)
    Ur, sr, Vtr = np.linalg.svd(resid, full_matrices=False)
    Z = Ur[:, :latent_dim] * sr[:latent_dim]
    pred.Gz = Vtr[:latent_dim].copy()
    pred.latent_dim = latent_dim
    return pred, Z


def _project(pred, x):
    if pred.X10 is None:
        return x
    return (x @ pred.X10.T) @ pred.X10


def predict(pred: LinearPredictor, x, z=None):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != pred.FGx.shape[0]:
        raise ValueError(f"image length {x.shape[-1]} != {pred.FGx.shape[0]}")
    y = _project(pred, x) @ pred.FGx
    if z is not None and pred.latent_dim > 0:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != pred.latent_dim:
            raise ValueError(f"latent length {z.shape[-1]} != {pred.latent_dim}")
        y = y + z @ pred.Gz
    return y


def best_z_for_scene(pred: LinearPredictor, x, y_true):
    """argmin_z ||predict(x, z) - y_true||^2; minimum-norm when Gz is rank deficient."""
    if pred.latent_dim == 0:
        raise ValueError("predictor has no latent block")
    r = np.asarray(y_true, dtype=np.float64) - predict(pred, x)
    z, *_ = np.linalg.lstsq(pred.Gz.T, r.T, rcond=None)
    return z.T


def ssd(pred: LinearPredictor, data: StackedData, optimize_z=None):
    """Sum of squared distances between predictions and true scenes.

    With a latent block (and optimize_z not False) each scene uses its best code.
    """
    if optimize_z is None:
        optimize_z = pred.latent_dim > 0
    if optimize_z:
        Z = best_z_for_scene(pred, data.X_noisy, data.Y)
        P = predict(pred, data.X_noisy, Z)
    else:
        P = predict(pred, data.X_noisy)
    return float(np.sum((P - data.Y) ** 2))


STUDY_CONFIGS = ("10D (no Z)", "13D (no Z)", "10+3D (with Z)")


def matrix_study(seed, n_train=50, n_test=50, p_per_object=20, noise_sigma=0.05,
                 feature_dim=10, latent_dim=3):
    """Train/test SSD for the three-row comparison. Returns a list of dict rows."""
    rng = np.random.default_rng(seed)
    train = generate_scenes(n_train, p_per_object, noise_sigma, rng)
    test = generate_scenes(n_test, p_per_object, noise_sigma, rng)
    wide = feature_dim + latent_dim
    models = [
        (f"{feature_dim}D (no Z)", fit_without_z(train, feature_dim)),
        (f"{wide}D (no Z)", fit_without_z(train, min(wide, min(train.X_noisy.shape)), denoise=False)),
        (f"{feature_dim}+{latent_dim}D (with Z)", fit_with_z(train, feature_dim, latent_dim)[0]),
    ]
    return [{"seed": seed, "config": name, "train_ssd": ssd(m, train), "test_ssd": ssd(m, test)}
            for name, m in models]
