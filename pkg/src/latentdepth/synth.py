"""Ray-cast synthetic scenes with exact depth, used as ground truth for refinement tests.

Primitives are textured planes (optionally bounded) and spheres. Texture is
3D value noise plus optional stripes, evaluated at the surface point in the
primitive's local frame, so it is view independent. Shading is Lambertian.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import DepthMap
from .geometry import Intrinsics, PosedView, RigidTransform, look_at, rotation_about
from . import io

DEFAULT_RESOLUTION = (192, 256)
MIN_COVERAGE = 0.5
SUITES = ("a", "b", "c", "d")
SUITE_NAMES = {"a": "plane_pair", "b": "plane_sphere", "c": "slanted_86", "d": "low_texture"}


def default_intrinsics(h, w):
    f = 0.9 * w
    return Intrinsics(f, f, (w - 1) / 2.0, (h - 1) / 2.0)


@dataclass
class SynthScene:
    primitives: list
    cameras: list  # (RigidTransform, Intrinsics)
    resolution: tuple = DEFAULT_RESOLUTION
    seed: int = 0
    light: tuple = (-0.3, -0.5, -1.0)
    ambient: float = 0.35
    image_noise: float = 0.0
    name: str = ""
    meta: dict = field(default_factory=dict)

    def to_json(self):
        cams = [{"R": p.rotation.tolist(), "t": p.translation.tolist(), "K": list(k.as_tuple())}
                for p, k in self.cameras]
        return json.dumps({
            "name": self.name, "seed": self.seed, "resolution": list(self.resolution),
            "light": list(self.light), "ambient": self.ambient, "image_noise": self.image_noise,
            "primitives": self.primitives, "cameras": cams, "meta": self.meta,
        }, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        cams = [(RigidTransform(c["R"], c["t"]), Intrinsics(*c["K"])) for c in d["cameras"]]
        return cls(d["primitives"], cams, tuple(d["resolution"]), d["seed"], tuple(d["light"]),
                   d["ambient"], d["image_noise"], d.get("name", ""), d.get("meta", {}))


def plane(center, normal, u_axis, extent=(np.inf, np.inf), texture=None):
    n = np.asarray(normal, dtype=float)
    n /= np.linalg.norm(n)
    u = np.asarray(u_axis, dtype=float)
    u = u - n * (u @ n)
    u /= np.linalg.norm(u)
    return {"kind": "plane", "center": list(map(float, center)), "normal": n.tolist(),
            "u_axis": u.tolist(), "extent": [float(e) for e in extent],
            "texture": texture or {}}


def sphere(center, radius, texture=None):
    return {"kind": "sphere", "center": list(map(float, center)), "radius": float(radius),
            "texture": texture or {}}


# --- texture -----------------------------------------------------------------

_M = [np.uint64(c) for c in (0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB,
                             0xD6E8FEB86659FD93, 0xA0761D6478BD642F)]


def _lattice(ix, iy, iz, seed):
    """Deterministic uniform values in [0, 1) at integer lattice points."""
    h = (ix.astype(np.int64).astype(np.uint64) * _M[0]
         ^ iy.astype(np.int64).astype(np.uint64) * _M[3]
         ^ iz.astype(np.int64).astype(np.uint64) * _M[4]
         ^ np.uint64((int(seed) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF))
    h ^= h >> np.uint64(30)
    h *= _M[1]
    h ^= h >> np.uint64(27)
    h *= _M[2]
    h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(p, scale, seed):
    """Smooth 3D value noise in [0, 1] with lattice spacing `scale`."""
    g = p / scale
    i0 = np.floor(g)
    f = g - i0
    f = f * f * (3.0 - 2.0 * f)
    i0 = i0.astype(np.int64)
    out = np.zeros(p.shape[:-1])
    for dx in (0, 1):
        wx = f[..., 0] if dx else 1.0 - f[..., 0]
        for dy in (0, 1):
            wy = f[..., 1] if dy else 1.0 - f[..., 1]
            for dz in (0, 1):
                wz = f[..., 2] if dz else 1.0 - f[..., 2]
                out += wx * wy * wz * _lattice(i0[..., 0] + dx, i0[..., 1] + dy,
                                               i0[..., 2] + dz, seed)
    return out


def albedo(tex, local):
    seed = int(tex.get("seed", 0))
    scale = float(tex.get("scale", 0.5))
    contrast = float(tex.get("contrast", 0.6))
    base = float(tex.get("base", 0.55))
    octaves = int(tex.get("octaves", 3))
    n, amp, norm = 0.0, 1.0, 0.0
    for o in range(octaves):
        n = n + amp * value_noise(local, scale / 2**o, seed + 101 * o)
        norm += amp
        amp *= 0.5
    n = n / norm - 0.5
    stripes = float(tex.get("stripes", 0.0))
    if stripes:
        period = float(tex.get("stripe_period", 4 * scale))
        n = n + 0.5 * stripes * np.sin(2 * np.pi * local[..., 0] / period)
    return np.clip(base + contrast * n, 0.0, 1.0)


# --- ray casting -------------------------------------------------------------

def _intersect(prim, origin, dirs, eps=1e-9):
    """Ray parameter s (origin + s * dirs) of the nearest forward hit, inf on miss."""
    if prim["kind"] == "plane":
        n = np.asarray(prim["normal"])
        c = np.asarray(prim["center"])
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = ((c - origin) @ n) / denom
        ok = np.isfinite(s) & (s > eps)
        pts = origin + np.where(ok, s, 0.0)[..., None] * dirs
        u = np.asarray(prim["u_axis"])
        v = np.cross(n, u)
        eu, ev = prim["extent"]
        ok &= np.abs((pts - c) @ u) <= eu
        ok &= np.abs((pts - c) @ v) <= ev
        return np.where(ok, s, np.inf)
    if prim["kind"] == "sphere":
        c = np.asarray(prim["center"])
        r = prim["radius"]
        oc = origin - c
        A = np.sum(dirs * dirs, axis=-1)
        B = 2.0 * (dirs @ oc)
        C = oc @ oc - r * r
        disc = B * B - 4 * A * C
        sq = np.sqrt(np.maximum(disc, 0.0))
        s0 = (-B - sq) / (2 * A)
        s1 = (-B + sq) / (2 * A)
        s = np.where(s0 > eps, s0, np.where(s1 > eps, s1, np.inf))
        return np.where(disc >= 0, s, np.inf)
    raise ValueError(f"unknown primitive {prim['kind']!r}")


def _local_frame(prim, pts):
    """Surface normals and texture coordinates at hit points."""
    c = np.asarray(prim["center"])
    if prim["kind"] == "plane":
        n = np.broadcast_to(np.asarray(prim["normal"]), pts.shape)
    else:
        n = (pts - c) / prim["radius"]
    return n, pts - c


def ray_cast(scene: SynthScene, cam: int, pixels=None):
    """Depth, primitive id (-1 = miss), world points and normals.

    Rays go through every pixel centre, or through the continuous pixel
    positions `pixels` (trailing axis (x, y)) when given.
    """
    pose, intr = scene.cameras[cam]
    if pixels is None:
        h, w = scene.resolution
        Q = intr.normalized_grid(h, w)
    else:
        pixels = np.asarray(pixels, dtype=np.float64)
        Q = np.stack([(pixels[..., 0] - intr.cx) / intr.fx,
                      (pixels[..., 1] - intr.cy) / intr.fy], axis=-1)
    d_cam = np.concatenate([Q, np.ones(Q.shape[:-1] + (1,))], axis=-1)
    dirs = d_cam @ pose.rotation  # R^T d for each pixel
    origin = pose.center
    depth = np.full(Q.shape[:-1], np.inf)
    ids = np.full(Q.shape[:-1], -1, dtype=np.int64)
    for k, prim in enumerate(scene.primitives):
        s = _intersect(prim, origin, dirs)
        closer = s < depth
        depth[closer] = s[closer]
        ids[closer] = k
    hit = ids >= 0
    pts = origin + np.where(hit, depth, 0.0)[..., None] * dirs
    normals = np.zeros_like(pts)
    for k, prim in enumerate(scene.primitives):
        m = ids == k
        if m.any():
            normals[m] = _local_frame(prim, pts[m])[0]
    return np.where(hit, depth, 0.0), ids, pts, normals


def render(scene: SynthScene, cam: int):
    """Grey image in [0, 1] (H x W x 1) and ground-truth depth."""
    depth, ids, pts, normals = ray_cast(scene, cam)
    light = np.asarray(scene.light, dtype=float)
    light = light / np.linalg.norm(light)
    img = np.zeros(depth.shape)
    for k, prim in enumerate(scene.primitives):
        m = ids == k
        if not m.any():
            continue
        n, local = _local_frame(prim, pts[m])
        shade = scene.ambient + (1 - scene.ambient) * np.abs(n @ light)
        img[m] = albedo(prim.get("texture", {}), local) * shade
    if scene.image_noise > 0:
        rng = np.random.default_rng([scene.seed, cam])
        img = img + rng.normal(0.0, scene.image_noise, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return img[..., None], DepthMap(depth, ids >= 0)


def coverage(scene, cam):
    _, ids, _, _ = ray_cast(scene, cam)
    return float(np.mean(ids >= 0))


def depth_at(scene: SynthScene, cam: int, pixels):
    """Exact depth seen by camera `cam` at continuous pixel positions (0 on miss)."""
    return ray_cast(scene, cam, pixels)[0]


def occluder(scene: SynthScene, cam: int, points, rel_tol=1e-6):
    """Id of the first primitive hit on the segment from camera `cam` to each
    world point, or -1 when the segment is clear."""
    pose, _ = scene.cameras[cam]
    origin = pose.center
    dirs = points - origin
    first = np.full(points.shape[:-1], np.inf)
    ids = np.full(points.shape[:-1], -1, dtype=np.int64)
    for k, prim in enumerate(scene.primitives):
        s = _intersect(prim, origin, dirs)
        closer = (s < first) & (s < 1.0 - rel_tol)
        first[closer] = s[closer]
        ids[closer] = k
    return ids


def occluded_from(scene: SynthScene, cam: int, points, rel_tol=1e-6):
    """True where the segment from camera `cam` to each world point hits something first."""
    return occluder(scene, cam, points, rel_tol) >= 0


def views(scene: SynthScene):
    """PosedViews and ground-truth depth maps for every camera."""
    out, depths = [], []
    for k, (pose, intr) in enumerate(scene.cameras):
        img, d = render(scene, k)
        out.append(PosedView(img, pose, intr))
        depths.append(d)
    return out, depths


# --- benchmark suites --------------------------------------------------------

def _cameras(centers, target, h, w):
    intr = default_intrinsics(h, w)
    return [(look_at(c, target), intr) for c in centers]


def make_suite(suite, resolution=DEFAULT_RESOLUTION, seed=0):
    h, w = resolution
    tex = {"seed": seed * 7 + 1, "scale": 0.6, "contrast": 0.7, "octaves": 3}
    if suite == "a":
        n = rotation_about((0, 1, 0), np.radians(30)) @ np.array([0.0, 0.0, -1.0])
        prims = [plane((0, 0, 5), n, (1, 0, 0), texture=tex)]
        cams = _cameras([(-0.25, 0, 0), (0.25, 0, 0)], (0, 0, 5), h, w)
    elif suite == "b":
        n = rotation_about((0, 1, 0), np.radians(-10)) @ np.array([0.0, 0.0, -1.0])
        prims = [plane((0, 0, 6), n, (1, 0, 0), texture=tex),
                 sphere((-0.3, 0.1, 4.2), 0.9, texture={**tex, "seed": seed * 7 + 2, "base": 0.5})]
        cams = _cameras([(-0.4, 0, 0), (0.0, -0.1, 0), (0.4, 0, 0)], (0, 0, 5), h, w)
    elif suite == "c":
        slant = np.radians(86.0)
        n = np.array([0.0, -np.sin(slant), -np.cos(slant)])
        m = np.array([0.0, -np.cos(slant), np.sin(slant)])
        # patch spans depths ~4.3..12 through (0, 0, 5)
        center = np.array([0.0, 0.0, 5.0]) + m * 3.15
        prims = [plane((0, 0, 15), (0, 0, -1), (1, 0, 0), texture=tex),
                 plane(center, n, (1, 0, 0), extent=(1.5, 3.85),
                       texture={**tex, "seed": seed * 7 + 3})]
        cams = [(RigidTransform.identity(), default_intrinsics(h, w)),
                (RigidTransform(np.eye(3), [-0.3, 0.0, 0.0]), default_intrinsics(h, w))]
    elif suite == "d":
        n = rotation_about((0, 1, 0), np.radians(20)) @ np.array([0.0, 0.0, -1.0])
        prims = [plane((0, 0, 5), n, (1, 0, 0), texture={**tex, "contrast": 0.02})]
        cams = _cameras([(-0.25, 0, 0), (0.25, 0, 0)], (0, 0, 5), h, w)
    else:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    scene = SynthScene(prims, cams, tuple(resolution), seed, name=SUITE_NAMES[suite])
    for k in range(len(cams)):
        if coverage(scene, k) < MIN_COVERAGE:
            raise RuntimeError(f"suite {suite}: camera {k} sees too little of the scene")
    return scene


def random_scene(seed, n_cameras=4, resolution=DEFAULT_RESOLUTION, max_tries=20):
    """Background plane plus random spheres; redrawn until every camera has enough coverage."""
    h, w = resolution
    for attempt in range(max_tries):
        rng = np.random.default_rng([seed, attempt])
        prims = [plane((0, 0, rng.uniform(6, 9)), (0, 0, -1), (1, 0, 0),
                       texture={"seed": int(rng.integers(1 << 30))})]
        for _ in range(int(rng.integers(1, 4))):
            prims.append(sphere(rng.uniform([-1, -1, 3], [1, 1, 5]), rng.uniform(0.3, 0.9),
                                texture={"seed": int(rng.integers(1 << 30))}))
        centers = rng.uniform([-1, -0.3, -0.5], [1, 0.3, 0.5], size=(n_cameras, 3))
        scene = SynthScene(prims, _cameras(centers, (0, 0, 5), h, w), tuple(resolution), seed)
        if all(coverage(scene, k) >= MIN_COVERAGE for k in range(n_cameras)):
            return scene
    raise RuntimeError("could not generate a scene with enough coverage")


def save_scene_dir(scene: SynthScene, out_dir):
    """scene.json, images/<id>.pgm, depth/<id>.pfm, poses.txt."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(exist_ok=True)
    (out / "scene.json").write_text(scene.to_json())
    entries = []
    for k, (pose, intr) in enumerate(scene.cameras):
        vid = f"{k:03d}"
        img, depth = render(scene, k)
        io.write_image(out / "images" / f"{vid}.pgm", img[..., 0])
        io.write_pfm(out / "depth" / f"{vid}.pfm", depth.d)
        entries.append((vid, pose, intr))
    io.write_trajectory(out / "poses.txt", entries)
    return out


def make_benchmark(out_dir, resolution=DEFAULT_RESOLUTION, seed=0, suites=SUITES):
    out = Path(out_dir)
    return {s: save_scene_dir(make_suite(s, resolution, seed), out / f"{s}_{SUITE_NAMES[s]}")
            for s in suites}


def load_scene_dir(path):
    """Posed views plus ground-truth depth maps (None when absent) from a scene directory."""
    path = Path(path)
    traj = path / "poses.txt"
    if not traj.exists():
        raise FileNotFoundError(f"missing trajectory file {traj}")
    ids, views_, depths = [], [], []
    for vid, pose, intr in io.read_trajectory(traj):
        img_path = next((path / "images" / f"{vid}{ext}" for ext in (".pgm", ".ppm")
                         if (path / "images" / f"{vid}{ext}").exists()), None)
        if img_path is None:
            raise FileNotFoundError(f"missing image for view {vid} under {path / 'images'}")
        views_.append(PosedView(io.read_image(img_path), pose, intr))
        dpath = path / "depth" / f"{vid}.pfm"
        depths.append(DepthMap.from_array(io.read_pfm(dpath)) if dpath.exists() else None)
        ids.append(vid)
    return ids, views_, depths
