"""File formats: PFM depth, PGM/PPM images, trajectory text files, versioned CSV."""

import csv
import re
from pathlib import Path

import numpy as np

from .geometry import Intrinsics, RigidTransform

CSV_VERSION = 1


def write_pfm(path, data):
    """Single-channel PFM, little-endian (negative scale), rows stored bottom to top."""
    data = np.asarray(data, dtype="<f4")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"Pf", b"PF"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if kind == b"PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)


def _read_pnm_header(f):
    tokens, comments = [], []
    while len(tokens) < 4:
        line = f.readline()
        if not line:
            raise ValueError("truncated PNM header")
        if line.startswith(b"#"):
            comments.append(line[1:].strip().decode("ascii", "replace"))
            continue
        tokens += line.split()
    return tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3]), comments


def write_pnm(path, data, maxval=255, comment=None):
    """8- or 16-bit binary PGM (2D) or PPM (H x W x 3). 16-bit samples are big-endian."""
    data = np.asarray(data)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    magic = b"P5" if data.ndim == 2 else b"P6"
    h, w = data.shape[:2]
    dtype = "u1" if maxval < 256 else ">u2"
    header = magic + b"\n"
    if comment:
        header += f"# {comment}\n".encode("ascii")
    header += f"{w} {h}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(data, dtype=dtype).tobytes())


def read_pnm(path):
    """Returns (array, maxval, header comments)."""
    with open(path, "rb") as f:
        magic, w, h, maxval, comments = _read_pnm_header(f)
        channels = 3 if magic == b"P6" else 1
        dtype = "u1" if maxval < 256 else ">u2"
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape), maxval, comments


def write_image(path, image):
    """Intensities in [0, 1] to 8-bit PGM/PPM."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    write_pnm(path, np.round(img * 255.0).astype(np.uint8))


def read_image(path):
    data, maxval, _ = read_pnm(path)
    img = data.astype(np.float64) / maxval
    return img if img.ndim == 3 else img[..., None]


def write_depth_pgm(path, depth, scale=1000.0):
    """16-bit PGM storing round(depth * scale); the scale is recorded in a header comment."""
    q = np.clip(np.round(np.asarray(depth) * scale), 0, 65535).astype(np.uint16)
    write_pnm(path, q, maxval=65535, comment=f"depth_scale {scale}")


def read_depth_pgm(path):
    data, _, comments = read_pnm(path)
    scale = 1.0
    for c in comments:
        m = re.match(r"depth_scale\s+(\S+)", c)
        if m:
            scale = float(m.group(1))
    return data.astype(np.float64) / scale


def write_mask(path, mask):
    write_pnm(path, np.where(mask, 255, 0).astype(np.uint8))


def write_trajectory(path, entries):
    """entries: iterable of (view id, RigidTransform, Intrinsics)."""
    lines = ["# id r11 r12 r13 t1 r21 r22 r23 t2 r31 r32 r33 t3 fx fy cx cy (world to camera)"]
    for vid, pose, intr in entries:
        M = np.hstack([pose.rotation, pose.translation[:, None]]).reshape(-1)
        nums = " ".join(repr(float(v)) for v in list(M) + list(intr.as_tuple()))
        lines.append(f"{vid} {nums}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path):
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 17:
            raise ValueError(f"{path}:{lineno}: expected 17 fields, got {len(parts)}")
        vals = np.array([float(v) for v in parts[1:]])
        M = vals[:12].reshape(3, 4)
        out.append((parts[0], RigidTransform(M[:, :3], M[:, 3]), Intrinsics(*vals[12:])))
    return out


def write_csv(path, schema, columns, rows):
    """CSV with a '# schema: <name> v<version>' first line."""
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {schema} v{CSV_VERSION}\n")
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_csv(path):
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))
