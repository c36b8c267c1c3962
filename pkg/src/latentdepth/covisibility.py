"""Co-visible image set selection from a voxel map of un-projected depth.

Cameras are inserted into every voxel their back-projected depth touches in
a single pass; overlap queries then read the voxel lists. Sets grow greedily
from a reference camera, adding the candidate with the largest minimum
parallax to the current members while keeping pairwise overlap high.
"""

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .geometry import backproject

OVERLAP_MIN = 0.3
MIN_PARALLAX_DEG = 1.0


@dataclass
class VoxelMap:
    voxel_size: float
    cells: dict = field(default_factory=lambda: defaultdict(set))
    camera_cells: dict = field(default_factory=dict)
    centers: dict = field(default_factory=dict)
    touched: int = 0

    def cell_center(self, cell):
        return (np.asarray(cell, dtype=np.float64) + 0.5) * self.voxel_size


@dataclass
class CovisibleSet:
    reference: object
    members: list
    overlaps: dict = field(default_factory=dict)
    parallaxes: dict = field(default_factory=dict)
    complete: bool = True

    def to_json(self):
        return json.dumps({"reference": self.reference, "members": self.members,
                           "overlaps": {str(k): v for k, v in self.overlaps.items()},
                           "parallaxes": {str(k): v for k, v in self.parallaxes.items()},
                           "complete": self.complete})


def world_points(view, depth):
    """World coordinates of valid depth pixels of a posed view."""
    X = backproject(view.Q, depth.d)[depth.valid]
    return view.pose.inverse().apply(X)


def point_cells(points, voxel_size):
    return {tuple(c) for c in np.floor(np.asarray(points) / voxel_size).astype(np.int64)}


def default_voxel_size(depths):
    med = np.median(np.concatenate([d.d[d.valid] for d in depths]))
    return float(med) / 20.0


def build_voxel_map(cameras, voxel_size):
    """cameras: iterable of (id, world point array N x 3, camera centre)."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    vm = VoxelMap(float(voxel_size))
    for cam_id, points, center in cameras:
        cells = point_cells(points, voxel_size)
        for cell in cells:
            vm.cells[cell].add(cam_id)
        vm.touched += len(cells)
        vm.camera_cells[cam_id] = frozenset(cells)
        vm.centers[cam_id] = np.asarray(center, dtype=np.float64)
    return vm


def build_from_views(ids, views, depths, voxel_size=None):
    if voxel_size is None:
        voxel_size = default_voxel_size(depths)
    return build_voxel_map(((i, world_points(v, d), v.pose.center)
                            for i, v, d in zip(ids, views, depths)), voxel_size)


def _shared(vm, a, b):
    return vm.camera_cells[a] & vm.camera_cells[b]


def overlap_fraction(vm, a, b):
    """Fraction of a's cells that b also touches."""
    cells = vm.camera_cells[a]
    return len(cells & vm.camera_cells[b]) / len(cells) if cells else 0.0


def overlapping_cameras(vm: VoxelMap, cam):
    """Other cameras sharing at least one cell with `cam`, mapped to their overlap fraction."""
    if cam not in vm.camera_cells:
        raise KeyError(f"unknown camera id {cam!r}")
    counts = defaultdict(int)
    for cell in vm.camera_cells[cam]:
        for other in vm.cells[cell]:
            counts[other] += 1
    n = len(vm.camera_cells[cam])
    return {o: c / n for o, c in sorted(counts.items()) if o != cam}


def parallax_deg(vm, a, b):
    """Angle between the rays from both camera centres to the centroid of their shared cells."""
    shared = _shared(vm, a, b)
    if not shared:
        return 0.0
    centroid = np.mean([vm.cell_center(c) for c in sorted(shared)], axis=0)
    ra = centroid - vm.centers[a]
    rb = centroid - vm.centers[b]
    cosang = ra @ rb / (np.linalg.norm(ra) * np.linalg.norm(rb))
    return float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))


def _mutual_overlap(vm, a, b):
    return min(overlap_fraction(vm, a, b), overlap_fraction(vm, b, a))


def select_covisible(vm: VoxelMap, reference, n, overlap_min=OVERLAP_MIN,
                     min_parallax=MIN_PARALLAX_DEG):
    """Greedy growth from `reference`. Ties go to the smallest camera id.

    Candidates whose minimum parallax to the set is at most `min_parallax`
    degrees are treated as redundant and never added.
    """
    if n < 2:
        raise ValueError("a co-visible set needs n >= 2")
    candidates = sorted(overlapping_cameras(vm, reference))
    members = [reference]
    overlaps, parallaxes = {}, {}
    while len(members) < n:
        best, best_score = None, -np.inf
        for c in candidates:
            if c in members:
                continue
            if any(_mutual_overlap(vm, c, m) < overlap_min for m in members):
                continue
            score = min(parallax_deg(vm, c, m) for m in members)
            if score <= min_parallax:
                continue
            if score > best_score:
                best, best_score = c, score
        if best is None:
            break
        members.append(best)
        overlaps[best] = min(_mutual_overlap(vm, best, m) for m in members if m != best)
        parallaxes[best] = best_score
    return CovisibleSet(reference, members, overlaps, parallaxes, complete=len(members) == n)


def select_by_shared_points(track_table, reference, n):
    """track_table maps a 3D point id to the cameras observing it.

    Picks the n - 1 cameras sharing most points with the reference
    (ties by ascending id).
    """
    if not track_table:
        raise ValueError("empty track table")
    counts = defaultdict(int)
    for cams in track_table.values():
        cams = set(cams)
        if reference in cams:
            for c in cams - {reference}:
                counts[c] += 1
    ranked = sorted(counts, key=lambda c: (-counts[c], c))[: n - 1]
    return CovisibleSet(reference, [reference] + ranked,
                        overlaps={c: counts[c] for c in ranked},
                        complete=len(ranked) == n - 1)
