"""Synthetic CT phantoms: ellipsoidal kidney plus a recursive vessel tree.

Every output carries its own analytic ground truth — the binary tree of
capsule segments is known exactly, so the centerline tree, the vessel mask,
and the dominant-region partition of the kidney can all be produced without
any estimation step.  Intensities are composed background → kidney → vessel
and Gaussian noise is added last, so a zero-noise phantom keeps every vessel
voxel at exactly the vessel HU value.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from renovor.vesseltree import (
    Branch,
    TreeEdge,
    TreeNode,
    VesselTree,
    cluster_branches,
    detect_entries,
)
from renovor.volume import LabelVolume, ScalarVolume, VolumeGeometry
from renovor.voronoi import VoronoiPartition, partition

__all__ = ["PhantomSpec", "generate"]

_MAX_DRAWS = 32  # tree re-draws before giving up on a degenerate geometry


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of one synthetic volume; a pure value object.

    The vessel tree grows from ``root_mm`` as a binary tree: each generation
    draws a segment length from ``segment_length_mm``, each child tilts away
    from its parent by an angle drawn from ``branch_angle_deg`` (the two
    children leave on opposite sides), and radii shrink by ``radius_decay``
    per generation.  ``root_mm``/``root_direction`` default to a point on the
    -x side of the kidney aiming at its center, which guarantees the tree
    actually reaches the organ for reasonable sizes.
    """

    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kidney_center_mm: tuple[float, float, float] | None = None
    kidney_axes_mm: tuple[float, float, float] = (17.0, 14.0, 19.0)
    tree_depth: int = 3
    branch_angle_deg: tuple[float, float] = (25.0, 50.0)
    root_radius_mm: float = 2.0
    radius_decay: float = 0.79
    segment_length_mm: tuple[float, float] = (9.0, 12.0)
    root_mm: tuple[float, float, float] | None = None
    root_direction: tuple[float, float, float] | None = None
    background_hu: float = -30.0
    kidney_hu: float = 30.0
    vessel_hu: float = 150.0
    noise_sigma: float = 0.0
    blur_sigma_mm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 2 for d in self.dims):
            raise ValueError("dims must be three integers >= 2")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError("spacing must be three positive floats")
        if any(a <= 0 for a in self.kidney_axes_mm):
            raise ValueError("kidney semi-axes must be positive")
        if self.tree_depth < 1:
            raise ValueError("tree depth must be at least 1")
        if self.root_radius_mm <= 0 or self.radius_decay <= 0:
            raise ValueError("vessel radii must stay positive")
        lo, hi = self.segment_length_mm
        if not 0 < lo <= hi:
            raise ValueError("segment length range must be 0 < lo <= hi")
        alo, ahi = self.branch_angle_deg
        if not 0 <= alo <= ahi < 90:
            raise ValueError("branch angles must satisfy 0 <= lo <= hi < 90")
        if self.vessel_hu <= self.background_hu:
            raise ValueError("vessel HU must exceed background HU")
        if self.noise_sigma < 0 or self.blur_sigma_mm < 0:
            raise ValueError("noise sigma and blur sigma must be >= 0")

    def geometry(self) -> VolumeGeometry:
        return VolumeGeometry(tuple(int(d) for d in self.dims), tuple(self.spacing))


# ---------------------------------------------------------------------------
# analytic tree growth

@dataclass(frozen=True)
class _Segment:
    p0: np.ndarray  # world mm
    p1: np.ndarray
    radius: float
    parent: int  # segment id, -1 for the root segment


def _orthonormal_frame(d):
    ref = np.array([0.0, 0.0, 1.0])
    if abs(float(np.dot(d, ref))) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = np.cross(d, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


def _world_box(geom: VolumeGeometry):
    lo = np.asarray(geom.origin, float)
    hi = lo + (np.asarray(geom.dims, float) - 1.0) * np.asarray(geom.spacing, float)
    return lo, hi


def _grow_tree(spec: PhantomSpec, geom: VolumeGeometry, rng) -> list[_Segment]:
    """One draw of the binary tree; endpoints are clamped to the volume box.

    Raises ValueError when clamping collapses a segment to (essentially) a
    point — the caller re-draws.
    """
    lo, hi = _world_box(geom)
    center = np.asarray(
        spec.kidney_center_mm
        if spec.kidney_center_mm is not None
        else (lo + hi) / 2.0,
        float,
    )
    if spec.root_mm is not None:
        root = np.asarray(spec.root_mm, float)
    else:
        # far enough out that the first bifurcation lands before the kidney
        # surface, so the subtrees enter the organ separately (hilum-like)
        gap = 1.25 * spec.segment_length_mm[1]
        root = center - np.array([spec.kidney_axes_mm[0] + gap, 0.0, 0.0])
    root = np.clip(root, lo, hi)
    if spec.root_direction is not None:
        d0 = np.asarray(spec.root_direction, float)
    else:
        d0 = center - root
    n0 = np.linalg.norm(d0)
    if n0 == 0:
        raise ValueError("root direction is undefined (root at kidney center?)")
    d0 = d0 / n0

    min_len = 0.75 * min(spec.spacing)
    segments: list[_Segment] = []

    def grow(p0, direction, generation, parent):
        length = rng.uniform(*spec.segment_length_mm)
        p1 = np.clip(p0 + length * direction, lo, hi)
        if np.linalg.norm(p1 - p0) < min_len:
            raise ValueError("segment collapsed against the volume boundary")
        radius = spec.root_radius_mm * spec.radius_decay ** (generation - 1)
        sid = len(segments)
        segments.append(_Segment(p0, p1, radius, parent))
        if generation < spec.tree_depth:
            u, v = _orthonormal_frame(direction)
            phi = rng.uniform(0.0, 2.0 * math.pi)
            for side in (0.0, math.pi):
                theta = math.radians(rng.uniform(*spec.branch_angle_deg))
                az = phi + side
                child = (
                    math.cos(theta) * direction
                    + math.sin(theta) * (math.cos(az) * u + math.sin(az) * v)
                )
                grow(p1, child / np.linalg.norm(child), generation + 1, sid)

    grow(root, d0, 1, -1)
    return segments


def _polyline(geom: VolumeGeometry, p0, p1) -> np.ndarray:
    """Minimal 26-connected voxel chain along the segment p0→p1 (world mm).

    Samples the segment densely in continuous index space, rounds, drops
    consecutive duplicates, then greedily skips voxels whose predecessor and
    successor are already 26-adjacent.  The result steps exactly one in
    max-norm per move — the same chain economy a thinning skeleton has, so
    chain lengths are comparable with skeletonized masks.  A straight line is
    monotone per axis, hence voxel-unique.
    """
    spacing = np.asarray(geom.spacing, float)
    origin = np.asarray(geom.origin, float)
    a = (np.asarray(p0, float) - origin) / spacing
    b = (np.asarray(p1, float) - origin) / spacing
    steps = max(2, int(math.ceil(4.0 * float(np.abs(b - a).max()))) + 1)
    t = np.linspace(0.0, 1.0, steps)[:, None]
    pts = np.rint(a + t * (b - a)).astype(np.int64)
    keep = np.ones(len(pts), bool)
    keep[1:] = np.any(np.diff(pts, axis=0) != 0, axis=1)
    pts = pts[keep]
    chain = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = i + 1
        while j + 1 < len(pts) and np.abs(pts[j + 1] - pts[i]).max() <= 1:
            j += 1
        chain.append(pts[j])
        i = j
    return np.asarray(chain, np.int64)


def _assemble_analytic(
    geom: VolumeGeometry, segments: list[_Segment]
) -> VesselTree:
    """Build the VesselTree straight from the generator's bookkeeping.

    One node per segment endpoint (shared at junctions), one edge and one
    branch per segment — so the branch count always equals the number of
    segments grown, independent of how close sibling polylines run.
    Raises ValueError on degenerate rasterizations (the caller re-draws).
    """
    paths = [_polyline(geom, s.p0, s.p1) for s in segments]
    for p in paths:
        if len(p) < 2 or np.array_equal(p[0], p[-1]):
            raise ValueError("segment rasterizes to a single voxel")

    def as_node(voxel, nid, degree):
        vox = tuple(int(c) for c in voxel)
        pos = tuple(float(c) for c in geom.index_to_world(np.asarray(vox)))
        return TreeNode(nid, vox, pos, degree)

    # node 0 = tree root; node 1 + sid = end of segment sid
    end_node = {sid: sid + 1 for sid in range(len(segments))}
    n_children = [0] * len(segments)
    for s in segments:
        if s.parent >= 0:
            n_children[s.parent] += 1
    nodes = [as_node(paths[0][0], 0, 1)]
    for sid, s in enumerate(segments):
        nodes.append(as_node(paths[sid][-1], end_node[sid], 1 + n_children[sid]))
    edges, branches = [], []
    for sid, s in enumerate(segments):
        start = 0 if s.parent < 0 else end_node[s.parent]
        if tuple(paths[sid][0]) != nodes[start].voxel:
            raise ValueError("segment start drifted off its parent endpoint")
        edges.append(TreeEdge(sid, start, end_node[sid], paths[sid]))
        branches.append(Branch(sid, (sid,), start, end_node[sid]))
    return VesselTree(geom, tuple(nodes), tuple(edges), tuple(branches), root=0)


# ---------------------------------------------------------------------------
# rasterization

def _ellipsoid_mask(geom: VolumeGeometry, center, axes) -> np.ndarray:
    sx, sy, sz = geom.spacing
    ox, oy, oz = geom.origin
    zz, yy, xx = np.ogrid[: geom.dims[2], : geom.dims[1], : geom.dims[0]]
    fx = (ox + xx * sx - center[0]) / axes[0]
    fy = (oy + yy * sy - center[1]) / axes[1]
    fz = (oz + zz * sz - center[2]) / axes[2]
    return fx * fx + fy * fy + fz * fz <= 1.0


def _paint_capsule(mask: np.ndarray, geom: VolumeGeometry, seg: _Segment):
    """Set every voxel whose center lies within radius of the segment."""
    spacing = np.asarray(geom.spacing, float)
    origin = np.asarray(geom.origin, float)
    lo_w = np.minimum(seg.p0, seg.p1) - seg.radius
    hi_w = np.maximum(seg.p0, seg.p1) + seg.radius
    lo = np.maximum(np.floor((lo_w - origin) / spacing), 0).astype(int)
    hi = np.minimum(
        np.ceil((hi_w - origin) / spacing), np.asarray(geom.dims) - 1
    ).astype(int)
    if np.any(lo > hi):
        return
    zz, yy, xx = np.ogrid[lo[2] : hi[2] + 1, lo[1] : hi[1] + 1, lo[0] : hi[0] + 1]
    wx = origin[0] + xx * spacing[0] - seg.p0[0]
    wy = origin[1] + yy * spacing[1] - seg.p0[1]
    wz = origin[2] + zz * spacing[2] - seg.p0[2]
    d = seg.p1 - seg.p0
    ll = float(d @ d)
    t = np.clip((wx * d[0] + wy * d[1] + wz * d[2]) / ll, 0.0, 1.0)
    q2 = (wx - t * d[0]) ** 2 + (wy - t * d[1]) ** 2 + (wz - t * d[2]) ** 2
    sub = mask[lo[2] : hi[2] + 1, lo[1] : hi[1] + 1, lo[0] : hi[0] + 1]
    sub |= q2 <= seg.radius * seg.radius


# ---------------------------------------------------------------------------

def generate(
    spec: PhantomSpec,
) -> tuple[ScalarVolume, LabelVolume, LabelVolume, VesselTree, VoronoiPartition]:
    """Generate (ct, kidney_gt, vessel_gt, tree_gt, partition_gt).

    Deterministic for a fixed spec (byte-identical across runs).  The vessel
    mask is the union of the exact capsules around every tree segment; no
    partial-volume smoothing is applied unless ``blur_sigma_mm`` > 0.  The
    partition ground truth is the dominant-region partition of the kidney by
    the tree's branch groups at clustering offset 0.

    Raises ValueError when the tree misses the kidney, or when no
    non-degenerate tree can be drawn inside the volume for this seed.
    """
    geom = spec.geometry()
    rng = np.random.default_rng(spec.seed)

    segments = tree = None
    for _ in range(_MAX_DRAWS):
        try:
            segments = _grow_tree(spec, geom, rng)
            tree = _assemble_analytic(geom, segments)
            break
        except ValueError:
            continue
    if tree is None:
        raise ValueError(f"no usable vessel tree for seed {spec.seed}")

    lo, hi = _world_box(geom)
    center = np.asarray(
        spec.kidney_center_mm
        if spec.kidney_center_mm is not None
        else (lo + hi) / 2.0,
        float,
    )
    kidney = _ellipsoid_mask(geom, center, spec.kidney_axes_mm)
    vessel = np.zeros(geom.shape_zyx, bool)
    for seg in segments:
        _paint_capsule(vessel, geom, seg)

    kidney_gt = LabelVolume(geom, kidney.astype(np.uint16))
    vessel_gt = LabelVolume(geom, vessel.astype(np.uint16))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        spliced = detect_entries(tree, kidney_gt)
    if not spliced.entries:
        raise ValueError("vessel tree does not reach the kidney")
    clustering = cluster_branches(spliced, spliced.entries, level_offset=0)
    partition_gt = partition(kidney_gt, spliced, clustering)

    ct = np.full(geom.shape_zyx, spec.background_hu, np.float64)
    ct[kidney] = spec.kidney_hu
    ct[vessel] = spec.vessel_hu
    if spec.blur_sigma_mm > 0:
        ct = ndimage.gaussian_filter(
            ct, sigma=[spec.blur_sigma_mm / s for s in geom.spacing_zyx]
        )
    if spec.noise_sigma > 0:
        ct += rng.normal(0.0, spec.noise_sigma, ct.shape)

    return (
        ScalarVolume(geom, ct.astype(np.float32)),
        kidney_gt,
        vessel_gt,
        tree,
        partition_gt,
    )
