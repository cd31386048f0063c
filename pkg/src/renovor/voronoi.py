"""Vascular dominant regions via nearest-branch-group Voronoi partition.

Every branch group of the vessel tree acts as a set of seed points (the
centerline voxels of its branches, capillaries feed along the whole vessel,
not just its tip). Each kidney voxel joins the group with the smallest exact
Euclidean world distance to any of its seeds; ties go to the smaller group
id. Per-region volume and tumor contact-area statistics support surgical
planning around the clamping decision.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .vesseltree import BranchClustering, VesselTree
from .volume import LabelVolume, dilate_ball

# table color slots, reused cyclically for regions 10, 11, ...
COLOR_SLOTS = (
    "yellow",
    "blue",
    "light-green",
    "orange",
    "light-blue",
    "fuchsia",
    "green",
    "gray",
    "brown",
)


@dataclass(frozen=True, eq=False)
class VoronoiPartition:
    """Region id per kidney voxel (0 outside), region ids dense 1..M."""

    labels: LabelVolume
    group_of_region: dict[int, int]

    @property
    def n_regions(self) -> int:
        return len(self.group_of_region)

    def region_mask(self, region_id: int) -> np.ndarray:
        return self.labels.data == region_id


@dataclass(frozen=True)
class RegionStats:
    region_id: int
    group_id: int
    vol_mm3: float
    vol_ratio: float
    contact_area_mm2: float
    area_ratio: float


def _group_seed_indices(tree: VesselTree, clustering: BranchClustering):
    """Voxel indices (n, 3) per group id, deduplicated, groups sorted by id."""
    missing = [b.id for b in tree.branches if b.id not in clustering.group_of]
    if missing:
        raise ValueError(f"clustering does not cover branches {missing}")
    nx, ny, _ = tree.geometry.dims
    flats: dict[int, set] = {}
    for b in tree.branches:
        g = clustering.group_of[b.id]
        bucket = flats.setdefault(g, set())
        for eid in b.edges:
            p = tree.edges[eid].path
            bucket.update((p[:, 0] + nx * (p[:, 1] + ny * p[:, 2])).tolist())
    out = {}
    for g in sorted(flats):
        f = np.sort(np.fromiter(flats[g], np.int64, len(flats[g])))
        vox = np.stack([f % nx, (f // nx) % ny, f // (nx * ny)], axis=1)
        out[g] = vox
    return out


def partition_from_sites(kidney_mask: LabelVolume, sites: dict) -> VoronoiPartition:
    """Nearest-site-group assignment of every kidney voxel.

    `sites` maps group id -> (n, 3) voxel indices in the kidney geometry.
    Distances are exact Euclidean world distances between voxel centers; a
    voxel equidistant from several groups joins the one with the smallest id.

    Per group, the exact feature transform finds a nearest site and the
    distance is then recomputed from the integer index delta, so two
    mathematically equal distances always land on the same float and the
    tie-break is reproducible (a kd-tree over pre-scaled coordinates is not:
    scaling before subtracting rounds tied distances apart).
    """
    geom = kidney_mask.geometry
    inside = kidney_mask.mask()
    if not inside.any():
        raise ValueError("kidney mask is empty")
    if not sites:
        raise ValueError("need at least one site group")
    group_ids = sorted(sites)

    kz, ky, kx = np.nonzero(inside)
    sx, sy, sz = geom.spacing

    d2 = np.empty((len(group_ids), kz.size))
    for row, g in enumerate(group_ids):
        vox = np.asarray(sites[g], np.int64)
        if vox.ndim != 2 or vox.shape[1] != 3 or vox.shape[0] == 0:
            raise ValueError(f"site group {g} is empty or malformed")
        grid = np.ones(geom.shape_zyx, bool)
        grid[vox[:, 2], vox[:, 1], vox[:, 0]] = False
        nearest = ndimage.distance_transform_edt(
            grid,
            sampling=geom.spacing_zyx,
            return_distances=False,
            return_indices=True,
        )
        dx = (nearest[2][kz, ky, kx] - kx) * sx
        dy = (nearest[1][kz, ky, kx] - ky) * sy
        dz = (nearest[0][kz, ky, kx] - kz) * sz
        d2[row] = dx * dx + dy * dy + dz * dz
    winner = np.argmin(d2, axis=0)  # first minimum -> smallest group id

    # dense region ids 1..M over the groups that won at least one voxel
    present = np.unique(winner)
    region_of_row = np.zeros(len(group_ids), np.uint16)
    region_of_row[present] = np.arange(1, present.size + 1, dtype=np.uint16)
    grid = np.zeros(geom.shape_zyx, np.uint16)
    grid[kz, ky, kx] = region_of_row[winner]
    region_to_group = {
        int(region_of_row[row]): int(group_ids[row]) for row in present
    }
    return VoronoiPartition(LabelVolume(geom, grid), region_to_group)


def partition(
    kidney_mask: LabelVolume, tree: VesselTree, clustering: BranchClustering
) -> VoronoiPartition:
    """Dominant-region partition of the kidney for one branch clustering."""
    if tree.geometry != kidney_mask.geometry:
        raise ValueError("tree and kidney mask geometries differ")
    return partition_from_sites(kidney_mask, _group_seed_indices(tree, clustering))


def simulated_ground_truth_partition(
    gt_kidney: LabelVolume, gt_tree: VesselTree, clustering: BranchClustering
) -> VoronoiPartition:
    """Reference partition built from ground-truth kidney and artery inputs.

    The anatomical dominant regions cannot be annotated directly, so the
    partition of the ground-truth inputs serves as the evaluation target.
    """
    return partition(gt_kidney, gt_tree, clustering)


_FACE_AXES = (  # (zyx axis, face area = product of the other two spacings)
    (0, lambda sx, sy, sz: sx * sy),  # faces perpendicular to z
    (1, lambda sx, sy, sz: sx * sz),  # perpendicular to y
    (2, lambda sx, sy, sz: sy * sz),  # perpendicular to x
)


def region_stats(
    part: VoronoiPartition,
    tumor_mask: LabelVolume | None = None,
    margin_mm: float = 5.0,
) -> list[RegionStats]:
    """Volume and tumor-contact statistics per dominant region.

    Contact area counts voxel faces (6-neighborhood) between a region and
    the tumor mask dilated by `margin_mm`, weighted by the physical face
    area. Corner contact is not area.
    """
    labels = part.labels.data
    n = part.n_regions
    counts = np.bincount(labels.ravel(), minlength=n + 1)[1 : n + 1]
    voxel_volume = part.labels.geometry.voxel_volume
    vol = counts * voxel_volume
    total = vol.sum()
    vol_ratio = 100.0 * vol / total if total > 0 else np.zeros(n)

    areas = np.zeros(n)
    if tumor_mask is not None:
        if tumor_mask.geometry != part.labels.geometry:
            raise ValueError("tumor mask geometry differs from partition")
        near = dilate_ball(tumor_mask, margin_mm).mask()
        sx, sy, sz = part.labels.geometry.spacing
        for axis, face in _FACE_AXES:
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            for a, b in ((tuple(lo), tuple(hi)), (tuple(hi), tuple(lo))):
                touching = labels[a][near[b]]
                areas += np.bincount(touching, minlength=n + 1)[1 : n + 1] * face(
                    sx, sy, sz
                )
    total_area = areas.sum()
    area_ratio = 100.0 * areas / total_area if total_area > 0 else np.zeros(n)

    return [
        RegionStats(
            region_id=r + 1,
            group_id=part.group_of_region[r + 1],
            vol_mm3=float(vol[r]),
            vol_ratio=float(vol_ratio[r]),
            contact_area_mm2=float(areas[r]),
            area_ratio=float(area_ratio[r]),
        )
        for r in range(n)
    ]


def stats_to_json(stats: list[RegionStats]) -> list[dict]:
    return [
        {
            "region": s.region_id,
            "group": s.group_id,
            "color": COLOR_SLOTS[(s.region_id - 1) % len(COLOR_SLOTS)],
            "vol_mm3": s.vol_mm3,
            "vol_ratio_pct": s.vol_ratio,
            "area_mm2": s.contact_area_mm2,
            "area_ratio_pct": s.area_ratio,
        }
        for s in stats
    ]


def stats_to_csv(stats: list[RegionStats]) -> str:
    """CSV table of the per-region statistics (the planning-table layout)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["region", "color", "vol_mm3", "vol_ratio_pct", "area_mm2", "area_ratio_pct"]
    )
    for s in stats:
        writer.writerow(
            [
                s.region_id,
                COLOR_SLOTS[(s.region_id - 1) % len(COLOR_SLOTS)],
                f"{s.vol_mm3:.1f}",
                f"{s.vol_ratio:.1f}",
                f"{s.contact_area_mm2:.1f}",
                f"{s.area_ratio:.1f}",
            ]
        )
    return buf.getvalue()
