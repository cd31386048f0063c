"""Segmentation evaluation: Dice, sensitivity, Hausdorff, centerline overlap.

Dice and sensitivity are plain voxel-count ratios. The Hausdorff distance is
the exact symmetric max-min distance between the two surface voxel sets in
world millimetres. Centerline overlap scores topology rather than volume:
thin-vessel segmentations lose more to a missed sub-tree than to a radius
error, so the overlap of extracted centerlines is the better signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import LabelVolume, connected_components_top_k


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _masks(gt: LabelVolume, seg: LabelVolume):
    if gt.geometry != seg.geometry:
        raise ValueError("volumes have different geometries")
    return gt.mask(), seg.mask()


def confusion(gt: LabelVolume, seg: LabelVolume) -> ConfusionCounts:
    g, s = _masks(gt, seg)
    tp = int(np.sum(g & s))
    fp = int(np.sum(~g & s))
    fn = int(np.sum(g & ~s))
    tn = g.size - tp - fp - fn
    return ConfusionCounts(tp, fp, tn, fn)


def dice(gt: LabelVolume, seg: LabelVolume) -> float:
    """2*TP / (2*TP + FP + FN); two empty masks agree perfectly (1.0)."""
    c = confusion(gt, seg)
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return 2 * c.tp / denom


def sensitivity(gt: LabelVolume, seg: LabelVolume) -> float:
    """TP / (TP + FN), the fraction of ground-truth voxels recovered."""
    c = confusion(gt, seg)
    if c.tp + c.fn == 0:
        raise ValueError("ground truth is empty; sensitivity is undefined")
    return c.tp / (c.tp + c.fn)


def surface_voxels(mask: LabelVolume) -> np.ndarray:
    """Mask voxels with at least one 6-neighbor outside the mask.

    Neighbors beyond the volume bounds count as outside, so voxels touching
    the border are surface.
    """
    m = mask.mask()
    eroded = ndimage.binary_erosion(
        m, structure=ndimage.generate_binary_structure(3, 1), border_value=0
    )
    return m & ~eroded


def hausdorff(gt: LabelVolume, seg: LabelVolume) -> float:
    """Exact symmetric Hausdorff distance between the surfaces, in mm."""
    sg = surface_voxels(gt)
    ss = surface_voxels(seg)
    if not sg.any() or not ss.any():
        raise ValueError("hausdorff needs two non-empty masks")
    spacing = gt.geometry.spacing_zyx

    def directed(surf_a, surf_b):
        dist_to_b = ndimage.distance_transform_edt(~surf_b, sampling=spacing)
        return float(dist_to_b[surf_a].max())

    return max(directed(sg, ss), directed(ss, sg))


def _skeleton_grid(lines, what):
    geoms = {line.geometry for line in lines}
    if len(geoms) > 1:
        raise ValueError(f"{what} centerlines span multiple geometries")
    if not geoms:
        return None, None
    geom = geoms.pop()
    grid = np.zeros(geom.shape_zyx, bool)
    for line in lines:
        v = line.voxels
        grid[v[:, 2], v[:, 1], v[:, 0]] = True
    return geom, grid


def centerline_overlap(gt_lines, out_lines) -> float:
    """CO = 2*|OV| / (|gt skeleton| + |out skeleton|).

    The reference skeleton is dilated by one voxel (26-neighborhood) into a
    tube; OV is the set of output-skeleton voxels inside that tube. Lengths
    are voxel counts.
    """
    gt_geom, gt_grid = _skeleton_grid(gt_lines, "reference")
    out_geom, out_grid = _skeleton_grid(out_lines, "output")
    if gt_grid is None and out_grid is None:
        raise ValueError("both skeletons are empty")
    if gt_grid is None or out_grid is None:
        return 0.0
    if gt_geom != out_geom:
        raise ValueError("skeletons live on different geometries")
    tube = ndimage.binary_dilation(gt_grid, structure=np.ones((3, 3, 3), bool))
    ov = int(np.sum(out_grid & tube))
    return 2 * ov / (int(gt_grid.sum()) + int(out_grid.sum()))


def top_components(mask: LabelVolume, k: int = 2, connectivity: int = 26) -> LabelVolume:
    """Keep the k largest components (26-connected, suiting thin vessels)."""
    return connected_components_top_k(mask, k, connectivity)
