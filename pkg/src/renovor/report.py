"""Figure rendering for CLI reports.

All functions write PNG files through the Agg backend and avoid any
time-dependent metadata, so re-running a command reproduces the figures
byte for byte.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402

from renovor.volume import LabelVolume, ScalarVolume  # noqa: E402
from renovor.voronoi import COLOR_SLOTS, VoronoiPartition  # noqa: E402

__all__ = [
    "region_rgb",
    "save_mip_panel",
    "save_overlay_panel",
    "save_partition_panel",
    "save_tree_panel",
]

_SLOT_RGB = {
    "yellow": (0.93, 0.83, 0.17),
    "blue": (0.22, 0.36, 0.84),
    "light-green": (0.56, 0.88, 0.54),
    "orange": (0.95, 0.55, 0.12),
    "light-blue": (0.51, 0.76, 0.94),
    "fuchsia": (0.89, 0.26, 0.79),
    "green": (0.13, 0.58, 0.26),
    "gray": (0.55, 0.55, 0.55),
    "brown": (0.53, 0.35, 0.16),
}


def region_rgb(region_id: int) -> tuple[float, float, float]:
    """Display color of a 1-based partition region id (Table-style cycle)."""
    return _SLOT_RGB[COLOR_SLOTS[(region_id - 1) % len(COLOR_SLOTS)]]


def _save(fig, path):
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _planes(vol):
    """(title, 2-D array, mm extent) for the three mid-planes of a volume."""
    arr = vol.data
    nz, ny, nx = arr.shape
    sx, sy, sz = vol.geometry.spacing
    return [
        (f"axial z={nz // 2}", arr[nz // 2], (0, nx * sx, 0, ny * sy)),
        (f"coronal y={ny // 2}", arr[:, ny // 2, :], (0, nx * sx, 0, nz * sz)),
        (f"sagittal x={nx // 2}", arr[:, :, nx // 2], (0, ny * sy, 0, nz * sz)),
    ]


def save_mip_panel(path, vol: ScalarVolume, title: str) -> None:
    """Maximum-intensity projections along the three axes."""
    arr = vol.data
    nz, ny, nx = arr.shape
    sx, sy, sz = vol.geometry.spacing
    panes = [
        ("MIP along z", arr.max(axis=0), (0, nx * sx, 0, ny * sy)),
        ("MIP along y", arr.max(axis=1), (0, nx * sx, 0, nz * sz)),
        ("MIP along x", arr.max(axis=2), (0, ny * sy, 0, nz * sz)),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.6), layout="constrained")
    for ax, (name, img, extent) in zip(axes, panes):
        ax.imshow(img, cmap="gray", extent=extent, origin="lower")
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("mm", fontsize=8)
    fig.suptitle(title, fontsize=11)
    _save(fig, path)


def save_overlay_panel(path, backdrop, overlays, title: str) -> None:
    """Mid-plane slices of `backdrop` with colored mask overlays.

    overlays: iterable of (LabelVolume, rgb triple, legend label); the
    backdrop may be None when only masks matter.
    """
    overlays = list(overlays)
    base = backdrop if backdrop is not None else overlays[0][0]
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.6), layout="constrained")
    for ax, (name, img, extent) in zip(axes, _planes(base)):
        if backdrop is not None:
            ax.imshow(img, cmap="gray", extent=extent, origin="lower")
        else:
            ax.imshow(np.zeros_like(img), cmap="gray", extent=extent, origin="lower")
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("mm", fontsize=8)
    for mask, rgb, _label in overlays:
        for ax, (_, img, extent) in zip(axes, _planes(mask)):
            rgba = np.zeros(img.shape + (4,))
            on = img > 0
            rgba[on] = (*rgb, 0.5)
            ax.imshow(rgba, extent=extent, origin="lower")
    handles = [Patch(color=rgb, label=label) for _, rgb, label in overlays]
    if handles:
        axes[-1].legend(handles=handles, loc="upper right", fontsize=8)
    fig.suptitle(title, fontsize=11)
    _save(fig, path)


def save_partition_panel(
    path, part: VoronoiPartition, tumor: LabelVolume | None = None
) -> None:
    """Mid-plane views of the dominant-region partition, one color per region."""
    labels = part.labels
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.8), layout="constrained")
    for ax, (name, img, extent) in zip(axes, _planes(labels)):
        rgba = np.zeros(img.shape + (4,))
        for rid in range(1, part.n_regions + 1):
            rgba[img == rid] = (*region_rgb(rid), 1.0)
        ax.imshow(rgba, extent=extent, origin="lower")
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("mm", fontsize=8)
    if tumor is not None:
        for ax, (_, img, extent) in zip(axes, _planes(tumor)):
            rgba = np.zeros(img.shape + (4,))
            rgba[img > 0] = (1.0, 1.0, 1.0, 0.85)
            ax.imshow(rgba, extent=extent, origin="lower")
    handles = [
        Patch(
            color=region_rgb(rid),
            label=f"region {rid} ({COLOR_SLOTS[(rid - 1) % len(COLOR_SLOTS)]})",
        )
        for rid in range(1, part.n_regions + 1)
    ]
    if tumor is not None:
        handles.append(Patch(color=(1.0, 1.0, 1.0), label="tumor"))
    fig.legend(handles=handles, loc="outside right center", fontsize=8)
    fig.suptitle("dominant regions", fontsize=11)
    _save(fig, path)


def save_tree_panel(path, tree, kidney: LabelVolume | None = None) -> None:
    """World-coordinate projections of the centerline tree.

    Branch paths are drawn in two projections (x-z and y-z); the root is a
    red square and kidney-entry nodes are green dots, over a light silhouette
    of the kidney when a mask is given.
    """
    sx, sy, sz = tree.geometry.spacing
    fig, axes = plt.subplots(1, 2, figsize=(8.2, 4.0), layout="constrained")
    panes = [(0, 2, "x (mm)", "z (mm)"), (1, 2, "y (mm)", "z (mm)")]
    for ax, (ai, aj, xl, yl) in zip(axes, panes):
        if kidney is not None:
            proj = kidney.data.max(axis={0: 1, 1: 2}[ai])  # drop the unused axis
            nz = kidney.data.shape[0]
            n1 = kidney.data.shape[{0: 2, 1: 1}[ai]]
            s1 = (sx, sy)[ai]
            ax.imshow(
                proj,
                cmap="gray",
                alpha=0.35,
                extent=(0, n1 * s1, 0, nz * sz),
                origin="lower",
            )
        for e in tree.edges:
            pts = tree.geometry.index_to_world(e.path.astype(np.float64))
            ax.plot(pts[:, ai], pts[:, aj], lw=1.2, color="#30506d")
        root = tree.nodes[tree.root].position_mm
        ax.plot([root[ai]], [root[aj]], "rs", ms=6, label="root")
        for k, nid in enumerate(tree.entries):
            pos = tree.nodes[nid].position_mm
            ax.plot(
                [pos[ai]],
                [pos[aj]],
                "o",
                color="green",
                ms=5,
                label="entry" if k == 0 else None,
            )
        ax.set_xlabel(xl, fontsize=8)
        ax.set_ylabel(yl, fontsize=8)
        ax.set_aspect("equal")
        ax.legend(loc="upper right", fontsize=8)
    fig.suptitle("vessel tree", fontsize=11)
    _save(fig, path)
