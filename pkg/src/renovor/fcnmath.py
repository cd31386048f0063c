"""Support math for the kidney segmentation network.

The network itself (a 3D U-Net variant) is out of scope; this module holds
the surrounding arithmetic that has exact, testable definitions: the
normalized spatial feature map concatenated at the bottleneck, the
multi-class Dice loss with its analytic gradient, sliding-window tiling with
mean fusion of overlapping predictions, and the rigid/B-spline augmentation
transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import LabelVolume, ScalarVolume, VolumeGeometry

EPS_DICE = 1e-7


@dataclass(frozen=True)
class SubVolumeSpec:
    """Sub-volume size/stride/origin in voxels, all in (x, y, z) order."""

    size: tuple[int, int, int]
    stride: tuple[int, int, int] | None = None
    origin: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        size = tuple(int(s) for s in self.size)
        stride = size if self.stride is None else tuple(int(s) for s in self.stride)
        origin = tuple(int(o) for o in self.origin)
        if len(size) != 3 or min(size) < 1:
            raise ValueError("size must be three positive integers")
        if len(stride) != 3 or min(stride) < 1:
            raise ValueError("stride must be three integers >= 1")
        if any(st > sz for st, sz in zip(stride, size)):
            raise ValueError("stride larger than the window would leave gaps")
        if len(origin) != 3 or min(origin) < 0:
            raise ValueError("origin must be three non-negative integers")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "stride", stride)
        object.__setattr__(self, "origin", origin)


@dataclass(frozen=True)
class AugmentationParams:
    """Ranges for the on-the-fly training augmentations.

    Translation is uniform in +-translation_range voxels per axis, rotation
    uniform in +-rotation_range_deg. The elastic part draws a
    control_points^3 lattice of iid uniform +-max_displacement_voxels
    displacements. Rotation is axial (about z) unless full_3d is set.
    """

    translation_range: tuple[float, float, float] = (10.0, 10.0, 10.0)
    rotation_range_deg: float = 15.0
    control_points: int = 3
    max_displacement_voxels: float = 3.0
    full_3d: bool = False
    seed: int | None = None

    def __post_init__(self):
        tr = self.translation_range
        tr = (tr,) * 3 if np.isscalar(tr) else tuple(float(t) for t in tr)
        if len(tr) != 3 or min(tr) < 0:
            raise ValueError("translation_range must be three values >= 0")
        object.__setattr__(self, "translation_range", tr)
        if self.rotation_range_deg < 0:
            raise ValueError("rotation_range_deg must be >= 0")
        if self.control_points < 2:
            raise ValueError("need at least 2 B-spline control points per axis")
        if self.max_displacement_voxels < 0:
            raise ValueError("max_displacement_voxels must be >= 0")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class RigidTransform:
    """Applied rotation (degrees, about the sub-volume center) + translation."""

    angles_deg: tuple[float, float, float]
    translation: tuple[float, float, float]


def _check_spec_inside(dims, spec: SubVolumeSpec):
    for axis in range(3):
        if spec.origin[axis] + spec.size[axis] > dims[axis]:
            raise ValueError(
                f"sub-volume exceeds parent: axis {axis}, "
                f"origin {spec.origin[axis]} + size {spec.size[axis]} > {dims[axis]}"
            )


def _resample_positions(n_in: int, n_out: int) -> np.ndarray:
    """Sample indices of an n_out-point resize of an n_in-long axis."""
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def spatial_feature_map(
    parent_geom: VolumeGeometry,
    spec: SubVolumeSpec,
    map_size: tuple[int, int, int] | None = None,
) -> np.ndarray:
    """Normalized global-coordinate channels of a sub-volume, resized.

    Channel c holds the sub-volume voxels' global coordinate along axis c
    divided by the parent extent (x/W, y/H, z/D), so values lie in [0, 1).
    The map is then resized to `map_size` (default size/16 per axis, the
    bottom-feature-map resolution after four pooling levels). Because each
    channel is constant along the other two axes, trilinear resizing reduces
    to linear resampling of the coordinate ramp, which is computed directly.

    Returns an array of shape (3, mz, my, mx).
    """
    _check_spec_inside(parent_geom.dims, spec)
    if map_size is None:
        map_size = tuple(max(1, s // 16) for s in spec.size)
    map_size = tuple(int(m) for m in map_size)
    if min(map_size) < 1:
        raise ValueError("map_size must be positive")

    mx, my, mz = map_size
    out = np.empty((3, mz, my, mx))
    shapes = ((1, 1, mx), (1, my, 1), (mz, 1, 1))
    for axis in range(3):
        t = _resample_positions(spec.size[axis], map_size[axis])
        ramp = (spec.origin[axis] + t) / parent_geom.dims[axis]
        out[axis] = np.broadcast_to(ramp.reshape(shapes[axis]), (mz, my, mx))
    return out


def dice_loss(pred: np.ndarray, gt: np.ndarray):
    """Multi-class Dice loss and its analytic gradient.

    D = -(1/K) sum_k 2<p_k, g_k> / (|p_k|^2 + |g_k|^2 + eps); inputs are
    (K, ...) probability and one-hot arrays of identical shape. Returns
    (D, dD/dpred) with the gradient shaped like pred.
    """
    p = np.asarray(pred, np.float64)
    g = np.asarray(gt, np.float64)
    if p.shape != g.shape:
        raise ValueError(f"pred shape {p.shape} != gt shape {g.shape}")
    if p.ndim < 2 or p.shape[0] < 1:
        raise ValueError("inputs must be (K, ...) with K >= 1")
    k = p.shape[0]
    ps = p.reshape(k, -1)
    gs = g.reshape(k, -1)
    overlap = np.sum(ps * gs, axis=1)
    denom = np.sum(ps * ps, axis=1) + np.sum(gs * gs, axis=1) + EPS_DICE
    loss = float(-np.mean(2.0 * overlap / denom))
    grad = -(2.0 * gs * denom[:, None] - 4.0 * overlap[:, None] * ps) / (
        k * denom[:, None] ** 2
    )
    return loss, grad.reshape(p.shape)


def sliding_window_positions(parent_dims, spec: SubVolumeSpec) -> list:
    """Window origins covering the parent; the last window per axis is
    clamped flush to the boundary."""
    per_axis = []
    for axis in range(3):
        dim, win, step = parent_dims[axis], spec.size[axis], spec.stride[axis]
        if win > dim:
            raise ValueError(f"window {win} exceeds parent dim {dim} on axis {axis}")
        stops = list(range(0, dim - win + 1, step))
        if stops[-1] != dim - win:
            stops.append(dim - win)
        per_axis.append(stops)
    return [
        (ox, oy, oz)
        for oz in per_axis[2]
        for oy in per_axis[1]
        for ox in per_axis[0]
    ]


def fuse_predictions(parent_geom: VolumeGeometry, windows) -> ScalarVolume:
    """Mean probability per voxel over all covering windows.

    `windows` is an iterable of (origin_xyz, array) with arrays in (z, y, x)
    layout. Windows are accumulated in sorted origin order, so the result is
    bitwise independent of the input ordering. A voxel covered by no window
    is an error.
    """
    nz, ny, nx = parent_geom.shape_zyx
    acc = np.zeros((nz, ny, nx), np.float64)
    count = np.zeros((nz, ny, nx), np.int32)
    items = sorted(windows, key=lambda w: (tuple(w[0]), np.asarray(w[1]).shape))
    if not items:
        raise ValueError("no windows to fuse")
    for origin, block in items:
        ox, oy, oz = (int(v) for v in origin)
        block = np.asarray(block, np.float64)
        sz, sy, sx = block.shape
        if ox < 0 or oy < 0 or oz < 0 or ox + sx > nx or oy + sy > ny or oz + sz > nz:
            raise ValueError(f"window at {origin} exceeds the parent volume")
        acc[oz : oz + sz, oy : oy + sy, ox : ox + sx] += block
        count[oz : oz + sz, oy : oy + sy, ox : ox + sx] += 1
    if (count == 0).any():
        raise ValueError("fusion windows leave uncovered voxels")
    return ScalarVolume(parent_geom, acc / count)


def _volume_payload(vol):
    if isinstance(vol, LabelVolume):
        return vol.data, 0, float(vol.data.min())
    if isinstance(vol, ScalarVolume):
        return vol.data, 1, float(vol.data.min())
    raise TypeError("augmentation expects a ScalarVolume or LabelVolume")


def _rebuild(vol, data):
    if isinstance(vol, LabelVolume):
        return LabelVolume(vol.geometry, np.rint(data).astype(np.uint16))
    return ScalarVolume(vol.geometry, data)


def _rotation_matrix(angles_deg) -> np.ndarray:
    ax, ay, az = np.deg2rad(angles_deg)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _output_grids(shape_zyx):
    gz, gy, gx = np.meshgrid(
        np.arange(shape_zyx[0], dtype=np.float64),
        np.arange(shape_zyx[1], dtype=np.float64),
        np.arange(shape_zyx[2], dtype=np.float64),
        indexing="ij",
    )
    return gz, gy, gx


def augment_rigid(vol, params: AugmentationParams, rng=None):
    """Random rotation about the volume center followed by translation.

    Draw order: rotation angle(s) first, then the three translations, so a
    fixed generator state reproduces the transform. Scalars are resampled
    trilinearly, labels nearest-neighbor; voxels mapped from outside the
    field of view take the volume minimum.
    """
    rng = params.rng() if rng is None else rng
    if params.full_3d:
        angles = tuple(
            float(a)
            for a in rng.uniform(
                -params.rotation_range_deg, params.rotation_range_deg, 3
            )
        )
    else:
        angles = (
            0.0,
            0.0,
            float(
                rng.uniform(-params.rotation_range_deg, params.rotation_range_deg)
            ),
        )
    shift = tuple(
        float(rng.uniform(-t, t)) if t > 0 else 0.0 for t in params.translation_range
    )
    transform = RigidTransform(angles, shift)

    data, order, fill = _volume_payload(vol)
    nz, ny, nx = data.shape
    center = np.array([(nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0])
    rinv = _rotation_matrix(angles).T

    gz, gy, gx = _output_grids(data.shape)
    vx = gx - center[0] - shift[0]
    vy = gy - center[1] - shift[1]
    vz = gz - center[2] - shift[2]
    xi = rinv[0, 0] * vx + rinv[0, 1] * vy + rinv[0, 2] * vz + center[0]
    yi = rinv[1, 0] * vx + rinv[1, 1] * vy + rinv[1, 2] * vz + center[1]
    zi = rinv[2, 0] * vx + rinv[2, 1] * vy + rinv[2, 2] * vz + center[2]
    warped = ndimage.map_coordinates(
        data.astype(np.float64), [zi, yi, xi], order=order, mode="constant", cval=fill
    )
    return _rebuild(vol, warped), transform


def bspline_field(
    shape_zyx, control: np.ndarray
) -> np.ndarray:
    """Dense displacement field from B-spline coefficient lattices.

    `control` has shape (3, m, m, m): per-axis displacement coefficients on
    an m^3 lattice spanning the volume. The dense field evaluates the cubic
    B-spline with those coefficients (no interpolation prefilter), so every
    dense value is a convex combination of lattice values and the field
    magnitude never exceeds the largest control displacement.

    Returns (3, nz, ny, nx) with channels (dx, dy, dz) in voxels.
    """
    control = np.asarray(control, np.float64)
    if control.ndim != 4 or control.shape[0] != 3:
        raise ValueError("control lattice must have shape (3, m, m, m)")
    m = control.shape[1]
    coords = [
        np.full(1, (m - 1) / 2.0)
        if n == 1
        else np.arange(n) * ((m - 1) / (n - 1))
        for n in shape_zyx
    ]
    uz, uy, ux = np.meshgrid(*coords, indexing="ij")
    field = np.empty((3,) + tuple(shape_zyx))
    for c in range(3):
        field[c] = ndimage.map_coordinates(
            control[c], [uz, uy, ux], order=3, prefilter=False, mode="nearest"
        )
    return field


def augment_bspline(vol, params: AugmentationParams, rng=None):
    """Random elastic deformation from a uniform B-spline control lattice.

    The warp is pull-back: output(x) = input(x + d(x)) with d the dense
    displacement (voxels). Returns (warped volume, dense field (3, nz, ny,
    nx) with channels dx, dy, dz).
    """
    rng = params.rng() if rng is None else rng
    m = params.control_points
    d = params.max_displacement_voxels
    control = rng.uniform(-d, d, size=(3, m, m, m))
    data, order, fill = _volume_payload(vol)
    field = bspline_field(data.shape, control)

    gz, gy, gx = _output_grids(data.shape)
    coords = [gz + field[2], gy + field[1], gx + field[0]]
    warped = ndimage.map_coordinates(
        data.astype(np.float64), coords, order=order, mode="constant", cval=fill
    )
    return _rebuild(vol, warped), field


def augment_hybrid(vol, params: AugmentationParams, rng=None):
    """Rigid transform followed by the elastic deformation (in that order)."""
    rng = params.rng() if rng is None else rng
    rigid, transform = augment_rigid(vol, params, rng)
    warped, field = augment_bspline(rigid, params, rng)
    return warped, (transform, field)
