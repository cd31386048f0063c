"""Hessian tensor fields and Sato's line-filter vesselness measure.

The Hessian is built from central second differences of a Gaussian-smoothed
volume, respecting anisotropic spacing. Vesselness follows Sato's measure

    V = |l3| * (l2/l3)^gamma23 * (1 + l1/|l2|)^gamma12

for eigenvalues l1 >= l2 >= l3 of the Hessian with l3 <= l2 <= l1 <= 0
(bright tubes on a dark background), and 0 otherwise. Multi-scale responses
are sigma^2-normalized and combined by voxelwise maximum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from renovor.volume import ScalarVolume, VolumeGeometry

__all__ = [
    "TensorField",
    "VesselnessParams",
    "sym3",
    "sym3_to_six",
    "gaussian_smooth",
    "hessian_field",
    "eigen_symmetric3",
    "eigenvalues_field",
    "sato_vesselness",
    "multiscale_vesselness",
    "best_scale_hessian",
]


def sym3(six) -> np.ndarray:
    """Expand (xx, xy, xz, yy, yz, zz) into a symmetric 3x3 matrix."""
    xx, xy, xz, yy, yz, zz = (float(v) for v in six)
    return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]], dtype=np.float64)


def sym3_to_six(mat) -> np.ndarray:
    """Pack a symmetric 3x3 matrix into (xx, xy, xz, yy, yz, zz)."""
    m = np.asarray(mat, dtype=np.float64)
    return np.array([m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2]])


@dataclass(frozen=True)
class TensorField:
    """Per-voxel symmetric 3x3 matrices, components (xx, xy, xz, yy, yz, zz).

    Stored in float64: SPD-mapped fields floor eigenvalues at 1e-8, which
    float32 cannot carry next to order-1 components.
    """

    geometry: VolumeGeometry
    data: np.ndarray  # (nz, ny, nx, 6) float64

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        expected = self.geometry.shape_zyx + (6,)
        if arr.shape != expected:
            raise ValueError(f"tensor data shape {arr.shape} != {expected}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor field contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def as_matrices(self) -> np.ndarray:
        """Dense (nz, ny, nx, 3, 3) float64 matrices."""
        xx, xy, xz, yy, yz, zz = np.moveaxis(self.data.astype(np.float64), -1, 0)
        m = np.empty(self.data.shape[:3] + (3, 3), dtype=np.float64)
        m[..., 0, 0] = xx
        m[..., 1, 1] = yy
        m[..., 2, 2] = zz
        m[..., 0, 1] = m[..., 1, 0] = xy
        m[..., 0, 2] = m[..., 2, 0] = xz
        m[..., 1, 2] = m[..., 2, 1] = yz
        return m

    def matrix_at(self, i: int, j: int, k: int) -> np.ndarray:
        return sym3(self.data[k, j, i])


@dataclass(frozen=True)
class VesselnessParams:
    gamma12: float = 1.0
    gamma23: float = 1.0
    scales_mm: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)

    def __post_init__(self):
        object.__setattr__(self, "scales_mm", tuple(float(s) for s in self.scales_mm))
        if self.gamma12 < 0 or self.gamma23 < 0:
            raise ValueError("gamma exponents must be >= 0")
        if not self.scales_mm or any(s <= 0 for s in self.scales_mm):
            raise ValueError("scales_mm must be a non-empty list of positive sigmas")


def _gaussian_kernel1d(sigma_mm: float, spacing: float) -> np.ndarray:
    """Sampled Gaussian on the voxel grid, truncated at 4*sigma, unit sum."""
    radius = int(np.floor(4.0 * sigma_mm / spacing + 1e-9))
    if radius < 1:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64) * spacing
    kernel = np.exp(-0.5 * (x / sigma_mm) ** 2)
    return kernel / kernel.sum()


def gaussian_smooth(vol: ScalarVolume, sigma_mm: float) -> ScalarVolume:
    """Separable Gaussian smoothing with clamp-to-edge boundaries."""
    if sigma_mm < 0:
        raise ValueError("sigma_mm must be >= 0")
    if sigma_mm == 0:
        return ScalarVolume(vol.geometry, vol.data)
    out = vol.data.astype(np.float64)
    for axis, spacing in enumerate(vol.geometry.spacing_zyx):
        kernel = _gaussian_kernel1d(sigma_mm, spacing)
        if kernel.size > 1:
            out = ndimage.correlate1d(out, kernel, axis=axis, mode="nearest")
    return ScalarVolume(vol.geometry, out.astype(np.float32))


def _shift(arr: np.ndarray, delta: int, axis: int) -> np.ndarray:
    """Sample arr at index+delta along axis, clamping to the edges."""
    n = arr.shape[axis]
    idx = np.clip(np.arange(n) + delta, 0, n - 1)
    return np.take(arr, idx, axis=axis)


def hessian_field(vol: ScalarVolume, sigma_mm: float) -> TensorField:
    """Central-difference Hessian of the sigma-smoothed volume (units mm^-2)."""
    if any(d < 3 for d in vol.geometry.dims):
        raise ValueError("hessian_field needs at least 3 voxels per axis")
    f = gaussian_smooth(vol, sigma_mm).data.astype(np.float64)
    sx, sy, sz = vol.geometry.spacing

    def second(axis, h):
        return (_shift(f, 1, axis) - 2.0 * f + _shift(f, -1, axis)) / (h * h)

    def mixed(axis_a, ha, axis_b, hb):
        pa = _shift(f, 1, axis_a)
        ma = _shift(f, -1, axis_a)
        return (
            _shift(pa, 1, axis_b)
            - _shift(pa, -1, axis_b)
            - _shift(ma, 1, axis_b)
            + _shift(ma, -1, axis_b)
        ) / (4.0 * ha * hb)

    # array axes: 0 = z, 1 = y, 2 = x
    comps = np.stack(
        [
            second(2, sx),
            mixed(2, sx, 1, sy),
            mixed(2, sx, 0, sz),
            second(1, sy),
            mixed(1, sy, 0, sz),
            second(0, sz),
        ],
        axis=-1,
    )
    return TensorField(vol.geometry, comps)


def eigen_symmetric3(six) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and matching orthonormal eigenvector columns."""
    w, v = np.linalg.eigh(sym3(six))
    return w[::-1].copy(), v[:, ::-1].copy()


def eigenvalues_field(field: TensorField) -> np.ndarray:
    """(nz, ny, nx, 3) eigenvalues per voxel, descending."""
    shape = field.data.shape[:3]
    w = np.linalg.eigvalsh(field.as_matrices().reshape(-1, 3, 3))
    return w[:, ::-1].reshape(shape + (3,))


def _sato_response(lam: np.ndarray, gamma12: float, gamma23: float) -> np.ndarray:
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    # bright tube: l3 <= l2 <= l1 <= 0, with l2, l3 nonzero so ratios exist;
    # ties between eigenvalues are allowed (an ideal tube has l2 == l3).
    valid = (l1 <= 0.0) & (l2 < 0.0) & (l3 < 0.0)
    ratio23 = np.where(valid, l2 / np.where(valid, l3, 1.0), 0.0)
    ratio12 = np.where(valid, 1.0 + l1 / np.abs(np.where(valid, l2, 1.0)), 0.0)
    resp = np.abs(l3) * ratio23**gamma23 * np.maximum(ratio12, 0.0) ** gamma12
    return np.where(valid, resp, 0.0)


def sato_vesselness(
    field: TensorField, params: VesselnessParams | None = None
) -> ScalarVolume:
    """Single-scale Sato vesselness of a Hessian tensor field."""
    params = params or VesselnessParams()
    lam = eigenvalues_field(field)
    resp = _sato_response(lam, params.gamma12, params.gamma23)
    return ScalarVolume(field.geometry, resp.astype(np.float32))


def multiscale_vesselness(
    vol: ScalarVolume, params: VesselnessParams | None = None
) -> ScalarVolume:
    """Voxelwise max over scales of sigma^2-normalized single-scale responses."""
    params = params or VesselnessParams()
    best = np.zeros(vol.geometry.shape_zyx, dtype=np.float64)
    for sigma in params.scales_mm:
        resp = sato_vesselness(hessian_field(vol, sigma), params)
        np.maximum(best, (sigma * sigma) * resp.data.astype(np.float64), out=best)
    return ScalarVolume(vol.geometry, best.astype(np.float32))


def best_scale_hessian(
    vol: ScalarVolume, params: VesselnessParams | None = None
) -> tuple[TensorField, ScalarVolume]:
    """Per-voxel Hessian at the scale winning the normalized response, plus
    the multi-scale vesselness itself.

    Ties keep the earliest scale in params.scales_mm, so the result is
    deterministic; voxels with zero response everywhere carry the first
    scale's Hessian.
    """
    params = params or VesselnessParams()
    best_resp = None
    best_six = None
    for sigma in params.scales_mm:
        field = hessian_field(vol, sigma)
        resp = (sigma * sigma) * sato_vesselness(field, params).data.astype(np.float64)
        if best_resp is None:
            best_resp = resp
            best_six = field.data.copy()
        else:
            better = resp > best_resp
            best_resp = np.where(better, resp, best_resp)
            best_six = np.where(better[..., None], field.data, best_six)
    return (
        TensorField(vol.geometry, best_six),
        ScalarVolume(vol.geometry, best_resp.astype(np.float32)),
    )
