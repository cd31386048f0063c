"""Volumetric data model, geometry, morphology and MetaImage I/O.

Volumes are stored as numpy arrays indexed ``[z, y, x]`` (C order), which
makes the flat buffer x-fastest: ``flat = x + nx * (y + ny * z)``. Voxel
indices in the public API are always ``(i, j, k) = (x, y, z)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = [
    "VolumeGeometry",
    "ScalarVolume",
    "LabelVolume",
    "load_metaimage",
    "save_metaimage",
    "bounding_box",
    "crop",
    "connected_components_top_k",
    "drop_small_components",
    "dilate_ball",
]

# MetaImage element types we read/write, mapped to little-endian dtypes.
_ELEMENT_DTYPES = {
    "MET_FLOAT": np.dtype("<f4"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_UCHAR": np.dtype("u1"),
}
_SCALAR_ELEMENT_TYPES = ("MET_FLOAT", "MET_SHORT")
_LABEL_ELEMENT_TYPES = ("MET_USHORT", "MET_UCHAR")


@dataclass(frozen=True)
class VolumeGeometry:
    """Grid dimensions (voxels), spacing (mm/voxel) and world origin (mm)."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be three integers >= 1, got {self.dims}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be three positive floats, got {self.spacing}")

    @property
    def shape_zyx(self) -> tuple[int, int, int]:
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    @property
    def spacing_zyx(self) -> tuple[float, float, float]:
        sx, sy, sz = self.spacing
        return (sz, sy, sx)

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def index_to_world(self, index) -> np.ndarray:
        """World position (mm) of voxel center(s); index is (..., 3) in (i,j,k)."""
        idx = np.asarray(index, dtype=np.float64)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def world_to_index(self, world) -> np.ndarray:
        """Continuous voxel index of world position(s) in mm."""
        pos = np.asarray(world, dtype=np.float64)
        return (pos - np.asarray(self.origin)) / np.asarray(self.spacing)


def _prepare(data: np.ndarray, geometry: VolumeGeometry, dtype) -> np.ndarray:
    arr = np.asarray(data)
    if arr.size != geometry.n_voxels:
        raise ValueError(
            f"data has {arr.size} values, geometry needs {geometry.n_voxels}"
        )
    arr = np.ascontiguousarray(arr.reshape(geometry.shape_zyx), dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ScalarVolume:
    """3D float32 grid with physical geometry (CT data, probability maps)."""

    geometry: VolumeGeometry
    data: np.ndarray
    element_type: str = "MET_FLOAT"

    def __post_init__(self):
        if self.element_type not in _SCALAR_ELEMENT_TYPES:
            raise ValueError(f"unsupported scalar element type {self.element_type!r}")
        arr = _prepare(self.data, self.geometry, np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("scalar volume contains non-finite values")
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True)
class LabelVolume:
    """3D uint16 label grid sharing ScalarVolume's layout."""

    geometry: VolumeGeometry
    data: np.ndarray
    element_type: str = "MET_USHORT"

    def __post_init__(self):
        if self.element_type not in _LABEL_ELEMENT_TYPES:
            raise ValueError(f"unsupported label element type {self.element_type!r}")
        object.__setattr__(self, "data", _prepare(self.data, self.geometry, np.uint16))

    def mask(self, label: int | None = None) -> np.ndarray:
        """Boolean [z,y,x] mask: non-zero voxels, or voxels equal to `label`."""
        if label is None:
            return self.data > 0
        return self.data == int(label)


def _format_floats(values) -> str:
    # repr() is the shortest exact round-trip representation in Python 3.
    return " ".join(repr(float(v)) for v in values)


def save_metaimage(vol: ScalarVolume | LabelVolume, path: str | os.PathLike) -> None:
    """Write `vol` as a MetaImage pair: text header `path` plus sibling .raw.

    Header keys are emitted in a fixed order so identical volumes produce
    byte-identical files. Raw data is little-endian, x-fastest.
    """
    path = os.fspath(path)
    raw_path = os.path.splitext(path)[0] + ".raw"
    geom = vol.geometry
    dtype = _ELEMENT_DTYPES[vol.element_type]
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        f"DimSize = {geom.dims[0]} {geom.dims[1]} {geom.dims[2]}\n"
        f"ElementSpacing = {_format_floats(geom.spacing)}\n"
        f"Offset = {_format_floats(geom.origin)}\n"
        f"ElementType = {vol.element_type}\n"
        "ElementByteOrderMSB = False\n"
        f"ElementDataFile = {os.path.basename(raw_path)}\n"
    )
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header)
    with open(raw_path, "wb") as fh:
        fh.write(np.ascontiguousarray(vol.data, dtype=dtype).tobytes())


def _parse_header(path: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        for line in fh:
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    return fields


def load_metaimage(path: str | os.PathLike) -> ScalarVolume | LabelVolume:
    """Read a MetaImage header + raw pair.

    MET_FLOAT and MET_SHORT load as ScalarVolume, MET_USHORT and MET_UCHAR as
    LabelVolume; the on-disk element type is kept so save(load(p)) is
    byte-identical.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    fields = _parse_header(path)
    if fields.get("NDims", "3") != "3":
        raise ValueError(f"only NDims = 3 supported, got {fields.get('NDims')}")
    if fields.get("CompressedData", "False").lower() == "true":
        raise ValueError("compressed MetaImage data is not supported")
    element_type = fields.get("ElementType", "")
    if element_type not in _ELEMENT_DTYPES:
        raise ValueError(f"unsupported ElementType {element_type!r}")
    try:
        dims = tuple(int(t) for t in fields["DimSize"].split())
    except KeyError:
        raise ValueError("header is missing DimSize") from None
    if len(dims) != 3:
        raise ValueError(f"DimSize must have 3 entries, got {fields['DimSize']!r}")
    spacing = tuple(float(t) for t in fields.get("ElementSpacing", "1 1 1").split())
    origin = tuple(float(t) for t in fields.get("Offset", "0 0 0").split())
    geom = VolumeGeometry(dims, spacing, origin)

    data_file = fields.get("ElementDataFile", "")
    if data_file in ("", "LOCAL"):
        raise ValueError("embedded (LOCAL) MetaImage data is not supported")
    raw_path = os.path.join(os.path.dirname(path) or ".", data_file)
    if not os.path.exists(raw_path):
        raise FileNotFoundError(raw_path)

    dtype = _ELEMENT_DTYPES[element_type]
    expected = geom.n_voxels * dtype.itemsize
    actual = os.path.getsize(raw_path)
    if actual != expected:
        raise ValueError(
            f"raw file {raw_path} holds {actual} bytes, header implies {expected}"
        )
    raw = np.fromfile(raw_path, dtype=dtype)
    if fields.get("ElementByteOrderMSB", "False").lower() == "true":
        raw = raw.byteswap()
    if element_type in _SCALAR_ELEMENT_TYPES:
        return ScalarVolume(geom, raw, element_type=element_type)
    return LabelVolume(geom, raw, element_type=element_type)


def bounding_box(
    mask: LabelVolume, label: int = 1
) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    """Tightest inclusive (min,max) index box of voxels carrying `label`."""
    zz, yy, xx = np.nonzero(mask.data == int(label))
    if xx.size == 0:
        raise ValueError(f"label {label} not present in mask")
    return (
        (int(xx.min()), int(yy.min()), int(zz.min())),
        (int(xx.max()), int(yy.max()), int(zz.max())),
    )


def crop(vol, box, margin: int = 0):
    """Copy the sub-volume of inclusive index `box` grown by `margin` voxels.

    The margin is clamped to the volume extent; the origin moves to the world
    position of the new (0,0,0) voxel.
    """
    (i0, j0, k0), (i1, j1, k1) = box
    nx, ny, nz = vol.geometry.dims
    lo = (max(0, i0 - margin), max(0, j0 - margin), max(0, k0 - margin))
    hi = (min(nx - 1, i1 + margin), min(ny - 1, j1 + margin), min(nz - 1, k1 + margin))
    if any(a > b for a, b in zip(lo, hi)) or any(b < 0 for b in hi) or any(
        a > d - 1 for a, d in zip(lo, vol.geometry.dims)
    ):
        raise ValueError(f"crop box {box} does not intersect volume of dims {vol.geometry.dims}")
    sub = vol.data[lo[2] : hi[2] + 1, lo[1] : hi[1] + 1, lo[0] : hi[0] + 1].copy()
    new_geom = VolumeGeometry(
        dims=(hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1),
        spacing=vol.geometry.spacing,
        origin=tuple(vol.geometry.index_to_world(lo)),
    )
    return type(vol)(new_geom, sub, element_type=vol.element_type)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def connected_components_top_k(
    mask: LabelVolume, k: int, connectivity: int = 6
) -> LabelVolume:
    """Keep the k largest components, relabeled 1..k by descending size.

    Equal-sized components are ordered by their smallest linear (x-fastest)
    index, which makes the labeling deterministic.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    labeled, n = ndimage.label(mask.mask(), structure=_structure(connectivity))
    if n == 0:
        return LabelVolume(mask.geometry, np.zeros(mask.geometry.shape_zyx, np.uint16))
    flat = labeled.ravel()
    sizes = np.bincount(flat)[1:]  # skip background
    component_ids, first_index = np.unique(flat, return_index=True)
    first_of = dict(zip(component_ids.tolist(), first_index.tolist()))
    order = sorted(range(1, n + 1), key=lambda c: (-int(sizes[c - 1]), first_of[c]))
    keep = order[: min(k, n)]
    out = np.zeros(labeled.shape, dtype=np.uint16)
    for new_label, comp in enumerate(keep, start=1):
        out[labeled == comp] = new_label
    return LabelVolume(mask.geometry, out)


def drop_small_components(
    mask: LabelVolume, min_mm3: float, connectivity: int = 26
) -> LabelVolume:
    """Zero out connected components whose volume is below `min_mm3`.

    Sizes are measured in world units (voxel count times voxel volume), so the
    same threshold behaves consistently across anisotropic spacings.
    """
    if min_mm3 < 0:
        raise ValueError("min_mm3 must be >= 0")
    binary = mask.mask()
    if min_mm3 == 0 or not binary.any():
        return LabelVolume(mask.geometry, binary.astype(np.uint16))
    labeled, n = ndimage.label(binary, structure=_structure(connectivity))
    voxel_mm3 = float(np.prod(mask.geometry.spacing))
    sizes = np.bincount(labeled.ravel())[1:] * voxel_mm3
    keep = np.zeros(n + 1, dtype=bool)
    keep[1:] = sizes >= min_mm3
    return LabelVolume(mask.geometry, keep[labeled].astype(np.uint16))


def dilate_ball(mask: LabelVolume, radius_mm: float) -> LabelVolume:
    """Dilate by the exact Euclidean ball of `radius_mm` in world units.

    Computed by thresholding the anisotropic distance transform, so the result
    is the true set of voxels within `radius_mm` of the input set.
    """
    if radius_mm < 0:
        raise ValueError("radius_mm must be >= 0")
    binary = mask.mask()
    if not binary.any() or radius_mm == 0:
        return LabelVolume(mask.geometry, binary.astype(np.uint16))
    dist = ndimage.distance_transform_edt(~binary, sampling=mask.geometry.spacing_zyx)
    return LabelVolume(mask.geometry, (dist <= radius_mm).astype(np.uint16))
