"""Volume data model, MetaImage round-trips, morphology."""

import os
from collections import deque

import numpy as np
import pytest

from renovor.volume import (
    LabelVolume,
    ScalarVolume,
    VolumeGeometry,
    bounding_box,
    connected_components_top_k,
    crop,
    dilate_ball,
    load_metaimage,
    save_metaimage,
)


def make_scalar(data, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    return ScalarVolume(VolumeGeometry(dims, spacing, origin), np.asarray(data))


def make_label(data, dims, spacing=(1.0, 1.0, 1.0)):
    return LabelVolume(VolumeGeometry(dims, spacing), np.asarray(data))


class TestGeometry:
    def test_validation(self):
        with pytest.raises(ValueError):
            VolumeGeometry((0, 2, 2))
        with pytest.raises(ValueError):
            VolumeGeometry((2, 2, 2), spacing=(1.0, 0.0, 1.0))

    def test_index_world_inverse(self):
        rng = np.random.default_rng(11)
        geom = VolumeGeometry((9, 7, 5), (0.5, 0.7, 2.0), (-4.0, 3.5, 10.0))
        idx = rng.uniform(0, 5, size=(40, 3))
        back = geom.world_to_index(geom.index_to_world(idx))
        assert np.max(np.abs(back - idx)) < 1e-9

    def test_world_of_origin_voxel(self):
        geom = VolumeGeometry((4, 4, 4), (2.0, 2.0, 2.0), (1.0, 2.0, 3.0))
        assert np.allclose(geom.index_to_world((0, 0, 0)), (1.0, 2.0, 3.0))
        assert np.allclose(geom.index_to_world((1, 1, 1)), (3.0, 4.0, 5.0))


class TestVolumeTypes:
    def test_scalar_layout_x_fastest(self):
        # flat index = x + nx*(y + ny*z)
        vol = make_scalar(np.arange(24, dtype=np.float32), (2, 3, 4))
        assert vol.data[0, 0, 1] == 1.0  # x=1
        assert vol.data[0, 1, 0] == 2.0  # y=1
        assert vol.data[1, 0, 0] == 6.0  # z=1

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            make_scalar(np.zeros(7, np.float32), (2, 2, 2))

    def test_nonfinite_rejected(self):
        bad = np.zeros(8, np.float32)
        bad[3] = np.nan
        with pytest.raises(ValueError):
            make_scalar(bad, (2, 2, 2))

    def test_immutable(self):
        vol = make_scalar(np.zeros(8, np.float32), (2, 2, 2))
        with pytest.raises(ValueError):
            vol.data[0, 0, 0] = 5.0


class TestMetaImage:
    def test_constant_volume_roundtrip(self, tmp_path):
        path = str(tmp_path / "ones.mhd")
        vol = make_scalar(np.ones(8, np.float32), (2, 2, 2))
        save_metaimage(vol, path)
        assert os.path.getsize(str(tmp_path / "ones.raw")) == 32
        back = load_metaimage(path)
        assert isinstance(back, ScalarVolume)
        assert np.array_equal(back.data, vol.data)

    def test_size_mismatch_error(self, tmp_path):
        path = tmp_path / "bad.mhd"
        path.write_text(
            "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
            "ElementSpacing = 1 1 1\nOffset = 0 0 0\n"
            "ElementType = MET_FLOAT\nElementByteOrderMSB = False\n"
            "ElementDataFile = bad.raw\n"
        )
        (tmp_path / "bad.raw").write_bytes(b"\x00" * 16)
        with pytest.raises(ValueError):
            load_metaimage(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_metaimage(str(tmp_path / "nope.mhd"))

    def test_unsupported_element_type(self, tmp_path):
        path = tmp_path / "d.mhd"
        path.write_text(
            "ObjectType = Image\nNDims = 3\nDimSize = 1 1 1\n"
            "ElementType = MET_DOUBLE\nElementDataFile = d.raw\n"
        )
        (tmp_path / "d.raw").write_bytes(b"\x00" * 8)
        with pytest.raises(ValueError):
            load_metaimage(str(path))

    def test_random_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(7)
        for trial in range(5):
            vol = ScalarVolume(
                VolumeGeometry((4, 4, 4), (0.5, 0.5, 2.0), (-1.0, 2.0, 0.25)),
                rng.normal(size=64).astype(np.float32),
            )
            path = str(tmp_path / f"r{trial}.mhd")
            save_metaimage(vol, path)
            back = load_metaimage(path)
            assert back.data.tobytes() == vol.data.tobytes()
            assert back.geometry == vol.geometry

    def test_save_deterministic(self, tmp_path):
        vol = make_scalar(np.full(8, 3.0, np.float32), (2, 2, 2))
        p1, p2 = str(tmp_path / "a.mhd"), str(tmp_path / "b.mhd")
        save_metaimage(vol, p1)
        save_metaimage(vol, p2)
        h1 = open(p1, "rb").read().replace(b"a.raw", b"X.raw")
        h2 = open(p2, "rb").read().replace(b"b.raw", b"X.raw")
        assert h1 == h2
        assert open(p1[:-4] + ".raw", "rb").read() == open(p2[:-4] + ".raw", "rb").read()

    def test_header_key_order(self, tmp_path):
        path = str(tmp_path / "k.mhd")
        save_metaimage(make_scalar(np.zeros(8, np.float32), (2, 2, 2)), path)
        keys = [line.split("=")[0].strip() for line in open(path)]
        assert keys == [
            "ObjectType", "NDims", "DimSize", "ElementSpacing", "Offset",
            "ElementType", "ElementByteOrderMSB", "ElementDataFile",
        ]

    def test_spacing_survives_exactly(self, tmp_path):
        path = str(tmp_path / "s.mhd")
        vol = ScalarVolume(
            VolumeGeometry((2, 2, 2), (0.5, 0.5, 2.0)), np.zeros(8, np.float32)
        )
        save_metaimage(vol, path)
        assert load_metaimage(path).geometry.spacing == (0.5, 0.5, 2.0)

    def test_label_and_short_types_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        lab = LabelVolume(
            VolumeGeometry((3, 3, 3)), rng.integers(0, 9, 27).astype(np.uint16)
        )
        path = str(tmp_path / "lab.mhd")
        save_metaimage(lab, path)
        back = load_metaimage(path)
        assert isinstance(back, LabelVolume)
        assert np.array_equal(back.data, lab.data)
        # CT-style signed shorts load as ScalarVolume but save back bit-identically
        vals = rng.integers(-1000, 1000, 27).astype(np.int16)
        sp = str(tmp_path / "ct.mhd")
        hdr = (
            "ObjectType = Image\nNDims = 3\nDimSize = 3 3 3\n"
            "ElementSpacing = 1 1 1\nOffset = 0 0 0\nElementType = MET_SHORT\n"
            "ElementByteOrderMSB = False\nElementDataFile = ct.raw\n"
        )
        open(sp, "w").write(hdr)
        vals.tofile(str(tmp_path / "ct.raw"))
        ct = load_metaimage(sp)
        assert isinstance(ct, ScalarVolume)
        assert ct.element_type == "MET_SHORT"
        sp2 = str(tmp_path / "ct2.mhd")
        save_metaimage(ct, sp2)
        assert open(str(tmp_path / "ct2.raw"), "rb").read() == vals.tobytes()


class TestBoundingBox:
    def test_single_voxel(self):
        arr = np.zeros((8, 8, 8), np.uint16)
        arr[5, 4, 3] = 1  # (i,j,k) = (3,4,5)
        box = bounding_box(make_label(arr, (8, 8, 8)))
        assert box == ((3, 4, 5), (3, 4, 5))

    def test_two_voxels(self):
        arr = np.zeros((3, 2, 8), np.uint16)
        arr[0, 0, 0] = 1
        arr[2, 1, 7] = 1
        assert bounding_box(make_label(arr, (8, 2, 3))) == ((0, 0, 0), (7, 1, 2))

    def test_label_absent(self):
        with pytest.raises(ValueError):
            bounding_box(make_label(np.zeros((2, 2, 2), np.uint16), (2, 2, 2)))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(21)
        arr = (rng.random((6, 5, 4)) < 0.2).astype(np.uint16)
        arr[3, 2, 1] = 1  # guarantee non-empty
        got = bounding_box(make_label(arr, (4, 5, 6)))
        lo = [10**9] * 3
        hi = [-1] * 3
        for k in range(6):
            for j in range(5):
                for i in range(4):
                    if arr[k, j, i]:
                        for axis, v in enumerate((i, j, k)):
                            lo[axis] = min(lo[axis], v)
                            hi[axis] = max(hi[axis], v)
        assert got == (tuple(lo), tuple(hi))


class TestCrop:
    def test_full_extent_identity(self):
        vol = make_scalar(np.arange(27, dtype=np.float32), (3, 3, 3))
        out = crop(vol, ((0, 0, 0), (2, 2, 2)), margin=0)
        assert np.array_equal(out.data, vol.data)
        assert out.geometry == vol.geometry

    def test_interior_crop_shifts_origin(self):
        geom = VolumeGeometry((4, 4, 4), (0.5, 1.0, 2.0), (10.0, 20.0, 30.0))
        vol = ScalarVolume(geom, np.arange(64, dtype=np.float32))
        out = crop(vol, ((1, 1, 1), (2, 2, 2)))
        assert out.geometry.dims == (2, 2, 2)
        assert out.geometry.origin == (10.5, 21.0, 32.0)
        assert out.data[0, 0, 0] == vol.data[1, 1, 1]

    def test_margin_clamps(self):
        vol = make_scalar(np.arange(27, dtype=np.float32), (3, 3, 3))
        out = crop(vol, ((1, 1, 1), (1, 1, 1)), margin=100)
        assert out.geometry.dims == (3, 3, 3)
        assert np.array_equal(out.data, vol.data)

    def test_disjoint_box_errors(self):
        vol = make_scalar(np.zeros(27, np.float32), (3, 3, 3))
        with pytest.raises(ValueError):
            crop(vol, ((5, 5, 5), (7, 7, 7)))


def flood_fill_components(binary, connectivity):
    """Oracle: BFS component labeling, independent of scipy."""
    if connectivity == 6:
        offsets = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    else:
        offsets = [
            (dz, dy, dx)
            for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
            if (dz, dy, dx) != (0, 0, 0)
        ]
    nz, ny, nx = binary.shape
    seen = np.zeros_like(binary, dtype=bool)
    comps = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if binary[z, y, x] and not seen[z, y, x]:
                    comp = []
                    queue = deque([(z, y, x)])
                    seen[z, y, x] = True
                    while queue:
                        cz, cy, cx = queue.popleft()
                        comp.append((cz, cy, cx))
                        for dz, dy, dx in offsets:
                            nz2, ny2, nx2 = cz + dz, cy + dy, cx + dx
                            if (
                                0 <= nz2 < nz and 0 <= ny2 < ny and 0 <= nx2 < nx
                                and binary[nz2, ny2, nx2] and not seen[nz2, ny2, nx2]
                            ):
                                seen[nz2, ny2, nx2] = True
                                queue.append((nz2, ny2, nx2))
                    comps.append(comp)
    return comps


class TestConnectedComponents:
    def test_top2_of_three_blobs(self):
        arr = np.zeros((3, 4, 20), np.uint16)
        arr[0, 0, 0:10] = 1   # size 10
        arr[1, 2, 0:5] = 1    # size 5
        arr[2, 3, 8:10] = 1   # size 2
        out = connected_components_top_k(make_label(arr, (20, 4, 3)), k=2)
        sizes = np.bincount(out.data.ravel())
        assert sizes[1] == 10 and sizes[2] == 5
        assert len(sizes) == 3

    def test_empty_mask(self):
        out = connected_components_top_k(
            make_label(np.zeros((2, 2, 2), np.uint16), (2, 2, 2)), k=3
        )
        assert not out.data.any()

    def test_fewer_than_k(self):
        arr = np.zeros((2, 2, 2), np.uint16)
        arr[0, 0, 0] = 1
        out = connected_components_top_k(make_label(arr, (2, 2, 2)), k=5)
        assert out.data.max() == 1

    @pytest.mark.parametrize("connectivity", [6, 26])
    def test_matches_flood_fill_oracle(self, connectivity):
        rng = np.random.default_rng(42 + connectivity)
        binary = rng.random((7, 6, 5)) < 0.25
        out = connected_components_top_k(
            make_label(binary.astype(np.uint16), (5, 6, 7)),
            k=1,
            connectivity=connectivity,
        )
        comps = flood_fill_components(binary, connectivity)
        if not comps:
            assert not out.data.any()
            return
        best = max(
            comps,
            key=lambda c: (len(c), -min(z * 30 + y * 5 + x for z, y, x in c)),
        )
        expected = np.zeros_like(binary)
        for z, y, x in best:
            expected[z, y, x] = True
        assert np.array_equal(out.data == 1, expected)

    def test_output_subset_and_sizes_sorted(self):
        rng = np.random.default_rng(9)
        binary = rng.random((8, 8, 8)) < 0.3
        mask = make_label(binary.astype(np.uint16), (8, 8, 8))
        out = connected_components_top_k(mask, k=4)
        assert not np.any((out.data > 0) & ~binary)
        sizes = np.bincount(out.data.ravel())[1:]
        assert all(sizes[i] >= sizes[i + 1] for i in range(len(sizes) - 1))


class TestDilateBall:
    def test_radius_zero_identity(self):
        rng = np.random.default_rng(5)
        arr = (rng.random((4, 4, 4)) < 0.3).astype(np.uint16)
        out = dilate_ball(make_label(arr, (4, 4, 4)), 0.0)
        assert np.array_equal(out.data > 0, arr > 0)

    def test_unit_ball_is_cross(self):
        arr = np.zeros((5, 5, 5), np.uint16)
        arr[2, 2, 2] = 1
        out = dilate_ball(make_label(arr, (5, 5, 5)), 1.0)
        assert int(out.data.sum()) == 7
        assert out.data[2, 2, 2] and out.data[2, 2, 1] and out.data[1, 2, 2]

    def test_radius5_matches_lattice_count(self):
        # number of integer lattice points with x^2+y^2+z^2 <= 25
        expected = sum(
            1
            for x in range(-5, 6) for y in range(-5, 6) for z in range(-5, 6)
            if x * x + y * y + z * z <= 25
        )
        arr = np.zeros((13, 13, 13), np.uint16)
        arr[6, 6, 6] = 1
        out = dilate_ball(make_label(arr, (13, 13, 13)), 5.0)
        assert int((out.data > 0).sum()) == expected

    def test_anisotropic_spacing(self):
        arr = np.zeros((5, 5, 5), np.uint16)
        arr[2, 2, 2] = 1
        out = dilate_ball(make_label(arr, (5, 5, 5), spacing=(1.0, 1.0, 2.0)), 2.0)
        got = out.data > 0
        # along z only +-1 voxel reachable (2mm each); along x +-2
        assert got[3, 2, 2] and not got[4, 2, 2]
        assert got[2, 2, 4] and got[2, 2, 0]

    def test_extensive_and_monotone(self):
        rng = np.random.default_rng(17)
        arr = (rng.random((6, 6, 6)) < 0.1).astype(np.uint16)
        mask = make_label(arr, (6, 6, 6))
        small = dilate_ball(mask, 1.0).data > 0
        big = dilate_ball(mask, 2.5).data > 0
        assert np.all(small >= (arr > 0))
        assert np.all(big >= small)
