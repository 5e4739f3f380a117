import struct

import numpy as np
import pytest

from volsample import (Aabb, CompositeScene, ConstantBox, FormatError, GaussianBlob, Sphere, VoxelField, bake,
                       load_field, load_scene, load_voxel_field, query_rgb_density, save_scene, save_voxel_field)


def test_constant_box_is_inclusive():
    f = ConstantBox(3.0, Aabb((0, 0, 0), (1, 1, 1)), (1, 0, 0))
    sigma = f.density([[0.5, 0.5, 0.5], [1.0, 1.0, 1.0], [1.0001, 0.5, 0.5]])
    np.testing.assert_array_equal(sigma, [3.0, 3.0, 0.0])


def test_sphere_and_gaussian_values():
    s = Sphere(2.0, (1, 0, 0), 0.5)
    np.testing.assert_array_equal(s.density([[1.5, 0, 0], [1.51, 0, 0]]), [2.0, 0.0])
    g = GaussianBlob(4.0, (0, 0, 0), 0.5)
    assert g.density([[0.0, 0.5, 0.0]])[0] == pytest.approx(4.0 * np.exp(-0.5))
    assert g.bounds is None


def test_composite_takes_max_and_its_color():
    a = ConstantBox(1.0, Aabb.cube(1.0), (1, 0, 0))
    b = Sphere(5.0, (0, 0, 0), 0.25, (0, 1, 0))
    scene = CompositeScene([a, b])
    sigma, rgb = query_rgb_density(scene, [[0, 0, 0], [0.9, 0, 0], [3, 0, 0]])
    np.testing.assert_array_equal(sigma, [5.0, 1.0, 0.0])
    np.testing.assert_array_equal(rgb, [[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    assert scene.bounds == Aabb.cube(1.0)


def test_empty_scene_needs_bounds():
    with pytest.raises(ValueError):
        CompositeScene([])
    scene = CompositeScene([], bounds=Aabb.cube(1.0))
    assert scene.density(np.zeros((4, 3))).tolist() == [0.0] * 4


def test_voxel_lattice_queries_are_exact(rng):
    dens = rng.uniform(0, 5, size=(4, 5, 6)).astype(np.float32)
    vox = VoxelField(dens, Aabb((0, 0, 0), (6, 5, 4)))
    pts = vox.lattice_points()
    np.testing.assert_array_equal(vox.density(pts.reshape(-1, 3)), dens.ravel().astype(np.float64))


def test_trilinear_reproduces_linear_fields(rng):
    # a field linear in x, y, z is reproduced exactly between cell centers
    box = Aabb((0, 0, 0), (1, 2, 3))
    vox = bake(_Linear(box), (8, 9, 10), box, colors=False)
    centers = vox.lattice_points().reshape(-1, 3)
    lo, hi = centers.min(axis=0), centers.max(axis=0)
    pts = rng.uniform(lo, hi, size=(500, 3))
    np.testing.assert_allclose(vox.density(pts), _Linear(box).density(pts), rtol=2e-6)


class _Linear(ConstantBox):
    def __init__(self, box):
        super().__init__(1.0, box)

    def _density(self, x):
        return 1.0 + x[..., 0] + 2 * x[..., 1] + 3 * x[..., 2]


def test_voxel_outside_bounds_is_empty():
    vox = VoxelField(np.ones((2, 2, 2), np.float32), Aabb.cube(1.0))
    np.testing.assert_array_equal(vox.density([[0.99, 0, 0], [1.01, 0, 0]]), [1.0, 0.0])


def test_voxel_round_trip(tmp_path, rng):
    dens = rng.uniform(0, 2, size=(3, 4, 5)).astype(np.float32)
    cols = rng.uniform(0, 1, size=(3, 4, 5, 3)).astype(np.float32)
    vox = VoxelField(dens, Aabb((-1, -2, -3), (1, 2, 3)), cols)
    path = tmp_path / "v.vox3"
    save_voxel_field(vox, path)
    assert path.stat().st_size == 72 + 4 * 60 * 4
    back = load_field(path)
    np.testing.assert_array_equal(back.densities, dens)
    np.testing.assert_array_equal(back.colors, cols)
    assert back.bounds == vox.bounds and back.resolution == (5, 4, 3)


def _corrupt(path, offset, fmt, value):
    data = bytearray(path.read_bytes())
    struct.pack_into(fmt, data, offset, value)
    path.write_bytes(bytes(data))


@pytest.mark.parametrize("offset,fmt,value", [
    (0, "<4s", b"XXXX"),
    (4, "<I", 99),
    (12, "<I", 0),
    (20, "<d", 5.0),
    (68, "<I", 6),
    (72 + 4 * 7, "<f", -1.0),
    (72 + 4 * 3, "<f", float("nan")),
])
def test_format_errors_report_offset(tmp_path, offset, fmt, value):
    path = tmp_path / "v.vox3"
    save_voxel_field(VoxelField(np.ones((2, 2, 2), np.float32), Aabb.cube(1.0)), path)
    _corrupt(path, offset, fmt, value)
    with pytest.raises(FormatError) as info:
        load_voxel_field(path)
    assert info.value.offset == offset


def test_truncated_payload(tmp_path):
    path = tmp_path / "v.vox3"
    save_voxel_field(VoxelField(np.ones((2, 2, 2), np.float32), Aabb.cube(1.0)), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError) as info:
        load_voxel_field(path)
    assert info.value.offset == 72 + 4 * 7


def test_bake_requires_two_cells():
    with pytest.raises(ValueError):
        bake(Sphere(1.0, (0, 0, 0), 0.5), 1, Aabb.cube(1.0))


def test_scene_json_round_trip(tmp_path):
    scene = CompositeScene([ConstantBox(2.0, Aabb((0, 0, 0), (1, 1, 1)), (0.1, 0.2, 0.3)),
                            Sphere(1.0, (0, 0, 0), 0.5), GaussianBlob(3.0, (0, 1, 0), 0.2)],
                           bounds=Aabb.cube(2.0))
    save_scene(scene, tmp_path / "s.json")
    back = load_scene(tmp_path / "s.json")
    pts = np.random.default_rng(0).uniform(-2, 2, size=(200, 3))
    np.testing.assert_array_equal(back.density(pts), scene.density(pts))
    assert back.bounds == scene.bounds


def test_scene_json_rejects_unknown_primitive(tmp_path):
    (tmp_path / "s.json").write_text('{"primitives": [{"type": "torus"}]}')
    with pytest.raises(ValueError, match="torus"):
        load_scene(tmp_path / "s.json")
