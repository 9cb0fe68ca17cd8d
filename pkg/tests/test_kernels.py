"""Compiled and numpy kernels against brute-force oracles and each other."""

import numpy as np
import pytest

from woundbench.geometry import TriangleMesh
from woundbench.kernels import BACKENDS, get_backend
from woundbench.mesh_io import CameraView
from woundbench.projection import rasterize
from woundbench.synthfix import icosphere, look_at

from oracles import (
    brute_nearest_distances,
    point_triangle_distance,
    ray_cast_depth,
    ray_cast_image,
)


@pytest.fixture(scope="module")
def bumpy_sphere():
    """Level-4 icosphere (5120 faces) with radial jitter, so no two faces are coplanar."""
    m = icosphere(4, 20.0)
    r = 1.0 + 0.05 * np.random.default_rng(3).uniform(-1, 1, m.n_vertices)
    return TriangleMesh(m.vertices * r[:, None], m.faces)


def _cam(center, width, height, f=60.0):
    R = look_at(np.asarray(center, float), np.zeros(3), [0, 0, 1])
    return CameraView("v", width, height, f, f, width / 2, height / 2, R, -R @ center)


def test_brute_kernel_matches_oracle(backend, rng):
    tri = rng.normal(size=(300, 9))
    q = rng.normal(size=(300, 3)) * 2
    _, dist, _ = get_backend(backend).closest_points_brute(tri, q)
    for i in range(0, 300, 7):
        want = min(point_triangle_distance(q[i], t[0:3], t[3:6], t[6:9]) for t in tri)
        assert abs(dist[i] - want) < 1e-12


def test_locator_matches_exhaustive_scan(bumpy_sphere, backend):
    assert bumpy_sphere.n_faces == 5120
    q = np.random.default_rng(99).normal(size=(1000, 3)) * 15
    locator = get_backend(backend).TriangleLocator(bumpy_sphere.triangles)
    pts, dist, face = locator.query(q)
    want = brute_nearest_distances(bumpy_sphere.vertices, bumpy_sphere.faces, q)
    np.testing.assert_allclose(dist, want, atol=1e-12, rtol=0)
    np.testing.assert_allclose(np.linalg.norm(pts - q, axis=1), dist, atol=1e-12, rtol=0)


def test_locator_matches_brute_kernel(bumpy_sphere, backend):
    k = get_backend(backend)
    q = np.random.default_rng(5).normal(size=(200, 3)) * 30
    a = k.TriangleLocator(bumpy_sphere.triangles).query(q)
    b = k.closest_points_brute(bumpy_sphere.triangles, q)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
def test_backends_bitwise_identical(bumpy_sphere):
    q = np.random.default_rng(8).normal(size=(500, 3)) * 25
    a = BACKENDS["cython"].TriangleLocator(bumpy_sphere.triangles).query(q)
    b = BACKENDS["python"].TriangleLocator(bumpy_sphere.triangles).query(q)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    cam = _cam([0, 0, 70], 64, 48)
    ra = rasterize(bumpy_sphere, cam, "cython")
    rb = rasterize(bumpy_sphere, cam, "python")
    np.testing.assert_array_equal(ra.depth, rb.depth)
    np.testing.assert_array_equal(ra.face_id, rb.face_id)


def _agreement(buf, depth, ids):
    covered = (buf.face_id >= 0) | (ids >= 0)
    same = (buf.face_id == ids) & covered
    return same.sum() / covered.sum(), covered.sum()


def test_rasterizer_matches_ray_casting(bumpy_sphere, backend):
    cam = _cam([35, -40, 45], 160, 120, f=200.0)
    buf = rasterize(bumpy_sphere, cam, backend)
    xyz = cam.to_camera(bumpy_sphere.vertices)
    depth, ids = ray_cast_image(xyz, bumpy_sphere.faces, 160, 120, cam.fx, cam.fy, cam.cx, cam.cy)
    frac, n = _agreement(buf, depth, ids)
    assert n > 5000
    assert frac >= 0.999
    both = (buf.face_id >= 0) & (buf.face_id == ids)
    np.testing.assert_allclose(buf.depth[both], depth[both], rtol=1e-9)


def test_single_triangle_center_depth(backend):
    # tilted triangle in front of the camera covering the principal point
    V = np.array([[-2.0, -2.0, 4.0], [3.0, -1.0, 6.0], [0.0, 3.0, 5.0]])
    cam = CameraView("c", 64, 64, 50, 50, 32, 32, np.eye(3), np.zeros(3))
    buf = rasterize(TriangleMesh(V, [[0, 1, 2]]), cam, backend)
    want, f = ray_cast_depth(V, np.array([[0, 1, 2]]), 32.5, 32.5, 50, 50, 32, 32)
    assert buf.face_id[32, 32] == f == 0
    assert abs(buf.depth[32, 32] - want) < 1e-6


def test_nearer_of_coaxial_triangles_wins(backend):
    V = np.array([[-1, -1, 5], [1, -1, 5], [0, 1, 5], [-2, -2, 10], [2, -2, 10], [0, 2, 10]], float)
    cam = CameraView("c", 32, 32, 20, 20, 16, 16, np.eye(3), np.zeros(3))
    for faces in ([[0, 1, 2], [3, 4, 5]], [[3, 4, 5], [0, 1, 2]]):
        buf = rasterize(TriangleMesh(V, faces), cam, backend)
        near_face = faces.index([0, 1, 2])
        assert buf.face_id[16, 16] == near_face
        assert buf.depth[16, 16] == pytest.approx(5.0, abs=1e-12)
        assert np.all(buf.depth[buf.face_id == near_face] < 6)


def test_mesh_behind_camera_is_empty(backend):
    cam = CameraView("c", 32, 32, 20, 20, 16, 16, np.eye(3), np.zeros(3))
    m = icosphere(2, 1.0)
    buf = rasterize(TriangleMesh(m.vertices - [0, 0, 10], m.faces), cam, backend)
    assert np.all(buf.face_id == -1)
    assert np.all(np.isinf(buf.depth))


def test_near_plane_clipping_matches_ray_casting(backend):
    # a floor quad extending from behind the camera to far in front of it
    V = np.array([[-5.3, 1, -3], [5.3, 1, -3], [5.3, 1, 20], [-5.3, 1, 20]], float)
    F = np.array([[0, 1, 2], [0, 2, 3]])
    cam = CameraView("c", 48, 40, 20, 20, 24, 20, np.eye(3), np.zeros(3))
    buf = rasterize(TriangleMesh(V, F), cam, backend)
    depth, ids = ray_cast_image(V, F, 48, 40, 20, 20, 24, 20)
    covered = (buf.face_id >= 0) | (ids >= 0)
    assert covered.sum() > 300
    # the diagonal crosses the near plane; both halves must clip to the same point
    np.testing.assert_array_equal(buf.face_id >= 0, ids >= 0)
    hit = buf.face_id >= 0
    # 1/z interpolation across a vertex at the near plane loses a few digits
    np.testing.assert_allclose(buf.depth[hit], depth[hit], rtol=1e-6)


def test_top_left_rule_shared_edges_cover_once(backend):
    # a fan whose edges pass exactly through pixel centers
    c = [8.5, 8.5, 1.0]
    ring = [[0.5, 0.5, 1.0], [16.5, 0.5, 1.0], [16.5, 16.5, 1.0], [0.5, 16.5, 1.0]]
    V = np.array([c] + ring)
    F = [[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]]
    cam = CameraView("c", 20, 20, 1.0, 1.0, 0.0, 0.0, np.eye(3), np.zeros(3))
    count = np.zeros((20, 20), dtype=int)
    for f in F:
        count += rasterize(TriangleMesh(V, [f]), cam, backend).face_id >= 0
    assert count.max() == 1
    whole = rasterize(TriangleMesh(V, F), cam, backend).face_id >= 0
    np.testing.assert_array_equal(whole, count == 1)
    # interior of the square is gap-free
    assert whole[1:16, 1:16].all()
