import hashlib

import numpy as np
import pytest

from woundbench.errors import InputError
from woundbench.geometry import SimilarityTransform, TriangleMesh, rotation_from_axis_angle
from woundbench.projection import project_vertex, rasterize
from woundbench.synthfix import (
    WoundSpec,
    bump_profile,
    carve_wound,
    gen_body_part,
    gen_camera_ring,
    icosphere,
    make_fixture,
    perturb,
    render_gt_masks,
)


def edge_use_counts(m):
    e = np.sort(np.concatenate([m.faces[:, [0, 1]], m.faces[:, [1, 2]], m.faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def directed_edges_unique(m):
    e = np.concatenate([m.faces[:, [0, 1]], m.faces[:, [1, 2]], m.faces[:, [2, 0]]])
    return len(np.unique(e, axis=0)) == len(e)


# ---------------------------------------------------------------- body parts


def test_icosphere_level2_counts():
    m = gen_body_part("sphere", 2, 1.0)
    assert (m.n_vertices, m.n_faces) == (162, 320)


@pytest.mark.parametrize("level", [1, 2, 3, 4])
def test_sphere_euler_and_watertight(level):
    m = gen_body_part("sphere", level, 10.0)
    assert m.n_vertices - len(m.edges) + m.n_faces == 2
    assert np.all(edge_use_counts(m) == 2)
    assert directed_edges_unique(m)  # consistently oriented
    np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), 10.0)


@pytest.mark.parametrize("level", [1, 2, 3])
def test_cylinder_watertight_and_outward(level):
    m = gen_body_part("cylinder", level, 5.0, 30.0)
    assert np.all(edge_use_counts(m) == 2)
    assert directed_edges_unique(m)
    assert m.n_vertices - len(m.edges) + m.n_faces == 2
    # outward: signed volume is positive
    t = m.vertices[m.faces]
    vol = np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6
    assert vol > 0
    n = 8 * 2 ** level
    rim = np.isclose(np.hypot(m.vertices[:, 0], m.vertices[:, 1]), 5.0)
    assert np.count_nonzero(rim) == n * (n + 1)


def test_cylinder_area_level3():
    r, h = 5.0, 30.0
    m = gen_body_part("cylinder", 3, r, h)
    want = 2 * np.pi * r * h + 2 * np.pi * r * r
    assert abs(m.face_areas.sum() / want - 1) <= 0.02


def test_body_part_errors():
    with pytest.raises(InputError):
        gen_body_part("sphere", 0)
    with pytest.raises(InputError):
        gen_body_part("torus", 2)


# ---------------------------------------------------------------- carving


def test_zero_depth_only_labels():
    m = icosphere(3, 50.0)
    c = carve_wound(m, WoundSpec((0, 0, 50.0), 15.0, 0.0))
    np.testing.assert_array_equal(c.vertices, m.vertices)
    r = np.linalg.norm(m.vertices - [0, 0, 50.0], axis=1)
    np.testing.assert_array_equal(c.labels, (r < 15.0).astype(np.uint8))


def test_center_vertex_displaced_by_full_depth():
    m = icosphere(3, 50.0)
    center = m.vertices[0]
    c = carve_wound(m, WoundSpec(tuple(center), 10.0, 4.0))
    assert np.linalg.norm(c.vertices[0] - center) == pytest.approx(4.0, abs=1e-12)
    assert np.linalg.norm(c.vertices[0]) < 50.0  # moved inward


def test_only_wound_vertices_move():
    m = icosphere(4, 50.0)
    spec = WoundSpec((0, 0, 50.0), 15.0, 5.0)
    c = carve_wound(m, spec)
    r = np.linalg.norm(m.vertices - spec.center, axis=1)
    moved = np.any(c.vertices != m.vertices, axis=1)
    assert c.labels.sum() == np.count_nonzero(r < 15.0)
    assert not np.any(moved & (r >= 15.0))
    assert np.array_equal(moved, r < 15.0)


def test_bump_profile_rim():
    assert bump_profile(np.array([15.0]), 15.0, 5.0)[0] == 0.0
    assert bump_profile(np.array([0.0]), 15.0, 5.0)[0] == 5.0
    r = np.linspace(14.0, 15.0, 50)
    d = bump_profile(r, 15.0, 5.0)
    assert np.all(np.diff(d) <= 0) and d[-2] < 1e-4


def test_carve_errors():
    m = icosphere(2, 50.0)
    c = m.vertices[m.faces[0]].mean(axis=0)
    c = tuple(50.0 * c / np.linalg.norm(c))  # face middle, far from every vertex
    with pytest.raises(InputError, match="wound region empty"):
        carve_wound(m, WoundSpec(c, 0.5, 1.0))
    with pytest.raises(InputError):
        carve_wound(m, WoundSpec((0, 0, 200.0), 10.0, 1.0))


# ---------------------------------------------------------------- cameras


def test_ring_looks_at_target():
    target = np.array([3.0, -2.0, 40.0])
    cams = gen_camera_ring(target, 7, 120.0, 35.0, 320, 240, 50.0)
    assert [c.name for c in cams] == [f"view_{i:03d}" for i in range(7)]
    for c in cams:
        u, v, z = project_vertex(c, target)
        assert u == pytest.approx(160.0, abs=1e-9) and v == pytest.approx(120.0, abs=1e-9)
        assert z == pytest.approx(120.0, abs=1e-9)
        assert c.fx == c.fy == pytest.approx(160.0 / np.tan(np.radians(25.0)))
        assert abs(np.linalg.norm(c.center - target) - 120.0) < 1e-9


def test_ring_azimuths():
    cams = gen_camera_ring([0, 0, 0], 4, 10.0, 0.0, 64, 64, 60.0)
    az = [np.degrees(np.arctan2(c.center[1], c.center[0])) % 360 for c in cams]
    np.testing.assert_allclose(az, [0, 90, 180, 270], atol=1e-9)


# ---------------------------------------------------------------- masks


def test_all_wound_mask_is_silhouette():
    m = icosphere(3, 50.0)
    m = m.replace(labels=np.ones(m.n_vertices, np.uint8))
    cam = gen_camera_ring([0, 0, 0], 1, 200.0, 30.0, 128, 128, 40.0)[0]
    mask = render_gt_masks(m, [cam])[0]
    np.testing.assert_array_equal(mask.pixels, rasterize(m, cam).face_id >= 0)


def test_back_side_of_cylinder_sees_no_wound():
    m = carve_wound(gen_body_part("cylinder", 4, 50.0), WoundSpec((50.0, 0, 0), 15.0, 5.0))
    # elevation 90 places the single camera on the axis itself
    back = gen_camera_ring([0, 0, 0], 1, 200.0, 90.0, 256, 256, 40.0, axis=(-1, 0, 0))
    front = gen_camera_ring([0, 0, 0], 1, 200.0, 90.0, 256, 256, 40.0, axis=(1, 0, 0))
    assert back[0].center[0] < 0 < front[0].center[0]
    assert render_gt_masks(m, back)[0].count() == 0
    assert render_gt_masks(m, front)[0].count() > 0


@pytest.fixture(scope="module")
def cap_masks():
    rs, radius, dist = 50.0, 15.0, 150.0
    m = carve_wound(icosphere(5, rs), WoundSpec((0, 0, rs), radius, 0.0))
    out = {}
    for res in (512, 1024):
        cam = gen_camera_ring([0, 0, 0], 1, dist, 90.0, res, res, 40.0)[0]
        alpha = 2 * np.arcsin(radius / (2 * rs))
        rho, h = rs * np.sin(alpha), rs * np.cos(alpha)
        analytic = np.pi * (cam.fx * rho / (dist - h)) ** 2  # projected cap rim circle, px^2
        out[res] = (render_gt_masks(m, [cam])[0].count(), analytic)
    return out


def test_mask_area_matches_projected_cap(cap_masks):
    count, analytic = cap_masks[1024]
    assert abs(count / analytic - 1) < 0.03


def test_mask_area_tracks_resolution_squared(cap_masks):
    ratio = cap_masks[1024][0] / cap_masks[512][0]
    assert abs(ratio / 4.0 - 1) < 0.05


# ---------------------------------------------------------------- perturbation and bundles


def test_perturb_identity():
    m = carve_wound(icosphere(3, 50.0), WoundSpec((0, 0, 50.0), 15.0, 5.0))
    p = perturb(m, SimilarityTransform.identity(), 0.0, 0)
    np.testing.assert_array_equal(p.vertices, m.vertices)
    assert p.labels is None


def test_perturb_known_transform_exact():
    m = icosphere(3, 50.0)
    t = SimilarityTransform(1.3, rotation_from_axis_angle([1, 2, 3], 25), [10, -5, 3])
    np.testing.assert_array_equal(perturb(m, t, 0.0, 0).vertices, t.apply(m.vertices))


def test_perturb_noise_rms():
    m = icosphere(5, 50.0)
    assert m.n_vertices >= 10_000
    p = perturb(m, SimilarityTransform.identity(), 0.1, 3)
    rms = np.sqrt(np.mean(np.sum((p.vertices - m.vertices) ** 2, axis=1)))
    assert abs(rms / (0.1 * np.sqrt(3)) - 1) < 0.05


def _digest(path):
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(path)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def test_fixture_files_deterministic(tmp_path):
    t = SimilarityTransform(1.3, rotation_from_axis_angle([1, 2, 3], 25), [10, -5, 3])
    kw = dict(k_views=4, resolution=64, t=t, sigma=0.05, seed=7)
    make_fixture("sphere", 3, out_dir=tmp_path / "a", **kw)
    make_fixture("sphere", 3, out_dir=tmp_path / "b", **kw)
    names = sorted(p.relative_to(tmp_path / "a").as_posix() for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert names == ["cameras_est.json", "cameras_gt.json", "est_mesh.ply", "fixture.json", "gt_mesh.ply",
                     "masks/view_000.pgm", "masks/view_001.pgm", "masks/view_002.pgm", "masks/view_003.pgm"]
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_fixture_camera_relation():
    t = SimilarityTransform(1.3, rotation_from_axis_angle([1, 2, 3], 25), [10, -5, 3])
    fx = make_fixture("cylinder", 3, k_views=5, resolution=64, t=t, seed=1)
    assert len(fx.cams) == len(fx.masks) == len(fx.est_cams) == 5
    for c, e in zip(fx.cams, fx.est_cams):
        np.testing.assert_allclose(e.center, t.apply(c.center), atol=1e-9)
        # same pixel for corresponding points
        p = fx.gt_mesh.vertices[0]
        a, b = project_vertex(c, p), project_vertex(e, t.apply(p))
        assert a[:2] == pytest.approx(b[:2], abs=1e-8)
    assert fx.est_mesh.labels is None and fx.gt_mesh.labels.sum() > 0
