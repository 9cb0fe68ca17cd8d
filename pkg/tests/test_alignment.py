import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from woundbench.alignment import (
    IcpParams,
    align_pipeline,
    crop_by_labels,
    crop_by_proximity,
    icp_rigid,
    procrustes_umeyama,
)
from woundbench.errors import InputError, NumericalError
from woundbench.geometry import (
    SimilarityTransform,
    TriangleMesh,
    apply_transform,
    compose,
    rotation_from_axis_angle,
)
from woundbench.synthfix import icosphere, make_fixture

from conftest import random_rotation
from oracles import grid_plane


def lumpy_ellipsoid():
    m = icosphere(4, 10.0)
    v = m.vertices * [1.0, 0.7, 0.5]
    v = v * (1 + 0.1 * np.sin(v[:, 0] / 2) * np.cos(v[:, 1] / 3))[:, None]
    return TriangleMesh(v, m.faces)


def assert_transform_close(a, b, tol):
    assert abs(a.scale - b.scale) <= tol * b.scale
    np.testing.assert_allclose(a.rotation, b.rotation, atol=tol, rtol=0)
    np.testing.assert_allclose(a.translation, b.translation,
                               atol=tol * max(1.0, np.abs(b.translation).max()), rtol=0)


# ---------------------------------------------------------------- Procrustes


def test_procrustes_identity(rng):
    p = rng.normal(size=(10, 3))
    t = procrustes_umeyama(p, p)
    assert abs(t.scale - 1) < 1e-12
    np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(t.translation, 0, atol=1e-12)


def test_procrustes_scale_and_shift(rng):
    p = rng.normal(size=(10, 3))
    t = procrustes_umeyama(p, 2 * p + [1, 0, 0])
    assert_transform_close(t, SimilarityTransform(2.0, np.eye(3), [1, 0, 0]), 1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_procrustes_recovers_random_similarity(seed):
    rng = np.random.default_rng(seed)
    truth = SimilarityTransform(rng.uniform(0.5, 2.0), random_rotation(rng), rng.normal(size=3) * 20)
    src = rng.normal(size=(50, 3)) * 10
    dst = truth.apply(src)
    t = procrustes_umeyama(src, dst)
    assert_transform_close(t, truth, 1e-9)
    resid = np.sqrt(np.mean(np.sum((t.apply(src) - dst) ** 2, axis=1)))
    assert resid < 1e-9 * np.abs(dst).max()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_procrustes_order_invariant(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(20, 3))
    dst = rng.normal(size=(20, 3))
    perm = rng.permutation(20)
    a = procrustes_umeyama(src, dst)
    b = procrustes_umeyama(src[perm], dst[perm])
    assert_transform_close(a, b, 1e-9)


def test_procrustes_rigid_mode_keeps_unit_scale(rng):
    src = rng.normal(size=(30, 3))
    t = procrustes_umeyama(src, 3 * src, with_scale=False)
    assert t.scale == 1.0


def test_procrustes_reflection_corrected(rng):
    src = rng.normal(size=(30, 3))
    t = procrustes_umeyama(src, src * [1, 1, -1])
    assert abs(np.linalg.det(t.rotation) - 1) < 1e-12


def test_procrustes_errors():
    with pytest.raises(InputError, match="insufficient correspondences"):
        procrustes_umeyama(np.eye(3)[:2], np.eye(3)[:2])
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(NumericalError, match="degenerate configuration"):
        procrustes_umeyama(line, line)


# ---------------------------------------------------------------- ICP


def test_icp_identity_case():
    m = lumpy_ellipsoid()
    t, diag = icp_rigid(m, m, IcpParams())
    assert diag.converged and diag.iterations <= 2
    assert_transform_close(t, SimilarityTransform.identity(), 1e-7)


def test_icp_recovers_small_rigid_motion():
    src = lumpy_ellipsoid()
    diag_len = src.bbox_diagonal()
    shift = np.array([1.0, -1.0, 0.5]) / 1.5 * 0.01 * diag_len
    truth = SimilarityTransform(1.0, rotation_from_axis_angle([0.3, 1, 0.2], 5), shift)
    dst = apply_transform(truth, src)
    # point-to-point ICP contracts linearly, so allow more than the default iterations
    t, diag = icp_rigid(src, dst, IcpParams(max_iterations=200, sample_count=5000))
    assert t.scale == 1.0
    err = np.sqrt(np.mean(np.sum((t.apply(src.vertices) - dst.vertices) ** 2, axis=1)))
    assert err < 1e-4 * diag_len
    assert diag.rms_history[-1] <= diag.rms_history[0]
    assert diag.rms == pytest.approx(min(diag.rms_history))


def test_icp_no_overlap_with_tight_rejection():
    V, F = grid_plane(4, 4, 10, 10)
    a = TriangleMesh(V, F)
    b = TriangleMesh(V + [0, 0, 500.0], F)
    with pytest.raises(NumericalError, match="no overlap"):
        icp_rigid(a, b, IcpParams(rejection_multiplier=0.5, sample_count=200))


def test_icp_deterministic():
    m = lumpy_ellipsoid()
    dst = apply_transform(SimilarityTransform(1.0, rotation_from_axis_angle([1, 0, 0], 3)), m)
    p = IcpParams(max_iterations=10, sample_count=2000, seed=4)
    a, da = icp_rigid(m, dst, p)
    b, db = icp_rigid(m, dst, p)
    assert a.rotation.tobytes() == b.rotation.tobytes()
    assert da.rms_history == db.rms_history


def test_icp_params_validated():
    with pytest.raises(InputError):
        IcpParams(max_iterations=0)
    with pytest.raises(InputError):
        IcpParams(convergence_tol=0)


# ---------------------------------------------------------------- cropping


def test_crop_all_wound_keeps_everything():
    m = icosphere(2)
    m = m.replace(labels=np.ones(m.n_vertices, np.uint8))
    c = crop_by_labels(m)
    assert c.n_faces == m.n_faces and c.n_vertices == m.n_vertices


def test_crop_no_wound_errors():
    m = icosphere(2)
    with pytest.raises(InputError, match="empty wound region"):
        crop_by_labels(m.replace(labels=np.zeros(m.n_vertices, np.uint8)))


def test_crop_single_wound_vertex_keeps_incident_faces():
    V, F = grid_plane(4, 4)
    labels = np.zeros(len(V), np.uint8)
    centre = 2 * 5 + 2  # interior vertex of a 4x4 grid
    labels[centre] = 1
    c = crop_by_labels(TriangleMesh(V, F, labels))
    # interior grid vertices touch six triangles with this diagonal direction
    assert c.n_faces == 6 == np.count_nonzero((F == centre).any(axis=1))
    assert c.labels.sum() == 1
    # every kept vertex is an input vertex
    assert all(np.any(np.all(V == p, axis=1)) for p in c.vertices)


def test_crop_by_proximity_cases():
    V, F = grid_plane(3, 3, 3, 3)
    ref = TriangleMesh(V, F)
    assert crop_by_proximity(ref, ref, 1e-3).n_faces == ref.n_faces
    far = TriangleMesh(V + [0, 0, 2.0], F)
    with pytest.raises(InputError, match="empty crop"):
        crop_by_proximity(far, ref, 1.0)
    # two-part mesh: one copy 0.2 above ref, one copy 5 above
    two = TriangleMesh(np.vstack([V + [0, 0, 0.2], V + [0, 0, 5.0]]), np.vstack([F, F + len(V)]))
    c = crop_by_proximity(two, ref, 0.5)
    assert c.n_faces == len(F)
    np.testing.assert_allclose(c.vertices[:, 2], 0.2)


# ---------------------------------------------------------------- pipeline


@pytest.fixture(scope="module")
def known_fixture():
    truth = SimilarityTransform(1.3, rotation_from_axis_angle([1, 2, 3], 25), [10, -5, 3])
    return make_fixture("sphere", 4, k_views=12, resolution=32, t=truth, sigma=0.0, seed=0)


def test_pipeline_recovers_known_similarity(known_fixture):
    fx = known_fixture
    out = align_pipeline(fx.gt_mesh, fx.est_mesh, fx.cams, fx.est_cams)
    assert out.fine.scale == 1.0
    assert_transform_close(out.total, fx.true_transform.inverse(), 1e-6)
    err = np.abs(out.est_aligned.vertices - fx.gt_mesh.vertices).max()
    assert err < 1e-6
    assert out.est_wound.n_faces == out.gt_wound.n_faces


def test_pipeline_null_case():
    fx = make_fixture("sphere", 3, k_views=6, resolution=32, seed=1)
    out = align_pipeline(fx.gt_mesh, fx.est_mesh, fx.cams, fx.est_cams)
    assert_transform_close(out.total, SimilarityTransform.identity(), 1e-6)


def test_pipeline_camera_order_irrelevant(known_fixture):
    fx = known_fixture
    a = align_pipeline(fx.gt_mesh, fx.est_mesh, fx.cams, fx.est_cams)
    shuffled = [fx.est_cams[i] for i in np.random.default_rng(0).permutation(len(fx.est_cams))]
    b = align_pipeline(fx.gt_mesh, fx.est_mesh, fx.cams, shuffled)
    assert a.total.rotation.tobytes() == b.total.rotation.tobytes()
    assert a.total.translation.tobytes() == b.total.translation.tobytes()
    assert a.est_wound.vertices.tobytes() == b.est_wound.vertices.tobytes()


def test_pipeline_noise_rms_in_expected_band():
    truth = SimilarityTransform(1.3, rotation_from_axis_angle([1, 2, 3], 25), [10, -5, 3])
    fx = make_fixture("sphere", 4, k_views=12, resolution=32, t=truth, sigma=0.05, seed=0)
    out = align_pipeline(fx.gt_mesh, fx.est_mesh, fx.cams, fx.est_cams)
    assert 0.03 <= out.diagnostics.rms <= 0.08


def test_pipeline_needs_three_named_cameras(known_fixture):
    fx = known_fixture
    with pytest.raises(InputError, match="insufficient camera correspondences"):
        align_pipeline(fx.gt_mesh, fx.est_mesh, fx.cams[:2], fx.est_cams)


def test_pipeline_requires_gt_labels(known_fixture):
    fx = known_fixture
    with pytest.raises(InputError):
        align_pipeline(fx.est_mesh, fx.est_mesh, fx.cams, fx.est_cams)


def test_compose_of_stages_is_total(known_fixture):
    fx = known_fixture
    out = align_pipeline(fx.gt_mesh, fx.est_mesh, fx.cams, fx.est_cams)
    np.testing.assert_allclose(
        apply_transform(compose(out.fine, out.coarse), fx.est_mesh).vertices,
        out.est_aligned.vertices, atol=1e-12)


def test_icp_ignores_source_beyond_target_rim():
    # coplanar, but the source sticks out past one edge of the target
    Vd, Fd = grid_plane(6, 6, 1.0, 1.0)
    Vs, Fs = grid_plane(18, 6, 3.0, 1.0)
    dst, src = TriangleMesh(Vd, Fd), TriangleMesh(Vs, Fs)
    t, diag = icp_rigid(src, dst, IcpParams(sample_count=4000))
    assert diag.converged
    assert_transform_close(t, SimilarityTransform.identity(), 1e-9)
    biased, _ = icp_rigid(src, dst, IcpParams(sample_count=4000, reject_boundary=False))
    assert np.abs(biased.translation).max() > 1e-3
