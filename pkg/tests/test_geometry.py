import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import project, random_camera, random_pose, random_scene
from evsync.camera import CameraModel
from evsync.errors import (
    CheiralityError,
    ConfigError,
    DegeneracyError,
    EpipoleDegenerateError,
    IllConditionedError,
    InsufficientDataError,
)
from evsync.geometry import (
    RigidExtrinsics,
    compose_fundamental,
    decompose_to_extrinsics,
    direction_error_deg,
    draw_samples,
    eight_point,
    epipolar_distances,
    epipolar_line_in_1,
    epipolar_line_in_2,
    estimate_fundamental_lmeds,
    homogeneous,
    normalize_fundamental,
    point_line_distance,
    rotation_about,
    rotation_error_deg,
    symmetric_epipolar_sq,
    triangulate,
    triangulate_many,
    umeyama_align,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def aligned_diff(a, b):
    a, b = normalize_fundamental(a), normalize_fundamental(b)
    return min(np.linalg.norm(a - b), np.linalg.norm(a + b))


# -- composition and epipolar lines -------------------------------------------


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_composed_f_annihilates_exact_pairs(seed):
    rng = np.random.default_rng(seed)
    k1, k2, ext, _, p1, p2 = random_scene(rng, 20)
    f = compose_fundamental(k1, k2, ext)
    res = np.abs(np.sum(homogeneous(p2) * (homogeneous(p1) @ f.T), axis=1))
    assert res.max() < 1e-10
    assert np.isclose(np.linalg.norm(f), 1.0)
    assert abs(np.linalg.det(f)) < 1e-12


def test_epipolar_line_in_1_is_transpose_product():
    f = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    np.testing.assert_allclose(epipolar_line_in_1(f, (3.0, 4.0)), [4.0, -3.0, 0.0])


def test_exact_correspondence_lies_on_both_lines(rng):
    k1, k2, ext, _, p1, p2 = random_scene(rng, 10)
    f = compose_fundamental(k1, k2, ext)
    for a, b in zip(p1, p2):
        assert point_line_distance(a, epipolar_line_in_1(f, b)) < 1e-9
        assert point_line_distance(b, epipolar_line_in_2(f, a)) < 1e-9


def test_epipole_has_no_line(rng):
    k1, k2, ext, *_ = random_scene(rng, 1)
    f = compose_fundamental(k1, k2, ext)
    _, _, vt = np.linalg.svd(f.T)
    e2 = vt[-1] / vt[-1][2]  # F^T e2 = 0
    with pytest.raises(EpipoleDegenerateError):
        epipolar_line_in_1(f, e2[:2])
    # the image-2 epipole is camera 1's center projected into camera 2
    c1_in_2 = k2.K @ ext.translation
    np.testing.assert_allclose(c1_in_2[:2] / c1_in_2[2], e2[:2], rtol=1e-8)


def test_epipolar_distances_nan_at_epipole(rng):
    k1, k2, ext, _, p1, p2 = random_scene(rng, 5)
    f = compose_fundamental(k1, k2, ext)
    _, _, vt = np.linalg.svd(f.T)
    e2 = vt[-1] / vt[-1][2]
    d = epipolar_distances(f, p1, np.vstack([p2[:4], e2[:2]]))
    assert np.all(d[:4] < 1e-9) and np.isnan(d[4])


@pytest.mark.parametrize(
    "p, line, expected",
    [((2, 1), (3, 4, -10), 0.0), ((0, 0), (3, 4, -10), 2.0), ((1, 1), (0, 1, -5), 4.0)],
)
def test_point_line_distance(p, line, expected):
    assert point_line_distance(p, line) == pytest.approx(expected, abs=1e-15)


def test_point_line_distance_rejects_degenerate_line():
    with pytest.raises(ConfigError):
        point_line_distance((1, 1), (0, 0, 3))


@given(
    st.tuples(*[st.floats(-1e3, 1e3)] * 2),
    st.tuples(*[st.floats(-10, 10)] * 3).filter(lambda l: abs(l[0]) + abs(l[1]) > 1e-3),
    st.floats(1e-3, 1e3),
)
def test_point_line_distance_scale_invariant(p, line, s):
    d = point_line_distance(p, line)
    assert d >= 0
    assert point_line_distance(p, np.multiply(line, s)) == pytest.approx(d, rel=1e-9, abs=1e-9)


def test_symmetric_distance_is_mean_of_both_sides(rng):
    k1, k2, ext, _, p1, p2 = random_scene(rng, 30)
    f = compose_fundamental(k1, k2, ext)
    q1 = p1 + rng.normal(scale=2.0, size=p1.shape)
    one = epipolar_distances(f, q1, p2)
    d2 = np.array([point_line_distance(b, epipolar_line_in_2(f, a)) for a, b in zip(q1, p2)])
    np.testing.assert_allclose(epipolar_distances(f, q1, p2, symmetric=True), 0.5 * (one + d2))
    np.testing.assert_allclose(symmetric_epipolar_sq(f, q1, p2), one**2 + d2**2)


# -- estimation ----------------------------------------------------------------


def test_eight_point_exact(rng):
    k1, k2, ext, _, p1, p2 = random_scene(rng, 30)
    f = eight_point(p1, p2)
    assert aligned_diff(f, compose_fundamental(k1, k2, ext)) < 1e-8
    assert np.linalg.matrix_rank(f, tol=1e-10) == 2


def test_eight_point_degenerate_configuration(rng):
    p1 = rng.uniform(0, 300, size=(20, 2))
    p1[:, 1] = 2 * p1[:, 0] + 5  # collinear in both images
    with pytest.raises(DegeneracyError):
        eight_point(p1, p1 * 0.5 + 3)


def test_lmeds_exact_data(rng):
    k1, k2, ext, _, p1, p2 = random_scene(rng, 50)
    f, mask = estimate_fundamental_lmeds(p1, p2, rng_seed=1)
    assert np.sqrt(symmetric_epipolar_sq(f, p1, p2)).max() < 1e-6
    assert aligned_diff(f, compose_fundamental(k1, k2, ext)) < 1e-5
    assert mask.all()


@pytest.mark.parametrize("seed", range(5))
def test_lmeds_thirty_percent_outliers(seed):
    rng = np.random.default_rng(seed)
    k1, k2, ext, _, p1, p2 = random_scene(rng, 50)
    bad = rng.choice(50, 15, replace=False)
    p1, p2 = p1.copy(), p2.copy()
    p1[bad] = rng.uniform([0, 0], [346, 260], size=(15, 2))
    p2[bad] = rng.uniform([0, 0], [346, 260], size=(15, 2))
    good = np.setdiff1d(np.arange(50), bad)
    f, mask = estimate_fundamental_lmeds(p1, p2, rng_seed=seed)
    assert np.median(np.sqrt(symmetric_epipolar_sq(f, p1[good], p2[good]))) < 0.1
    assert mask[good].all()


def test_lmeds_needs_eight_pairs(rng):
    with pytest.raises(InsufficientDataError):
        estimate_fundamental_lmeds(rng.random((7, 2)), rng.random((7, 2)))


def test_lmeds_all_samples_degenerate(rng):
    x = rng.uniform(0, 300, size=30)
    p1 = np.stack([x, 0.5 * x + 2], axis=1)
    with pytest.raises(DegeneracyError):
        estimate_fundamental_lmeds(p1, p1 + 1.0, iterations=20)


def test_lmeds_deterministic_per_seed(rng):
    k1, k2, ext, _, p1, p2 = random_scene(rng, 40)
    p1 = p1 + rng.normal(scale=0.5, size=p1.shape)
    a = estimate_fundamental_lmeds(p1, p2, rng_seed=[3, 4])
    b = estimate_fundamental_lmeds(p1, p2, rng_seed=[3, 4])
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_lmeds_relabeling_invariance(seed):
    rng = np.random.default_rng(seed)
    _, _, _, _, p1, p2 = random_scene(rng, 40)
    p1 = p1 + rng.normal(scale=0.3, size=p1.shape)
    bad = rng.choice(40, 10, replace=False)
    p2 = p2.copy()
    p2[bad] = rng.uniform(0, 300, size=(10, 2))
    samples = draw_samples(rng, 40, 200)
    perm = rng.permutation(40)
    inv = np.argsort(perm)
    f, mask = estimate_fundamental_lmeds(p1, p2, samples=samples)
    fp, maskp = estimate_fundamental_lmeds(p1[perm], p2[perm], samples=inv[samples])
    assert np.array_equal(maskp, mask[perm])
    assert aligned_diff(f, fp) < 1e-8


def test_draw_samples_distinct(rng):
    s = draw_samples(rng, 9, 300)
    assert s.shape == (300, 8)
    assert all(len(set(row)) == 8 for row in s)


# -- pose recovery ---------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_compose_decompose_round_trip(seed):
    rng = np.random.default_rng(seed)
    k1, k2, ext, _, p1, p2 = random_scene(rng, 20)
    est = decompose_to_extrinsics(compose_fundamental(k1, k2, ext), k1, k2, p1, p2)
    assert rotation_error_deg(est.rotation, ext.rotation) < 1e-6
    t_true = ext.translation / np.linalg.norm(ext.translation)
    assert direction_error_deg(est.translation, t_true) < 1e-6
    # cheirality fixes the sign too, not only the direction
    assert est.translation @ t_true > 0
    assert np.linalg.norm(est.translation) == pytest.approx(1.0)


def test_pure_lateral_baseline():
    k = CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    ext = RigidExtrinsics(np.eye(3), np.array([1.0, 0.0, 0.0]))
    rng = np.random.default_rng(0)
    pts = rng.uniform([-1, -1, 3], [1, 1, 6], size=(15, 3))
    p1, _ = project(k, np.eye(3), np.zeros(3), pts)
    p2, _ = project(k, np.eye(3), ext.translation, pts)
    est = decompose_to_extrinsics(compose_fundamental(k, k, ext), k, k, p1, p2)
    assert rotation_error_deg(est.rotation, np.eye(3)) < 1e-9
    np.testing.assert_allclose(est.translation, [1.0, 0.0, 0.0], atol=1e-12)


def test_cheirality_failure(rng):
    k1, k2, ext, pts, _, _ = random_scene(rng, 20)
    # mirror half of the points through camera 1's center: each candidate pose
    # can then place at most half of the pairs in front of both cameras
    pts = pts.copy()
    pts[10:] *= -1
    p1, _ = project(k1, np.eye(3), np.zeros(3), pts)
    p2, _ = project(k2, ext.rotation, ext.translation, pts)
    with pytest.raises(CheiralityError):
        decompose_to_extrinsics(compose_fundamental(k1, k2, ext), k1, k2, p1, p2)


def test_decompose_needs_a_pair(rng):
    k1, k2, ext, *_ = random_scene(rng, 1)
    with pytest.raises(InsufficientDataError):
        decompose_to_extrinsics(compose_fundamental(k1, k2, ext), k1, k2, np.zeros((0, 2)), np.zeros((0, 2)))


# -- triangulation -----------------------------------------------------------


def test_triangulate_lateral_pair():
    k = CameraModel(fx=300, fy=300, cx=170, cy=130)
    e1 = RigidExtrinsics.identity()
    e2 = RigidExtrinsics(np.eye(3), np.array([-1.0, 0.0, 0.0]))  # center at x = 1
    x = np.array([[0.0, 0.0, 5.0]])
    p1, _ = project(k, e1.rotation, e1.translation, x)
    p2, _ = project(k, e2.rotation, e2.translation, x)
    np.testing.assert_allclose(triangulate(k, e1, k, e2, p1[0], p2[0]), x[0], atol=1e-9)


def test_triangulate_many_random_points(rng):
    k1, k2 = random_camera(rng), random_camera(rng)
    e1 = random_pose(rng)
    e2 = random_pose(rng)
    pts = rng.uniform(-1, 1, size=(100, 3)) + np.array([0, 0, 8.0])
    # keep both cameras looking at the cloud
    e1 = RigidExtrinsics(np.eye(3), np.zeros(3))
    e2 = RigidExtrinsics(rotation_about([0, 1, 0], -15), np.array([2.0, 0.1, 0.5]))
    p1, _ = project(k1, e1.rotation, e1.translation, pts)
    p2, _ = project(k2, e2.rotation, e2.translation, pts)
    got, ok = triangulate_many(k1, e1, k2, e2, p1, p2)
    assert ok.all()
    assert np.abs(got - pts).max() < 1e-6


def test_triangulate_identical_poses(rng):
    k = random_camera(rng)
    e = RigidExtrinsics.identity()
    with pytest.raises(IllConditionedError):
        triangulate(k, e, k, e, (100.0, 100.0), (100.0, 100.0))


# -- alignment and metrics ---------------------------------------------------


def test_umeyama_identity(rng):
    x = rng.normal(size=(20, 3))
    sim = umeyama_align(x, x)
    assert sim.scale == pytest.approx(1.0)
    np.testing.assert_allclose(sim.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(sim.translation, 0.0, atol=1e-12)
    assert sim.rmse < 1e-12


def test_umeyama_constructed_transform(rng):
    x = rng.normal(size=(30, 3))
    r = rotation_about([0, 0, 1], 90)
    y = 2.0 * x @ r.T + np.array([1.0, 2.0, 3.0])
    sim = umeyama_align(x, y)
    assert sim.scale == pytest.approx(2.0, abs=1e-9)
    np.testing.assert_allclose(sim.rotation, r, atol=1e-9)
    np.testing.assert_allclose(sim.translation, [1, 2, 3], atol=1e-9)
    np.testing.assert_allclose(sim.apply(x), y, atol=1e-9)


def test_umeyama_noisy(rng):
    x = rng.uniform(-2, 2, size=(200, 3))
    r = rotation_about(rng.normal(size=3), 33)
    y = 0.7 * x @ r.T + 1.0 + rng.normal(scale=0.01, size=x.shape)
    assert umeyama_align(x, y).rmse < 0.05


def test_umeyama_errors(rng):
    with pytest.raises(ConfigError):
        umeyama_align(rng.normal(size=(5, 3)), rng.normal(size=(6, 3)))
    line = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegeneracyError):
        umeyama_align(line, line)
    with pytest.raises(InsufficientDataError):
        umeyama_align(np.eye(3)[:2], np.eye(3)[:2])


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.0, 170.0))
def test_similarity_exact_sets_align_with_zero_residual(seed, angle):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 3))
    y = rng.uniform(0.1, 10) * x @ rotation_about(rng.normal(size=3), angle).T + rng.normal(size=3)
    assert umeyama_align(x, y).rmse < 1e-9 * max(1.0, np.abs(y).max())


def test_rotation_error_examples(rng):
    r = rotation_about(rng.normal(size=3), 25)
    assert rotation_error_deg(r, r) == 0.0
    for _ in range(10):
        delta = rotation_about(rng.normal(size=3), 10.0)
        assert rotation_error_deg(delta @ r, r) == pytest.approx(10.0, abs=1e-9)


def test_direction_error_sign_invariant(rng):
    t = rng.normal(size=3)
    assert direction_error_deg(-t, t) == 0.0
    assert direction_error_deg(t, 3 * t) < 1e-12
    assert direction_error_deg([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0)


def test_rigid_extrinsics_validation():
    with pytest.raises(ConfigError):
        RigidExtrinsics(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    e = RigidExtrinsics(rotation_about([1, 2, 3], 20), np.array([1.0, 2.0, 2.0]))
    back = RigidExtrinsics.from_dict(e.to_dict())
    assert np.array_equal(back.rotation, e.rotation)
    assert np.linalg.norm(e.unit().translation) == pytest.approx(1.0)


def test_compose_with_identity_intrinsics():
    k = CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    f = compose_fundamental(k, k, RigidExtrinsics(np.eye(3), np.array([0.0, 0.0, 1.0])))
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert aligned_diff(f, expected) < 1e-15


def test_compose_zero_translation():
    from evsync.errors import DegenerateGeometryError

    k = CameraModel(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    with pytest.raises(DegenerateGeometryError):
        compose_fundamental(k, k, RigidExtrinsics(np.eye(3), np.zeros(3)))
