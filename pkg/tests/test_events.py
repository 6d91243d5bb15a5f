import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evsync.camera import davis346
from evsync.errors import BoundsError, EventFileError, ShiftUnderflowError, TimestampOrderError
from evsync.events import (
    EventStream,
    apply_offset,
    denoise_radius,
    load_events,
    merge_sorted,
    save_events,
    undistort_events,
)

CAM = davis346()


def random_stream(rng, n, duration=10_000_000, cam=CAM):
    t = np.sort(rng.integers(0, duration, n))
    return EventStream(t, rng.integers(0, cam.width, n), rng.integers(0, cam.height, n), rng.choice([-1, 1], n), cam)


def brute_force_keep(s, r_xy, r_t, k_min):
    """O(n^2) neighbor count over the closed Chebyshev box."""
    t, x, y = s.t.astype(np.int64), s.x.astype(np.int64), s.y.astype(np.int64)
    near = (
        (np.abs(t[:, None] - t[None, :]) <= r_t)
        & (np.abs(x[:, None] - x[None, :]) <= r_xy)
        & (np.abs(y[:, None] - y[None, :]) <= r_xy)
    )
    return near.sum(axis=1) - 1 >= k_min


# -- I/O ---------------------------------------------------------------------------


def test_round_trip_10k(tmp_path, rng):
    s = random_stream(rng, 10_000)
    save_events(s, tmp_path / "a.csv")
    back = load_events(tmp_path / "a.csv", CAM)
    assert back.equals(s)
    save_events(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_empty_file_with_header(tmp_path):
    (tmp_path / "e.csv").write_text("t_us,x,y,p\n")
    assert len(load_events(tmp_path / "e.csv", CAM)) == 0


def test_x_equal_width_names_line(tmp_path):
    (tmp_path / "b.csv").write_text(f"t_us,x,y,p\n0,1,1,1\n5,{CAM.width},3,0\n")
    with pytest.raises(BoundsError, match="line 3"):
        load_events(tmp_path / "b.csv", CAM)


def test_unsorted_names_line(tmp_path):
    (tmp_path / "u.csv").write_text("t_us,x,y,p\n10,1,1,1\n20,1,1,1\n15,1,1,0\n")
    with pytest.raises(TimestampOrderError, match="line 4"):
        load_events(tmp_path / "u.csv", CAM)


@pytest.mark.parametrize(
    "body, where",
    [("0,1,1\n", "line 2"), ("0,1,1,1\n1,a,2,1\n", "line 3"), ("0,1,1,2\n", "line 2"), ("0,1.5,1,1\n", "line 2")],
)
def test_parse_errors_name_line(tmp_path, body, where):
    (tmp_path / "p.csv").write_text("t_us,x,y,p\n" + body)
    with pytest.raises(EventFileError, match=where):
        load_events(tmp_path / "p.csv", CAM)


def test_bad_header_and_missing_file(tmp_path):
    (tmp_path / "h.csv").write_text("t,x,y,p\n")
    with pytest.raises(EventFileError, match="header"):
        load_events(tmp_path / "h.csv", CAM)
    with pytest.raises(EventFileError):
        load_events(tmp_path / "missing.csv", CAM)


def test_polarity_mapping(tmp_path):
    (tmp_path / "p.csv").write_text("t_us,x,y,p\n0,1,1,0\n1,2,2,1\n")
    s = load_events(tmp_path / "p.csv", CAM)
    assert s.p.tolist() == [-1, 1]
    assert s[1].polarity == 1


def test_stream_is_read_only(rng):
    s = random_stream(rng, 10)
    with pytest.raises(ValueError):
        s.t[0] = 5


# -- offsets -----------------------------------------------------------------------


def test_apply_offset_examples(rng):
    s = random_stream(rng, 100)
    assert apply_offset(s, 0).equals(s)
    assert apply_offset(apply_offset(s, 5000), -5000).equals(s)
    late = EventStream(np.array([100, 200]), np.array([1, 2]), np.array([1, 2]), np.array([1, 1]), CAM)
    with pytest.raises(ShiftUnderflowError):
        apply_offset(late, -200)


@given(st.integers(0, 10**7), st.integers(-(10**6), 10**7))
def test_apply_offset_composes(a, b):
    s = random_stream(np.random.default_rng(0), 50, duration=10**6)
    try:
        two = apply_offset(apply_offset(s, a), b)
    except ShiftUnderflowError:
        return
    assert two.equals(apply_offset(s, a + b))


def test_merge_sorted_is_stable(rng):
    a = random_stream(rng, 100, duration=1000)
    b = random_stream(rng, 100, duration=1000)
    m = merge_sorted([a, b])
    assert np.all(np.diff(m.t) >= 0) and len(m) == 200


# -- denoising -----------------------------------------------------------------------


def test_isolated_event_removed():
    s = EventStream(np.array([10]), np.array([5]), np.array([5]), np.array([1]), CAM)
    assert len(denoise_radius(s, 3, 10_000, 1)) == 0


def test_dense_cluster_kept():
    t = np.sort(np.random.default_rng(3).integers(0, 1000, 20))
    s = EventStream(t, np.full(20, 50), np.full(20, 60), np.ones(20), CAM)
    assert len(denoise_radius(s, 3, 10_000, 5)) == 20


def test_cluster_survives_noise(rng):
    t_c = np.sort(rng.integers(5_000_000, 5_001_000, 20))
    cluster = EventStream(t_c, np.full(20, 100), np.full(20, 100), np.ones(20), CAM)
    noise = random_stream(rng, 50)
    s = merge_sorted([cluster, noise])
    out = denoise_radius(s, 3, 10_000, 5)
    keep = brute_force_keep(s, 3, 10_000, 5)
    assert np.array_equal(out.t, s.t[keep])
    assert len(out) == 20 and np.all(out.x == 100)


@pytest.mark.parametrize("case", range(100))
def test_denoise_matches_brute_force(case):
    rng = np.random.default_rng(1000 + case)
    n = int(rng.integers(1, 3000))
    duration = int(rng.integers(1_000, 2_000_000))
    # mix uniform noise with a few dense blobs so both outcomes occur
    s = random_stream(rng, n, duration)
    blobs = []
    for _ in range(int(rng.integers(0, 4))):
        m = int(rng.integers(5, 200))
        cx, cy = rng.integers(0, CAM.width), rng.integers(0, CAM.height)
        blobs.append(
            EventStream(
                np.sort(rng.integers(0, duration, m)),
                np.clip(cx + rng.integers(-3, 4, m), 0, CAM.width - 1),
                np.clip(cy + rng.integers(-3, 4, m), 0, CAM.height - 1),
                np.ones(m),
                CAM,
            )
        )
    s = merge_sorted([s, *blobs])
    r_xy = int(rng.integers(1, 6))
    r_t = int(rng.integers(1, 50_000))
    k_min = int(rng.integers(1, 12))
    out = denoise_radius(s, r_xy, r_t, k_min)
    keep = brute_force_keep(s, r_xy, r_t, k_min)
    assert np.array_equal(out.t, s.t[keep])
    assert np.array_equal(out.x, s.x[keep]) and np.array_equal(out.y, s.y[keep])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 5), st.integers(1, 20_000), st.integers(1, 8))
def test_denoise_subset_and_shrinking(seed, r_xy, r_t, k_min):
    rng = np.random.default_rng(seed)
    s = random_stream(rng, 2000, duration=200_000)
    once = denoise_radius(s, r_xy, r_t, k_min)
    twice = denoise_radius(once, r_xy, r_t, k_min)
    assert len(once) <= len(s) and len(twice) <= len(once)
    assert set(zip(once.t, once.x, once.y)) <= set(zip(s.t, s.x, s.y))
    assert set(zip(twice.t, twice.x, twice.y)) <= set(zip(once.t, once.x, once.y))
    assert np.all(np.diff(once.t) >= 0)


def test_denoise_rejects_bad_parameters(rng):
    from evsync.errors import ConfigError

    s = random_stream(rng, 10)
    for args in [(0, 10, 1), (3, 0, 1), (3, 10, 0)]:
        with pytest.raises(ConfigError):
            denoise_radius(s, *args)


# -- undistortion ----------------------------------------------------------------------


def test_undistort_events_identity(rng):
    s = random_stream(rng, 500)
    u = undistort_events(s)
    assert u.dropped == 0
    np.testing.assert_allclose(u.uv, np.stack([s.x, s.y], axis=1), atol=1e-12)


def test_undistort_events_drops_non_convergent(rng):
    cam = davis346(k1=-1.0)
    s = EventStream(np.array([0, 1, 2]), np.array([0, 173, 345]), np.array([0, 130, 259]), np.ones(3), cam)
    u = undistort_events(s)
    assert u.dropped == 2
    assert u.t.tolist() == [1]


def test_undistort_events_matches_per_pixel(rng):
    cam = davis346(k1=-0.12, k2=0.05, p1=0.001, p2=-0.0005)
    s = random_stream(rng, 3000, cam=cam)
    u = undistort_events(s)
    ref, ok = cam.undistort_pixels(np.stack([s.x, s.y], axis=1).astype(float))
    np.testing.assert_array_equal(u.uv, ref[ok])
