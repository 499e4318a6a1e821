"""Panoramic projection, cloud merging and the text formats."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radarodom.geometry import EulerAngles, PoseSE3
from radarodom.sensing import (ImuSample, PanoramaSpec, PanoramicImage, PointCloud, bin_index,
                               encode_panoramic, imu_array, imu_between, merge_clouds, read_cloud, read_imu,
                               read_panorama, spherical_angles, stack_pair, write_cloud, write_imu,
                               write_panorama)

SPEC = PanoramaSpec()


@pytest.mark.parametrize("p, expected", [((1, 0, 0), (0.0, 0.0)), ((0, 1, 0), (math.pi / 2, 0.0)),
                                         ((1, 0, 1), (0.0, math.pi / 4))])
def test_spherical_angles(p, expected):
    np.testing.assert_allclose(spherical_angles(p), expected, atol=1e-15)


def test_spherical_angles_rejects_origin():
    with pytest.raises(ValueError):
        spherical_angles((0, 0, 0))


def test_bin_index_origin_and_floor():
    assert bin_index(SPEC.alpha_min, SPEC.beta_min, SPEC) == (0, 0)
    # azimuth index follows floor semantics (azimuth runs along the columns)
    row, col = bin_index(SPEC.alpha_min + 1.5 * SPEC.delta_alpha, SPEC.beta_min, SPEC)
    assert (row, col) == (0, 1)
    row, col = bin_index(SPEC.alpha_min, SPEC.beta_min + 2.5 * SPEC.delta_beta, SPEC)
    assert (row, col) == (2, 0)


def test_bin_index_out_of_view():
    assert bin_index(math.radians(61), 0.0, SPEC) is None
    assert bin_index(0.0, math.radians(-31), SPEC) is None
    assert bin_index(SPEC.alpha_min + SPEC.cols * SPEC.delta_alpha, 0.0, SPEC) is None


@given(st.floats(-1.0, 1.0), st.floats(0, 0.99), st.floats(-0.5, 0.5))
def test_bin_index_monotone_in_alpha(a, frac, beta):
    lo = bin_index(a, beta, SPEC)
    hi = bin_index(a + frac * SPEC.delta_alpha, beta, SPEC)
    if lo and hi:
        assert 0 <= hi[1] - lo[1] <= 1
        assert hi[0] == lo[0]


def test_encode_empty_and_boundary():
    assert not encode_panoramic(PointCloud(np.zeros((0, 3))), SPEC).values.any()
    img = encode_panoramic(PointCloud([[10.0, 0, 0]]), SPEC)
    assert not img.values.any()


def test_encode_collision_keeps_nearest():
    img = encode_panoramic(PointCloud([[3.0, 0, 0], [1.0, 0, 0]]), SPEC)
    r, c = bin_index(0.0, 0.0, SPEC)
    assert img.values[r, c] == pytest.approx(229.5, abs=1e-12)
    assert np.count_nonzero(img.values) == 1


@given(st.integers(0, 10_000))
def test_encode_properties(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(0, 4, (60, 3)) + [3, 0, 0]
    img = encode_panoramic(pts, SPEC)
    assert img.values.min() >= 0 and img.values.max() <= 255
    # order does not matter
    np.testing.assert_array_equal(encode_panoramic(pts[rng.permutation(60)], SPEC).values, img.values)
    # in-view points nearer than max_range light their bin
    for p in pts:
        a, b = spherical_angles(p)
        idx = bin_index(a, b, SPEC)
        if idx and np.linalg.norm(p) < SPEC.max_range:
            assert img.values[idx] > 0


def test_stack_pair_shapes_and_mean():
    rng = np.random.default_rng(0)
    imgs = [PanoramicImage(SPEC, rng.uniform(0, 255, (32, 128))) for _ in range(4)]
    same = stack_pair(imgs[0], imgs[0])
    assert same.shape == (2, 32, 128)
    np.testing.assert_array_equal(same[0], same[1])
    pairs = [stack_pair(a, b) for a, b in zip(imgs, imgs[1:])]
    mean = float(np.mean(pairs))
    centred = [stack_pair(a, b, mean) for a, b in zip(imgs, imgs[1:])]
    assert abs(np.mean(centred)) < 1e-9
    with pytest.raises(ValueError):
        stack_pair(imgs[0], PanoramicImage(PanoramaSpec(rows=4, cols=4), np.zeros((4, 4))))


def test_merge_clouds_examples():
    rng = np.random.default_rng(1)
    c = PointCloud(rng.normal(size=(50, 3)))
    np.testing.assert_array_equal(merge_clouds([(c, PoseSE3.identity())]).points, c.points)
    d = PointCloud(rng.normal(size=(50, 3)) + 10)
    assert len(merge_clouds([(c, PoseSE3.identity()), (d, PoseSE3.identity())])) == 100


def test_merge_clouds_covers_union_of_views():
    rng = np.random.default_rng(2)
    az = rng.uniform(-math.radians(60), math.radians(60), 600)
    pts = np.c_[np.cos(az), np.sin(az), np.zeros_like(az)] * 3
    cloud = PointCloud(pts)
    rigs = [(cloud, PoseSE3.from_euler(EulerAngles(0, 0, math.radians(y)))) for y in (0, 120, -120)]
    merged = merge_clouds(rigs)
    hist, _ = np.histogram(np.arctan2(merged.points[:, 1], merged.points[:, 0]), 36, (-math.pi, math.pi))
    assert hist.min() > 0
    single, _ = np.histogram(az, 36, (-math.pi, math.pi))
    assert (single == 0).sum() == 24


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud([[np.inf, 0, 0]])
    with pytest.raises(ValueError):
        PointCloud([[0, 0, 0]], intensities=[1, 2])


def test_cloud_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    for inten in (None, rng.uniform(size=7)):
        c = PointCloud(rng.normal(size=(7, 3)), inten, timestamp=1.25)
        write_cloud(tmp_path / "c.cloud", c)
        back = read_cloud(tmp_path / "c.cloud")
        np.testing.assert_array_equal(back.points, c.points)
        assert back.timestamp == 1.25
        if inten is not None:
            np.testing.assert_array_equal(back.intensities, c.intensities)
    (tmp_path / "bad.cloud").write_text("1 2\n")
    with pytest.raises(ValueError):
        read_cloud(tmp_path / "bad.cloud")


def test_imu_file_round_trip_and_window(tmp_path):
    samples = [ImuSample((0.1 * k, 0, 9.81), (0, 0, 0.5), 0.01 * k) for k in range(1, 11)]
    write_imu(tmp_path / "imu.txt", samples)
    assert read_imu(tmp_path / "imu.txt") == samples
    window = imu_between(samples, 0.02, 0.05)
    assert [s.timestamp for s in window] == pytest.approx([0.03, 0.04, 0.05])
    assert imu_array(window).shape == (3, 6)
    assert imu_array([]).shape == (0, 6)
    (tmp_path / "bad.txt").write_text("0.2 0 0 0 0 0 0\n0.1 0 0 0 0 0 0\n")
    with pytest.raises(ValueError):
        read_imu(tmp_path / "bad.txt")


def test_panorama_file_round_trip(tmp_path):
    spec = PanoramaSpec.from_fov(math.radians(90), math.radians(30), 4, 6, 8.0)
    img = PanoramicImage(spec, np.random.default_rng(4).uniform(0, 255, (4, 6)))
    write_panorama(tmp_path / "p.pano", img)
    back = read_panorama(tmp_path / "p.pano")
    assert back.spec == spec
    np.testing.assert_array_equal(back.values, img.values)


def test_panorama_value_range_enforced():
    with pytest.raises(ValueError):
        PanoramicImage(SPEC, np.full((32, 128), 256.0))
