"""World ray casting, radar degradation, IMU synthesis and sequences."""
import filecmp
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radarodom import simulator as sim
from radarodom.evaluation import compose_trajectory
from radarodom.geometry import EulerAngles, PoseSE3, relative_between
from radarodom.sensing import PointCloud


def wall_world():
    # the floor only makes the sensor position part of the world; the forward ray never meets it
    return sim.WorldModel((sim.Plane((5.0, 0.0, 0.0), (-1.0, 0.0, 0.0), 4.0, 4.0),
                           sim.Plane((2.5, 0.0, -1.0), (0.0, 0.0, 1.0), 10.0, 10.0)))


def test_forward_ray_hits_wall_at_five_metres():
    scan = sim.raycast_scan(wall_world(), PoseSE3.identity(), n_az=1, n_el=1)
    assert len(scan) == 1
    assert scan.ranges[0] == pytest.approx(5.0, abs=1e-12)


def test_wall_behind_max_range_is_dropped():
    assert len(sim.raycast_scan(wall_world(), PoseSE3.identity(), 1, 1, max_range=4.0)) == 0


def test_empty_world_empty_cloud():
    assert len(sim.raycast_scan(sim.WorldModel(), PoseSE3.identity())) == 0


def test_room_ranges_bounded_by_diagonal():
    room = sim.WorldModel((sim.Box((0.0, 0.0, 1.5), (8.0, 6.0, 3.0)),))
    pose = PoseSE3.from_euler(EulerAngles(0, 0, 0.4), (1.0, -0.5, 1.2))
    scan = sim.raycast_scan(room, pose, 64, 16, max_range=100.0)
    assert len(scan) == 64 * 16  # closed room: every ray returns
    assert scan.ranges.max() <= room.diagonal + 1e-12
    assert room.diagonal == pytest.approx(math.sqrt(64 + 36 + 9))


def test_ray_hits_lie_on_surfaces():
    world = sim.default_world()
    pose = PoseSE3.from_translation((0.0, 0.0, 1.2))
    scan = sim.raycast_scan(world, pose, 32, 8)
    lo = np.array([-4.0, -3.0, 0.0])
    hi = np.array([4.0, 3.0, 3.0])
    world_pts = scan.points + pose.translation
    assert np.all(world_pts >= lo - 1e-9) and np.all(world_pts <= hi + 1e-9)


def test_sensor_outside_world_rejected():
    with pytest.raises(ValueError):
        sim.raycast_scan(sim.default_world(), PoseSE3.from_translation((50.0, 0, 0)))


def test_world_text_round_trip(tmp_path):
    w = sim.default_world()
    (tmp_path / "w.txt").write_text(w.to_text() + "plane 0 0 0 0 0 1 2 3  # floor tile\n")
    back = sim.load_world(tmp_path / "w.txt")
    assert back.surfaces[:len(w.surfaces)] == w.surfaces
    assert isinstance(back.surfaces[-1], sim.Plane)
    for bad in ("box 1 2 3", "sphere 0 0 0 1", "box 0 0 0 1 -1 1", ""):
        with pytest.raises(ValueError):
            sim.parse_world(bad)


def dense_scan(seed=0):
    pose = PoseSE3.from_translation((0.3, 0.2, 1.2))
    return sim.raycast_scan(sim.default_world(), pose, 64, 16, jitter=np.random.default_rng(seed))


def test_degrade_nothing_kept():
    noise = sim.RadarNoiseModel(keep_probability=0.0, ghost_probability=0.0)
    assert len(sim.degrade_to_radar(dense_scan(), noise, 1)) == 0


def test_degrade_identity_configuration():
    d = dense_scan()
    out = sim.degrade_to_radar(d, sim.RadarNoiseModel.clean(), 1)
    np.testing.assert_array_equal(out.points, d.points)


def test_degrade_clean_capped_is_subset():
    d = dense_scan()
    out = sim.degrade_to_radar(d, sim.RadarNoiseModel.clean(max_points=50), 2)
    assert len(out) == 50
    rows = {tuple(p) for p in d.points.tolist()}
    assert all(tuple(p) in rows for p in out.points.tolist())


def test_default_radar_size_near_one_hundred():
    d = dense_scan()
    sizes = [len(sim.degrade_to_radar(d, sim.RadarNoiseModel(), s)) for s in range(100)]
    assert 80 <= np.mean(sizes) <= 120


@given(st.integers(0, 10_000), st.floats(0, 1), st.floats(0, 1), st.integers(1, 300))
def test_degrade_never_exceeds_cap(seed, keep, ghost, cap):
    noise = sim.RadarNoiseModel(keep_probability=keep, ghost_probability=ghost, max_points=cap)
    assert len(sim.degrade_to_radar(dense_scan(), noise, seed)) <= cap


def test_ghosts_sit_farther_along_the_same_ray():
    d = PointCloud([[2.0, 0.0, 0.0], [0.0, 3.0, 0.5]])
    noise = sim.RadarNoiseModel(1.0, 1.0, 0.0, 0.0, 0.0, 10)
    out = sim.degrade_to_radar(d, noise, 0)
    assert len(out) == 4
    for real, ghost in zip(out.points[:2], out.points[2:]):
        ratio = np.linalg.norm(ghost) / np.linalg.norm(real)
        assert 1.2 <= ratio <= 2.0
        np.testing.assert_allclose(ghost / np.linalg.norm(ghost), real / np.linalg.norm(real), atol=1e-12)


def test_degrade_is_seeded():
    d = dense_scan()
    a = sim.degrade_to_radar(d, sim.RadarNoiseModel(), 7)
    b = sim.degrade_to_radar(d, sim.RadarNoiseModel(), 7)
    np.testing.assert_array_equal(a.points, b.points)


def test_static_imu_reads_gravity():
    traj = [PoseSE3.from_translation((1.0, 2.0, 1.0))] * 20
    for s in sim.synth_imu(traj, 100.0):
        np.testing.assert_allclose(s.gyro, 0.0, atol=1e-15)
        np.testing.assert_allclose(s.accel, [0, 0, sim.GRAVITY], atol=1e-12)


def test_yaw_spin_gyro_rate():
    w, rate = 0.8, 100.0
    traj = [PoseSE3.from_euler(EulerAngles(0, 0, w * k / rate)) for k in range(50)]
    gz = np.array([s.gyro[2] for s in sim.synth_imu(traj, rate)])
    np.testing.assert_allclose(gz, w, atol=1e-9)


def test_constant_velocity_reads_gravity_only():
    traj = [PoseSE3.from_euler(EulerAngles(0, 0, 0.3), (0.5 * k / 100, -0.2 * k / 100, 1.0)) for k in range(30)]
    for s in sim.synth_imu(traj, 100.0):
        np.testing.assert_allclose(s.accel, [0, 0, sim.GRAVITY], atol=1e-9)


def test_imu_bias_and_timestamps():
    traj = [PoseSE3.identity()] * 5
    out = sim.synth_imu(traj, 50.0, bias=([0.1, 0, 0], [0, 0.01, 0]), t0=2.0)
    assert [s.timestamp for s in out] == pytest.approx([2.0, 2.02, 2.04, 2.06, 2.08])
    assert out[0].accel[0] == pytest.approx(0.1)
    assert out[0].gyro[1] == pytest.approx(0.01)


def test_trajectory_spec_timing():
    spec = sim.TrajectorySpec(sim.waypoints_from_xyzyaw([(0, 0, 1, 0), (4, 0, 1, 0)]))
    assert spec.duration == pytest.approx(4.0)
    mid = spec.pose_at([2.0])[0]
    np.testing.assert_allclose(mid.translation, [2, 0, 1], atol=1e-12)
    with pytest.raises(ValueError):
        sim.TrajectorySpec(spec.waypoints[:1])


def test_straight_line_frame_count(straight_sequence):
    assert len(straight_sequence.frames) == 81
    assert straight_sequence.timestamps[-1] == pytest.approx(4.0)


def test_same_seed_same_sequence(straight_sequence):
    again = sim.generate_sequence(straight_sequence.world, straight_sequence.spec, seed=straight_sequence.seed)
    for a, b in zip(straight_sequence.frames, again.frames):
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
        np.testing.assert_array_equal(a.dense.points, b.dense.points)
        assert a.imu_window == b.imu_window


def test_ground_truth_reproduces_waypoints(turning_sequence):
    seq = turning_sequence
    rels = [relative_between(a, b) for a, b in zip(seq.poses, seq.poses[1:])]
    traj = compose_trajectory(seq.poses[0], rels, seq.timestamps)
    assert traj.poses[-1].is_close(seq.spec.waypoints[-1], 1e-9)
    assert traj.poses[0].is_close(seq.spec.waypoints[0], 1e-12)


def test_frames_carry_imu_windows(straight_sequence):
    seq = straight_sequence
    assert seq.frames[0].imu_window[0].timestamp == 0.0
    for prev, f in zip(seq.frames, seq.frames[1:]):
        ts = [s.timestamp for s in f.imu_window]
        assert len(ts) == 5
        assert prev.cloud.timestamp < ts[0] and ts[-1] == pytest.approx(f.cloud.timestamp)


def test_sequence_ranges_within_world(straight_sequence):
    diag = straight_sequence.world.diagonal
    for f in straight_sequence.frames:
        assert f.dense.ranges.max() <= diag
        assert len(f.cloud) <= straight_sequence.noise.max_points


def test_trajectory_leaving_world_rejected():
    spec = sim.TrajectorySpec(sim.waypoints_from_xyzyaw([(0, 0, 1, 0), (9, 0, 1, 0)]))
    with pytest.raises(ValueError):
        sim.generate_sequence(sim.default_world(), spec)


def test_save_is_byte_deterministic(tmp_path, straight_sequence):
    sim.save_sequence(straight_sequence, tmp_path / "a")
    sim.save_sequence(sim.generate_sequence(straight_sequence.world, straight_sequence.spec,
                                            seed=straight_sequence.seed), tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    sub = filecmp.dircmp(tmp_path / "a" / "frames", tmp_path / "b" / "frames")
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / "frames", tmp_path / "b" / "frames",
                                           sub.common_files, shallow=False)
    assert not mismatch and not errors


def test_save_load_round_trip(tmp_path, straight_sequence):
    out = sim.save_sequence(straight_sequence, tmp_path / "seq")
    assert {p.name for p in out.iterdir()} == {"frames", "imu.txt", "groundtruth.txt", "world.txt", "meta.txt"}
    back = sim.load_sequence(out)
    assert len(back.frames) == 81
    assert back.seed == straight_sequence.seed
    assert back.noise == straight_sequence.noise
    for a, b in zip(straight_sequence.frames, back.frames):
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
        assert a.ground_truth.is_close(b.ground_truth, 1e-12)
        assert len(a.imu_window) == len(b.imu_window)
    meta = sim.read_meta(out / "meta.txt")
    assert meta["frames"] == "81" and "noise.keep_probability" in meta
