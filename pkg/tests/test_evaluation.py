"""Trajectory composition, alignment, ATE and the CSV/text outputs."""
import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from radarodom import evaluation as ev
from radarodom.geometry import EulerAngles, PoseSE3, RelativePose, compose

from conftest import random_pose


def random_trajectory(rng, n=30, dt=0.05):
    poses = [random_pose(rng, 0.0)]
    for _ in range(n - 1):
        step = PoseSE3.from_euler(EulerAngles(*rng.normal(0, 0.05, 3)), rng.normal(0, 0.2, 3))
        poses.append(compose(poses[-1], step))
    return ev.Trajectory(list(zip(np.arange(n) * dt, poses)))


def reference_ate(est, ref, k):
    """Straight from the definition, frame by frame."""
    errs = []
    for (_, pe), (_, pr) in zip(est.entries, ref.entries):
        errs.append(math.sqrt(sum((pe.translation[i] - pr.translation[i]) ** 2 for i in range(k))))
    n = len(errs)
    avg = sum(errs) / n
    return (math.sqrt(sum(e * e for e in errs) / n), math.sqrt(sum((e - avg) ** 2 for e in errs) / n), max(errs))


def test_compose_empty_and_zero():
    start = random_pose(np.random.default_rng(0))
    only = ev.compose_trajectory(start, [], [0.0])
    assert len(only) == 1 and only.poses[0] == start
    still = ev.compose_trajectory(start, [RelativePose.zero()] * 4, range(5))
    assert all(p.is_close(start, 1e-12) for p in still.poses)
    with pytest.raises(ValueError):
        ev.compose_trajectory(start, [RelativePose.zero()], [0.0])


def test_compose_left_inverse_of_relatives():
    traj = random_trajectory(np.random.default_rng(1), 60)
    back = ev.compose_trajectory(traj.poses[0], traj.relatives(), traj.timestamps)
    for a, b in zip(back.poses, traj.poses):
        assert a.is_close(b, 1e-9)


def test_compose_reproduces_simulated_ground_truth(straight_sequence):
    seq = straight_sequence
    traj = ev.compose_trajectory(seq.poses[0], seq.relative_poses(), seq.timestamps)
    assert traj.poses[-1].is_close(seq.poses[-1], 1e-9)


def test_align_first_frame_examples():
    ref = random_trajectory(np.random.default_rng(2))
    same = ev.align_first_frame(ref, ref)
    assert all(a.is_close(b, 1e-12) for a, b in zip(same.poses, ref.poses))
    shifted = ref.transformed(PoseSE3.from_translation((5, 0, 0)))
    np.testing.assert_allclose(ev.ate(shifted, ref, align="first").per_frame, 0, atol=1e-9)
    # rotate the whole trajectory 90 degrees about its first pose
    first = ref.poses[0]
    spin = compose(compose(first, PoseSE3.from_euler(EulerAngles(0, 0, math.pi / 2))),
                   PoseSE3(first.rotation.T, -first.rotation.T @ first.translation))
    rotated = ref.transformed(spin)
    aligned = ev.align_first_frame(rotated, ref)
    assert all(a.is_close(b, 1e-9) for a, b in zip(aligned.poses, ref.poses))


def test_ate_zero_and_offset():
    ref = random_trajectory(np.random.default_rng(3))
    r = ev.ate(ref, ref)
    assert (r.mean, r.std, r.max) == (0.0, 0.0, 0.0)
    d = np.array([0.3, -0.4, 1.2])
    off = ev.Trajectory([(t, PoseSE3(p.rotation, p.translation + d)) for t, p in ref.entries])
    r = ev.ate(off, ref)
    assert r.mean == pytest.approx(np.linalg.norm(d), abs=1e-12)
    assert r.max == pytest.approx(np.linalg.norm(d), abs=1e-12)
    assert r.std == pytest.approx(0.0, abs=1e-12)
    assert ev.ate(off, ref, "2D").mean == pytest.approx(0.5, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_ate_matches_definition(seed):
    rng = np.random.default_rng(seed)
    ref = random_trajectory(rng)
    est = ev.Trajectory([(t, PoseSE3(p.rotation, p.translation + rng.normal(0, 0.3, 3))) for t, p in ref.entries])
    for dim, k in (("3D", 3), ("2D", 2)):
        r = ev.ate(est, ref, dim)
        mean, std, mx = reference_ate(est, ref, k)
        assert r.mean == pytest.approx(mean, rel=1e-12)
        assert r.std == pytest.approx(std, rel=1e-12, abs=1e-15)
        assert r.max == pytest.approx(mx, rel=1e-12)
    assert ev.ate(est, ref, "2D").mean <= ev.ate(est, ref, "3D").mean


@given(st.integers(0, 2**32 - 1))
def test_ate_invariant_under_common_motion(seed):
    rng = np.random.default_rng(seed)
    ref, est = random_trajectory(rng), random_trajectory(rng)
    G = random_pose(rng)
    a = ev.ate(est, ref)
    b = ev.ate(est.transformed(G), ref.transformed(G))
    assert b.mean == pytest.approx(a.mean, rel=1e-9)


def test_full_alignment_removes_rigid_offset():
    ref = random_trajectory(np.random.default_rng(4))
    moved = ref.transformed(random_pose(np.random.default_rng(5)))
    assert ev.ate(moved, ref, align="full").max < 1e-9


def test_drift_percent():
    ts = np.arange(11) * 0.1
    ref = ev.Trajectory([(t, PoseSE3.from_translation((t * 10, 0, 0))) for t in ts])
    est = ev.Trajectory([(t, PoseSE3.from_translation((t * 10, 0.1, 0))) for t in ts])
    assert ev.ate(est, ref).drift_percent == pytest.approx(1.0)


def test_association_tolerance():
    ref = ev.Trajectory([(t, PoseSE3.identity()) for t in np.arange(10) * 0.1])
    est = ev.Trajectory([(t + 0.04, PoseSE3.identity()) for t in np.arange(10) * 0.1])
    assert len(ev.associate(est, ref)) == 10
    late = ev.Trajectory([(t + 0.06, PoseSE3.identity()) for t in np.arange(10) * 0.1])
    assert len(ev.associate(late, ref)) == 9
    never = ev.Trajectory([(100.0, PoseSE3.identity())])
    with pytest.raises(ValueError):
        ev.ate(never, ref)


def test_subsampled_estimate_is_scored_on_its_frames():
    ref = random_trajectory(np.random.default_rng(6))
    r = ev.ate(ref.subsampled(5), ref)
    assert len(r.per_frame) == 6 and r.mean == 0.0


def test_cdf_examples():
    one = ev.AteReport(0.5, 0.0, 0.5, np.array([0.5]), "3D")
    assert ev.cdf_export(one) == [(0.5, 1.0)]
    four = ev.AteReport(0, 0, 0, np.array([3.0, 1.0, 4.0, 2.0]), "3D")
    assert [f for _, f in ev.cdf_export(four)] == [0.25, 0.5, 0.75, 1.0]
    assert [e for e, _ in ev.cdf_export(four)] == [1.0, 2.0, 3.0, 4.0]


@given(st.lists(st.floats(0, 100), min_size=1, max_size=50))
def test_cdf_monotone(errors):
    pts = ev.cdf_export(ev.AteReport(0, 0, 0, np.array(errors), "3D"))
    es, fs = zip(*pts)
    assert list(es) == sorted(es) and list(fs) == sorted(fs) and fs[-1] == 1.0


def test_mean_over_sequences():
    a = ev.AteReport(1.0, 0.2, 2.0, np.zeros(1), "3D")
    b = ev.AteReport(3.0, 0.4, 4.0, np.zeros(1), "3D")
    assert ev.mean_over_sequences([a, b]) == pytest.approx({"mean": 2.0, "std": 0.3, "max": 3.0})


def test_trajectory_file_round_trip(tmp_path):
    traj = random_trajectory(np.random.default_rng(7))
    ev.write_trajectory(tmp_path / "t.txt", traj)
    back = ev.read_trajectory(tmp_path / "t.txt")
    assert np.array_equal(back.timestamps, traj.timestamps)
    assert all(a.is_close(b, 1e-12) for a, b in zip(back.poses, traj.poses))
    (tmp_path / "bad.txt").write_text("0 1 2 3 0 0 0 2\n")
    with pytest.raises(ValueError):
        ev.read_trajectory(tmp_path / "bad.txt")
    (tmp_path / "short.txt").write_text("0 1 2 3\n")
    with pytest.raises(ValueError):
        ev.read_trajectory(tmp_path / "short.txt")


def test_trajectory_requires_increasing_time():
    with pytest.raises(ValueError):
        ev.Trajectory([(1.0, PoseSE3.identity()), (1.0, PoseSE3.identity())])


def test_csv_outputs(tmp_path):
    rep = ev.AteReport(1.0, 0.5, 2.0, np.array([2.0, 0.5]), "3D", 3.0)
    ev.write_errors_csv(tmp_path / "e.csv", rep)
    ev.write_summary_csv(tmp_path / "s.csv", [rep])
    ev.write_cdf_csv(tmp_path / "c.csv", rep)
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows == [["frame", "error"], ["0", "2.0"], ["1", "0.5"]]
    assert next(csv.DictReader(open(tmp_path / "s.csv")))["drift_percent"] == "3.0"
    assert list(csv.reader(open(tmp_path / "c.csv")))[1:] == [["0.5", "0.5"], ["2.0", "1.0"]]
