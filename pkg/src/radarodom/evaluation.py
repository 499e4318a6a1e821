"""Trajectory composition, alignment and absolute trajectory error."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import PoseSE3, RelativePose, compose, inverse, relative_between


@dataclass
class Trajectory:
    entries: list  # [(timestamp, PoseSE3)]

    def __post_init__(self):
        self.entries = [(float(t), p) for t, p in self.entries]
        ts = self.timestamps
        if np.any(np.diff(ts) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.entries)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([t for t, _ in self.entries])

    @property
    def poses(self) -> list[PoseSE3]:
        return [p for _, p in self.entries]

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for _, p in self.entries]).reshape(-1, 3)

    def path_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.positions, axis=0), axis=1)))

    def relatives(self) -> list[RelativePose]:
        p = self.poses
        return [relative_between(a, b) for a, b in zip(p, p[1:])]

    def transformed(self, T: PoseSE3) -> "Trajectory":
        return Trajectory([(t, compose(T, p)) for t, p in self.entries])

    def subsampled(self, step: int) -> "Trajectory":
        return Trajectory(self.entries[::step])


@dataclass
class AteReport:
    mean: float
    std: float
    max: float
    per_frame: np.ndarray
    dimensionality: str
    drift_percent: float = float("nan")


def compose_trajectory(start: PoseSE3, rels: Sequence[RelativePose], timestamps) -> Trajectory:
    """Chain relative poses onto ``start``: ``pose_k = pose_{k-1} * rel_k``."""
    ts = list(timestamps)
    if len(ts) != len(rels) + 1:
        raise ValueError(f"need {len(rels) + 1} timestamps for {len(rels)} relative poses, got {len(ts)}")
    poses = [start]
    for rel in rels:
        step = rel.to_pose() if isinstance(rel, RelativePose) else rel
        poses.append(compose(poses[-1], step))
    return Trajectory(list(zip(ts, poses)))


def align_first_frame(est: Trajectory, ref: Trajectory) -> Trajectory:
    """Rigidly move ``est`` so its first pose coincides with ``ref``'s first pose."""
    if not len(est) or not len(ref):
        raise ValueError("alignment needs non-empty trajectories")
    T = compose(ref.poses[0], inverse(est.poses[0]))
    return est.transformed(T)


def umeyama_alignment(src: np.ndarray, dst: np.ndarray) -> PoseSE3:
    """Least-squares rigid (no scale) transform taking positions ``src`` onto ``dst``."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s) / len(src)
    U, _, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1
    R = U @ S @ Vt
    return PoseSE3(R, mu_d - R @ mu_s)


def associate(est: Trajectory, ref: Trajectory, tolerance: float | None = None):
    """Index pairs (est, ref) matched by nearest timestamp within ``tolerance``.

    The default tolerance is half the median reference frame interval.
    """
    te, tr = est.timestamps, ref.timestamps
    if tolerance is None:
        tolerance = 0.5 * float(np.median(np.diff(tr))) if len(tr) > 1 else 1e-9
    pos = np.clip(np.searchsorted(tr, te), 0, len(tr) - 1)
    prev = np.clip(pos - 1, 0, len(tr) - 1)
    pick = np.where(np.abs(tr[prev] - te) <= np.abs(tr[pos] - te), prev, pos)
    ok = np.abs(tr[pick] - te) <= tolerance + 1e-12
    pairs = [(i, int(j)) for i, j in zip(np.flatnonzero(ok), pick[ok])]
    # one reference frame per estimate frame
    seen, out = set(), []
    for i, j in pairs:
        if j not in seen:
            seen.add(j)
            out.append((int(i), j))
    return out


def ate(est: Trajectory, ref: Trajectory, dim: str = "3D", align: str = "none",
        tolerance: float | None = None) -> AteReport:
    """Absolute trajectory error between associated frames.

    ``align`` is ``"none"``, ``"first"`` (first-frame rigid alignment) or
    ``"full"`` (least-squares rigid alignment over all positions).
    ``mean`` is the RMSE of the per-frame errors; ``std`` is their standard
    deviation about the arithmetic mean.
    """
    if dim not in ("2D", "3D"):
        raise ValueError("dim must be '2D' or '3D'")
    pairs = associate(est, ref, tolerance)
    if not pairs:
        raise ValueError("no timestamp overlap between estimate and reference")
    ei = [i for i, _ in pairs]
    ri = [j for _, j in pairs]
    if align == "first":
        est = Trajectory([est.entries[i] for i in ei])
        est = align_first_frame(est, Trajectory([ref.entries[j] for j in ri]))
        ei = list(range(len(ei)))
    elif align == "full":
        T = umeyama_alignment(est.positions[ei], ref.positions[ri])
        est = est.transformed(T)
    elif align != "none":
        raise ValueError(f"unknown alignment {align!r}")
    k = 2 if dim == "2D" else 3
    diff = est.positions[ei, :k] - ref.positions[ri, :k]
    err = np.linalg.norm(diff, axis=1)
    length = Trajectory([ref.entries[j] for j in ri]).path_length()
    mean = float(np.sqrt(np.mean(err ** 2)))
    return AteReport(
        mean=mean,
        std=float(np.std(err)),
        max=float(np.max(err)),
        per_frame=err,
        dimensionality=dim,
        drift_percent=100.0 * mean / length if length > 0 else float("nan"),
    )


def cdf_export(report: AteReport) -> list[tuple[float, float]]:
    err = np.sort(np.asarray(report.per_frame, float))
    n = len(err)
    if n == 0:
        raise ValueError("no per-frame errors to export")
    return [(float(e), (k + 1) / n) for k, e in enumerate(err)]


def mean_over_sequences(reports: Sequence[AteReport]) -> dict:
    """Arithmetic mean of per-sequence mean/std/max."""
    return {k: float(np.mean([getattr(r, k) for r in reports])) for k in ("mean", "std", "max")}


# --- files -------------------------------------------------------------------

def write_trajectory(path, traj: Trajectory) -> None:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for t, p in traj.entries:
        vals = [t, *p.translation.tolist(), *p.quaternion().tolist()]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path) -> Trajectory:
    entries = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        f = line.split()
        if len(f) != 8:
            raise ValueError(f"{path}:{n}: expected 'timestamp tx ty tz qx qy qz qw'")
        v = [float(x) for x in f]
        q = np.array(v[4:])
        nq = np.linalg.norm(q)
        if not np.isfinite(nq) or abs(nq - 1.0) > 1e-6:
            raise ValueError(f"{path}:{n}: quaternion is not unit length")
        entries.append((v[0], PoseSE3.from_quaternion(q / nq, v[1:4])))
    return Trajectory(entries)


def write_errors_csv(path, report: AteReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "error"])
        for k, e in enumerate(report.per_frame):
            w.writerow([k, repr(float(e))])


def write_summary_csv(path, reports: Sequence[AteReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mean", "std", "max", "dim", "drift_percent"])
        for r in reports:
            w.writerow([repr(r.mean), repr(r.std), repr(r.max), r.dimensionality, repr(r.drift_percent)])


def write_cdf_csv(path, report: AteReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["error", "cumulative_fraction"])
        for e, f in cdf_export(report):
            w.writerow([repr(e), repr(f)])
