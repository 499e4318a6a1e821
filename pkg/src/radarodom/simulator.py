"""Synthetic indoor worlds, ray-cast scans, radar degradation and IMU synthesis."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from . import geometry as geo
from ._rng import stream
from .geometry import PoseSE3
from .sensing import (ImuSample, PointCloud, SensorFrame, imu_between, read_cloud,
                      read_imu, write_cloud, write_imu)

GRAVITY = 9.81


# --- world -----------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple

    @property
    def lo(self):
        return np.array(self.center) - np.array(self.size) / 2

    @property
    def hi(self):
        return np.array(self.center) + np.array(self.size) / 2

    def to_line(self) -> str:
        return "box " + " ".join(repr(float(v)) for v in (*self.center, *self.size))


@dataclass(frozen=True)
class Plane:
    """Finite rectangle centred at ``center`` with unit normal ``normal``."""

    center: tuple
    normal: tuple
    width: float
    height: float

    def axes(self):
        n = np.array(self.normal, float)
        n = n / np.linalg.norm(n)
        ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(ref, n)
        u /= np.linalg.norm(u)
        return n, u, np.cross(n, u)

    def corners(self):
        _, u, v = self.axes()
        c = np.array(self.center, float)
        return [c + su * self.width / 2 * u + sv * self.height / 2 * v
                for su in (-1, 1) for sv in (-1, 1)]

    def to_line(self) -> str:
        vals = (*self.center, *self.normal, self.width, self.height)
        return "plane " + " ".join(repr(float(v)) for v in vals)


@dataclass(frozen=True)
class WorldModel:
    """A set of surfaces.

    A box is solid when seen from outside; a sensor inside a box sees its
    inner walls, so a single large box doubles as a closed room.
    """

    surfaces: tuple = ()

    @property
    def bounds(self) -> Optional[tuple[np.ndarray, np.ndarray]]:
        if not self.surfaces:
            return None
        pts = []
        for s in self.surfaces:
            pts += [s.lo, s.hi] if isinstance(s, Box) else s.corners()
        pts = np.array(pts)
        return pts.min(axis=0), pts.max(axis=0)

    @property
    def diagonal(self) -> float:
        b = self.bounds
        return 0.0 if b is None else float(np.linalg.norm(b[1] - b[0]))

    def contains(self, p, margin: float = 1e-9) -> bool:
        b = self.bounds
        if b is None:
            return True
        p = np.asarray(p, float)
        return bool(np.all(p >= b[0] - margin) and np.all(p <= b[1] + margin))

    def to_text(self) -> str:
        return "\n".join(s.to_line() for s in self.surfaces) + "\n"


def parse_world(text: str) -> WorldModel:
    surfaces = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *vals = line.split()
        try:
            v = [float(x) for x in vals]
        except ValueError:
            raise ValueError(f"world line {n}: non-numeric field") from None
        if kind == "box" and len(v) == 6:
            if min(v[3:]) <= 0:
                raise ValueError(f"world line {n}: box sizes must be positive")
            surfaces.append(Box(tuple(v[:3]), tuple(v[3:])))
        elif kind == "plane" and len(v) == 8:
            if np.linalg.norm(v[3:6]) == 0 or v[6] <= 0 or v[7] <= 0:
                raise ValueError(f"world line {n}: degenerate plane")
            surfaces.append(Plane(tuple(v[:3]), tuple(v[3:6]), v[6], v[7]))
        else:
            raise ValueError(f"world line {n}: expected 'box cx cy cz sx sy sz' "
                             f"or 'plane cx cy cz nx ny nz w h'")
    if not surfaces:
        raise ValueError("world description has no surfaces")
    return WorldModel(tuple(surfaces))


def load_world(path) -> WorldModel:
    return parse_world(Path(path).read_text())


def default_world() -> WorldModel:
    """An 8 x 6 x 3 m room with a few obstacles to break symmetry."""
    return WorldModel((
        Box((0.0, 0.0, 1.5), (8.0, 6.0, 3.0)),
        Box((2.5, 1.8, 0.75), (1.0, 0.8, 1.5)),
        Box((-2.0, -2.0, 1.0), (0.6, 0.6, 2.0)),
        Box((3.2, -1.5, 0.5), (0.8, 1.2, 1.0)),
        Box((-3.0, 2.0, 1.2), (0.5, 1.5, 2.4)),
    ))


def _hit_box(o, d, box: Box):
    """Nearest positive ray parameter for each ray against one box (inf on miss)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (box.lo - o) * inv
        t2 = (box.hi - o) * inv
    # rays parallel to a slab: unbounded if inside it, a miss otherwise
    par = d == 0
    inside = (o >= box.lo) & (o <= box.hi)
    t1 = np.where(par, -np.inf, t1)
    t2 = np.where(par, np.inf, t2)
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    miss = (tmax < tmin) | (tmax <= 0) | np.any(par & ~inside, axis=1)
    t = np.where(tmin > 0, tmin, tmax)
    return np.where(miss, np.inf, t)


def _hit_plane(o, d, pl: Plane):
    n, u, v = pl.axes()
    c = np.array(pl.center, float)
    denom = d @ n
    par = np.abs(denom) <= 1e-12
    t = ((c - o) @ n) / np.where(par, 1.0, denom)
    t = np.where(par, -1.0, t)  # parallel rays never hit
    p = o + t[:, None] * d
    ok = ~par & (t > 0)
    ok &= np.abs((p - c) @ u) <= pl.width / 2
    ok &= np.abs((p - c) @ v) <= pl.height / 2
    return np.where(ok, t, np.inf)


def ray_directions(n_az: int, n_el: int, h_fov: float, v_fov: float, jitter=None) -> np.ndarray:
    """Unit ray directions, elevation-major (row) then azimuth.

    Rays sit at bin centres, or uniformly inside their bin when a
    ``jitter`` generator is given (stratified sampling).
    """
    off_a = np.full((n_el, n_az), 0.5) if jitter is None else jitter.random((n_el, n_az))
    off_e = np.full((n_el, n_az), 0.5) if jitter is None else jitter.random((n_el, n_az))
    A = -h_fov / 2 + (np.arange(n_az)[None, :] + off_a) * h_fov / n_az
    E = -v_fov / 2 + (np.arange(n_el)[:, None] + off_e) * v_fov / n_el
    return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)


def raycast_scan(world: WorldModel, pose: PoseSE3, n_az: int = 64, n_el: int = 16,
                 fov: tuple = (math.radians(120), math.radians(60)),
                 max_range: float = 10.0, timestamp: float = 0.0, jitter=None) -> PointCloud:
    """One nearest hit per ray within ``max_range``, in the sensor frame, in ray order.

    ``jitter`` (a numpy Generator) randomises each ray inside its angular bin.
    """
    if not world.contains(pose.translation):
        raise ValueError(f"sensor position {pose.translation.tolist()} outside world bounds")
    dirs = ray_directions(n_az, n_el, *fov, jitter=jitter)
    if not world.surfaces:
        return PointCloud(np.zeros((0, 3)), timestamp=timestamp)
    o = np.broadcast_to(pose.translation, dirs.shape)
    dw = dirs @ pose.rotation.T
    best = np.full(len(dirs), np.inf)
    for s in world.surfaces:
        t = _hit_box(o, dw, s) if isinstance(s, Box) else _hit_plane(o, dw, s)
        best = np.minimum(best, t)
    keep = best <= max_range
    return PointCloud(dirs[keep] * best[keep, None], timestamp=timestamp)


# --- radar degradation -----------------------------------------------------

@dataclass(frozen=True)
class RadarNoiseModel:
    keep_probability: float = 0.15
    ghost_probability: float = 0.1
    range_sigma: float = 0.04
    angular_sigma_az: float = math.radians(15.0) / 4
    angular_sigma_el: float = math.radians(58.0) / 8
    max_points: int = 120

    def __post_init__(self):
        for p in (self.keep_probability, self.ghost_probability):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if min(self.range_sigma, self.angular_sigma_az, self.angular_sigma_el) < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.max_points <= 0:
            raise ValueError("max_points must be positive")

    @classmethod
    def clean(cls, max_points: int = 10**9) -> "RadarNoiseModel":
        return cls(1.0, 0.0, 0.0, 0.0, 0.0, max_points)


GHOST_SCALE = (1.2, 2.0)


def _to_spherical(p):
    r = np.linalg.norm(p, axis=1)
    az = np.arctan2(p[:, 1], p[:, 0])
    el = np.arcsin(np.clip(p[:, 2] / np.where(r > 0, r, 1.0), -1, 1))
    return r, az, el


def _from_spherical(r, az, el):
    return np.stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)], axis=1)


def degrade_to_radar(dense: PointCloud, noise: RadarNoiseModel = RadarNoiseModel(),
                     rng_seed=0) -> PointCloud:
    """Turn a dense scan into a sparse, jittered radar return with multipath ghosts.

    ``rng_seed`` is an int or a ``numpy.random.Generator``.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    pts = dense.points
    kept = np.flatnonzero(rng.random(len(pts)) < noise.keep_probability)
    if len(kept) > noise.max_points:
        kept = np.sort(rng.choice(kept, noise.max_points, replace=False))
    r, az, el = _to_spherical(pts[kept])
    r = r + rng.normal(0.0, noise.range_sigma, len(r)) if noise.range_sigma else r
    az = az + rng.normal(0.0, noise.angular_sigma_az, len(az)) if noise.angular_sigma_az else az
    el = el + rng.normal(0.0, noise.angular_sigma_el, len(el)) if noise.angular_sigma_el else el
    r = np.abs(r)
    real = _from_spherical(r, az, el) if noise.range_sigma or noise.angular_sigma_az or noise.angular_sigma_el \
        else pts[kept]
    ghost_src = np.flatnonzero(rng.random(len(kept)) < noise.ghost_probability)
    room = noise.max_points - len(kept)
    ghost_src = ghost_src[:max(room, 0)]
    scale = rng.uniform(*GHOST_SCALE, len(ghost_src))
    ghosts = real[ghost_src] * scale[:, None]
    out = np.concatenate([real, ghosts])
    inten = None
    if dense.intensities is not None:
        base = dense.intensities[kept]
        inten = np.concatenate([base, base[ghost_src]])
    return PointCloud(out, inten, dense.timestamp)


# --- IMU -------------------------------------------------------------------

def synth_imu(traj: Sequence[PoseSE3], rate: float, bias=None, noise_sigma=(0.0, 0.0),
              rng=None, t0: float = 0.0) -> list[ImuSample]:
    """Body-frame gyro and specific force from poses sampled at ``rate`` Hz.

    ``bias`` is ``(accel_bias[3], gyro_bias[3])``; ``noise_sigma`` is
    ``(accel_sigma, gyro_sigma)``. A static body reads ``+g`` on its up axis.
    """
    n = len(traj)
    if n < 2:
        raise ValueError("IMU synthesis needs at least two poses")
    dt = 1.0 / rate
    ab, gb = (np.zeros(3), np.zeros(3)) if bias is None else (np.asarray(bias[0], float), np.asarray(bias[1], float))
    sa, sg = noise_sigma
    rng = rng if rng is not None else np.random.default_rng(0)

    Rs = np.array([p.rotation for p in traj])
    pos = np.array([p.translation for p in traj])
    # angular velocity over [k, k+1], reused for the final sample
    rel = Rotation.from_matrix(np.einsum("kji,kjl->kil", Rs[:-1], Rs[1:]))
    omega = rel.as_rotvec() / dt
    omega = np.vstack([omega, omega[-1:]])
    acc_w = np.zeros_like(pos)
    if n >= 3:
        acc_w[1:-1] = (pos[2:] - 2 * pos[1:-1] + pos[:-2]) / dt**2
        acc_w[0], acc_w[-1] = acc_w[1], acc_w[-2]
    g = np.array([0.0, 0.0, GRAVITY])
    f_body = np.einsum("kji,kj->ki", Rs, acc_w + g)

    gyro = omega + gb + (rng.normal(0.0, sg, omega.shape) if sg else 0.0)
    accel = f_body + ab + (rng.normal(0.0, sa, f_body.shape) if sa else 0.0)
    return [ImuSample(tuple(accel[k].tolist()), tuple(gyro[k].tolist()), t0 + k * dt) for k in range(n)]


# --- trajectories and sequences ----------------------------------------------

@dataclass(frozen=True)
class TrajectorySpec:
    waypoints: tuple
    frame_rate: float = 20.0
    speed: float = 1.0
    angular_speed: float = math.radians(45.0)

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("a trajectory needs at least two waypoints")
        if self.frame_rate <= 0 or self.speed <= 0 or self.angular_speed <= 0:
            raise ValueError("frame_rate, speed and angular_speed must be positive")

    def segment_times(self) -> np.ndarray:
        """Cumulative arrival time at each waypoint."""
        times = [0.0]
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            dist = float(np.linalg.norm(b.translation - a.translation))
            ang = float(np.linalg.norm(Rotation.from_matrix(a.rotation.T @ b.rotation).as_rotvec()))
            times.append(times[-1] + max(dist / self.speed, ang / self.angular_speed))
        return np.array(times)

    @property
    def duration(self) -> float:
        return float(self.segment_times()[-1])

    def pose_at(self, ts) -> list[PoseSE3]:
        """Linear translation, slerp rotation, clamped to the end points."""
        knots = self.segment_times()
        ts = np.clip(np.atleast_1d(np.asarray(ts, float)), 0.0, knots[-1])
        pos = np.array([w.translation for w in self.waypoints])
        rots = Rotation.from_matrix(np.array([w.rotation for w in self.waypoints]))
        # drop zero-length segments for the slerp knots
        uniq = np.concatenate([[True], np.diff(knots) > 0])
        slerp = Slerp(knots[uniq], rots[np.flatnonzero(uniq)])
        mats = slerp(ts).as_matrix()
        xyz = np.stack([np.interp(ts, knots, pos[:, i]) for i in range(3)], axis=1)
        out = []
        for t, R, p in zip(ts, mats, xyz):
            hit = np.flatnonzero(np.isclose(knots, t, rtol=0, atol=1e-12))
            # exact waypoint poses at the knots keep endpoint round-trips exact
            out.append(self.waypoints[hit[-1]] if len(hit) else PoseSE3(R, p))
        return out


def waypoints_from_xyzyaw(rows) -> tuple:
    return tuple(PoseSE3.from_euler(geo.EulerAngles(0.0, 0.0, yaw), (x, y, z)) for x, y, z, yaw in rows)


@dataclass(frozen=True)
class SensorRig:
    dense_az: int = 64
    dense_el: int = 16
    fov: tuple = (math.radians(120), math.radians(60))
    max_range: float = 10.0
    imu_rate: float = 100.0
    accel_sigma: float = 0.05
    gyro_sigma: float = 0.005
    accel_bias_sigma: float = 0.02
    gyro_bias_sigma: float = 0.002
    jitter_rays: bool = True


@dataclass
class SimulatedSequence:
    frames: list
    world: WorldModel
    seed: int
    spec: Optional[TrajectorySpec] = None
    noise: RadarNoiseModel = field(default_factory=RadarNoiseModel)
    rig: SensorRig = field(default_factory=SensorRig)
    imu: list = field(default_factory=list)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.cloud.timestamp for f in self.frames])

    @property
    def poses(self) -> list[PoseSE3]:
        return [f.ground_truth for f in self.frames]

    def relative_poses(self) -> list[geo.RelativePose]:
        p = self.poses
        return [geo.relative_between(a, b) for a, b in zip(p, p[1:])]


def generate_sequence(world: WorldModel, spec: TrajectorySpec,
                      noise: RadarNoiseModel = RadarNoiseModel(), seed: int = 0,
                      rig: SensorRig = SensorRig()) -> SimulatedSequence:
    duration = spec.duration
    n_frames = int(math.floor(duration * spec.frame_rate + 1e-9)) + 1
    f_ts = np.arange(n_frames) / spec.frame_rate
    f_poses = spec.pose_at(f_ts)
    for p in f_poses:
        if not world.contains(p.translation):
            raise ValueError(f"trajectory leaves the world at {p.translation.tolist()}")

    n_imu = int(math.floor(duration * rig.imu_rate + 1e-9)) + 1
    i_ts = np.arange(n_imu) / rig.imu_rate
    bias_rng = stream(seed, "imu-bias")
    bias = (bias_rng.normal(0, rig.accel_bias_sigma, 3), bias_rng.normal(0, rig.gyro_bias_sigma, 3))
    imu = synth_imu(spec.pose_at(i_ts), rig.imu_rate, bias, (rig.accel_sigma, rig.gyro_sigma),
                    rng=stream(seed, "imu-noise"))

    frames = []
    prev_t = -math.inf
    for k, (t, pose) in enumerate(zip(f_ts, f_poses)):
        jit = stream(seed, "rays", k) if rig.jitter_rays else None
        dense = raycast_scan(world, pose, rig.dense_az, rig.dense_el, rig.fov, rig.max_range, float(t), jit)
        radar = degrade_to_radar(dense, noise, stream(seed, "radar", k))
        frames.append(SensorFrame(radar, imu_between(imu, prev_t, float(t)), pose, dense))
        prev_t = float(t)
    return SimulatedSequence(frames, world, seed, spec, noise, rig, imu)


# --- on-disk layout ----------------------------------------------------------

def _meta_lines(seq: SimulatedSequence) -> list[str]:
    lines = [f"seed = {seq.seed}", f"frames = {len(seq.frames)}"]
    if seq.spec is not None:
        lines += [f"frame_rate = {seq.spec.frame_rate!r}", f"speed = {seq.spec.speed!r}",
                  f"angular_speed = {seq.spec.angular_speed!r}"]
        wp = "; ".join(" ".join(repr(float(v)) for v in (*w.translation, *w.quaternion()))
                       for w in seq.spec.waypoints)
        lines.append(f"waypoints = {wp}")
    lines += [f"noise.{k} = {v!r}" for k, v in asdict(seq.noise).items()]
    lines += [f"rig.{k} = {v!r}" for k, v in asdict(seq.rig).items()]
    lines.append("# ghost/jitter defaults are not calibrated to any outlier ratio; tune via noise.*")
    return lines


def save_sequence(seq: SimulatedSequence, out_dir, extra_meta: Sequence[str] = ()) -> Path:
    from .evaluation import Trajectory, write_trajectory

    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    for k, f in enumerate(seq.frames):
        write_cloud(out / "frames" / f"{k:05d}.cloud", f.cloud)
        if f.dense is not None:
            write_cloud(out / "frames" / f"{k:05d}.dense", f.dense)
    write_imu(out / "imu.txt", seq.imu)
    write_trajectory(out / "groundtruth.txt", Trajectory(list(zip(seq.timestamps.tolist(), seq.poses))))
    (out / "world.txt").write_text(seq.world.to_text())
    (out / "meta.txt").write_text("\n".join([*_meta_lines(seq), *extra_meta]) + "\n")
    return out


def read_meta(path) -> dict:
    meta = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    return meta


def load_sequence(seq_dir) -> SimulatedSequence:
    from .evaluation import read_trajectory

    d = Path(seq_dir)
    if not (d / "groundtruth.txt").exists():
        raise FileNotFoundError(f"{d} is not a sequence directory (no groundtruth.txt)")
    gt = read_trajectory(d / "groundtruth.txt")
    imu = read_imu(d / "imu.txt") if (d / "imu.txt").exists() else []
    meta = read_meta(d / "meta.txt") if (d / "meta.txt").exists() else {}
    world = load_world(d / "world.txt") if (d / "world.txt").exists() else WorldModel()
    noise_kw = {k[6:]: v for k, v in meta.items() if k.startswith("noise.")}
    noise = RadarNoiseModel(**{k: (int(v) if k == "max_points" else float(v)) for k, v in noise_kw.items()})
    frames = []
    prev_t = -math.inf
    for k, (t, pose) in enumerate(gt.entries):
        cloud = read_cloud(d / "frames" / f"{k:05d}.cloud")
        dpath = d / "frames" / f"{k:05d}.dense"
        dense = read_cloud(dpath) if dpath.exists() else None
        frames.append(SensorFrame(cloud, imu_between(imu, prev_t, t), pose, dense))
        prev_t = t
    return SimulatedSequence(frames, world, int(meta.get("seed", 0)), None, noise, SensorRig(), imu)
