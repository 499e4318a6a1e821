"""Point clouds, IMU samples and the panoramic range-image encoder."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import PoseSE3, transform_points


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    intensities: Optional[np.ndarray] = None
    timestamp: float = 0.0

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.intensities is not None:
            inten = np.array(self.intensities, dtype=float).reshape(-1)
            if len(inten) != len(pts):
                raise ValueError("intensities length differs from points")
            inten.setflags(write=False)
            object.__setattr__(self, "intensities", inten)

    def __len__(self):
        return len(self.points)

    @property
    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)


@dataclass(frozen=True)
class ImuSample:
    accel: tuple
    gyro: tuple
    timestamp: float

    def as_row(self) -> list:
        return [self.timestamp, *self.accel, *self.gyro]


@dataclass(frozen=True, eq=False)
class SensorFrame:
    cloud: PointCloud
    imu_window: list = field(default_factory=list)
    ground_truth: Optional[PoseSE3] = None
    dense: Optional[PointCloud] = None


def imu_array(window: Sequence[ImuSample]) -> np.ndarray:
    """``(n, 6)`` array of ``[ax ay az gx gy gz]`` rows."""
    if not window:
        return np.zeros((0, 6))
    return np.array([[*s.accel, *s.gyro] for s in window], dtype=float)


# --- panoramic encoding ----------------------------------------------------

@dataclass(frozen=True)
class PanoramaSpec:
    """Grid geometry of a panoramic image; rows index elevation, cols azimuth."""

    rows: int = 32
    cols: int = 128
    delta_alpha: float = math.radians(120.0) / 128
    delta_beta: float = math.radians(60.0) / 32
    alpha_min: float = -math.radians(60.0)
    beta_min: float = -math.radians(30.0)
    max_range: float = 10.0

    def __post_init__(self):
        if self.delta_alpha <= 0 or self.delta_beta <= 0 or self.max_range <= 0:
            raise ValueError("panorama resolutions and max_range must be positive")
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("panorama dimensions must be positive")

    @classmethod
    def from_fov(cls, h_fov: float, v_fov: float, rows: int, cols: int,
                 max_range: float = 10.0) -> "PanoramaSpec":
        """Centered field of view (radians) split into ``rows x cols`` bins."""
        return cls(rows, cols, h_fov / cols, v_fov / rows, -h_fov / 2, -v_fov / 2, max_range)

    def header(self) -> str:
        return (f"{self.rows} {self.cols} {self.delta_alpha!r} {self.delta_beta!r} "
                f"{self.alpha_min!r} {self.beta_min!r} {self.max_range!r}")


@dataclass(frozen=True, eq=False)
class PanoramicImage:
    spec: PanoramaSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.spec.rows, self.spec.cols)
        if v.min(initial=0.0) < 0 or v.max(initial=0.0) > 255:
            raise ValueError("panoramic values must lie in [0, 255]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def rows(self):
        return self.spec.rows

    @property
    def cols(self):
        return self.spec.cols


def spherical_angles(p) -> tuple[float, float]:
    x, y, z = (float(v) for v in p)
    n = math.sqrt(x * x + y * y + z * z)
    if n == 0.0:
        raise ValueError("cannot take angles of the zero vector")
    return math.atan2(y, x), math.asin(max(-1.0, min(1.0, z / n)))


def bin_index(alpha: float, beta: float, spec: PanoramaSpec) -> Optional[tuple[int, int]]:
    """``(row, col)`` of the bin holding direction (alpha, beta), or None.

    Following the floor rule, the azimuth index is
    ``floor((alpha - alpha_min) / delta_alpha)`` and lands in the column;
    elevation lands in the row.
    """
    c = math.floor((alpha - spec.alpha_min) / spec.delta_alpha)
    r = math.floor((beta - spec.beta_min) / spec.delta_beta)
    if 0 <= r < spec.rows and 0 <= c < spec.cols:
        return r, c
    return None


def _bin_indices(points: np.ndarray, spec: PanoramaSpec):
    """Vectorised :func:`bin_index` over an ``(n, 3)`` array."""
    rng = np.linalg.norm(points, axis=1)
    ok = rng > 0
    pts, rng = points[ok], rng[ok]
    alpha = np.arctan2(pts[:, 1], pts[:, 0])
    beta = np.arcsin(np.clip(pts[:, 2] / rng, -1.0, 1.0))
    c = np.floor((alpha - spec.alpha_min) / spec.delta_alpha).astype(np.int64)
    r = np.floor((beta - spec.beta_min) / spec.delta_beta).astype(np.int64)
    inview = (r >= 0) & (r < spec.rows) & (c >= 0) & (c < spec.cols)
    return r[inview], c[inview], rng[inview]


def range_to_value(rng, max_range: float):
    return 255.0 * (1.0 - np.minimum(np.asarray(rng, dtype=float) / max_range, 1.0))


def encode_panoramic(cloud: PointCloud | np.ndarray, spec: PanoramaSpec = PanoramaSpec()) -> PanoramicImage:
    """Project a cloud onto the panorama; nearer returns get brighter values.

    Bin collisions keep the maximum (nearest) value, empty bins stay 0.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float).reshape(-1, 3)
    img = np.zeros((spec.rows, spec.cols))
    if len(pts):
        r, c, rng = _bin_indices(pts, spec)
        np.maximum.at(img, (r, c), range_to_value(rng, spec.max_range))
    return PanoramicImage(spec, img)


def stack_pair(prev: PanoramicImage, curr: PanoramicImage, mean: float = 0.0) -> np.ndarray:
    """``[2, rows, cols]`` array: channel 0 previous frame, channel 1 current."""
    if prev.values.shape != curr.values.shape:
        raise ValueError(f"panorama shapes differ: {prev.values.shape} vs {curr.values.shape}")
    return np.stack([prev.values, curr.values]) - mean


def merge_clouds(clouds: Sequence[tuple[PointCloud, PoseSE3]]) -> PointCloud:
    """Express every cloud in the common frame through its extrinsic and concatenate."""
    pts = [transform_points(ext, c.points) for c, ext in clouds]
    has_int = clouds and all(c.intensities is not None for c, _ in clouds)
    inten = np.concatenate([c.intensities for c, _ in clouds]) if has_int else None
    ts = max((c.timestamp for c, _ in clouds), default=0.0)
    return PointCloud(np.concatenate(pts) if pts else np.zeros((0, 3)), inten, ts)


# --- text formats ----------------------------------------------------------

def _data_lines(path):
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line.split()


def write_cloud(path, cloud: PointCloud) -> None:
    lines = [f"# timestamp {cloud.timestamp!r}"]
    if cloud.intensities is None:
        lines += [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist()]
    else:
        lines += [f"{x!r} {y!r} {z!r} {i!r}"
                  for (x, y, z), i in zip(cloud.points.tolist(), cloud.intensities.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cloud(path) -> PointCloud:
    ts = 0.0
    for line in Path(path).read_text().splitlines():
        s = line.strip()
        if s.startswith("# timestamp"):
            ts = float(s.split()[2])
            break
    rows = [list(map(float, f)) for f in _data_lines(path)]
    if not rows:
        return PointCloud(np.zeros((0, 3)), timestamp=ts)
    widths = {len(r) for r in rows}
    if widths == {3}:
        return PointCloud(np.array(rows), timestamp=ts)
    if widths == {4}:
        a = np.array(rows)
        return PointCloud(a[:, :3], a[:, 3], timestamp=ts)
    raise ValueError(f"{path}: expected 'x y z [intensity]' on every line")


def write_imu(path, samples: Sequence[ImuSample]) -> None:
    lines = ["# timestamp ax ay az gx gy gz"]
    lines += [" ".join(repr(float(v)) for v in s.as_row()) for s in samples]
    Path(path).write_text("\n".join(lines) + "\n")


def read_imu(path) -> list[ImuSample]:
    out = []
    for f in _data_lines(path):
        if len(f) != 7:
            raise ValueError(f"{path}: IMU lines need 7 fields, got {len(f)}")
        v = list(map(float, f))
        out.append(ImuSample(tuple(v[1:4]), tuple(v[4:7]), v[0]))
    ts = [s.timestamp for s in out]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError(f"{path}: IMU timestamps must be strictly increasing")
    return out


def imu_between(samples: Sequence[ImuSample], t0: float, t1: float) -> list[ImuSample]:
    """Samples with timestamp in the half-open interval (t0, t1]."""
    eps = 1e-9
    return [s for s in samples if t0 + eps < s.timestamp <= t1 + eps]


def write_panorama(path, img: PanoramicImage) -> None:
    lines = [img.spec.header()]
    lines += [" ".join(repr(float(v)) for v in row) for row in img.values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_panorama(path) -> PanoramicImage:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip() and not l.startswith("#")]
    h = lines[0].split()
    spec = PanoramaSpec(int(h[0]), int(h[1]), *map(float, h[2:7]))
    vals = np.array([list(map(float, l.split())) for l in lines[1:]])
    if vals.shape != (spec.rows, spec.cols):
        raise ValueError(f"{path}: grid is {vals.shape}, header says {(spec.rows, spec.cols)}")
    return PanoramicImage(spec, vals)
