"""Classical rigid registration baselines: closed-form solve, ICP, RANSAC, IMU-bootstrapped ICP."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .geometry import PoseSE3, transform_points
from .sensing import ImuSample, PointCloud

log = logging.getLogger(__name__)


class DegenerateConfiguration(ValueError):
    """Point pairs do not pin down a unique rigid transform."""


class RegistrationFailure(RuntimeError):
    """No hypothesis gathered enough support."""


@dataclass(frozen=True, eq=False)
class Correspondences:
    a_idx: np.ndarray
    b_idx: np.ndarray
    residuals: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.a_idx, dtype=np.int64).reshape(-1)
        b = np.asarray(self.b_idx, dtype=np.int64).reshape(-1)
        if len(a) != len(b):
            raise ValueError("index arrays differ in length")
        if len(np.unique(a)) != len(a):
            raise ValueError("duplicate A-indices in correspondences")
        object.__setattr__(self, "a_idx", a)
        object.__setattr__(self, "b_idx", b)

    def __len__(self):
        return len(self.a_idx)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.a_idx.tolist(), self.b_idx.tolist()))

    @classmethod
    def identity(cls, n: int) -> "Correspondences":
        return cls(np.arange(n), np.arange(n))


@dataclass
class RegistrationResult:
    transform: PoseSE3
    objective: float
    iterations: int
    converged: bool
    inlier_count: int
    history: list = field(default_factory=list)
    message: str = ""


@dataclass(frozen=True)
class IcpParams:
    max_iters: int = 50
    tol: float = 1e-8
    reject_dist: float = 0.5


@dataclass(frozen=True)
class RansacParams:
    hypotheses: int = 200
    inlier_threshold: float = 0.1
    reject_dist: float = 1.0


def _pts(x) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else np.asarray(x, float).reshape(-1, 3)


def pairing_objective(a_cloud, b_cloud, corr: Correspondences, T: PoseSE3) -> float:
    """Sum of squared residuals ``|b_j - R a_i - t|^2`` over the paired points."""
    if len(corr) == 0:
        raise ValueError("objective is undefined without correspondences")
    a, b = _pts(a_cloud)[corr.a_idx], _pts(b_cloud)[corr.b_idx]
    r = b - transform_points(T, a)
    return float(np.sum(r * r))


def rigid_solve(a_pts, b_pts) -> PoseSE3:
    """Closed-form least-squares rigid transform taking ``a`` onto ``b`` (Kabsch).

    Raises :class:`DegenerateConfiguration` for fewer than 3 pairs or
    collinear / coincident points.
    """
    a, b = _pts(a_pts), _pts(b_pts)
    if len(a) != len(b):
        raise ValueError("rigid_solve needs paired point lists of equal length")
    if len(a) < 3:
        raise DegenerateConfiguration(f"need >= 3 point pairs, got {len(a)}")
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    A, B = a - ca, b - cb
    sv = np.linalg.svd(A, compute_uv=False)
    scale = max(sv[0], 1e-300)
    if sv[1] < 1e-9 * scale or sv[0] < 1e-12:
        raise DegenerateConfiguration("points are collinear or coincident")
    U, _, Vt = np.linalg.svd(A.T @ B)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return PoseSE3(R, cb - R @ ca)


def _nearest(a: np.ndarray, b: np.ndarray, ties: int = 4):
    """Exact nearest neighbours via a k-d tree; among equidistant candidates the lowest b-index wins."""
    k = min(ties, len(b))
    dist, idx = cKDTree(b).query(a, k=k)
    if k == 1:
        return idx, dist
    tied = dist == dist[:, :1]
    j = np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)
    return j, dist[:, 0]


def nn_correspondences(a, b, reject_dist: float = 0.5) -> Correspondences:
    """Pair each point of ``a`` with its nearest point of ``b``, dropping pairs beyond ``reject_dist``."""
    a, b = _pts(a), _pts(b)
    if len(a) == 0 or len(b) == 0:
        return Correspondences(np.zeros(0), np.zeros(0), np.zeros(0))
    j, dist = _nearest(a, b)
    keep = dist <= reject_dist
    if reject_dist <= 0:
        keep &= False
    return Correspondences(np.flatnonzero(keep), j[keep], dist[keep])


def _trimmed_cost(a_world: np.ndarray, b: np.ndarray, reject: float) -> tuple[float, Correspondences]:
    corr = nn_correspondences(a_world, b, reject)
    n_out = len(a_world) - len(corr)
    cost = float(np.sum(corr.residuals ** 2)) + n_out * reject ** 2
    return cost, corr


def icp(a, b, init: PoseSE3 = PoseSE3.identity(), params: IcpParams = IcpParams()) -> RegistrationResult:
    """Point-to-point ICP estimating the transform that maps ``a`` onto ``b``.

    ``history`` records the truncated cost ``sum(min(d^2, reject_dist^2))``
    over all points of ``a``. Each accepted step lowers it, so the trace is
    non-increasing; a step that would raise it ends the loop.
    """
    A, B = _pts(a), _pts(b)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("icp needs two non-empty clouds")
    T = init
    cost, corr = _trimmed_cost(transform_points(T, A), B, params.reject_dist)
    history = [cost]
    converged, msg, it = False, "", 0
    for it in range(1, params.max_iters + 1):
        if len(corr) < 3:
            msg = f"correspondence starvation: {len(corr)} pairs at iteration {it}"
            log.debug(msg)
            it -= 1
            break
        try:
            T_new = rigid_solve(A[corr.a_idx], B[corr.b_idx])
        except DegenerateConfiguration as exc:
            msg = f"degenerate correspondences at iteration {it}: {exc}"
            it -= 1
            break
        new_cost, new_corr = _trimmed_cost(transform_points(T_new, A), B, params.reject_dist)
        if new_cost > cost:
            converged, it = True, it - 1
            break
        improvement = cost - new_cost
        T, cost, corr = T_new, new_cost, new_corr
        history.append(cost)
        if improvement < params.tol:
            converged = True
            break
    if len(corr) >= 3 and not msg:
        objective = pairing_objective(A, B, corr, T)
    else:
        objective = float(np.sum(corr.residuals ** 2)) if len(corr) else 0.0
    return RegistrationResult(T, objective, it, converged, len(corr), history, msg)


def ransac_init(a, b, params: RansacParams = RansacParams(), seed=0) -> PoseSE3:
    """Best-of-N rigid hypothesis from random 3-pair samples.

    Candidate pairs are nearest neighbours within ``params.reject_dist``.
    Hypotheses are ranked by (inlier count desc, hypothesis index asc).
    """
    return ransac(a, b, params, seed)[0]


def ransac(a, b, params: RansacParams = RansacParams(), seed=0) -> tuple[PoseSE3, np.ndarray]:
    """Like :func:`ransac_init` but also returns the boolean inlier mask over ``a``."""
    A, B = _pts(a), _pts(b)
    if len(A) < 3 or len(B) < 3:
        raise RegistrationFailure("RANSAC needs at least 3 points in each cloud")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    corr = nn_correspondences(A, B, params.reject_dist)
    if len(corr) < 3:
        raise RegistrationFailure("fewer than 3 candidate pairs")
    pa, pb = A[corr.a_idx], B[corr.b_idx]
    best, best_count, best_mask = None, -1, None
    for h in range(params.hypotheses):
        s = rng.choice(len(corr), 3, replace=False)
        try:
            T = rigid_solve(pa[s], pb[s])
        except DegenerateConfiguration:
            continue
        res = np.linalg.norm(pb - transform_points(T, pa), axis=1)
        mask = res <= params.inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best, best_count, best_mask = T, count, mask
    if best is None or best_count < 3:
        raise RegistrationFailure("no hypothesis reached 3 inliers")
    # refit on the consensus set
    try:
        best = rigid_solve(pa[best_mask], pb[best_mask])
    except DegenerateConfiguration:
        pass
    full = np.zeros(len(A), bool)
    full[corr.a_idx[best_mask]] = True
    return best, full


def ransac_icp(a, b, ransac_params: RansacParams = RansacParams(), icp_params: IcpParams = IcpParams(),
               seed=0) -> RegistrationResult:
    try:
        init = ransac_init(a, b, ransac_params, seed)
        note = ""
    except RegistrationFailure as exc:
        init, note = PoseSE3.identity(), f"ransac failed ({exc}); identity init"
    res = icp(a, b, init, icp_params)
    if note:
        res.message = "; ".join(m for m in (note, res.message) if m)
    return res


def integrate_gyro(imu_window: Sequence[ImuSample], t_start: float | None = None) -> np.ndarray:
    """Rotation accumulated by the gyro over the window (body frame of the first sample).

    Each sample's rate is held over the interval ending at its timestamp.
    """
    R = Rotation.identity()
    prev = t_start
    for k, s in enumerate(imu_window):
        if prev is None:
            # without a window start, infer the step from the next sample
            prev = s.timestamp - (imu_window[1].timestamp - s.timestamp if len(imu_window) > 1 else 0.0)
        dt = s.timestamp - prev
        R = R * Rotation.from_rotvec(np.asarray(s.gyro, float) * dt)
        prev = s.timestamp
    return R.as_matrix()


def imu_icp(a, b, imu_window: Sequence[ImuSample], params: IcpParams = IcpParams(),
            t_start: float | None = None) -> RegistrationResult:
    """ICP from a gyro-integrated rotation (translation initialised to zero).

    Registers ``a`` (current frame) onto ``b`` (previous frame) so the result
    is the motion of the sensor between them. An empty window falls back to
    the identity and is flagged in ``message``.
    """
    if not imu_window:
        res = icp(a, b, PoseSE3.identity(), params)
        res.message = "; ".join(m for m in ("empty IMU window; identity init", res.message) if m)
        return res
    init = PoseSE3(integrate_gyro(imu_window, t_start), np.zeros(3))
    return icp(a, b, init, params)


def egomotion(prev_cloud, curr_cloud, method: str = "icp", imu_window=(), seed=0,
              icp_params: IcpParams = IcpParams(), ransac_params: RansacParams = RansacParams(),
              t_start: float | None = None) -> RegistrationResult:
    """Relative sensor motion from ``prev`` to ``curr`` (``curr`` expressed in ``prev``'s frame).

    Registering the current cloud onto the previous one yields exactly the
    pose of the current body in the previous body frame.
    """
    if method == "icp":
        return icp(curr_cloud, prev_cloud, PoseSE3.identity(), icp_params)
    if method == "ransac-icp":
        return ransac_icp(curr_cloud, prev_cloud, ransac_params, icp_params, seed)
    if method == "imu-icp":
        return imu_icp(curr_cloud, prev_cloud, imu_window, icp_params, t_start)
    raise ValueError(f"unknown registration method {method!r}; expected icp, ransac-icp or imu-icp")


METHODS = ("icp", "ransac-icp", "imu-icp")
