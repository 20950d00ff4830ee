"""Device localization from multi-node bearings and RSS.

World frame: x east, y north, bearings measured from north toward east
(0 deg = north), so a bearing b maps to the unit direction (sin b, cos b).
Per-node angles of arrival are array-relative (broadside = 0) and convert
to world bearings through the node boresight.  Positions come from a
weighted least-squares intersection of bearing lines, smoothed by a
constant-velocity Kalman filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .store import DeviceStore


class DegenerateGeometry(ValueError):
    """All bearing lines parallel within a degree: no usable intersection."""


@dataclass(frozen=True)
class NodePose:
    position: tuple[float, float]
    boresight_deg: float


@dataclass(frozen=True)
class Fix:
    device_id: int
    position: tuple[float, float]
    covariance: np.ndarray
    ts_us: int
    nodes_used: int


@dataclass
class Trajectory:
    device_id: int
    points: list[tuple[int, float, float, float]] = field(default_factory=list)  # ts, x, y, speed

    def positions(self) -> np.ndarray:
        return np.array([[p[1], p[2]] for p in self.points])


def bearings_to_world(aoa_deg: float, pose: NodePose) -> float:
    """World bearing of an array-relative angle, normalized to [0, 360)."""
    return float((pose.boresight_deg + aoa_deg) % 360.0)


def bearing_direction(bearing_deg: float) -> np.ndarray:
    b = np.deg2rad(bearing_deg)
    return np.array([np.sin(b), np.cos(b)])


def world_bearing(from_xy: tuple[float, float], to_xy: tuple[float, float]) -> float:
    """Compass bearing of the line of sight between two points."""
    dx = to_xy[0] - from_xy[0]
    dy = to_xy[1] - from_xy[1]
    return float(np.rad2deg(np.arctan2(dx, dy)) % 360.0)


def rss_weight(rss_dbm: float | None) -> float:
    """Per-node weight 10^(rss/20), clamped after normalization upstream."""
    if rss_dbm is None:
        return 1.0
    return 10.0 ** (rss_dbm / 20.0)


def triangulate(
    observations: list[tuple[float, float | None]],
    poses: list[NodePose],
    device_id: int = -1,
    ts_us: int = 0,
) -> Fix:
    """Weighted least-squares intersection of bearing lines.

    `observations` holds one (world bearing deg, rss dBm or None) per pose;
    higher RSS weighs its line more.  Covariance is the scaled inverse of
    the normal equations.
    """
    if len(observations) != len(poses):
        raise ValueError("one observation per node pose required")
    if len(observations) < 2:
        raise DegenerateGeometry("need at least two bearings")
    bearings = np.array([b for b, _ in observations], dtype=float)
    spread = np.abs((bearings[:, None] - bearings[None, :] + 90.0) % 180.0 - 90.0)
    if np.all(spread < 1.0):
        raise DegenerateGeometry("bearing lines parallel within 1 degree")

    weights = np.array([rss_weight(r) for _, r in observations])
    weights = weights / weights.max()
    weights = np.clip(weights, 1e-3, 1.0)

    # line through node a with direction d: normal n = (cos b, -sin b), n.p = n.a
    b_rad = np.deg2rad(bearings)
    normals = np.stack([np.cos(b_rad), -np.sin(b_rad)], axis=1)
    anchors = np.array([p.position for p in poses], dtype=float)
    rhs = np.sum(normals * anchors, axis=1)

    sw = np.sqrt(weights)
    a_mat = normals * sw[:, None]
    y = rhs * sw
    sol, residuals, rank, _ = np.linalg.lstsq(a_mat, y, rcond=None)
    if rank < 2:
        raise DegenerateGeometry("normal equations rank deficient")
    gram_inv = np.linalg.inv(a_mat.T @ a_mat)
    n_obs = len(observations)
    if n_obs > 2 and residuals.size:
        s2 = float(residuals[0]) / (n_obs - 2)
    else:
        s2 = 1.0
    cov = gram_inv * max(s2, 1e-12)
    return Fix(device_id, (float(sol[0]), float(sol[1])), cov, ts_us, n_obs)


# --- constant-velocity Kalman filter ---

@dataclass
class KalmanParams:
    accel_noise: float = 0.12  # m/s^2 process noise, tuned for walking targets
    init_speed_var: float = 4.0


def kalman_track(fixes: list[Fix], params: KalmanParams | None = None) -> Trajectory:
    """Smooth a time-ordered fix list with a constant-velocity filter;
    measurement noise comes from each fix covariance."""
    if not fixes:
        raise ValueError("need at least one fix")
    kp = params or KalmanParams()
    device_id = fixes[0].device_id
    traj = Trajectory(device_id)

    x = np.array([fixes[0].position[0], fixes[0].position[1], 0.0, 0.0])
    p = np.diag([1.0, 1.0, kp.init_speed_var, kp.init_speed_var])
    p[:2, :2] = _safe_cov(fixes[0].covariance)
    traj.points.append((fixes[0].ts_us, x[0], x[1], 0.0))

    h = np.zeros((2, 4))
    h[0, 0] = h[1, 1] = 1.0
    prev_ts = fixes[0].ts_us
    for fx in fixes[1:]:
        dt = (fx.ts_us - prev_ts) / 1e6
        if dt <= 0:
            continue
        prev_ts = fx.ts_us
        f = np.eye(4)
        f[0, 2] = f[1, 3] = dt
        q = _process_noise(dt, kp.accel_noise)
        x = f @ x
        p = f @ p @ f.T + q
        r = _safe_cov(fx.covariance)
        z = np.array(fx.position)
        innov = z - h @ x
        s = h @ p @ h.T + r
        k = p @ h.T @ np.linalg.inv(s)
        x = x + k @ innov
        p = (np.eye(4) - k @ h) @ p
        speed = float(np.hypot(x[2], x[3]))
        traj.points.append((fx.ts_us, float(x[0]), float(x[1]), speed))
    return traj


def _safe_cov(cov: np.ndarray) -> np.ndarray:
    c = np.asarray(cov, dtype=float)
    if c.shape != (2, 2) or not np.all(np.isfinite(c)):
        return np.eye(2)
    # keep it positive definite
    return c + np.eye(2) * 1e-9


def _process_noise(dt: float, accel: float) -> np.ndarray:
    q2 = accel**2
    dt2, dt3, dt4 = dt * dt, dt**3, dt**4
    q = np.zeros((4, 4))
    q[0, 0] = q[1, 1] = dt4 / 4 * q2
    q[0, 2] = q[2, 0] = q[1, 3] = q[3, 1] = dt3 / 2 * q2
    q[2, 2] = q[3, 3] = dt2 * q2
    return q


# --- windowed localization over the store ---

@dataclass
class LocalizeParams:
    mad_k: float = 2.0
    min_nodes: int = 2
    area: tuple[float, float] | None = None  # (width, height) for ambiguity checks


def localize_all(
    store: DeviceStore,
    window: tuple[int, int],
    poses: list[NodePose],
    params: LocalizeParams | None = None,
) -> tuple[list[Fix], list[int]]:
    """Triangulate every device heard in the window.

    Per device and node, AoA/RSS are averaged over the window with outliers
    beyond `mad_k` median absolute deviations rejected; devices heard by
    fewer than two nodes with usable bearings go to the skip list.
    """
    lp = params or LocalizeParams()
    t0, t1 = window
    grouped = store.query_window(t0, t1)
    fixes: list[Fix] = []
    skipped: list[int] = []
    for did, recs in grouped.items():
        fix = _fix_from_records(recs, poses, lp, did)
        if fix is None:
            skipped.append(did)
        else:
            fixes.append(fix)
    return fixes, skipped


def _fix_from_records(recs, poses: list[NodePose], lp: "LocalizeParams", did: int) -> Fix | None:
    obs: list[tuple[float, float | None]] = []
    used_poses: list[NodePose] = []
    for node_idx, pose in enumerate(poses):
        aoas = np.array([r.phy[node_idx].aoa for r in recs if r.phy[node_idx].aoa is not None], dtype=float)
        rsss = np.array([r.phy[node_idx].rss for r in recs if r.phy[node_idx].rss is not None], dtype=float)
        if aoas.size == 0:
            continue
        aoa = float(np.mean(_mad_filter(aoas, lp.mad_k)))
        rss = float(np.mean(_mad_filter(rsss, lp.mad_k))) if rsss.size else None
        bearing = _resolve_ambiguity(aoa, pose, lp.area)
        obs.append((bearing, rss))
        used_poses.append(pose)
    if len(obs) < lp.min_nodes:
        return None
    try:
        return triangulate(obs, used_poses, device_id=did, ts_us=recs[-1].ts_us)
    except DegenerateGeometry:
        return None


def _mad_filter(values: np.ndarray, k: float) -> np.ndarray:
    if values.size < 3:
        return values
    med = np.median(values)
    mad = np.median(np.abs(values - med))
    if mad <= 1e-12:
        return values
    keep = np.abs(values - med) <= k * mad
    return values[keep] if keep.any() else values


def _resolve_ambiguity(aoa: float, pose: NodePose, area: tuple[float, float] | None) -> float:
    """A two-element array cannot tell front from back; prefer the bearing
    whose ray stays inside the area."""
    primary = bearings_to_world(aoa, pose)
    if area is None:
        return primary
    mirrored = bearings_to_world(180.0 - aoa, pose)
    w, h = area
    px, py = pose.position

    def stays_inside(bearing: float, step: float = 0.75) -> bool:
        d = bearing_direction(bearing)
        x, y = px + d[0] * step, py + d[1] * step
        return 0.0 <= x <= w and 0.0 <= y <= h

    if stays_inside(primary) or not stays_inside(mirrored):
        return primary
    return mirrored


def track_device(
    store: DeviceStore,
    device_id: int,
    window: tuple[int, int],
    poses: list[NodePose],
    step_s: float = 2.0,
    params: LocalizeParams | None = None,
) -> Trajectory:
    """Fix the device once per step over the window, then Kalman smooth."""
    from bisect import bisect_left, bisect_right

    lp = params or LocalizeParams()
    dev = store.devices.get(device_id)
    if dev is None or not dev.packets:
        return Trajectory(device_id)
    ts_list = [r.ts_us for r in dev.packets]
    t0, t1 = window
    step = int(step_s * 1e6)
    fixes = []
    for a in range(t0, t1, step):
        b = min(a + step, t1)
        lo, hi = bisect_left(ts_list, a), bisect_right(ts_list, b - 1)
        if hi <= lo:
            continue
        fix = _fix_from_records(dev.packets[lo:hi], poses, lp, device_id)
        if fix is not None:
            fixes.append(fix)
    if not fixes:
        return Trajectory(device_id)
    return kalman_track(fixes)
