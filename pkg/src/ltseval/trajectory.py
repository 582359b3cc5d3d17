"""Poses, trajectories, interpolation, visit detection and LTS sample matching.

Units are fixed throughout: millimetres, degrees, and integer nanoseconds for
timestamps (seconds for durations and gaps).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import BoundaryError, ExtrapolationError, ParameterError

NS_PER_S = 1_000_000_000
CSV_HEADER = ["t_ns", "x_mm", "y_mm", "z_mm", "yaw_deg", "qw", "qx", "qy", "qz"]

QUAT_NORM_TOL = 1e-9
HEADING_QUAT_TOL_DEG = 1e-6


class Source(str, Enum):
    GROUND_TRUTH = "GroundTruth"
    LTS = "LTS"


def wrap_deg(angle):
    """Wrap to [0, 360)."""
    a = np.mod(angle, 360.0)
    # np.mod(-1e-17, 360) rounds to 360.0
    a = np.where(a >= 360.0, a - 360.0, a)
    return float(a) if np.ndim(a) == 0 else a


def signed_angle_diff(a, b):
    """Shortest-arc difference a - b in degrees, wrapped to (-180, 180]."""
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), 360.0)
    d = np.where(d > 180.0, d - 360.0, d)
    return float(d) if np.ndim(d) == 0 else d


def quat_yaw_deg(q) -> np.ndarray | float:
    """Yaw (rotation about +z, ZYX convention) of (w, x, y, z) quaternions."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    yaw = np.degrees(np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)))
    return wrap_deg(yaw)


def yaw_quat(yaw_deg) -> np.ndarray:
    half = np.radians(np.asarray(yaw_deg, dtype=float)) / 2.0
    zeros = np.zeros_like(half)
    return np.stack([np.cos(half), zeros, zeros, np.sin(half)], axis=-1)


def quat_multiply(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def slerp(q0: np.ndarray, q1: np.ndarray, frac: np.ndarray) -> np.ndarray:
    """Row-wise spherical linear interpolation of unit quaternions."""
    q0 = np.atleast_2d(q0)
    q1 = np.atleast_2d(q1).copy()
    frac = np.atleast_1d(np.asarray(frac, dtype=float))[:, None]
    dot = np.sum(q0 * q1, axis=1)
    flip = dot < 0.0
    q1[flip] *= -1.0
    dot = np.abs(dot)
    out = np.empty_like(q0)
    near = dot > 0.9995
    if np.any(near):
        lerp = q0[near] + frac[near] * (q1[near] - q0[near])
        out[near] = lerp / np.linalg.norm(lerp, axis=1, keepdims=True)
    far = ~near
    if np.any(far):
        theta = np.arccos(np.clip(dot[far], -1.0, 1.0))[:, None]
        s = np.sin(theta)
        out[far] = (np.sin((1.0 - frac[far]) * theta) * q0[far] + np.sin(frac[far] * theta) * q1[far]) / s
    return out


@dataclass(frozen=True)
class Pose:
    """One timestamped sample. ``z``, ``yaw_deg`` and ``quat`` may be absent."""

    t: int
    x: float
    y: float
    z: Optional[float] = None
    yaw_deg: Optional[float] = None
    quat: Optional[tuple[float, float, float, float]] = None

    def __post_init__(self):
        for v in (self.x, self.y, self.z, self.yaw_deg):
            if v is not None and not math.isfinite(v):
                raise ParameterError(f"non-finite pose field in {self!r}")
        if self.quat is not None:
            q = np.asarray(self.quat, dtype=float)
            if q.shape != (4,) or not np.all(np.isfinite(q)):
                raise ParameterError("quaternion must be 4 finite numbers (w, x, y, z)")
            if abs(np.linalg.norm(q) - 1.0) > QUAT_NORM_TOL:
                raise ParameterError(f"quaternion norm {np.linalg.norm(q)!r} is not 1")
            if self.yaw_deg is not None:
                if abs(signed_angle_diff(self.yaw_deg, quat_yaw_deg(q))) > HEADING_QUAT_TOL_DEG:
                    raise ParameterError("heading disagrees with quaternion yaw")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def t_s(self) -> float:
        return self.t / NS_PER_S


class Trajectory:
    """Time-ordered poses from one source, stored column-wise.

    ``xyz`` holds NaN in the z column when the source has no vertical output.
    All arrays are read-only after construction.
    """

    def __init__(
        self,
        t_ns,
        xyz,
        yaw_deg=None,
        quat=None,
        source: Source = Source.LTS,
        has_vertical: bool = True,
    ):
        t = np.array(t_ns, dtype=np.int64).reshape(-1)
        p = np.asarray(xyz, dtype=float).reshape(-1, 3).copy()
        if len(p) != len(t):
            raise ParameterError("t_ns and xyz lengths differ")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ParameterError("timestamps must be strictly increasing")
        if not has_vertical:
            p[:, 2] = np.nan
        if not np.all(np.isfinite(p[:, :2])) or (has_vertical and not np.all(np.isfinite(p[:, 2]))):
            raise ParameterError("positions must be finite")
        y = None
        if yaw_deg is not None:
            y = np.asarray(yaw_deg, dtype=float).reshape(-1)
            if len(y) != len(t) or not np.all(np.isfinite(y)):
                raise ParameterError("yaw_deg must be finite and match t_ns in length")
            y = wrap_deg(y)
        q = None
        if quat is not None:
            q = np.array(quat, dtype=float).reshape(-1, 4)
            if len(q) != len(t) or not np.all(np.isfinite(q)):
                raise ParameterError("quat must be finite and match t_ns in length")
            if np.any(np.abs(np.linalg.norm(q, axis=1) - 1.0) > QUAT_NORM_TOL):
                raise ParameterError("quaternions must have unit norm")
            if y is not None and len(y) and np.max(np.abs(signed_angle_diff(y, quat_yaw_deg(q)))) > HEADING_QUAT_TOL_DEG:
                raise ParameterError("heading disagrees with quaternion yaw")
        self.source = Source(source)
        self.has_vertical = bool(has_vertical)
        self.t_ns = t
        self.xyz = p
        self.yaw_deg = y
        self.quat = q
        for a in (self.t_ns, self.xyz, self.yaw_deg, self.quat):
            if a is not None:
                a.setflags(write=False)

    @property
    def has_heading(self) -> bool:
        return self.yaw_deg is not None

    @property
    def has_orientation3d(self) -> bool:
        return self.quat is not None

    @property
    def t_s(self) -> np.ndarray:
        return self.t_ns / NS_PER_S

    @property
    def duration_s(self) -> float:
        return float(self.t_ns[-1] - self.t_ns[0]) / NS_PER_S if len(self) else 0.0

    def __len__(self) -> int:
        return len(self.t_ns)

    def __getitem__(self, i: int) -> Pose:
        return Pose(
            t=int(self.t_ns[i]),
            x=float(self.xyz[i, 0]),
            y=float(self.xyz[i, 1]),
            z=float(self.xyz[i, 2]) if self.has_vertical else None,
            yaw_deg=float(self.yaw_deg[i]) if self.yaw_deg is not None else None,
            quat=tuple(float(v) for v in self.quat[i]) if self.quat is not None else None,
        )

    @property
    def samples(self) -> list[Pose]:
        return [self[i] for i in range(len(self))]

    def replace(self, **kwargs) -> "Trajectory":
        args = dict(
            t_ns=self.t_ns,
            xyz=self.xyz,
            yaw_deg=self.yaw_deg,
            quat=self.quat,
            source=self.source,
            has_vertical=self.has_vertical,
        )
        args.update(kwargs)
        return Trajectory(**args)

    def shifted(self, dt_ns: int) -> "Trajectory":
        return self.replace(t_ns=self.t_ns + np.int64(dt_ns))

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], source: Source = Source.LTS) -> "Trajectory":
        if not poses:
            return cls([], np.empty((0, 3)), source=source)
        has_z = all(p.z is not None for p in poses)
        has_yaw = all(p.yaw_deg is not None for p in poses)
        has_q = all(p.quat is not None for p in poses)
        return cls(
            [p.t for p in poses],
            [[p.x, p.y, p.z if has_z else np.nan] for p in poses],
            yaw_deg=[p.yaw_deg for p in poses] if has_yaw else None,
            quat=[p.quat for p in poses] if has_q else None,
            source=source,
            has_vertical=has_z,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b, equal_nan=True)

        return (
            self.source == other.source
            and self.has_vertical == other.has_vertical
            and np.array_equal(self.t_ns, other.t_ns)
            and same(self.xyz, other.xyz)
            and same(self.yaw_deg, other.yaw_deg)
            and same(self.quat, other.quat)
        )

    def __repr__(self) -> str:
        return f"Trajectory(source={self.source.value}, n={len(self)}, duration_s={self.duration_s:.3f})"


def _bracket(traj: Trajectory, t_ns: np.ndarray):
    """Left node index, interpolation fraction, and exact-node mask for each query time."""
    t = traj.t_ns
    if len(t) == 0:
        raise ExtrapolationError("cannot interpolate an empty trajectory")
    if np.any(t_ns < t[0]) or np.any(t_ns > t[-1]):
        bad = t_ns[(t_ns < t[0]) | (t_ns > t[-1])][0]
        raise ExtrapolationError(f"t={int(bad)} ns outside trajectory range [{int(t[0])}, {int(t[-1])}] ns")
    exact_idx = np.searchsorted(t, t_ns, side="left")
    exact = (exact_idx < len(t)) & (t[np.minimum(exact_idx, len(t) - 1)] == t_ns)
    if len(t) == 1:
        return np.zeros(len(t_ns), dtype=int), np.zeros(len(t_ns)), exact, exact_idx
    i = np.clip(np.searchsorted(t, t_ns, side="right") - 1, 0, len(t) - 2)
    frac = (t_ns - t[i]).astype(float) / (t[i + 1] - t[i]).astype(float)
    return i, frac, exact, exact_idx


def interpolate(traj: Trajectory, t_ns) -> Trajectory:
    """Vectorised form of :func:`interpolate_pose`, returning a trajectory at ``t_ns``."""
    q_t = np.asarray(t_ns, dtype=np.int64).reshape(-1)
    i, frac, exact, exact_idx = _bracket(traj, q_t)
    n = len(traj)
    j = np.minimum(i + 1, n - 1)
    f = frac[:, None]
    p = traj.xyz[i] + f * (traj.xyz[j] - traj.xyz[i])
    p[exact] = traj.xyz[exact_idx[exact]]
    yaw = None
    if traj.yaw_deg is not None:
        y0, y1 = traj.yaw_deg[i], traj.yaw_deg[j]
        yaw = wrap_deg(y0 + frac * signed_angle_diff(y1, y0))
        yaw[exact] = traj.yaw_deg[exact_idx[exact]]
    quat = None
    if traj.quat is not None:
        quat = slerp(traj.quat[i], traj.quat[j], frac)
        quat[exact] = traj.quat[exact_idx[exact]]
        if yaw is not None:
            # keep heading consistent with the interpolated attitude
            yaw[~exact] = quat_yaw_deg(quat[~exact])
    return Trajectory(q_t, p, yaw, quat, source=traj.source, has_vertical=traj.has_vertical)


def interpolate_pose(traj: Trajectory, t: int) -> Pose:
    """Pose at time ``t`` (ns): linear position, shortest-arc heading, slerp attitude."""
    return interpolate(traj, [int(t)])[0]


def _velocity_brackets(t: np.ndarray, q_t: np.ndarray, window: int):
    right = np.searchsorted(t, q_t, side="right") - 1
    on_node = (right >= 0) & (t[np.clip(right, 0, len(t) - 1)] == q_t)
    a = np.where(on_node, right - 1, right) - window
    b = right + 1 + window
    return a, b


def estimate_velocity(traj: Trajectory, t: int, smoothing_window: int = 0) -> tuple[np.ndarray, float]:
    """Central-difference velocity (mm/s) and speed at ``t`` (ns).

    The difference spans the nearest samples strictly before and after ``t``;
    ``smoothing_window`` widens that span by that many samples on each side.
    """
    if smoothing_window < 0:
        raise ParameterError("smoothing_window must be >= 0")
    tt = traj.t_ns
    q = np.array([int(t)], dtype=np.int64)
    a, b = _velocity_brackets(tt, q, smoothing_window)
    if len(tt) < 2 or a[0] < 0 or b[0] > len(tt) - 1:
        raise BoundaryError(f"velocity at t={int(t)} ns needs samples on both sides (window {smoothing_window})")
    v = _diff(traj, a, b)[0]
    return v, float(np.linalg.norm(v))


def _diff(traj: Trajectory, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dp = traj.xyz[b] - traj.xyz[a]
    dp = np.nan_to_num(dp, nan=0.0)
    dt = (traj.t_ns[b] - traj.t_ns[a]) / NS_PER_S
    return dp / dt[:, None]


def node_velocities(traj: Trajectory) -> np.ndarray:
    """Velocity (mm/s) at every sample; one-sided differences at the two ends."""
    n = len(traj)
    if n < 2:
        return np.zeros((n, 3))
    idx = np.arange(n)
    a = np.maximum(idx - 1, 0)
    b = np.minimum(idx + 1, n - 1)
    return _diff(traj, a, b)


def velocities_at(traj: Trajectory, t_ns) -> np.ndarray:
    """Velocity at arbitrary times, falling back to one-sided differences at the ends."""
    tt = traj.t_ns
    q = np.asarray(t_ns, dtype=np.int64).reshape(-1)
    a, b = _velocity_brackets(tt, q, 0)
    a = np.clip(a, 0, len(tt) - 2)
    b = np.clip(b, a + 1, len(tt) - 1)
    return _diff(traj, a, b)


@dataclass(frozen=True)
class EvaluationPose:
    id: int
    target: Pose
    position_tolerance_mm: float
    heading_tolerance_deg: Optional[float] = None
    required_static: bool = False
    static_speed_threshold_mm_s: Optional[float] = None

    def __post_init__(self):
        if not self.position_tolerance_mm > 0:
            raise ParameterError(f"eval pose {self.id}: position tolerance must be > 0")
        if self.heading_tolerance_deg is not None:
            if not self.heading_tolerance_deg > 0:
                raise ParameterError(f"eval pose {self.id}: heading tolerance must be > 0")
            if self.target.yaw_deg is None:
                raise ParameterError(f"eval pose {self.id}: heading tolerance without target heading")
        if self.required_static and not (self.static_speed_threshold_mm_s or 0) > 0:
            raise ParameterError(f"eval pose {self.id}: required_static needs a positive speed threshold")


@dataclass(frozen=True)
class Visit:
    eval_pose_id: int
    visit_index: int
    gt_time: int
    gt_pose_at_visit: Pose
    gt_speed_mm_s: float
    distance_mm: float = 0.0


@dataclass(frozen=True)
class MatchedSample:
    """LTS sample nearest in time to a visit.

    ``gt_pose`` is the ground truth interpolated at the LTS sample's own
    timestamp, which is the reference the pose errors are computed against.
    """

    visit: Visit
    lts_pose: Pose
    time_gap_s: float
    gt_pose: Optional[Pose] = None

    @property
    def reference(self) -> Pose:
        return self.gt_pose if self.gt_pose is not None else self.visit.gt_pose_at_visit


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """[start, stop) index pairs of True runs."""
    if not mask.any():
        return []
    m = np.concatenate([[False], mask, [False]]).astype(np.int8)
    d = np.diff(m)
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def find_visits(gt: Trajectory, eval_poses: Sequence[EvaluationPose]) -> list[Visit]:
    """Detect each pass of the ground truth through every evaluation pose's tolerance region.

    Nodes and the closest-approach point of each segment between nodes are
    scanned in order; each maximal run inside tolerance is one visit, placed at
    its minimum position distance.
    """
    if len(gt) < 2:
        raise ParameterError("ground truth needs at least 2 samples")
    t = gt.t_ns
    speeds = np.linalg.norm(node_velocities(gt), axis=1)
    found: list[tuple[int, int, float]] = []  # (time, pose id, distance)

    for ep in eval_poses:
        use_z = gt.has_vertical and ep.target.z is not None
        dims = 3 if use_z else 2
        target = np.array([ep.target.x, ep.target.y, ep.target.z if use_z else 0.0])[:dims]
        P = gt.xyz[:, :dims]
        d_node = np.linalg.norm(P - target, axis=1)
        A, AB = P[:-1], P[1:] - P[:-1]
        ab2 = np.einsum("ij,ij->i", AB, AB)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(ab2 > 0, np.einsum("ij,ij->i", target - A, AB) / ab2, 0.0)
        u = np.clip(u, 0.0, 1.0)
        d_seg = np.linalg.norm(A + u[:, None] * AB - target, axis=1)

        ok_node = d_node <= ep.position_tolerance_mm
        ok_seg = d_seg <= ep.position_tolerance_mm
        if ep.heading_tolerance_deg is not None:
            if gt.yaw_deg is None:
                raise ParameterError("heading tolerance requires ground truth heading")
            y = gt.yaw_deg
            y_seg = wrap_deg(y[:-1] + u * signed_angle_diff(y[1:], y[:-1]))
            ok_node &= np.abs(signed_angle_diff(y, ep.target.yaw_deg)) <= ep.heading_tolerance_deg
            ok_seg &= np.abs(signed_angle_diff(y_seg, ep.target.yaw_deg)) <= ep.heading_tolerance_deg

        # interleave: node0, seg0, node1, seg1, ..., node_{n-1}
        n = len(t)
        inside = np.empty(2 * n - 1, dtype=bool)
        inside[0::2] = ok_node
        inside[1::2] = ok_seg
        dist = np.empty(2 * n - 1)
        dist[0::2] = d_node
        dist[1::2] = d_seg
        times = np.empty(2 * n - 1)
        times[0::2] = 0.0
        times[1::2] = u * (t[1:] - t[:-1]).astype(float)

        for start, stop in _runs(inside):
            k = np.arange(start, stop)
            if ep.required_static:
                nodes = k[k % 2 == 0]
                nodes = nodes[speeds[nodes // 2] <= ep.static_speed_threshold_mm_s]
                if len(nodes) == 0:
                    continue
                best = nodes[np.argmin(dist[nodes])]
                t_best = int(t[best // 2])
            else:
                best = k[np.argmin(dist[k])]
                node = best // 2
                t_best = int(t[node]) if best % 2 == 0 else int(t[node]) + int(round(times[best]))
            found.append((t_best, ep.id, float(dist[best])))

    found.sort(key=lambda r: (r[0], r[1]))
    if not found:
        return []
    vt = np.array([f[0] for f in found], dtype=np.int64)
    poses = interpolate(gt, vt)
    v_speed = np.linalg.norm(velocities_at(gt, vt), axis=1)
    node_hit = np.searchsorted(t, vt)
    on_node = (node_hit < len(t)) & (t[np.minimum(node_hit, len(t) - 1)] == vt)
    v_speed[on_node] = speeds[node_hit[on_node]]
    counters: dict[int, int] = {}
    visits = []
    for k, (tv, pid, d) in enumerate(found):
        idx = counters.get(pid, 0)
        counters[pid] = idx + 1
        visits.append(Visit(pid, idx, tv, poses[k], float(v_speed[k]), d))
    return visits


def nearest_indices(t: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Index of the nearest time in sorted ``t`` for each ``q``; ties go to the earlier sample."""
    hi = np.clip(np.searchsorted(t, q, side="left"), 0, len(t) - 1)
    lo = np.clip(hi - 1, 0, len(t) - 1)
    pick_lo = np.abs(q - t[lo]) <= np.abs(t[hi] - q)
    return np.where(pick_lo, lo, hi)


def match_lts(
    lts: Trajectory,
    visits: Sequence[Visit],
    max_match_gap_s: float,
    gt: Trajectory | None = None,
) -> tuple[list[MatchedSample], list[tuple[int, int]]]:
    """Pair each visit with the LTS sample nearest in time.

    Returns ``(matched, missed)`` where ``missed`` lists ``(eval_pose_id,
    visit_index)`` for visits whose nearest sample is further than
    ``max_match_gap_s``. With ``gt`` given, each match also carries the ground
    truth interpolated at the LTS timestamp.
    """
    if not max_match_gap_s > 0:
        raise ParameterError("max_match_gap_s must be > 0")
    if len(lts) == 0:
        return [], [(v.eval_pose_id, v.visit_index) for v in visits]
    q = np.array([v.gt_time for v in visits], dtype=np.int64)
    idx = nearest_indices(lts.t_ns, q) if len(q) else np.array([], dtype=int)
    gap_s = np.abs(lts.t_ns[idx] - q) / NS_PER_S
    ok = gap_s <= max_match_gap_s
    gt_ref = None
    if gt is not None and ok.any():
        lt = np.clip(lts.t_ns[idx[ok]], gt.t_ns[0], gt.t_ns[-1])
        gt_ref = iter(interpolate(gt, lt).samples)
    matched, missed = [], []
    for v, i, g, good in zip(visits, idx, gap_s, ok):
        if good:
            matched.append(MatchedSample(v, lts[int(i)], float(g), next(gt_ref) if gt_ref else None))
        else:
            missed.append((v.eval_pose_id, v.visit_index))
    return matched, missed


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(traj: Trajectory, path: str | Path) -> None:
    from .io import atomic_write_text

    lines = [",".join(CSV_HEADER)]
    for i in range(len(traj)):
        row = [str(int(traj.t_ns[i])), _fmt(traj.xyz[i, 0]), _fmt(traj.xyz[i, 1])]
        row.append(_fmt(traj.xyz[i, 2]) if traj.has_vertical else "")
        row.append(_fmt(traj.yaw_deg[i]) if traj.yaw_deg is not None else "")
        row.extend(_fmt(v) for v in traj.quat[i]) if traj.quat is not None else row.extend([""] * 4)
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str | Path, source: Source = Source.LTS) -> Trajectory:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            from .errors import SchemaError

            raise SchemaError(f"{path}: expected header {','.join(CSV_HEADER)}")
        rows = [r for r in reader if r]
    if not rows:
        return Trajectory([], np.empty((0, 3)), source=source)
    cols = list(zip(*rows))

    def present(c):
        return all(v != "" for v in cols[c])

    t = np.array([int(v) for v in cols[0]], dtype=np.int64)
    has_z = present(3)
    xyz = np.column_stack(
        [
            np.array(cols[1], dtype=float),
            np.array(cols[2], dtype=float),
            np.array(cols[3], dtype=float) if has_z else np.full(len(t), np.nan),
        ]
    )
    yaw = np.array(cols[4], dtype=float) if present(4) else None
    quat = np.column_stack([np.array(cols[c], dtype=float) for c in range(5, 9)]) if all(present(c) for c in range(5, 9)) else None
    return Trajectory(t, xyz, yaw, quat, source=source, has_vertical=has_z)
