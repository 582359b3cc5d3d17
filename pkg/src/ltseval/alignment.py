"""Rigid LTS-to-GT frame alignment and clock-offset estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateGeometryError, ParameterError, SchemaError, UnobservableOffsetError
from .trajectory import (
    NS_PER_S,
    Trajectory,
    node_velocities,
    quat_multiply,
    quat_yaw_deg,
    wrap_deg,
    yaw_quat,
)

RANK_TOL = 1e-9


class AlignMode(str, Enum):
    PLANAR_2D = "Planar2D"
    SPATIAL_3D = "Spatial3D"


def _quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    # Shepperd's method: branch on the largest diagonal term for stability
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


@dataclass(frozen=True)
class RigidTransform:
    """Proper rotation plus translation, ``p -> R p + t`` (no scale).

    Planar transforms carry ``yaw_deg`` and leave z untouched; spatial ones carry
    a unit ``quat`` (w, x, y, z).
    """

    mode: AlignMode = AlignMode.PLANAR_2D
    yaw_deg: float = 0.0
    quat: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "mode", AlignMode(self.mode))
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "quat", tuple(float(v) for v in self.quat))
        if abs(np.linalg.norm(self.quat) - 1.0) > 1e-9:
            raise ParameterError("rotation quaternion must have unit norm")
        if self.mode is AlignMode.PLANAR_2D and self.translation[2] != 0.0:
            raise ParameterError("planar transforms have no vertical translation")

    @classmethod
    def identity(cls, mode: AlignMode = AlignMode.PLANAR_2D) -> "RigidTransform":
        return cls(mode=mode)

    @classmethod
    def planar(cls, yaw_deg: float, tx: float, ty: float) -> "RigidTransform":
        return cls(AlignMode.PLANAR_2D, yaw_deg=float(yaw_deg), translation=(tx, ty, 0.0))

    @classmethod
    def from_matrix(cls, R: np.ndarray, t, mode: AlignMode) -> "RigidTransform":
        t = np.asarray(t, dtype=float)
        if AlignMode(mode) is AlignMode.PLANAR_2D:
            yaw = math.degrees(math.atan2(R[1, 0], R[0, 0]))
            return cls.planar(yaw, t[0], t[1])
        return cls(AlignMode.SPATIAL_3D, quat=tuple(_matrix_to_quat(R)), translation=tuple(t))

    @property
    def matrix(self) -> np.ndarray:
        """3x3 rotation matrix."""
        if self.mode is AlignMode.PLANAR_2D:
            c, s = math.cos(math.radians(self.yaw_deg)), math.sin(math.radians(self.yaw_deg))
            return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return _quat_to_matrix(self.quat)

    @property
    def rotation_quat(self) -> np.ndarray:
        if self.mode is AlignMode.PLANAR_2D:
            return yaw_quat(self.yaw_deg)
        return np.array(self.quat)

    @property
    def rotation_deg(self) -> float:
        """Total rotation angle (degrees)."""
        if self.mode is AlignMode.PLANAR_2D:
            return abs(((self.yaw_deg + 180.0) % 360.0) - 180.0)
        return math.degrees(2.0 * math.acos(min(1.0, abs(self.quat[0]))))

    def apply_points(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=float)
        R = self.matrix
        if P.shape[-1] == 2:
            return P @ R[:2, :2].T + np.asarray(self.translation[:2])
        out = P @ R.T + np.asarray(self.translation)
        if self.mode is AlignMode.PLANAR_2D:
            out[..., 2] = P[..., 2]
        return out

    def inverse(self) -> "RigidTransform":
        R = self.matrix
        t = -R.T @ np.asarray(self.translation)
        if self.mode is AlignMode.PLANAR_2D:
            return RigidTransform.planar(-self.yaw_deg, t[0], t[1])
        w, x, y, z = self.quat
        return RigidTransform(AlignMode.SPATIAL_3D, quat=(w, -x, -y, -z), translation=tuple(t))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        R = self.matrix @ other.matrix
        t = self.matrix @ np.asarray(other.translation) + np.asarray(self.translation)
        if self.mode is AlignMode.PLANAR_2D and other.mode is AlignMode.PLANAR_2D:
            return RigidTransform.planar(self.yaw_deg + other.yaw_deg, t[0], t[1])
        return RigidTransform.from_matrix(R, t, AlignMode.SPATIAL_3D)

    def to_dict(self) -> dict:
        d = {"mode": self.mode.value}
        if self.mode is AlignMode.PLANAR_2D:
            d["yaw_deg"] = self.yaw_deg
        else:
            d["quat_wxyz"] = list(self.quat)
        d["translation_mm"] = list(self.translation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        try:
            mode = AlignMode(d.get("mode", AlignMode.PLANAR_2D.value))
            t = d.get("translation_mm", [0.0, 0.0, 0.0])
            t = list(t) + [0.0] * (3 - len(t))
            if mode is AlignMode.PLANAR_2D:
                return cls.planar(float(d.get("yaw_deg", 0.0)), t[0], t[1])
            return cls(mode, quat=tuple(d.get("quat_wxyz", (1.0, 0.0, 0.0, 0.0))), translation=tuple(t))
        except (TypeError, ValueError, AttributeError) as exc:
            raise SchemaError(f"invalid rigid transform {d!r}: {exc}") from exc


@dataclass(frozen=True)
class AlignmentReport:
    transform: RigidTransform
    rms_residual_mm: float
    n_pairs: int
    per_pair_residuals_mm: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "rms_residual_mm": self.rms_residual_mm,
            "n_pairs": self.n_pairs,
            "per_pair_residuals_mm": list(self.per_pair_residuals_mm),
        }


def align_rigid(pairs, mode: AlignMode = AlignMode.PLANAR_2D) -> AlignmentReport:
    """Least-squares rotation + translation mapping LTS positions onto GT positions.

    ``pairs`` is a sequence of ``(lts_position, gt_position)``; positions may
    be 2- or 3-vectors (planar mode uses x, y only). Closed-form SVD of the
    cross-covariance with a determinant correction against reflections.
    """
    mode = AlignMode(mode)
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 3 or arr.shape[1] != 2 or arr.shape[2] not in (2, 3):
        raise ParameterError("pairs must have shape (n, 2, 2|3)")
    dims = 2 if mode is AlignMode.PLANAR_2D else 3
    if mode is AlignMode.SPATIAL_3D and arr.shape[2] != 3:
        raise ParameterError("Spatial3D alignment needs 3-D positions")
    src, dst = arr[:, 0, :dims], arr[:, 1, :dims]
    n = len(src)
    need = 2 if dims == 2 else 3
    if n < need:
        raise DegenerateGeometryError(f"{mode.value} alignment needs at least {need} pairs, got {n}")

    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    A, B = src - mu_s, dst - mu_d
    want_rank = dims - 1
    for name, M in (("LTS", A), ("GT", B)):
        sv = np.linalg.svd(M, compute_uv=False)
        scale = max(sv[0], 1.0)
        rank = int(np.sum(sv > RANK_TOL * scale))
        if rank < want_rank:
            what = "all points coincident" if rank == 0 else "points collinear"
            raise DegenerateGeometryError(f"{name} point set has rank {rank} < {want_rank} ({what})")

    H = A.T @ B
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(dims)
    D[-1, -1] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    t = mu_d - R @ mu_s

    res = np.linalg.norm(src @ R.T + t - dst, axis=1)
    if dims == 2:
        R3 = np.eye(3)
        R3[:2, :2] = R
        xf = RigidTransform.from_matrix(R3, [t[0], t[1], 0.0], mode)
    else:
        xf = RigidTransform.from_matrix(R, t, mode)
    return AlignmentReport(xf, float(np.sqrt(np.mean(res**2))), n, tuple(float(r) for r in res))


def apply_transform(traj: Trajectory, xf: RigidTransform) -> Trajectory:
    """Map positions by ``R p + t`` and rotate headings/attitudes by ``R``."""
    xyz = np.array(traj.xyz)
    if xf.mode is AlignMode.PLANAR_2D or not traj.has_vertical:
        xyz[:, :2] = xf.apply_points(xyz[:, :2])
        if xf.mode is AlignMode.SPATIAL_3D and traj.has_vertical:
            xyz[:, 2] += xf.translation[2]
    else:
        xyz = xf.apply_points(xyz)
    yaw, quat = traj.yaw_deg, traj.quat
    if quat is not None:
        quat = quat_multiply(xf.rotation_quat, quat)
        quat /= np.linalg.norm(quat, axis=1, keepdims=True)
        if yaw is not None:
            yaw = quat_yaw_deg(quat)
    elif yaw is not None:
        if xf.mode is AlignMode.PLANAR_2D:
            yaw = wrap_deg(yaw + xf.yaw_deg)
        else:
            h = np.radians(yaw)
            heading = np.column_stack([np.cos(h), np.sin(h), np.zeros_like(h)]) @ xf.matrix.T
            yaw = wrap_deg(np.degrees(np.arctan2(heading[:, 1], heading[:, 0])))
    return traj.replace(xyz=xyz, yaw_deg=yaw, quat=quat)


class TimeOffsetEstimate(NamedTuple):
    offset_s: float
    residual_curve: list[tuple[float, float]]


def _dynamic_fraction(traj: Trajectory, speed_threshold_mm_s: float) -> float:
    if len(traj) < 2:
        return 0.0
    speed = np.linalg.norm(node_velocities(traj)[:, :2], axis=1)
    return float(np.mean(speed > speed_threshold_mm_s))


def estimate_time_offset(
    gt: Trajectory,
    lts: Trajectory,
    search_window_s: float,
    step_s: float = 0.001,
    speed_threshold_mm_s: float = 100.0,
    min_dynamic_fraction: float = 0.2,
    flatness_floor_mm: float = 1.0,
) -> TimeOffsetEstimate:
    """Clock offset of the LTS stream relative to GT.

    Grid search over ``[-search_window_s, +search_window_s]`` for the shift
    minimising mean horizontal error between GT and the re-stamped LTS, then a
    parabola through the grid minimum and its neighbours. Positive offset means
    the LTS timestamps lag GT.
    """
    if not search_window_s > 0 or not step_s > 0:
        raise ParameterError("search_window_s and step_s must be > 0")
    if len(gt) < 2 or len(lts) < 2:
        raise UnobservableOffsetError("need at least 2 samples in both streams")
    for name, tr in (("GT", gt), ("LTS", lts)):
        frac = _dynamic_fraction(tr, speed_threshold_mm_s)
        if frac < min_dynamic_fraction:
            raise UnobservableOffsetError(
                f"{name} moves faster than {speed_threshold_mm_s:g} mm/s for only {frac:.0%} of samples "
                f"(need {min_dynamic_fraction:.0%})"
            )

    t0 = gt.t_ns[0]
    g_t = (gt.t_ns - t0) / NS_PER_S
    l_t = (lts.t_ns - t0) / NS_PER_S
    gx, gy = gt.xyz[:, 0], gt.xyz[:, 1]
    lx, ly = lts.xyz[:, 0], lts.xyz[:, 1]
    k = int(round(search_window_s / step_s))
    offsets = np.arange(-k, k + 1) * step_s
    min_valid = max(2, len(lts) // 4)
    curve = np.full(len(offsets), np.inf)
    for j, off in enumerate(offsets):
        tc = l_t - off
        ok = (tc >= g_t[0]) & (tc <= g_t[-1])
        if ok.sum() < min_valid:
            continue
        ex = np.interp(tc[ok], g_t, gx) - lx[ok]
        ey = np.interp(tc[ok], g_t, gy) - ly[ok]
        curve[j] = np.mean(np.hypot(ex, ey))

    finite = np.isfinite(curve)
    if finite.sum() < 3:
        raise UnobservableOffsetError("streams do not overlap within the search window")
    if curve[finite].max() - curve[finite].min() < flatness_floor_mm:
        raise UnobservableOffsetError(
            f"objective is flat (range {curve[finite].max() - curve[finite].min():.3g} mm < {flatness_floor_mm:g} mm)"
        )
    i = int(np.argmin(np.where(finite, curve, np.inf)))
    best = offsets[i]
    if 0 < i < len(offsets) - 1 and np.isfinite(curve[i - 1]) and np.isfinite(curve[i + 1]):
        ym, y0, yp = curve[i - 1], curve[i], curve[i + 1]
        denom = ym - 2.0 * y0 + yp
        if denom > 0:
            best += step_s * 0.5 * (ym - yp) / denom
    pts = [(float(o), float(c)) for o, c in zip(offsets, curve) if np.isfinite(c)]
    return TimeOffsetEstimate(float(best), pts)
