"""Synthetic experiment execution: noise-free GT and a simulated LTS stream."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .alignment import RigidTransform
from .errors import DegeneratePathError, NoEmittableSamplesError, ParameterError, SchemaError
from .io import dump_yaml, read_yaml, write_yaml
from .scenario import (
    STATIC_KINDS,
    TestCase,
    arc_length,
    dedupe,
    path_headings,
    testcase_from_dict,
    testcase_to_dict,
    validate_test_case,
)
from .trajectory import NS_PER_S, Source, Trajectory, node_velocities, read_csv, wrap_deg, write_csv

_U_EPS = 2.0**-53


@dataclass(frozen=True)
class ErrorModel:
    """Parameterised LTS error model.

    Applied in a fixed order per emission: delay, frame error, bias, noise,
    clock stamp.
    """

    noise_sigma_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bias_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    frame_error: RigidTransform = field(default_factory=RigidTransform)
    latency_s: float = 0.0
    update_rate_hz: float = 10.0
    dropout_prob: float = 0.0
    heading_noise_sigma_deg: float = 0.0
    provides_vertical: bool = False
    provides_heading: bool = True
    clock_offset_s: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noise_sigma_mm", tuple(float(v) for v in self.noise_sigma_mm))
        object.__setattr__(self, "bias_mm", tuple(float(v) for v in self.bias_mm))
        if len(self.noise_sigma_mm) != 3 or len(self.bias_mm) != 3:
            raise ParameterError("noise_sigma_mm and bias_mm must be 3-vectors")
        if any(s < 0 for s in self.noise_sigma_mm) or self.heading_noise_sigma_deg < 0:
            raise ParameterError("noise sigmas must be >= 0")
        if not self.update_rate_hz > 0:
            raise ParameterError("update_rate_hz must be > 0")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ParameterError("dropout_prob must lie in [0, 1]")
        if self.latency_s < 0:
            raise ParameterError("latency_s must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise_sigma_mm"] = list(self.noise_sigma_mm)
        d["bias_mm"] = list(self.bias_mm)
        d["frame_error"] = self.frame_error.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorModel":
        if not isinstance(d, dict):
            raise SchemaError("error model must be a mapping")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown error model keys: {sorted(unknown)}")
        d = dict(d)
        if "frame_error" in d:
            d["frame_error"] = RigidTransform.from_dict(d["frame_error"] or {})
        try:
            return cls(**d)
        except TypeError as exc:
            raise SchemaError(f"invalid error model: {exc}") from exc

    def digest(self) -> str:
        return hashlib.sha256(dump_yaml(self.to_dict()).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class GateEntry:
    eval_pose_id: int
    accepted: bool
    gt_speed_mm_s: float


@dataclass(frozen=True)
class ExperimentData:
    test_case_id: str
    gt: Trajectory
    lts: Trajectory
    static_gate_log: tuple[GateEntry, ...] = ()
    error_model: ErrorModel | None = None

    def __eq__(self, other):
        if not isinstance(other, ExperimentData):
            return NotImplemented
        return (
            self.test_case_id == other.test_case_id
            and self.gt == other.gt
            and self.lts == other.lts
            and self.static_gate_log == other.static_gate_log
            and self.error_model == other.error_model
        )


# -- ground truth ---------------------------------------------------------------


def _static_stops(pts: np.ndarray, s_cum: np.ndarray, tc: TestCase) -> list[float]:
    """Arc-length of the closest approach for each pass through each static pose."""
    A, AB = pts[:-1], np.diff(pts, axis=0)
    ab2 = np.einsum("ij,ij->i", AB, AB)
    stops = []
    for ep in tc.eval_poses:
        if not ep.required_static:
            continue
        p = np.array([ep.target.x, ep.target.y])
        u = np.clip(np.einsum("ij,ij->i", p - A, AB) / ab2, 0.0, 1.0)
        d = np.linalg.norm(A + u[:, None] * AB - p, axis=1)
        inside = d <= ep.position_tolerance_mm
        edges = np.diff(np.concatenate([[0], inside.astype(np.int8), [0]]))
        for a, b in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
            k = a + int(np.argmin(d[a:b]))
            stops.append(float(s_cum[k] + u[k] * math.sqrt(ab2[k])))
    return sorted(set(round(s, 6) for s in stops))


def _rest_to_rest(d: float, v: float, a: float) -> list[tuple[float, float, float]]:
    """Trapezoidal (or triangular) profile phases ``(duration, v0, accel)`` covering distance d."""
    if d <= 0:
        return []
    if d <= v * v / a:
        vp = math.sqrt(a * d)
        ta = vp / a
        return [(ta, 0.0, a), (ta, vp, -a)]
    ta = v / a
    return [(ta, 0.0, a), ((d - v * v / a) / v, v, 0.0), (ta, v, -a)]


def _motion_phases(length: float, stops: list[float], v: float, a: float, dwell: float):
    if not stops:
        return [(length / v, v, 0.0)]
    phases = []
    bounds = [0.0] + [s for s in stops if 0.0 < s < length] + [length]
    stop_set = set(stops)
    if 0.0 in stop_set:
        phases.append((dwell, 0.0, 0.0))
    for k in range(len(bounds) - 1):
        phases.extend(_rest_to_rest(bounds[k + 1] - bounds[k], v, a))
        if bounds[k + 1] in stop_set:
            phases.append((dwell, 0.0, 0.0))
    return phases


def _arc_length_at(phases, t: np.ndarray) -> np.ndarray:
    dur = np.array([p[0] for p in phases])
    v0 = np.array([p[1] for p in phases])
    acc = np.array([p[2] for p in phases])
    t_start = np.concatenate([[0.0], np.cumsum(dur)[:-1]])
    s_start = np.concatenate([[0.0], np.cumsum(v0 * dur + 0.5 * acc * dur**2)[:-1]])
    k = np.clip(np.searchsorted(t_start, t, side="right") - 1, 0, len(phases) - 1)
    tau = np.minimum(t - t_start[k], dur[k])
    return s_start[k] + v0[k] * tau + 0.5 * acc[k] * tau**2


def generate_gt(tc: TestCase, gt_rate_hz: float = 100.0, seed: int = 0) -> Trajectory:
    """Noise-free ground truth traversing the waypoint path.

    Constant nominal speed; with static evaluation poses every leg is
    rest-to-rest with trapezoidal ramps and a dwell at each stop. ``seed`` is
    accepted for interface symmetry; the ground truth has no randomness.
    """
    if gt_rate_hz < 50:
        raise ParameterError("gt_rate_hz must be >= 50")
    has_z = all(p.z is not None for p in tc.waypoints)
    pts = np.array([[p.x, p.y, p.z if has_z else 0.0] for p in tc.waypoints], dtype=float)
    pts = dedupe(pts)
    if len(pts) < 2:
        raise DegeneratePathError("waypoint path has no extent (identical waypoints)")
    s_cum = arc_length(pts)
    c = tc.conditions
    v, a = c.nominal_speed_mm_s, c.acceleration_mm_s2
    stops = _static_stops(pts[:, :2], s_cum, tc)
    phases = _motion_phases(float(s_cum[-1]), stops, v, a, c.dwell_s)
    total = sum(p[0] for p in phases)
    n = int(math.floor(total * gt_rate_hz + 1e-9)) + 1
    t_ns = np.round(np.arange(n) * (NS_PER_S / gt_rate_hz)).astype(np.int64)
    s = np.clip(_arc_length_at(phases, t_ns / NS_PER_S), 0.0, s_cum[-1])
    xyz = np.column_stack([np.interp(s, s_cum, pts[:, k]) for k in range(3)])
    heading = np.unwrap(np.radians(path_headings(pts)))
    yaw = wrap_deg(np.degrees(np.interp(s, s_cum, heading)))
    return Trajectory(t_ns, xyz, yaw_deg=yaw, source=Source.GROUND_TRUTH, has_vertical=True)


# -- LTS simulation -------------------------------------------------------------


def simulate_lts(gt: Trajectory, em: ErrorModel) -> Trajectory:
    """Emit a simulated LTS stream from ground truth under ``em``.

    Per emission the RNG yields five uniforms in fixed order: dropout, noise x,
    y, z, heading. Draws are consumed even for dropped samples, so the stream
    of kept samples is reproducible across platforms for a given seed.
    """
    if len(gt) < 2:
        raise ParameterError("ground truth needs at least 2 samples")
    latency_ns = int(round(em.latency_s * NS_PER_S))
    t0, t1 = int(gt.t_ns[0]), int(gt.t_ns[-1])
    if latency_ns >= t1 - t0:
        raise NoEmittableSamplesError(f"latency {em.latency_s} s >= ground truth duration {gt.duration_s} s")
    period_ns = NS_PER_S / em.update_rate_hz
    n = int(math.floor((t1 - t0 - latency_ns) / period_ns + 1e-9)) + 1
    content_t = t0 + np.round(np.arange(n) * period_ns).astype(np.int64)
    content_t = content_t[content_t <= t1 - latency_ns]
    n = len(content_t)

    from .alignment import apply_transform
    from .trajectory import interpolate

    truth = interpolate(gt, content_t)
    if em.frame_error != RigidTransform(mode=em.frame_error.mode):
        truth = apply_transform(truth, em.frame_error)
    xyz = np.array(truth.xyz)
    xyz += np.asarray(em.bias_mm)

    rng = np.random.default_rng(em.seed)
    u = rng.random((n, 5))
    normals = ndtri(np.clip(u[:, 1:], _U_EPS, 1.0 - _U_EPS))
    xyz += normals[:, :3] * np.asarray(em.noise_sigma_mm)
    keep = u[:, 0] >= em.dropout_prob if em.dropout_prob > 0 else np.ones(n, dtype=bool)

    yaw = None
    if em.provides_heading and truth.yaw_deg is not None:
        yaw = wrap_deg(truth.yaw_deg + normals[:, 3] * em.heading_noise_sigma_deg)
    has_z = em.provides_vertical and gt.has_vertical
    stamps = content_t + latency_ns + int(round(em.clock_offset_s * NS_PER_S))
    return Trajectory(
        stamps[keep],
        xyz[keep],
        yaw_deg=yaw[keep] if yaw is not None else None,
        source=Source.LTS,
        has_vertical=has_z,
    )


def static_gate_log(gt: Trajectory, tc: TestCase) -> tuple[GateEntry, ...]:
    """Whether GT undershot each static pose's speed threshold inside its tolerance region."""
    speeds = np.linalg.norm(node_velocities(gt), axis=1)
    out = []
    for ep in tc.eval_poses:
        if not ep.required_static:
            continue
        d = np.linalg.norm(gt.xyz[:, :2] - [ep.target.x, ep.target.y], axis=1)
        inside = d <= ep.position_tolerance_mm
        v = float(speeds[inside].min()) if inside.any() else float("inf")
        accepted = bool(inside.any() and v <= ep.static_speed_threshold_mm_s)
        out.append(GateEntry(ep.id, accepted, v if math.isfinite(v) else -1.0))
    return tuple(out)


def run_experiment(tc: TestCase, em: ErrorModel, gt_rate_hz: float = 100.0) -> ExperimentData:
    report = validate_test_case(tc)
    if report.errors:
        raise ParameterError("test case invalid: " + "; ".join(report.errors))
    gt = generate_gt(tc, gt_rate_hz, em.seed)
    lts = simulate_lts(gt, em)
    gates = static_gate_log(gt, tc) if tc.scenario_kind in STATIC_KINDS else ()
    return ExperimentData(tc.id, gt, lts, gates, em)


# -- persistence ----------------------------------------------------------------

EXPERIMENT_FILE = "experiment.yaml"


def save_experiment(data: ExperimentData, tc: TestCase, out_dir: str | Path) -> Path:
    """Write gt.csv, lts.csv, testcase.yaml and the experiment.yaml manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(data.gt, out / "gt.csv")
    write_csv(data.lts, out / "lts.csv")
    write_yaml(out / "testcase.yaml", testcase_to_dict(tc))
    manifest = {
        "test_case_id": data.test_case_id,
        "test_case_file": "testcase.yaml",
        "gt_file": "gt.csv",
        "lts_file": "lts.csv",
        "error_model": data.error_model.to_dict() if data.error_model else None,
        "static_gate_log": [
            {"eval_pose_id": g.eval_pose_id, "accepted": g.accepted, "gt_speed_mm_s": g.gt_speed_mm_s}
            for g in data.static_gate_log
        ],
    }
    write_yaml(out / EXPERIMENT_FILE, manifest)
    return out / EXPERIMENT_FILE


def load_experiment(path: str | Path) -> tuple[ExperimentData, TestCase]:
    path = Path(path)
    if path.is_dir():
        path = path / EXPERIMENT_FILE
    doc = read_yaml(path)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: experiment manifest must be a mapping")
    base = path.parent
    try:
        tc = testcase_from_dict(read_yaml(base / doc["test_case_file"]))
        gt = read_csv(base / doc["gt_file"], Source.GROUND_TRUTH)
        lts = read_csv(base / doc["lts_file"], Source.LTS)
        gates = tuple(GateEntry(int(g["eval_pose_id"]), bool(g["accepted"]), float(g["gt_speed_mm_s"])) for g in doc.get("static_gate_log") or [])
    except KeyError as exc:
        raise SchemaError(f"{path}: missing key {exc}") from exc
    em = ErrorModel.from_dict(doc["error_model"]) if doc.get("error_model") else None
    return ExperimentData(str(doc["test_case_id"]), gt, lts, gates, em), tc
