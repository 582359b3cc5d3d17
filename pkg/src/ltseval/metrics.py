"""Performance evaluation: pose errors, quantiles and the full metric report.

Signed errors are always LTS minus GT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .alignment import estimate_time_offset
from .errors import (
    EmptyResultsError,
    InsufficientDataError,
    ParameterError,
    SchemaError,
    Unavailable,
    UnobservableOffsetError,
)
from .scenario import TestCase
from .testbed import ExperimentData
from .trajectory import (
    NS_PER_S,
    MatchedSample,
    Trajectory,
    find_visits,
    interpolate,
    match_lts,
    signed_angle_diff,
    velocities_at,
)

DEFAULT_QUANTILES = (0.5, 0.95, 0.999, 0.9999)
_EPS = 1e-9

Value = Union[float, Unavailable]


@dataclass(frozen=True)
class ErrorSamples:
    """Per-sample errors, column-wise. Optional columns are None when not provided."""

    t_ns: np.ndarray
    eval_pose_id: np.ndarray
    visit_index: np.ndarray
    ex: np.ndarray
    ey: np.ndarray
    horizontal: np.ndarray
    gt_speed: np.ndarray
    ez: Optional[np.ndarray] = None
    vertical: Optional[np.ndarray] = None
    orientation_signed: Optional[np.ndarray] = None
    orientation_abs: Optional[np.ndarray] = None
    gt_yaw: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.t_ns)

    def by_pose(self) -> dict[int, np.ndarray]:
        """Row indices grouped by evaluation pose id."""
        out: dict[int, list[int]] = {}
        for i, pid in enumerate(self.eval_pose_id.tolist()):
            out.setdefault(int(pid), []).append(i)
        return {k: np.array(v) for k, v in out.items()}


def _errors(t_ns, ids, vidx, lts: Trajectory, ref: Trajectory, gt_speed) -> ErrorSamples:
    d = lts.xyz - ref.xyz
    ez = vert = None
    if lts.has_vertical and ref.has_vertical:
        ez = d[:, 2]
        vert = np.abs(ez)
    o_s = o_a = None
    if lts.yaw_deg is not None and ref.yaw_deg is not None:
        o_s = np.asarray(signed_angle_diff(lts.yaw_deg, ref.yaw_deg), dtype=float).reshape(-1)
        o_a = np.abs(o_s)
    return ErrorSamples(
        t_ns=np.asarray(t_ns, dtype=np.int64),
        eval_pose_id=np.asarray(ids, dtype=np.int64),
        visit_index=np.asarray(vidx, dtype=np.int64),
        ex=d[:, 0],
        ey=d[:, 1],
        horizontal=np.hypot(d[:, 0], d[:, 1]),
        gt_speed=np.asarray(gt_speed, dtype=float),
        ez=ez,
        vertical=vert,
        orientation_signed=o_s,
        orientation_abs=o_a,
        gt_yaw=ref.yaw_deg,
    )


def compute_pose_errors(matched: Sequence[MatchedSample]) -> ErrorSamples:
    """Errors of each matched LTS sample against its GT reference pose."""
    if not matched:
        raise ParameterError("no matched samples")
    # one LTS sample may match several visits, so rows can repeat timestamps
    return _errors(
        [m.lts_pose.t for m in matched],
        [m.visit.eval_pose_id for m in matched],
        [m.visit.visit_index for m in matched],
        _stack([m.lts_pose for m in matched]),
        _stack([m.reference for m in matched]),
        [m.visit.gt_speed_mm_s for m in matched],
    )


class _Rows:
    """Minimal trajectory-like column view that tolerates repeated timestamps."""

    def __init__(self, xyz, yaw, has_vertical):
        self.xyz, self.yaw_deg, self.has_vertical = xyz, yaw, has_vertical


def _stack(poses) -> _Rows:
    has_z = all(p.z is not None for p in poses)
    has_yaw = all(p.yaw_deg is not None for p in poses)
    xyz = np.array([[p.x, p.y, p.z if has_z else np.nan] for p in poses], dtype=float)
    yaw = np.array([p.yaw_deg for p in poses], dtype=float) if has_yaw else None
    return _Rows(xyz, yaw, has_z)


def stream_errors(gt: Trajectory, lts: Trajectory) -> ErrorSamples:
    """Errors of every LTS sample against GT interpolated at the sample's timestamp."""
    ok = (lts.t_ns >= gt.t_ns[0]) & (lts.t_ns <= gt.t_ns[-1]) if len(lts) else np.zeros(0, dtype=bool)
    t = lts.t_ns[ok]
    if len(t) == 0:
        raise InsufficientDataError("no LTS samples inside the ground-truth time range")
    sub = lts.replace(t_ns=t, xyz=lts.xyz[ok], yaw_deg=lts.yaw_deg[ok] if lts.yaw_deg is not None else None, quat=None)
    ref = interpolate(gt, t)
    speed = np.linalg.norm(velocities_at(gt, t), axis=1)
    return _errors(t, np.full(len(t), -1), np.zeros(len(t)), sub, ref, speed)


# -- statistics -------------------------------------------------------------------


def required_samples(q: float) -> int:
    # 1/(1-q) carries float noise (0.9999 -> 10000.0000000008), hence the slack
    return int(math.ceil(1.0 / (1.0 - q) - 1e-6))


def quantile(samples, q: float) -> Value:
    """Nearest-rank empirical quantile: the ceil(q*n)-th smallest sample.

    Returns ``InsufficientSamples`` when fewer than 1/(1-q) samples exist, so
    a tail quantile is only ever reported if such a sample was observed.
    """
    if not 0.0 < q < 1.0:
        raise ParameterError(f"quantile level {q!r} outside (0, 1)")
    x = np.asarray(samples, dtype=float).reshape(-1)
    if len(x) == 0:
        raise ParameterError("quantile of an empty sample")
    if len(x) < required_samples(q):
        return Unavailable.INSUFFICIENT_SAMPLES
    rank = max(1, int(math.ceil(q * len(x) - _EPS * max(1, len(x)))))
    return float(np.partition(x, rank - 1)[rank - 1])


def quantile_label(q: float) -> str:
    return f"Q{round(q * 100.0, 6):g}"


def parse_quantile_label(label: str) -> float:
    if not isinstance(label, str) or not label.startswith("Q"):
        raise SchemaError(f"bad quantile label {label!r}")
    return round(float(label[1:]) / 100.0, 8)


@dataclass(frozen=True)
class MetricStats:
    mean: float
    std: float
    sample_count: int
    quantiles: dict = field(default_factory=dict)  # level -> value | Unavailable

    @classmethod
    def of(cls, x, quantiles: Sequence[float] = ()) -> "MetricStats":
        x = np.asarray(x, dtype=float)
        std = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
        return cls(float(np.mean(x)), std, len(x), {float(q): quantile(x, q) for q in quantiles})

    def quantile_at(self, q: float) -> Value | None:
        for level, v in self.quantiles.items():
            if abs(level - q) < 1e-9:
                return v
        return None

    def to_dict(self) -> dict:
        d = {"mean": self.mean, "std": self.std, "sample_count": self.sample_count}
        if self.quantiles:
            d["quantiles"] = {quantile_label(q): (v.value if isinstance(v, Unavailable) else v) for q, v in self.quantiles.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricStats":
        try:
            qs = {}
            for label, v in (d.get("quantiles") or {}).items():
                qs[parse_quantile_label(label)] = Unavailable(v) if isinstance(v, str) else float(v)
            return cls(float(d["mean"]), float(d["std"]), int(d["sample_count"]), qs)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"invalid metric block {d!r}: {exc}") from exc


# -- scalar metrics -----------------------------------------------------------------


def estimate_latency(gt: Trajectory, lts: Trajectory, speed_threshold_mm_s: float) -> Value:
    """Mean along-track lag of the LTS behind GT divided by GT speed, in ms.

    Only LTS samples where the GT moves faster than the threshold count.
    Positive means the LTS lags.
    """
    if len(gt) < 2 or len(lts) == 0:
        return Unavailable.INSUFFICIENT_DYNAMIC_SAMPLES
    ok = (lts.t_ns >= gt.t_ns[0]) & (lts.t_ns <= gt.t_ns[-1])
    if not ok.any():
        raise ParameterError("trajectories do not overlap in time")
    t = lts.t_ns[ok]
    vel = velocities_at(gt, t)[:, :2]
    speed = np.linalg.norm(vel, axis=1)
    fast = speed > speed_threshold_mm_s
    if not fast.any():
        return Unavailable.INSUFFICIENT_DYNAMIC_SAMPLES
    offset = interpolate(gt, t[fast]).xyz[:, :2] - lts.xyz[ok][fast][:, :2]
    along = np.einsum("ij,ij->i", offset, vel[fast]) / speed[fast]
    return float(np.mean(along / speed[fast]) * 1000.0)


class UpdateRate(NamedTuple):
    rate_hz: float
    max_gap_s: float


def compute_update_rate(lts: Trajectory) -> UpdateRate:
    """(n - 1) / (t_last - t_first), plus the largest inter-sample gap."""
    if len(lts) < 2:
        raise InsufficientDataError("update rate needs at least 2 LTS samples")
    span = (lts.t_ns[-1] - lts.t_ns[0]) / NS_PER_S
    return UpdateRate((len(lts) - 1) / span, float(np.max(np.diff(lts.t_ns)) / NS_PER_S))


@dataclass(frozen=True)
class Repeatability:
    aggregate_mm: float
    per_pose_mm: dict
    excluded_pose_count: int

    def to_dict(self) -> dict:
        return {
            "aggregate_mm": self.aggregate_mm,
            "per_pose_mm": {int(k): v for k, v in sorted(self.per_pose_mm.items())},
            "excluded_pose_count": self.excluded_pose_count,
        }


def compute_repeatability(samples: ErrorSamples) -> Repeatability | Unavailable:
    """Spread of repeated measurements per evaluation pose.

    Per pose: RMS distance of the horizontal error vectors from their centroid
    over all visits. For a static GT this equals the spread of the measured LTS
    positions; using errors removes GT motion between the visit instant and the
    matched LTS sample. Aggregate is the mean over poses with >= 2 visits.
    """
    per_pose, excluded = {}, 0
    for pid, rows in samples.by_pose().items():
        if len(rows) < 2:
            excluded += 1
            continue
        e = np.column_stack([samples.ex[rows], samples.ey[rows]])
        c = e - e.mean(axis=0)
        per_pose[pid] = float(np.sqrt(np.mean(np.sum(c * c, axis=1))))
    if not per_pose:
        return Unavailable.NOT_COMPUTABLE
    return Repeatability(float(np.mean(list(per_pose.values()))), per_pose, excluded)


@dataclass(frozen=True)
class Drift:
    slope_mm_per_s: float
    intercept_mm: float
    r_squared: float

    def to_dict(self) -> dict:
        return {"slope_mm_per_s": self.slope_mm_per_s, "intercept_mm": self.intercept_mm, "r_squared": self.r_squared}


def compute_drift(samples: ErrorSamples, min_samples: int = 10, min_span_s: float = 10.0) -> Drift:
    """OLS line through horizontal error vs time; intercept is at the first sample."""
    if len(samples) < min_samples:
        raise InsufficientDataError(f"drift needs >= {min_samples} samples, got {len(samples)}")
    t = (samples.t_ns - samples.t_ns.min()) / NS_PER_S
    if t.max() < min_span_s:
        raise InsufficientDataError(f"drift needs samples spanning >= {min_span_s} s, got {t.max():.3f} s")
    y = samples.horizontal
    tc, yc = t - t.mean(), y - y.mean()
    slope = float(np.dot(tc, yc) / np.dot(tc, tc))
    intercept = float(y.mean() - slope * t.mean())
    ss_res = float(np.sum((y - intercept - slope * t) ** 2))
    ss_tot = float(np.dot(yc, yc))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return Drift(slope, intercept, r2)


# -- full report ------------------------------------------------------------------

METRIC_KEYS = {
    "horizontal_accuracy": "absolute_horizontal_error_mm",
    "vertical_accuracy": "absolute_vertical_error_mm",
    "orientation_accuracy": "absolute_orientation_error_deg",
    "latency": "latency_ms",
    "update_rate": "update_rate_hz",
}


@dataclass(frozen=True)
class PerformanceResults:
    lts_name: str
    test_case_id: str
    absolute_horizontal_error_mm: MetricStats
    absolute_vertical_error_mm: MetricStats | Unavailable
    absolute_orientation_error_deg: MetricStats | Unavailable
    position_error_x_mm: MetricStats
    position_error_y_mm: MetricStats
    position_error_z_mm: MetricStats | Unavailable
    orientation_error_deg: MetricStats | Unavailable
    latency_ms: Value
    update_rate_hz: Value
    max_update_gap_s: Value = Unavailable.INSUFFICIENT_DATA
    latency_after_offset_correction_ms: Value = Unavailable.NOT_COMPUTABLE
    clock_offset_ms: Value = Unavailable.NOT_COMPUTABLE
    repeatability_mm: Repeatability | Unavailable = Unavailable.NOT_COMPUTABLE
    drift: Drift | Unavailable = Unavailable.INSUFFICIENT_DATA
    stream_horizontal_error_mm: MetricStats | Unavailable = Unavailable.INSUFFICIENT_DATA
    visit_count: int = 0
    matched_count: int = 0
    missed_visit_count: int = 0
    unreached_eval_pose_ids: tuple = ()
    seed: Optional[int] = None
    error_model_hash: Optional[str] = None
    requested_quantiles: tuple = ()
    reconstruction_note: Optional[str] = None

    def metric(self, metric_id: str):
        if metric_id not in METRIC_KEYS:
            raise SchemaError(f"unknown metric_id {metric_id!r}; expected one of {sorted(METRIC_KEYS)}")
        return getattr(self, METRIC_KEYS[metric_id])

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, Unavailable):
                return v.value
            if hasattr(v, "to_dict"):
                return v.to_dict()
            return v

        meta = {
            "lts_name": self.lts_name,
            "test_case_id": self.test_case_id,
            "seed": self.seed,
            "error_model_hash": self.error_model_hash,
            "requested_quantiles": list(self.requested_quantiles),
            "sign_convention": "LTS minus GT",
            "quantile_method": "nearest rank; insufficient_samples when n < 1/(1-q)",
            "update_rate_definition": "(n - 1) / (t_last - t_first)",
            "clock_offset_estimator": "grid search (1 ms) + parabolic refinement of mean horizontal error",
        }
        if self.reconstruction_note:
            meta["reconstruction_note"] = self.reconstruction_note
        doc = {"metadata": meta}
        for key in (
            "absolute_horizontal_error_mm",
            "absolute_vertical_error_mm",
            "absolute_orientation_error_deg",
            "position_error_x_mm",
            "position_error_y_mm",
            "position_error_z_mm",
            "orientation_error_deg",
            "update_rate_hz",
            "max_update_gap_s",
            "latency_ms",
            "latency_after_offset_correction_ms",
            "clock_offset_ms",
            "repeatability_mm",
            "drift",
            "stream_horizontal_error_mm",
        ):
            doc[key] = enc(getattr(self, key))
        doc["visits"] = {
            "visit_count": self.visit_count,
            "matched_count": self.matched_count,
            "missed_visit_count": self.missed_visit_count,
            "unreached_eval_pose_ids": list(self.unreached_eval_pose_ids),
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "PerformanceResults":
        if not isinstance(doc, dict) or "metadata" not in doc:
            raise SchemaError("performance results need a 'metadata' block")
        meta = doc["metadata"] or {}

        def stats(key, required=False):
            if key not in doc:
                if required:
                    raise SchemaError(f"performance results missing '{key}'")
                return Unavailable.NOT_PROVIDED
            v = doc[key]
            return _marker(v) if isinstance(v, str) else MetricStats.from_dict(v)

        def scalar(key, default=Unavailable.NOT_PROVIDED):
            v = doc.get(key, default)
            if isinstance(v, Unavailable):
                return v
            return _marker(v) if isinstance(v, str) else float(v)

        rep = doc.get("repeatability_mm", Unavailable.NOT_COMPUTABLE.value)
        if isinstance(rep, dict):
            rep = Repeatability(float(rep["aggregate_mm"]), {int(k): float(v) for k, v in rep["per_pose_mm"].items()}, int(rep["excluded_pose_count"]))
        else:
            rep = _marker(rep)
        drift = doc.get("drift", Unavailable.INSUFFICIENT_DATA.value)
        drift = Drift(**{k: float(v) for k, v in drift.items()}) if isinstance(drift, dict) else _marker(drift)
        visits = doc.get("visits") or {}
        return cls(
            lts_name=str(meta.get("lts_name", "")),
            test_case_id=str(meta.get("test_case_id", "")),
            absolute_horizontal_error_mm=stats("absolute_horizontal_error_mm", required=True),
            absolute_vertical_error_mm=stats("absolute_vertical_error_mm"),
            absolute_orientation_error_deg=stats("absolute_orientation_error_deg"),
            position_error_x_mm=stats("position_error_x_mm"),
            position_error_y_mm=stats("position_error_y_mm"),
            position_error_z_mm=stats("position_error_z_mm"),
            orientation_error_deg=stats("orientation_error_deg"),
            latency_ms=scalar("latency_ms"),
            update_rate_hz=scalar("update_rate_hz"),
            max_update_gap_s=scalar("max_update_gap_s", Unavailable.INSUFFICIENT_DATA),
            latency_after_offset_correction_ms=scalar("latency_after_offset_correction_ms", Unavailable.NOT_COMPUTABLE),
            clock_offset_ms=scalar("clock_offset_ms", Unavailable.NOT_COMPUTABLE),
            repeatability_mm=rep,
            drift=drift,
            stream_horizontal_error_mm=stats("stream_horizontal_error_mm"),
            visit_count=int(visits.get("visit_count", 0)),
            matched_count=int(visits.get("matched_count", 0)),
            missed_visit_count=int(visits.get("missed_visit_count", 0)),
            unreached_eval_pose_ids=tuple(int(i) for i in visits.get("unreached_eval_pose_ids", [])),
            seed=meta.get("seed"),
            error_model_hash=meta.get("error_model_hash"),
            requested_quantiles=tuple(float(q) for q in meta.get("requested_quantiles", [])),
            reconstruction_note=meta.get("reconstruction_note"),
        )


def _marker(v: str) -> Unavailable:
    try:
        return Unavailable(v)
    except ValueError as exc:
        raise SchemaError(f"unknown status marker {v!r}") from exc


@dataclass(frozen=True)
class Evaluation:
    """Results plus the per-sample error tables behind them."""

    results: PerformanceResults
    pose_errors: ErrorSamples
    stream_errors: Optional[ErrorSamples]
    time_offset_curve: list


def evaluate_experiment(
    data: ExperimentData,
    tc: TestCase,
    requested_quantiles: Sequence[float] = DEFAULT_QUANTILES,
    lts_name: str = "lts",
    latency_speed_threshold_mm_s: Optional[float] = None,
    offset_search_window_s: float = 0.5,
) -> Evaluation:
    for q in requested_quantiles:
        if not 0.0 < q < 1.0:
            raise ParameterError(f"quantile level {q!r} outside (0, 1)")
    qs = tuple(sorted(set(float(q) for q in requested_quantiles)))
    gt, lts = data.gt, data.lts
    visits = find_visits(gt, tc.eval_poses)
    reached = {v.eval_pose_id for v in visits}
    unreached = tuple(ep.id for ep in tc.eval_poses if ep.id not in reached)
    if not visits:
        raise EmptyResultsError(f"no evaluation pose was reached; first unreached is pose {unreached[0]}")
    matched, missed = match_lts(lts, visits, tc.conditions.max_match_gap_s, gt=gt)
    if not matched:
        raise EmptyResultsError(f"none of {len(visits)} visits has an LTS sample within {tc.conditions.max_match_gap_s} s")
    err = compute_pose_errors(matched)

    def opt(col):
        return MetricStats.of(col, qs) if col is not None else Unavailable.NOT_PROVIDED

    thr = latency_speed_threshold_mm_s if latency_speed_threshold_mm_s is not None else tc.conditions.latency_speed_threshold_mm_s
    latency = estimate_latency(gt, lts, thr)
    try:
        rate = compute_update_rate(lts)
        rate_hz, max_gap = rate.rate_hz, rate.max_gap_s
    except InsufficientDataError:
        rate_hz = max_gap = Unavailable.INSUFFICIENT_DATA

    curve: list = []
    try:
        est = estimate_time_offset(gt, lts, offset_search_window_s, speed_threshold_mm_s=thr)
        offset_ms = est.offset_s * 1000.0
        curve = est.residual_curve
        corrected = lts.shifted(-int(round(est.offset_s * NS_PER_S)))
        latency_corr = estimate_latency(gt, _clip_to(corrected, gt), thr)
    except UnobservableOffsetError:
        offset_ms = latency_corr = Unavailable.UNOBSERVABLE

    try:
        s_err = stream_errors(gt, lts)
    except InsufficientDataError:
        s_err = None
    drift: Drift | Unavailable = Unavailable.INSUFFICIENT_DATA
    if s_err is not None:
        try:
            drift = compute_drift(s_err)
        except InsufficientDataError:
            pass

    em = data.error_model
    res = PerformanceResults(
        lts_name=lts_name,
        test_case_id=tc.id,
        absolute_horizontal_error_mm=MetricStats.of(err.horizontal, qs),
        absolute_vertical_error_mm=opt(err.vertical),
        absolute_orientation_error_deg=opt(err.orientation_abs),
        position_error_x_mm=MetricStats.of(err.ex),
        position_error_y_mm=MetricStats.of(err.ey),
        position_error_z_mm=MetricStats.of(err.ez) if err.ez is not None else Unavailable.NOT_PROVIDED,
        orientation_error_deg=MetricStats.of(err.orientation_signed) if err.orientation_signed is not None else Unavailable.NOT_PROVIDED,
        latency_ms=latency,
        update_rate_hz=rate_hz,
        max_update_gap_s=max_gap,
        latency_after_offset_correction_ms=latency_corr,
        clock_offset_ms=offset_ms,
        repeatability_mm=compute_repeatability(err),
        drift=drift,
        stream_horizontal_error_mm=MetricStats.of(s_err.horizontal, qs) if s_err is not None else Unavailable.INSUFFICIENT_DATA,
        visit_count=len(visits),
        matched_count=len(matched),
        missed_visit_count=len(missed),
        unreached_eval_pose_ids=unreached,
        seed=em.seed if em else None,
        error_model_hash=em.digest() if em else None,
        requested_quantiles=qs,
    )
    return Evaluation(res, err, s_err, curve)


def evaluate_performance(
    data: ExperimentData,
    tc: TestCase,
    requested_quantiles: Sequence[float] = DEFAULT_QUANTILES,
    **kwargs,
) -> PerformanceResults:
    return evaluate_experiment(data, tc, requested_quantiles, **kwargs).results


def _clip_to(lts: Trajectory, gt: Trajectory) -> Trajectory:
    ok = (lts.t_ns >= gt.t_ns[0]) & (lts.t_ns <= gt.t_ns[-1])
    return lts.replace(
        t_ns=lts.t_ns[ok],
        xyz=lts.xyz[ok],
        yaw_deg=lts.yaw_deg[ok] if lts.yaw_deg is not None else None,
        quat=lts.quat[ok] if lts.quat is not None else None,
    )
