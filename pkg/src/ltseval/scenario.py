"""Test cases: data model, the five standard scenario generators, validation, YAML."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError, SchemaError
from .trajectory import EvaluationPose, Pose, wrap_deg

DEFAULT_SPEED_MM_S = 1400.0
DEFAULT_LATENCY_SPEED_MM_S = 2000.0
PATH_MARGIN_MM = 100.0
ARC_STEP_DEG = 2.0
RECOMMENDED_POSE_COUNT = (50, 100)
GT_ACCURACY_FACTOR = 10.0


class ScenarioKind(str, Enum):
    STANDARD_DYNAMIC = "StandardDynamic"
    STANDARD_STATIC = "StandardStatic"
    REPEATABILITY = "Repeatability"
    LATENCY = "Latency"
    COORDINATE_ALIGNMENT = "CoordinateAlignment"
    CUSTOM = "Custom"


STATIC_KINDS = (ScenarioKind.STANDARD_STATIC, ScenarioKind.COORDINATE_ALIGNMENT)


@dataclass(frozen=True)
class Conditions:
    max_match_gap_s: float = 0.5
    static_speed_threshold_mm_s: Optional[float] = None
    min_repeat_visits: Optional[int] = None
    nominal_speed_mm_s: float = DEFAULT_SPEED_MM_S
    dwell_s: float = 2.0
    acceleration_mm_s2: float = 1000.0
    latency_speed_threshold_mm_s: float = 200.0
    expected_lts_accuracy_mm: Optional[float] = None


@dataclass(frozen=True)
class TestCase:
    id: str
    scenario_kind: ScenarioKind
    area: tuple[float, float]  # (width_m, depth_m)
    waypoints: tuple[Pose, ...]
    eval_poses: tuple[EvaluationPose, ...]
    conditions: Conditions = field(default_factory=Conditions)
    reporting: dict = field(default_factory=dict)
    gt_accuracy_mm: float = 1.0

    __test__ = False  # not a pytest class

    @property
    def area_mm(self) -> tuple[float, float]:
        return self.area[0] * 1000.0, self.area[1] * 1000.0


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


# -- path geometry -----------------------------------------------------------


def _arc(center, radius, theta0_deg, sweep_deg):
    steps = max(1, int(math.ceil(abs(sweep_deg) / ARC_STEP_DEG)))
    th = np.radians(theta0_deg + np.linspace(0.0, sweep_deg, steps + 1))
    return np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])


def serpentine(width_mm: float, lane_ys: Sequence[float], radius_mm: float, margin_mm: float = PATH_MARGIN_MM) -> np.ndarray:
    """Boustrophedon sweep along x with circular-arc corners between lanes."""
    xa, xb = margin_mm + radius_mm, width_mm - margin_mm - radius_mm
    if xb <= xa:
        raise ParameterError("area too narrow for the corner radius")
    pieces = []
    for i, y in enumerate(lane_ys):
        forward = i % 2 == 0
        pieces.append(np.array([[xa, y], [xb, y]] if forward else [[xb, y], [xa, y]]))
        if i + 1 == len(lane_ys):
            break
        y_next = lane_ys[i + 1]
        if forward:
            pieces.append(_arc((xb, y + radius_mm), radius_mm, -90.0, 90.0))
            pieces.append(_arc((xb, y_next - radius_mm), radius_mm, 0.0, 90.0))
        else:
            pieces.append(_arc((xa, y + radius_mm), radius_mm, -90.0, -90.0))
            pieces.append(_arc((xa, y_next - radius_mm), radius_mm, 180.0, -90.0))
    return dedupe(np.vstack(pieces))


def dedupe(pts: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > tol
    return pts[keep]


def path_headings(pts: np.ndarray) -> np.ndarray:
    """Tangent heading at each polyline vertex (bisector of adjacent segments)."""
    seg = np.diff(pts[:, :2], axis=0)
    seg /= np.linalg.norm(seg, axis=1, keepdims=True)
    tang = np.empty((len(pts), 2))
    tang[0], tang[-1] = seg[0], seg[-1]
    mid = seg[:-1] + seg[1:]
    # a reversal has no bisector; keep the incoming direction
    flat = np.linalg.norm(mid, axis=1) < 1e-9
    mid[flat] = seg[:-1][flat]
    tang[1:-1] = mid
    return wrap_deg(np.degrees(np.arctan2(tang[:, 1], tang[:, 0])))


def arc_length(pts: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])


def point_at(pts: np.ndarray, s_cum: np.ndarray, s) -> np.ndarray:
    s = np.atleast_1d(s)
    return np.column_stack([np.interp(s, s_cum, pts[:, k]) for k in range(pts.shape[1])])


def _lanes(depth_mm: float, n_lanes: int) -> list[float]:
    lo, hi = PATH_MARGIN_MM, depth_mm - PATH_MARGIN_MM
    return list(np.linspace(lo, hi, n_lanes))


def _radius(width_mm: float, spacing_mm: float) -> float:
    return min(1000.0, width_mm / 6.0, spacing_mm / 2.0)


def _poses_along(pts, n, tol, rng, static_thr, start_s=0.0, end_s=None) -> list[EvaluationPose]:
    s_cum = arc_length(pts)
    end_s = s_cum[-1] if end_s is None else end_s
    span = end_s - start_s
    spacing = span / n
    s = start_s + spacing * (np.arange(n) + 0.5) + rng.uniform(-0.2, 0.2, n) * spacing
    return _make_poses(pts, s_cum, s, tol, static_thr)


def _make_poses(pts, s_cum, s, tol, static_thr) -> list[EvaluationPose]:
    xy = point_at(pts, s_cum, s)
    yaw = np.interp(s, s_cum, np.unwrap(np.radians(path_headings(pts))))
    yaw = wrap_deg(np.degrees(yaw))
    out = []
    for k, (p, h) in enumerate(zip(xy, yaw)):
        out.append(
            EvaluationPose(
                id=k + 1,
                target=Pose(0, round(float(p[0]), 3), round(float(p[1]), 3), yaw_deg=round(float(h), 6)),
                position_tolerance_mm=tol,
                required_static=static_thr is not None,
                static_speed_threshold_mm_s=static_thr,
            )
        )
    return out


def _waypoints(pts: np.ndarray) -> tuple[Pose, ...]:
    yaw = path_headings(pts)
    return tuple(Pose(0, round(float(p[0]), 3), round(float(p[1]), 3), yaw_deg=round(float(h), 6)) for p, h in zip(pts, yaw))


def build_scenario(
    kind,
    area: tuple[float, float] = (10.0, 10.0),
    n_eval_poses: int = 63,
    nominal_speed_mm_s: Optional[float] = None,
    seed: int = 0,
    *,
    static_speed_threshold_mm_s: float = 50.0,
    min_repeat_visits: int = 3,
    position_tolerance_mm: float = 100.0,
    max_match_gap_s: float = 0.5,
    gt_accuracy_mm: float = 1.0,
    test_case_id: Optional[str] = None,
) -> TestCase:
    """Generate one of the standard (application-independent) scenarios.

    The path is a serpentine sweep over the area; the kind decides lane count,
    evaluation-pose placement and gating conditions. Only the evaluation-pose
    jitter along the path is random, drawn from ``seed``.
    """
    kind = ScenarioKind(kind)
    if kind is ScenarioKind.CUSTOM:
        raise ParameterError("Custom test cases are authored by hand, not generated")
    width_m, depth_m = float(area[0]), float(area[1])
    if width_m <= 0 or depth_m <= 0 or width_m * depth_m < 4.0:
        raise ParameterError("area must be at least 4 m^2")
    if n_eval_poses < 2:
        raise ParameterError("n_eval_poses must be >= 2")
    if nominal_speed_mm_s is None:
        nominal_speed_mm_s = DEFAULT_LATENCY_SPEED_MM_S if kind is ScenarioKind.LATENCY else DEFAULT_SPEED_MM_S
    if not nominal_speed_mm_s > 0:
        raise ParameterError("nominal speed must be > 0")
    if kind is ScenarioKind.REPEATABILITY and min_repeat_visits < 2:
        raise ParameterError("Repeatability needs min_repeat_visits >= 2")
    if kind in STATIC_KINDS and not static_speed_threshold_mm_s > 0:
        raise ParameterError(f"{kind.value} needs a positive static speed threshold")
    if kind is ScenarioKind.COORDINATE_ALIGNMENT and n_eval_poses < 3:
        raise ParameterError("CoordinateAlignment needs at least 3 evaluation poses")

    rng = np.random.default_rng(seed)
    W, D = width_m * 1000.0, depth_m * 1000.0
    usable = D - 2 * PATH_MARGIN_MM
    static_thr = static_speed_threshold_mm_s if kind in STATIC_KINDS else None

    if kind is ScenarioKind.COORDINATE_ALIGNMENT:
        rows = max(2, int(round(math.sqrt(n_eval_poses * D / W))))
        cols = int(math.ceil(n_eval_poses / rows))
        lane_ys = _lanes(D, rows)
        r = _radius(W, usable / (rows - 1))
        pts = serpentine(W, lane_ys, r)
        xa, xb = PATH_MARGIN_MM + r, W - PATH_MARGIN_MM - r
        xs = np.linspace(xa, xb, cols + 2)[1:-1] if cols > 1 else np.array([(xa + xb) / 2])
        s_cum = arc_length(pts)
        s_list = []
        for i in range(rows):
            lane_xs = xs if i % 2 == 0 else xs[::-1]
            # lane i starts at the i-th straight; locate each grid point by projection
            for x in lane_xs:
                if len(s_list) == n_eval_poses:
                    break
                s_list.append(_project(pts, s_cum, np.array([x, lane_ys[i]])))
        eval_poses = _make_poses(pts, s_cum, np.array(s_list), position_tolerance_mm, static_thr)
    else:
        if kind is ScenarioKind.LATENCY:
            n_lanes = 3 if usable >= 4 * _radius(W, usable / 2) else 2
        else:
            n_lanes = max(2, int(math.floor(usable / (2 * _radius(W, usable)))) + 1)
        lane_ys = _lanes(D, n_lanes)
        r = _radius(W, usable / (n_lanes - 1))
        base = serpentine(W, lane_ys, r)
        if kind is ScenarioKind.REPEATABILITY:
            s_base = arc_length(base)
            edge = min(500.0, 0.05 * s_base[-1])
            eval_poses = _poses_along(base, n_eval_poses, position_tolerance_mm, rng, None, edge, s_base[-1] - edge)
            laps = [base if k % 2 == 0 else base[::-1] for k in range(min_repeat_visits)]
            pts = dedupe(np.vstack(laps))
        else:
            pts = base
            eval_poses = _poses_along(pts, n_eval_poses, position_tolerance_mm, rng, static_thr)

    conditions = Conditions(
        max_match_gap_s=max_match_gap_s,
        static_speed_threshold_mm_s=static_thr,
        min_repeat_visits=min_repeat_visits if kind is ScenarioKind.REPEATABILITY else None,
        nominal_speed_mm_s=float(nominal_speed_mm_s),
    )
    return TestCase(
        id=test_case_id or f"{kind.value}-{int(round(width_m))}x{int(round(depth_m))}-n{n_eval_poses}-s{seed}",
        scenario_kind=kind,
        area=(width_m, depth_m),
        waypoints=_waypoints(pts),
        eval_poses=tuple(eval_poses),
        conditions=conditions,
        reporting={"generator": "ltseval.build_scenario", "seed": int(seed)},
        gt_accuracy_mm=gt_accuracy_mm,
    )


def _project(pts, s_cum, p) -> float:
    A, AB = pts[:-1], np.diff(pts, axis=0)
    ab2 = np.einsum("ij,ij->i", AB, AB)
    u = np.clip(np.einsum("ij,ij->i", p - A, AB) / ab2, 0.0, 1.0)
    d = np.linalg.norm(A + u[:, None] * AB - p, axis=1)
    k = int(np.argmin(d))
    return float(s_cum[k] + u[k] * math.sqrt(ab2[k]))


def validate_test_case(tc: TestCase) -> ValidationReport:
    rep = ValidationReport()
    W, D = tc.area_mm
    if not (W > 0 and D > 0):
        rep.errors.append("area must have positive width and depth")
    if len(tc.waypoints) < 2:
        rep.errors.append("at least 2 waypoints are required")
    else:
        xy = np.array([[p.x, p.y] for p in tc.waypoints])
        if np.all(np.linalg.norm(xy - xy[0], axis=1) == 0):
            rep.errors.append("waypoints are all identical (degenerate path)")
        outside = [i for i, (x, y) in enumerate(xy) if not (0 <= x <= W and 0 <= y <= D)]
        if outside:
            rep.errors.append(f"{len(outside)} waypoint(s) outside the area, first at index {outside[0]}")
    if not tc.eval_poses:
        rep.errors.append("no evaluation poses defined")
    ids = [ep.id for ep in tc.eval_poses]
    if len(set(ids)) != len(ids):
        rep.errors.append("evaluation pose ids are not unique")
    for ep in tc.eval_poses:
        if not (0 <= ep.target.x <= W and 0 <= ep.target.y <= D):
            rep.errors.append(f"evaluation pose {ep.id} lies outside the area")
    c = tc.conditions
    if not c.max_match_gap_s > 0:
        rep.errors.append("conditions.max_match_gap_s must be > 0")
    if not c.nominal_speed_mm_s > 0:
        rep.errors.append("conditions.nominal_speed_mm_s must be > 0")
    if tc.scenario_kind in STATIC_KINDS:
        if c.static_speed_threshold_mm_s is None or not c.static_speed_threshold_mm_s > 0:
            rep.errors.append(f"{tc.scenario_kind.value} requires conditions.static_speed_threshold_mm_s")
        loose = [ep.id for ep in tc.eval_poses if not ep.required_static]
        if loose:
            rep.errors.append(f"{tc.scenario_kind.value} requires required_static on every pose (not set on {loose[:5]})")
    if tc.scenario_kind is ScenarioKind.REPEATABILITY and (c.min_repeat_visits is None or c.min_repeat_visits < 2):
        rep.errors.append("Repeatability requires conditions.min_repeat_visits >= 2")
    if not tc.gt_accuracy_mm > 0:
        rep.errors.append("gt_accuracy_mm must be > 0")

    n = len(tc.eval_poses)
    lo, hi = RECOMMENDED_POSE_COUNT
    if n < lo:
        rep.warnings.append(f"evaluation pose count below recommended {lo} (got {n})")
    elif n > hi:
        rep.warnings.append(f"evaluation pose count above recommended {hi} (got {n})")
    if c.expected_lts_accuracy_mm is not None and tc.gt_accuracy_mm > 0:
        ratio = c.expected_lts_accuracy_mm / tc.gt_accuracy_mm
        if ratio < GT_ACCURACY_FACTOR:
            rep.warnings.append(
                f"ground truth is only {ratio:g}x more accurate than the expected LTS accuracy "
                f"(recommended at least {GT_ACCURACY_FACTOR:g}x)"
            )
    return rep


# -- YAML mapping -------------------------------------------------------------


def _pose_to_dict(p: Pose) -> dict:
    d = {}
    if p.t:
        d["t"] = p.t
    d["x_mm"] = p.x
    d["y_mm"] = p.y
    if p.z is not None:
        d["z_mm"] = p.z
    if p.yaw_deg is not None:
        d["yaw_deg"] = p.yaw_deg
    return d


def _pose_from_dict(d: dict, where: str) -> Pose:
    try:
        return Pose(
            t=int(d.get("t", 0)),
            x=float(d["x_mm"]),
            y=float(d["y_mm"]),
            z=float(d["z_mm"]) if d.get("z_mm") is not None else None,
            yaw_deg=float(d["yaw_deg"]) if d.get("yaw_deg") is not None else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: invalid pose {d!r} ({exc})") from exc


def testcase_to_dict(tc: TestCase) -> dict:
    eps = []
    for ep in tc.eval_poses:
        d = {"id": ep.id, **_pose_to_dict(ep.target), "position_tolerance_mm": ep.position_tolerance_mm}
        if ep.heading_tolerance_deg is not None:
            d["heading_tolerance_deg"] = ep.heading_tolerance_deg
        d["required_static"] = ep.required_static
        if ep.static_speed_threshold_mm_s is not None:
            d["static_speed_threshold_mm_s"] = ep.static_speed_threshold_mm_s
        eps.append(d)
    cond = {k: v for k, v in vars(tc.conditions).items() if v is not None}
    return {
        "id": tc.id,
        "scenario_kind": tc.scenario_kind.value,
        "area": {"width_m": tc.area[0], "depth_m": tc.area[1]},
        "waypoints": [_pose_to_dict(p) for p in tc.waypoints],
        "eval_poses": eps,
        "conditions": cond,
        "reporting": dict(tc.reporting),
        "gt_accuracy_mm": tc.gt_accuracy_mm,
    }


def testcase_from_dict(doc: dict) -> TestCase:
    if not isinstance(doc, dict):
        raise SchemaError("test case must be a mapping")
    missing = [k for k in ("id", "scenario_kind", "area", "waypoints", "eval_poses") if k not in doc]
    if missing:
        raise SchemaError(f"test case missing keys: {', '.join(missing)}")
    try:
        kind = ScenarioKind(doc["scenario_kind"])
    except ValueError as exc:
        raise SchemaError(f"unknown scenario_kind {doc['scenario_kind']!r}") from exc
    area = doc["area"]
    try:
        area_t = (float(area["width_m"]), float(area["depth_m"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError("area must be {width_m, depth_m}") from exc
    cond_doc = doc.get("conditions") or {}
    known = set(Conditions.__dataclass_fields__)
    unknown = set(cond_doc) - known
    if unknown:
        raise SchemaError(f"unknown condition keys: {sorted(unknown)}")
    try:
        conditions = Conditions(**cond_doc)
        eps = []
        for d in doc["eval_poses"]:
            eps.append(
                EvaluationPose(
                    id=int(d["id"]),
                    target=_pose_from_dict(d, f"eval pose {d.get('id')}"),
                    position_tolerance_mm=float(d["position_tolerance_mm"]),
                    heading_tolerance_deg=float(d["heading_tolerance_deg"]) if d.get("heading_tolerance_deg") is not None else None,
                    required_static=bool(d.get("required_static", False)),
                    static_speed_threshold_mm_s=(
                        float(d["static_speed_threshold_mm_s"]) if d.get("static_speed_threshold_mm_s") is not None else None
                    ),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid test case: {exc}") from exc
    return TestCase(
        id=str(doc["id"]),
        scenario_kind=kind,
        area=area_t,
        waypoints=tuple(_pose_from_dict(d, "waypoint") for d in doc["waypoints"]),
        eval_poses=tuple(eps),
        conditions=conditions,
        reporting=dict(doc.get("reporting") or {}),
        gt_accuracy_mm=float(doc.get("gt_accuracy_mm", 1.0)),
    )


def with_conditions(tc: TestCase, **changes) -> TestCase:
    return replace(tc, conditions=replace(tc.conditions, **changes))
