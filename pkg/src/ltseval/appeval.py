"""Requirement modelling and application evaluation.

A requirement gates one metric at one quantile (or a scalar metric) with a
strict comparison. ``must`` requirements decide suitability; ``shall``
requirements only feed the optional benefit score.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .errors import ParameterError, SchemaError, Unavailable
from .metrics import METRIC_KEYS, MetricStats, PerformanceResults, quantile_label, required_samples

DISTRIBUTIONAL = ("horizontal_accuracy", "vertical_accuracy", "orientation_accuracy")
CRITERIA_ORDER = ("horizontal_accuracy", "vertical_accuracy", "orientation_accuracy", "latency", "update_rate")

CANONICAL_UNIT = {
    "horizontal_accuracy": "mm",
    "vertical_accuracy": "mm",
    "orientation_accuracy": "deg",
    "latency": "ms",
    "update_rate": "hz",
}
UNIT_SCALE = {
    "mm": ("mm", 1.0),
    "cm": ("mm", 10.0),
    "m": ("mm", 1000.0),
    "deg": ("deg", 1.0),
    "ms": ("ms", 1.0),
    "s": ("ms", 1000.0),
    "hz": ("hz", 1.0),
}

OBLIGATION_NOTE = "must: gates overall suitability; shall: contributes to the benefit score only"


class Direction(str, Enum):
    MAX = "max"  # value must be < threshold
    MIN = "min"  # value must be > threshold


class Obligation(str, Enum):
    SHALL = "shall"
    MUST = "must"


class Status(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    NOT_PROVIDED = "not_provided"
    INSUFFICIENT_SAMPLES = "insufficient_samples"


@dataclass(frozen=True)
class Requirement:
    metric_id: str
    threshold: float
    direction: Direction
    quantile: Optional[float] = None
    unit: Optional[str] = None
    obligation: Obligation = Obligation.MUST
    benefit_weight: Optional[float] = None

    def __post_init__(self):
        if self.metric_id not in METRIC_KEYS:
            raise SchemaError(f"unknown metric_id {self.metric_id!r}; expected one of {sorted(METRIC_KEYS)}")
        object.__setattr__(self, "threshold", float(self.threshold))
        if self.quantile is not None:
            object.__setattr__(self, "quantile", float(self.quantile))
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "obligation", Obligation(self.obligation))
        unit = (self.unit or CANONICAL_UNIT[self.metric_id]).lower()
        if unit not in UNIT_SCALE or UNIT_SCALE[unit][0] != CANONICAL_UNIT[self.metric_id]:
            raise SchemaError(f"unit {self.unit!r} does not fit metric {self.metric_id}")
        object.__setattr__(self, "unit", unit)
        if not self.threshold > 0:
            raise ParameterError("requirement threshold must be positive")
        distributional = self.metric_id in DISTRIBUTIONAL
        if distributional and self.quantile is None:
            raise SchemaError(f"{self.metric_id} requirement needs a quantile")
        if not distributional and self.quantile is not None:
            raise SchemaError(f"{self.metric_id} is scalar and takes no quantile")
        if self.quantile is not None and not 0.0 < self.quantile < 1.0:
            raise SchemaError(f"quantile {self.quantile!r} outside (0, 1)")
        if self.benefit_weight is not None and self.benefit_weight < 0:
            raise ParameterError("benefit_weight must be >= 0")

    @property
    def canonical_threshold(self) -> float:
        return self.threshold * UNIT_SCALE[self.unit][1]

    def describe(self) -> str:
        op = "<" if self.direction is Direction.MAX else ">"
        q = f"{quantile_label(self.quantile)} " if self.quantile is not None else ""
        unit = "Hz" if self.unit == "hz" else self.unit
        return f"{q}{op} {self.threshold:g} {unit}"

    def to_dict(self) -> dict:
        d = {"metric_id": self.metric_id}
        if self.quantile is not None:
            d["quantile"] = self.quantile
        d.update(threshold=self.threshold, unit=self.unit, direction=self.direction.value, obligation=self.obligation.value)
        if self.benefit_weight is not None:
            d["benefit_weight"] = self.benefit_weight
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Requirement":
        if not isinstance(d, dict):
            raise SchemaError(f"requirement must be a mapping, got {d!r}")
        try:
            return cls(
                metric_id=d["metric_id"],
                threshold=float(d["threshold"]),
                direction=Direction(d["direction"]),
                quantile=float(d["quantile"]) if d.get("quantile") is not None else None,
                unit=d.get("unit"),
                obligation=Obligation(d.get("obligation", "must")),
                benefit_weight=float(d["benefit_weight"]) if d.get("benefit_weight") is not None else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"invalid requirement {d!r}: {exc}") from exc


@dataclass(frozen=True)
class ApplicationProfile:
    name: str
    requirements: tuple[Requirement, ...] = ()
    description: str = ""

    def __post_init__(self):
        keys = [(r.metric_id, r.quantile) for r in self.requirements]
        if len(set(keys)) != len(keys):
            raise SchemaError(f"profile {self.name!r} has more than one requirement per (metric, quantile)")

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.description:
            d["description"] = self.description
        d["requirements"] = [r.to_dict() for r in self.requirements]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ApplicationProfile":
        if not isinstance(d, dict) or "name" not in d:
            raise SchemaError("application profile needs a 'name'")
        return cls(
            name=str(d["name"]),
            requirements=tuple(Requirement.from_dict(r) for r in d.get("requirements") or []),
            description=str(d.get("description", "")),
        )


@dataclass(frozen=True)
class Outcome:
    requirement: Requirement
    lts_name: str
    status: Status
    value: Optional[float] = None


@dataclass(frozen=True)
class EvaluationResults:
    application: str
    lts_names: tuple[str, ...]
    outcomes: tuple[Outcome, ...]
    requirements: tuple[Requirement, ...] = field(default=())

    def status(self, requirement: Requirement, lts_name: str) -> Status:
        for o in self.outcomes:
            if o.requirement == requirement and o.lts_name == lts_name:
                return o.status
        raise KeyError((requirement, lts_name))

    @property
    def overall(self) -> dict[str, bool]:
        return {
            name: all(
                o.status is Status.PASS
                for o in self.outcomes
                if o.lts_name == name and o.requirement.obligation is Obligation.MUST
            )
            for name in self.lts_names
        }

    @property
    def suitable(self) -> list[str]:
        return [n for n, ok in self.overall.items() if ok]

    def criterion_suitable(self, metric_id: str) -> list[str]:
        """LTSs meeting every requirement on one criterion; all of them if there is none."""
        reqs = [r for r in self.requirements if r.metric_id == metric_id]
        return [n for n in self.lts_names if all(self.status(r, n) is Status.PASS for r in reqs)]

    def to_dict(self) -> dict:
        matrix = {}
        for metric_id in CRITERIA_ORDER:
            reqs = [r for r in self.requirements if r.metric_id == metric_id]
            matrix[metric_id] = {
                "requirement": "; ".join(r.describe() for r in reqs) if reqs else "-",
                "suitable_lts": self.criterion_suitable(metric_id),
            }
        rows = []
        for r in self.requirements:
            row = {"requirement": r.describe(), **r.to_dict()}
            row["status"] = {o.lts_name: o.status.value for o in self.outcomes if o.requirement == r}
            row["value"] = {o.lts_name: o.value for o in self.outcomes if o.requirement == r}
            rows.append(row)
        ranking = benefit_analysis(self)
        return {
            "application": self.application,
            "lts": list(self.lts_names),
            "criteria": matrix,
            "requirements": rows,
            "overall": dict(self.overall),
            "overall_suitable_lts": self.suitable,
            "benefit": ranking.value if isinstance(ranking, Unavailable) else [{"lts": n, "score": s} for n, s in ranking],
            "notes": {
                "obligations": OBLIGATION_NOTE,
                "comparison": "strict (< for max, > for min); equality fails",
                "missing_requirement": "criteria without a requirement are met by every LTS",
                "benefit_tie_break": "lexicographic by LTS name",
            },
        }


    @classmethod
    def from_dict(cls, doc: dict) -> "EvaluationResults":
        try:
            names = tuple(str(n) for n in doc["lts"])
            reqs, outcomes = [], []
            for row in doc.get("requirements") or []:
                spec = {k: v for k, v in row.items() if k not in ("requirement", "status", "value")}
                r = Requirement.from_dict(spec)
                reqs.append(r)
                for n in names:
                    v = row["value"].get(n)
                    outcomes.append(Outcome(r, n, Status(row["status"][n]), None if v is None else float(v)))
            return cls(str(doc["application"]), names, tuple(outcomes), tuple(reqs))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"invalid evaluation results: {exc}") from exc


def _lookup(results: PerformanceResults, req: Requirement) -> tuple[Status, Optional[float]]:
    value = results.metric(req.metric_id)
    if isinstance(value, Unavailable):
        if value is Unavailable.NOT_PROVIDED:
            return Status.NOT_PROVIDED, None
        return Status.INSUFFICIENT_SAMPLES, None
    if isinstance(value, MetricStats):
        v = value.quantile_at(req.quantile)
        if v is None:
            if value.sample_count < required_samples(req.quantile):
                return Status.INSUFFICIENT_SAMPLES, None
            raise SchemaError(
                f"results for {results.lts_name!r} lack {quantile_label(req.quantile)} of {req.metric_id}; "
                "re-run evaluate with that quantile requested"
            )
        if isinstance(v, Unavailable):
            return Status.INSUFFICIENT_SAMPLES, None
        value = v
    value = float(value)
    thr = req.canonical_threshold
    ok = value < thr if req.direction is Direction.MAX else value > thr
    return (Status.PASS if ok else Status.FAIL), value


def match_requirements(
    profile: ApplicationProfile,
    results: Sequence[tuple[str, PerformanceResults]],
) -> EvaluationResults:
    names = [n for n, _ in results]
    if len(set(names)) != len(names):
        raise ParameterError("LTS names must be unique")
    outcomes = []
    for req in profile.requirements:
        for name, res in results:
            status, value = _lookup(res, req)
            outcomes.append(Outcome(req, name, status, value))
    return EvaluationResults(profile.name, tuple(names), tuple(outcomes), profile.requirements)


def benefit_analysis(ev: EvaluationResults) -> list[tuple[str, float]] | Unavailable:
    """Rank suitable LTSs by summed weight of the weighted requirements they pass."""
    weighted = [r for r in ev.requirements if r.benefit_weight is not None]
    if not weighted:
        return Unavailable.NOT_APPLICABLE
    scores = []
    for name in ev.suitable:
        score = sum(r.benefit_weight for r in weighted if ev.status(r, name) is Status.PASS)
        scores.append((name, float(score)))
    return sorted(scores, key=lambda s: (-s[1], s[0]))


def derive_update_rate_requirement(
    max_speed_mm_s: float,
    max_position_error_mm: float,
    max_static_interval_s: float,
    obligation: Obligation = Obligation.MUST,
) -> Requirement:
    """Minimum update rate from the dynamic (speed / tolerated error) and static (1 / interval) cases."""
    if max_speed_mm_s < 0 or not max_position_error_mm > 0 or not max_static_interval_s > 0:
        raise ParameterError("speed must be >= 0; position error and static interval must be > 0")
    rate = max(max_speed_mm_s / max_position_error_mm, 1.0 / max_static_interval_s)
    return Requirement("update_rate", rate, Direction.MIN, unit="hz", obligation=obligation)


def derive_latency_requirement(
    max_speed_mm_s: float, max_delay_distance_mm: float, obligation: Obligation = Obligation.MUST
) -> Requirement:
    """Maximum latency so that the ELT moves at most ``max_delay_distance_mm`` meanwhile."""
    if not max_speed_mm_s > 0 or not max_delay_distance_mm > 0:
        raise ParameterError("speed and delay distance must be > 0")
    return Requirement("latency", 1000.0 * max_delay_distance_mm / max_speed_mm_s, Direction.MAX, unit="ms", obligation=obligation)
