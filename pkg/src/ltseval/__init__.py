"""Test and evaluation toolkit for localization and tracking systems (LTS)."""

from .alignment import AlignMode, RigidTransform, align_rigid, apply_transform, estimate_time_offset
from .appeval import (
    ApplicationProfile,
    Direction,
    EvaluationResults,
    Obligation,
    Requirement,
    Status,
    benefit_analysis,
    derive_latency_requirement,
    derive_update_rate_requirement,
    match_requirements,
)
from .errors import LtsEvalError, SchemaError, Unavailable
from .metrics import (
    MetricStats,
    PerformanceResults,
    compute_drift,
    compute_pose_errors,
    compute_repeatability,
    estimate_latency,
    evaluate_experiment,
    evaluate_performance,
    quantile,
)
from .scenario import Conditions, ScenarioKind, TestCase, build_scenario, validate_test_case
from .testbed import ErrorModel, ExperimentData, generate_gt, run_experiment, simulate_lts
from .trajectory import Pose, Trajectory, find_visits, interpolate, match_lts

__version__ = "0.1.0"
