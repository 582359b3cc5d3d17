import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import line_traj
from ltseval.alignment import RigidTransform, apply_transform
from ltseval.errors import EmptyResultsError, InsufficientDataError, ParameterError, Unavailable
from ltseval.io import dump_yaml
from ltseval.metrics import (
    ErrorSamples,
    MetricStats,
    PerformanceResults,
    compute_drift,
    compute_pose_errors,
    compute_repeatability,
    compute_update_rate,
    estimate_latency,
    evaluate_experiment,
    evaluate_performance,
    quantile,
)
from ltseval.testbed import ErrorModel, ExperimentData, run_experiment
from ltseval.trajectory import NS_PER_S, MatchedSample, Pose, Trajectory, Visit


def samples(ex, ey=None, t_s=None, ids=None):
    ex = np.asarray(ex, dtype=float)
    ey = np.zeros_like(ex) if ey is None else np.asarray(ey, dtype=float)
    n = len(ex)
    t = np.arange(n) if t_s is None else np.asarray(t_s)
    return ErrorSamples(
        t_ns=np.round(np.asarray(t, dtype=float) * NS_PER_S).astype(np.int64),
        eval_pose_id=np.zeros(n, dtype=np.int64) if ids is None else np.asarray(ids),
        visit_index=np.arange(n),
        ex=ex,
        ey=ey,
        horizontal=np.hypot(ex, ey),
        gt_speed=np.zeros(n),
    )


def matched(gt: Pose, lts: Pose):
    v = Visit(0, 0, gt.t, gt, 0.0)
    return MatchedSample(v, lts, 0.0, gt)


def test_pose_errors_basic():
    z = Pose(0, 0.0, 0.0, 0.0, 0.0)
    e = compute_pose_errors([matched(z, z)])
    assert e.horizontal[0] == 0 and e.vertical[0] == 0 and e.orientation_abs[0] == 0
    e = compute_pose_errors([matched(z, Pose(0, 30.0, 40.0, 0.0, 0.0))])
    assert e.horizontal[0] == 50.0 and (e.ex[0], e.ey[0], e.ez[0]) == (30.0, 40.0, 0.0)


def test_orientation_wrap_and_symmetry():
    a, b = Pose(0, 0, 0, yaw_deg=359.0), Pose(0, 0, 0, yaw_deg=1.0)
    e = compute_pose_errors([matched(a, b)])
    # rotation-matrix oracle for the relative angle
    ra, rb = np.radians(359.0), np.radians(1.0)
    R = np.array([[np.cos(rb - ra), -np.sin(rb - ra)], [np.sin(rb - ra), np.cos(rb - ra)]])
    assert e.orientation_signed[0] == pytest.approx(np.degrees(np.arctan2(R[1, 0], R[0, 0])))
    assert e.orientation_signed[0] == pytest.approx(2.0) and e.orientation_abs[0] == pytest.approx(2.0)
    swapped = compute_pose_errors([matched(b, a)])
    assert swapped.orientation_signed[0] == pytest.approx(-2.0)


def test_missing_vertical_not_zero():
    e = compute_pose_errors([matched(Pose(0, 0, 0), Pose(0, 1, 1))])
    assert e.vertical is None and e.ez is None


def test_quantile_examples():
    assert quantile(np.full(50, 3.5), 0.5) == 3.5
    assert quantile(np.arange(1, 101), 0.95) == 95
    assert quantile(np.arange(100), 0.9999) is Unavailable.INSUFFICIENT_SAMPLES
    assert quantile(np.arange(10_000), 0.9999) == 9998
    with pytest.raises(ParameterError):
        quantile([1.0], 1.0)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=3000), st.sampled_from([0.5, 0.9, 0.95, 0.99]))
def test_quantile_is_nearest_rank(xs, q):
    v = quantile(xs, q)
    if isinstance(v, Unavailable):
        assert len(xs) < int(np.ceil(1 / (1 - q) - 1e-6))
        return
    k = int(np.ceil(q * len(xs) - 1e-9))
    assert v == sorted(xs)[k - 1]


@given(st.integers(0, 2**32 - 1), st.integers(1000, 3000))
def test_quantiles_monotone(seed, n):
    xs = np.random.default_rng(seed).exponential(50.0, n)
    vals = [quantile(xs, q) for q in (0.5, 0.95, 0.999)]
    assert 0 <= vals[0] <= vals[1] <= vals[2]


def test_latency_cases():
    gt = line_traj(1000.0, 100.0, 10.0)
    assert estimate_latency(gt, gt, 200.0) == 0.0
    t = gt.t_ns[20:]
    delayed = Trajectory(t, np.column_stack([1000.0 * (t / NS_PER_S - 0.15), np.zeros(len(t)), np.zeros(len(t))]))
    assert estimate_latency(gt, delayed, 200.0) == pytest.approx(150.0, abs=1.0)
    slow = line_traj(100.0, 100.0, 10.0)
    assert estimate_latency(slow, slow, 200.0) is Unavailable.INSUFFICIENT_DYNAMIC_SAMPLES


def test_update_rate():
    assert compute_update_rate(line_traj(rate=10.0, duration=10.0)).rate_hz == pytest.approx(10.0)
    for hz, tol in ((8.2, 0.05), (20.4, 0.1)):
        t = np.round(np.arange(int(60 * hz) + 1) * NS_PER_S / hz).astype(np.int64)
        assert abs(compute_update_rate(Trajectory(t, np.zeros((len(t), 3)))).rate_hz - hz) <= tol
    with pytest.raises(InsufficientDataError):
        compute_update_rate(Trajectory([0], [[0, 0, 0]]))


def test_repeatability_examples():
    s = samples([0, 0, 0], [0, 6, -6])
    assert compute_repeatability(s).aggregate_mm == pytest.approx(np.sqrt(24))
    assert compute_repeatability(samples([5, 5, 5], [1, 1, 1])).aggregate_mm == 0.0
    rep = compute_repeatability(samples([1, 2, 3], ids=[0, 1, 1]))
    assert rep.excluded_pose_count == 1 and list(rep.per_pose_mm) == [1]
    assert compute_repeatability(samples([1, 2], ids=[0, 1])) is Unavailable.NOT_COMPUTABLE


def test_repeatability_many_visits():
    rng = np.random.default_rng(0)
    ids = np.repeat(np.arange(50), 200)
    s = samples(rng.normal(0, 10, len(ids)), rng.normal(0, 10, len(ids)), ids=ids)
    assert abs(compute_repeatability(s).aggregate_mm / (10 * np.sqrt(2)) - 1) < 0.05


def test_drift():
    t = np.arange(0, 60, 0.1)
    assert abs(compute_drift(samples(np.full(len(t), 7.0), t_s=t)).slope_mm_per_s) < 1e-9
    assert compute_drift(samples(1.0 * t + 0.0, t_s=t)).slope_mm_per_s == pytest.approx(1.0)
    rng = np.random.default_rng(2)
    noise = samples(np.abs(rng.normal(0, 10, len(t))), t_s=t)
    assert abs(compute_drift(noise).slope_mm_per_s) < 0.2
    with pytest.raises(InsufficientDataError):
        compute_drift(samples(np.ones(20), t_s=np.arange(20) * 0.1))


def test_zero_model_results(zero_run, dynamic_tc):
    r = evaluate_performance(zero_run, dynamic_tc)
    for key in ("absolute_horizontal_error_mm", "position_error_x_mm", "position_error_y_mm", "absolute_orientation_error_deg"):
        st_ = getattr(r, key)
        assert st_.mean == 0.0 and st_.std == 0.0
    assert r.absolute_vertical_error_mm is Unavailable.NOT_PROVIDED
    assert r.latency_ms == pytest.approx(0.0, abs=1e-6)
    assert abs(r.update_rate_hz / 20.0 - 1) < 0.005
    assert abs(r.drift.slope_mm_per_s) < 1e-6
    assert r.absolute_horizontal_error_mm.quantile_at(0.9999) is Unavailable.INSUFFICIENT_SAMPLES


def test_results_round_trip(dynamic_tc):
    em = ErrorModel(noise_sigma_mm=(20, 10, 0), latency_s=0.03, update_rate_hz=20, seed=4)
    r = evaluate_performance(run_experiment(dynamic_tc, em), dynamic_tc)
    back = PerformanceResults.from_dict(r.to_dict())
    assert back == r
    assert dump_yaml(back.to_dict()) == dump_yaml(r.to_dict())


def test_pipeline_invariances(dynamic_tc):
    em = ErrorModel(noise_sigma_mm=(15, 15, 0), update_rate_hz=20, seed=8)
    data = run_experiment(dynamic_tc, em)
    base = evaluate_performance(data, dynamic_tc)
    r = base.absolute_horizontal_error_mm
    assert r.mean >= np.hypot(base.position_error_x_mm.mean, base.position_error_y_mm.mean)

    dt = 123_456_789_000
    shifted = ExperimentData(data.test_case_id, data.gt.shifted(dt), data.lts.shifted(dt), (), em)
    a = evaluate_performance(shifted, dynamic_tc)
    assert a.absolute_horizontal_error_mm.mean == pytest.approx(r.mean, abs=1e-6)
    assert a.absolute_horizontal_error_mm.std == pytest.approx(r.std, abs=1e-6)

    xf = RigidTransform.planar(40.0, 300.0, -700.0)
    moved = ExperimentData(data.test_case_id, apply_transform(data.gt, xf), apply_transform(data.lts, xf), (), em)
    # poses move with the frame too
    from dataclasses import replace

    eps = tuple(replace(ep, target=Pose(0, *xf.apply_points([ep.target.x, ep.target.y]))) for ep in dynamic_tc.eval_poses)
    b = evaluate_performance(moved, replace(dynamic_tc, eval_poses=eps, area=(100.0, 100.0)))
    assert b.absolute_horizontal_error_mm.mean == pytest.approx(r.mean, abs=1e-6)
    assert b.absolute_orientation_error_deg.mean == pytest.approx(base.absolute_orientation_error_deg.mean, abs=1e-6)


def test_no_visits(dynamic_tc, zero_run):
    from dataclasses import replace

    far = tuple(replace(ep, target=Pose(0, -1e6, -1e6)) for ep in dynamic_tc.eval_poses)
    with pytest.raises(EmptyResultsError, match=f"pose {far[0].id}"):
        evaluate_experiment(zero_run, replace(dynamic_tc, eval_poses=far))


def test_metric_stats_round_trip():
    m = MetricStats.of(np.arange(2000.0), (0.5, 0.999, 0.9999))
    assert MetricStats.from_dict(m.to_dict()) == m
