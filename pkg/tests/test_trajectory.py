import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import line_traj
from ltseval.errors import BoundaryError, ExtrapolationError, ParameterError
from ltseval.trajectory import (
    NS_PER_S,
    EvaluationPose,
    Pose,
    Source,
    Trajectory,
    estimate_velocity,
    find_visits,
    interpolate,
    interpolate_pose,
    match_lts,
    read_csv,
    signed_angle_diff,
    wrap_deg,
    write_csv,
)

angles = st.floats(-1e4, 1e4, allow_nan=False)


def two_node(yaw0=350.0, yaw1=10.0):
    return Trajectory([0, 1000], [[0, 0, 0], [100, 0, 0]], [yaw0, yaw1])


def test_interpolate_exact_node():
    tr = line_traj(yaw=12.5)
    p = interpolate_pose(tr, int(tr.t_ns[37]))
    assert p == tr[37]


def test_interpolate_midpoint_and_short_arc():
    p = interpolate_pose(two_node(), 500)
    assert (p.x, p.y, p.z) == (50.0, 0.0, 0.0)
    # average on the unit circle as an independent oracle
    ang = np.radians([350.0, 10.0])
    ref = np.degrees(np.arctan2(np.sin(ang).mean(), np.cos(ang).mean())) % 360
    assert abs(signed_angle_diff(p.yaw_deg, ref)) < 1e-9
    assert abs(p.yaw_deg) < 1e-9 or abs(p.yaw_deg - 360) < 1e-9


def test_interpolate_refuses_extrapolation():
    with pytest.raises(ExtrapolationError):
        interpolate_pose(two_node(), 1001)
    with pytest.raises(ExtrapolationError):
        interpolate_pose(two_node(), -1)


@given(st.floats(0, 359.999), st.floats(0, 359.999), st.floats(0, 1))
def test_interpolated_heading_stays_on_short_arc(a, b, f):
    tr = two_node(a, b)
    y = interpolate_pose(tr, int(round(f * 1000))).yaw_deg
    assert 0.0 <= y < 360.0
    span = abs(signed_angle_diff(a, b))
    assert abs(signed_angle_diff(y, a)) <= span + 1e-6
    assert abs(signed_angle_diff(y, b)) <= span + 1e-6


@given(angles)
def test_wrap_range(a):
    w = wrap_deg(a)
    assert 0.0 <= w < 360.0
    assert abs(signed_angle_diff(w, a)) < 1e-6


@given(angles, angles)
def test_signed_diff_antisymmetric(a, b):
    d = signed_angle_diff(a, b)
    assert -180.0 < d <= 180.0
    if abs(d) < 180.0 - 1e-9:
        assert abs(d + signed_angle_diff(b, a)) < 1e-9


def test_velocity_stationary_and_uniform():
    still = Trajectory(np.arange(10) * 10_000_000, np.tile([5.0, 5.0, 0.0], (10, 1)))
    v, s = estimate_velocity(still, 50_000_000)
    assert s == 0 and np.all(v == 0)
    tr = line_traj(1000.0, 100.0, 2.0)
    for t in (tr.t_ns[5], tr.t_ns[50] + 3_000_000, tr.t_ns[-3]):
        v, s = estimate_velocity(tr, int(t))
        assert abs(s - 1000.0) < 1e-6


def test_velocity_sinusoid():
    A, w = 1000.0, 2.0
    t = np.arange(0, 3001) * 1_000_000
    ts = t / NS_PER_S
    tr = Trajectory(t, np.column_stack([A * np.sin(w * ts), np.zeros_like(ts), np.zeros_like(ts)]))
    for k in (200, 500, 1300, 2700):
        _, s = estimate_velocity(tr, int(t[k]))
        ref = A * w * abs(np.cos(w * ts[k]))
        assert abs(s - ref) <= 0.005 * ref


def test_velocity_boundary():
    tr = line_traj(duration=1.0)
    with pytest.raises(BoundaryError):
        estimate_velocity(tr, int(tr.t_ns[0]))
    with pytest.raises(BoundaryError):
        estimate_velocity(tr, int(tr.t_ns[-1]))


def ep(x, y, tol=100.0, **kw):
    return EvaluationPose(0, Pose(0, x, y), tol, **kw)


def test_single_exact_pass():
    tr = line_traj(1000.0, 100.0, 10.0)
    v = find_visits(tr, [ep(5000.0, 0.0)])
    assert len(v) == 1
    assert v[0].gt_time == 5 * NS_PER_S and v[0].distance_mm == 0.0


def out_and_back():
    # +x to 4 m then back, 1 m/s, 100 Hz
    t = np.arange(0, 801) * 10_000_000
    s = t / NS_PER_S * 1000.0
    x = np.where(s <= 4000.0, s, 8000.0 - s)
    return Trajectory(t, np.column_stack([x, np.full_like(x, 30.0), np.zeros_like(x)]))


def brute_force_intervals(tr, target, tol, step_ns=1_000_000):
    q = np.arange(tr.t_ns[0], tr.t_ns[-1] + 1, step_ns)
    p = interpolate(tr, q).xyz[:, :2]
    inside = np.linalg.norm(p - target, axis=1) <= tol
    edges = np.flatnonzero(np.diff(np.r_[0, inside.astype(int), 0]))
    runs = list(zip(edges[::2], edges[1::2]))
    best = []
    for a, b in runs:
        d = np.linalg.norm(p[a:b] - target, axis=1)
        best.append(int(q[a + int(np.argmin(d))]))
    return best


@pytest.mark.parametrize("target", [(2000.0, 0.0), (3950.0, 60.0), (100.0, -40.0)])
def test_visits_match_brute_force(target):
    tr = out_and_back()
    v = find_visits(tr, [ep(*target)])
    oracle = brute_force_intervals(tr, np.array(target), 100.0)
    assert len(v) == len(oracle)
    assert [x.visit_index for x in v] == list(range(len(oracle)))
    for x, t in zip(v, oracle):
        assert abs(x.gt_time - t) <= 2_000_000


def test_two_visits_out_and_back():
    v = find_visits(out_and_back(), [ep(2000.0, 0.0)])
    assert [x.visit_index for x in v] == [0, 1]


def test_static_gate_never_met():
    tr = line_traj(500.0, 100.0, 10.0)
    v = find_visits(tr, [ep(2000.0, 0.0, required_static=True, static_speed_threshold_mm_s=50.0)])
    assert v == []


@settings(max_examples=25, deadline=None)
@given(st.integers(-10**12, 10**12))
def test_visits_time_translation(dt):
    tr = out_and_back()
    a = find_visits(tr, [ep(2000.0, 0.0)])
    b = find_visits(tr.shifted(dt), [ep(2000.0, 0.0)])
    assert [x.gt_time + dt for x in a] == [x.gt_time for x in b]


def lts_grid(rate=10.0, duration=10.0, drop=None):
    tr = line_traj(1000.0, rate, duration)
    if drop is not None:
        keep = ~((tr.t_s >= drop[0]) & (tr.t_s <= drop[1]))
        tr = tr.replace(t_ns=tr.t_ns[keep], xyz=tr.xyz[keep])
    return tr


def test_match_exact_and_midpoint():
    gt = line_traj()
    lts = lts_grid()
    visits = find_visits(gt, [ep(5000.0, 0.0), ep(5050.0, 0.0, tol=10.0)])
    m, missed = match_lts(lts, visits, 0.5)
    assert not missed
    gaps = sorted(x.time_gap_s for x in m)
    assert gaps[0] == 0.0 and abs(gaps[1] - 0.05) < 1e-12
    # the midpoint tie goes to the earlier sample
    mid = [x for x in m if x.time_gap_s > 0][0]
    assert mid.lts_pose.t == 5 * NS_PER_S


def test_match_dropout_misses_visits():
    gt = line_traj()
    lts = lts_grid(drop=(4.0, 6.0))
    poses = [EvaluationPose(i, Pose(0, x, 0.0), 10.0) for i, x in enumerate([2000.0, 4200.0, 5000.0, 5800.0, 8000.0])]
    m, missed = match_lts(lts, find_visits(gt, poses), 0.5)
    assert [pid for pid, _ in missed] == [2]
    assert len(m) == 4


def test_match_empty_lts():
    gt = line_traj()
    v = find_visits(gt, [ep(5000.0, 0.0)])
    m, missed = match_lts(Trajectory([], np.empty((0, 3))), v, 0.5)
    assert m == [] and missed == [(0, 0)]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 10_000_000_000), min_size=1, max_size=40, unique=True), st.integers(0, 10_000_000_000))
def test_match_no_closer_sample(ts, q):
    ts = np.sort(np.array(ts, dtype=np.int64))
    lts = Trajectory(ts, np.zeros((len(ts), 3)))
    gt = line_traj(duration=10.0)
    v = find_visits(gt, [ep(1000.0 * q / NS_PER_S, 0.0, tol=1.0)])
    m, _ = match_lts(lts, v, 1e9)
    for x in m:
        gap = abs(x.lts_pose.t - x.visit.gt_time)
        assert np.all(np.abs(ts - x.visit.gt_time) >= gap)


def test_missing_vertical_stays_missing(tmp_path):
    tr = line_traj(has_vertical=False, yaw=45.0)
    assert np.all(np.isnan(tr.xyz[:, 2]))
    write_csv(tr, tmp_path / "a.csv")
    back = read_csv(tmp_path / "a.csv", Source.GROUND_TRUTH)
    assert back == tr and not back.has_vertical
    assert back[3].z is None


def test_rejects_bad_input():
    with pytest.raises(ParameterError):
        Trajectory([0, 0], [[0, 0, 0], [1, 0, 0]])
    with pytest.raises(ParameterError):
        Pose(0, float("nan"), 0.0)
    with pytest.raises(ParameterError):
        Pose(0, 0.0, 0.0, quat=(1.0, 0.0, 0.0, 0.5))
