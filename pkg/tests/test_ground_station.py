import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gimbal_twin.dynamics import (
    G0, DynamicsConfig, EulerAngles, ManeuverScript, Segment, quat_to_matrix, quaternion_from_euler,
    run_maneuver)
from gimbal_twin.epc_codec import SensorPayload
from gimbal_twin.errors import AlignmentError, ConfigError, DegenerateAttitude
from gimbal_twin.ground_station import (
    EstimateSeries, TruthSeries, accel_repeatability, align_nearest, angle_error, compute_metrics,
    estimate_attitude, magnetic_heading, run_inventory, smooth, smooth_angles,
    static_attitude_sweep, static_truth, trajectory_truth)
from gimbal_twin.link import LinkGeometry
from gimbal_twin.sensor_node import (
    ACCEL_LSB, NOISELESS, Fsm, HarvesterState, MagneticField, SensorNode, sample_imu)

from .oracles import zyx_matrix

FIELD = MagneticField()
GEOM = LinkGeometry()
ACTIVE = HarvesterState.at_voltage(3.0, fsm=Fsm.ACTIVE)


def payload_for(roll, pitch, yaw, field=FIELD):
    R = zyx_matrix(roll, pitch, yaw)
    sf = R.T @ np.array([0.0, 0.0, G0])
    q = quaternion_from_euler(EulerAngles(roll, pitch, yaw))
    return sample_imu(ACTIVE, q, sf, field.world_vector(), 0, NOISELESS).payload()


# ---- estimator ----

def test_level_reads_zero():
    e = estimate_attitude(payload_for(0, 0, 0)).euler
    assert e.as_tuple() == pytest.approx((0.0, 0.0, 0.0), abs=1e-9)


def test_declination_shifts_heading():
    field = MagneticField(declination_deg=10.0)
    e = estimate_attitude(payload_for(0, 0, 40.0, field), field).euler
    assert e.yaw == pytest.approx(magnetic_heading(40.0, field), abs=0.1)


def test_random_attitudes_within_quantization_bound():
    # half an LSB per axis, worst at |pitch| = 80 deg where roll divides by g cos(pitch):
    # roll <= asin(sqrt(2) LSB/2 / (g cos 80)) = 0.23 deg, pitch <= sqrt(3) LSB/2 / g = 0.05 deg;
    # yaw picks up the roll error plus the magnetometer quantization
    roll_bound = math.degrees(math.sqrt(2) * ACCEL_LSB / 2 / (G0 * math.cos(math.radians(80))))
    pitch_bound = math.degrees(math.sqrt(3) * ACCEL_LSB / 2 / G0)
    bounds = np.array([roll_bound, pitch_bound, 2 * roll_bound])
    rng = np.random.default_rng(12)
    for _ in range(10_000):
        r, p, y = rng.uniform(-180, 180), rng.uniform(-80, 80), rng.uniform(-180, 180)
        e = estimate_attitude(payload_for(r, p, y)).euler.as_tuple()
        assert np.all(angle_error(e, (r, p, y)) <= bounds)


def test_degenerate_free_fall():
    with pytest.raises(DegenerateAttitude):
        estimate_attitude(SensorPayload(accel=(10, -5, 20), mag=(100, 0, -200)))


# ---- helpers ----

def test_wrap_aware_error():
    assert angle_error(359.0, 1.0) == pytest.approx(2.0)
    assert angle_error(-179.0, 179.0) == pytest.approx(2.0)
    assert angle_error(10.0, 10.0) == 0.0


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_angle_error_range_and_symmetry(a, b):
    e = float(angle_error(a, b))
    assert 0.0 <= e <= 180.0
    assert e == pytest.approx(float(angle_error(b, a)), abs=1e-9)


@given(st.integers(0, 6).map(lambda k: 2 * k + 1), st.floats(-50, 50), st.integers(1, 60))
def test_smooth_constant_and_length(window, c, n):
    out = smooth(np.full(n, c), window)
    assert out.shape == (n,)
    np.testing.assert_allclose(out, c, rtol=1e-12, atol=1e-12)


def test_smooth_window_one_is_identity():
    x = np.random.default_rng(0).standard_normal((40, 3))
    np.testing.assert_allclose(smooth(x, 1), x, atol=1e-12)


def test_smooth_impulse_response():
    x = np.zeros(21)
    x[10] = 1.0
    out = smooth(x, 5)
    np.testing.assert_allclose(out[8:13], 0.2)
    assert out[:8].sum() == 0 and out[13:].sum() == 0


@given(st.integers(0, 2**32 - 1))
def test_smooth_linear_and_shift_equivariant(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(50), rng.standard_normal(50)
    a, b = rng.uniform(-3, 3, 2)
    np.testing.assert_allclose(smooth(a * x + b * y, 7), a * smooth(x, 7) + b * smooth(y, 7), atol=1e-12)
    # away from the edges a shift commutes with smoothing
    np.testing.assert_allclose(smooth(np.roll(x, 4), 7)[10:40], np.roll(smooth(x, 7), 4)[10:40], atol=1e-12)


def test_smooth_angles_across_the_wrap():
    x = np.array([179.0, -179.0, 179.0, -179.0, 179.0])
    out = smooth_angles(x, 3)
    assert np.all(angle_error(out, 180.0) <= 1.0)
    np.testing.assert_allclose(smooth_angles(np.full((7, 3), 20.0), 5), 20.0)


def test_smooth_rejects_even_window():
    with pytest.raises(ValueError):
        smooth(np.zeros(5), 4)


def test_align_nearest_tolerance():
    ie, ir = align_nearest(np.array([0.0, 0.104, 0.3]), np.array([0.0, 0.1, 0.2]), 0.005)
    assert list(ie) == [0, 1] and list(ir) == [0, 1]


# ---- metrics ----

SCRIPT = ManeuverScript((Segment(0.0, 2.0, 1.0, "rate", 0.3, 0.5, 0.8),))


@pytest.fixture(scope="module")
def truth():
    return TruthSeries.from_trajectory(run_maneuver(SCRIPT, DynamicsConfig(), duration=2.0))


def _est_from_truth(truth, shift=0.0):
    euler = truth.euler.copy()
    euler[:, 2] = [magnetic_heading(y, FIELD) for y in euler[:, 2]]
    euler[:, 1] += shift
    return EstimateSeries(truth.t.copy(), euler, truth.accel.copy(), np.zeros(len(truth)))


def test_perfect_estimate_scores_zero(truth):
    m = compute_metrics(_est_from_truth(truth), truth, duration=2.0)
    assert m.max_abs_error_roll_deg == pytest.approx(0.0, abs=1e-9)
    assert m.max_abs_error_pitch_deg == pytest.approx(0.0, abs=1e-9)
    assert m.max_abs_error_yaw_deg == pytest.approx(0.0, abs=1e-9)
    assert m.n_aligned == len(truth)


def test_one_degree_offset_scores_one(truth):
    m = compute_metrics(_est_from_truth(truth, 1.0), truth, duration=2.0)
    assert m.max_abs_error_pitch_deg == pytest.approx(1.0, abs=1e-9)


def test_too_few_pairs_is_alignment_error(truth):
    est = _est_from_truth(truth)
    far = EstimateSeries(est.t + 100.0, est.euler, est.accel, est.rssi)
    with pytest.raises(AlignmentError):
        compute_metrics(far, truth, duration=2.0)


def test_repeatability_of_identical_runs_is_zero(truth):
    est = _est_from_truth(truth)
    assert accel_repeatability([est, est, est]) == pytest.approx(0.0, abs=1e-12)


def test_repeatability_population_std():
    t = np.arange(20) * 0.016
    runs = [EstimateSeries(t, np.zeros((20, 3)), np.full((20, 3), v), np.zeros(20)) for v in (0.0, 2.0)]
    assert accel_repeatability(runs, window=1) == pytest.approx(1.0)


# ---- inventory logging ----

def test_boresight_ten_seconds_yields_packets():
    log = run_inventory(static_truth(np.array([1.0, 0, 0, 0])), GEOM, SensorNode(), 10.0)
    assert len(log.successes) >= 100
    t = [s.t for s in log.samples]
    assert all(b > a for a, b in zip(t, t[1:]))


def test_zero_power_gives_empty_log():
    geom = replace(GEOM, p_tx_dbm=-math.inf)
    log = run_inventory(static_truth(np.array([1.0, 0, 0, 0])), geom, SensorNode(), 2.0)
    assert log.successes == []
    assert len(EstimateSeries.from_log(log)) == 0


def test_negative_duration_rejected():
    with pytest.raises(ConfigError):
        run_inventory(static_truth(np.array([1.0, 0, 0, 0])), GEOM, SensorNode(), -1.0)


def test_trajectory_truth_follows_logged_state(truth):
    traj = run_maneuver(SCRIPT, DynamicsConfig(), duration=2.0)
    q, f = trajectory_truth(traj)(1.0)
    np.testing.assert_allclose(quat_to_matrix(q).T @ [0, 0, G0], f, atol=0.5)


# ---- CSV ----

def test_estimate_csv_roundtrip():
    log = run_inventory(static_truth(np.array([1.0, 0, 0, 0])), GEOM, SensorNode(seed=3), 1.0)
    est = EstimateSeries.from_log(log)
    back = EstimateSeries.from_csv(est.to_csv())
    np.testing.assert_allclose(back.euler, est.euler, atol=5e-7)
    np.testing.assert_allclose(back.t, est.t, atol=5e-7)
    assert back.to_csv() == est.to_csv()


def test_truth_csv_roundtrip(truth):
    back = TruthSeries.from_csv(truth.to_csv())
    np.testing.assert_allclose(back.q, truth.q, atol=5e-10)
    assert back.to_csv() == truth.to_csv()


def test_csv_header_mismatch_rejected(truth):
    with pytest.raises(ValueError):
        EstimateSeries.from_csv(truth.to_csv())


# ---- static sweep ----

def test_static_sweep_noiseless_is_tight():
    rows = static_attitude_sweep("pitch", GEOM, lambda: SensorNode(noise=NOISELESS),
                                 step_deg=45, dwell=0.2)
    assert len(rows) == 8
    for row in rows:
        assert row["n"] > 0
        assert max(row["max_err"]) < 0.3
        assert max(row["max_err_raw"]) < 0.3
