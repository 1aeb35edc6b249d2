"""Reader-side pipeline: inventory rounds, payload decoding, attitude
estimation from accel+mag, smoothing and evaluation metrics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import (G0, EulerAngles, Trajectory, euler_from_quaternion, quat_from_axis_angle,
                       quat_to_matrix)
from .epc_codec import SensorPayload
from .errors import AlignmentError, ConfigError, DegenerateAttitude
from .link import (AXES, Faults, LinkGeometry, LinkSample, ReaderTiming, attempt_read,
                   backscatter_rssi, forward_power)
from .sensor_node import MagneticField, SensorNode, accel_to_si, mag_to_ut

TruthFn = Callable[[float], tuple[np.ndarray, np.ndarray]]


@dataclass
class InventoryLog:
    samples: list[LinkSample] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def successes(self) -> list[LinkSample]:
        return [s for s in self.samples if s.success]


def run_inventory(truth: TruthFn, geom: LinkGeometry, node: SensorNode, duration: float,
                  timing: ReaderTiming = ReaderTiming(), faults: Optional[Faults] = None,
                  warmup: float = 0.0, meta: Optional[dict] = None) -> InventoryLog:
    """Back-to-back inventory rounds against a moving truth.

    ``truth(t)`` returns ``(q, specific_force)``. Energy harvested during a
    round uses the attitude at the end of that round. During ``warmup`` the
    node sits at the initial attitude and nothing is logged.
    """
    if duration < 0 or warmup < 0:
        raise ConfigError("duration and warmup must be non-negative")
    dt = timing.round_time
    q0, f0 = truth(0.0)
    p0 = forward_power(geom, q0)
    r0 = backscatter_rssi(geom, q0, p0)
    for _ in range(int(round(warmup / dt))):
        node.harvest(p0, dt)
        attempt_read(geom, q0, node, timing, specific_force=f0, p_tag=p0, rssi=r0)

    log = InventoryLog(meta=dict(meta or {}))
    n = int(math.floor(duration / dt + 1e-9))
    for k in range(1, n + 1):
        t = round(k * dt, 9)
        q, f = truth(t)
        p_tag = forward_power(geom, q)
        node.harvest(p_tag, dt)
        log.samples.append(attempt_read(geom, q, node, timing, t=t, specific_force=f,
                                        faults=faults, p_tag=p_tag))
    return log


def trajectory_truth(traj: Trajectory) -> TruthFn:
    def fn(t: float):
        i = traj.index_at(t)
        return traj.q[i], traj.specific_force[i]
    return fn


def static_truth(q: np.ndarray, gravity: float = G0) -> TruthFn:
    f = quat_to_matrix(np.asarray(q, dtype=float)).T @ np.array([0.0, 0.0, gravity])
    return lambda t: (q, f)


# -- estimation ---------------------------------------------------------------

@dataclass(frozen=True)
class AttitudeEstimate:
    t: float
    euler: EulerAngles
    accel: tuple[float, float, float]


def _wrap(deg: float) -> float:
    out = (deg + 180.0) % 360.0 - 180.0
    return -180.0 if out >= 180.0 else out


def estimate_attitude(p: SensorPayload, field_model: MagneticField = MagneticField(),
                      t: float = 0.0) -> AttitudeEstimate:
    """Roll/pitch from gravity, yaw as tilt-compensated magnetic heading."""
    a = accel_to_si(p.accel)
    if np.linalg.norm(a) < 0.2 * G0:
        raise DegenerateAttitude(f"|a| = {np.linalg.norm(a):.3f} m/s^2 is below 0.2 g")
    ax, ay, az = a
    roll = math.atan2(ay, az)
    pitch = math.atan2(-ax, math.hypot(ay, az))
    mx, my, mz = mag_to_ut(p.mag)
    cr, sr, cp, sp = math.cos(roll), math.sin(roll), math.cos(pitch), math.sin(pitch)
    # undo roll then pitch: Ry(pitch) @ Rx(roll) @ m
    ry = cr * my - sr * mz
    rz = sr * my + cr * mz
    hx = cp * mx + sp * rz
    hy = ry
    yaw = math.atan2(-hy, hx)
    euler = EulerAngles(_wrap(math.degrees(roll)), math.degrees(pitch), _wrap(math.degrees(yaw)))
    return AttitudeEstimate(t, euler, (float(ax), float(ay), float(az)))


def magnetic_heading(yaw_deg: float, field_model: MagneticField) -> float:
    """World yaw expressed against the field's horizontal direction."""
    return _wrap(yaw_deg - field_model.declination_deg)


def smooth(series: Sequence, window: int) -> np.ndarray:
    """Centred moving average; the window shrinks at the ends, length is kept."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd sample count")
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n == 0:
        return x.copy()
    half = window // 2
    csum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half, n - 1) + 1
    counts = (hi - lo).reshape((-1,) + (1,) * (x.ndim - 1))
    return (csum[hi] - csum[lo]) / counts


def smooth_angles(deg: Sequence, window: int) -> np.ndarray:
    """``smooth`` for angles in degrees: unwrapped first, wrapped back after."""
    x = np.asarray(deg, dtype=float)
    if x.shape[0] == 0:
        return x.copy()
    unwrapped = np.degrees(np.unwrap(np.radians(x), axis=0))
    out = smooth(unwrapped, window)
    return (out + 180.0) % 360.0 - 180.0


# -- series containers --------------------------------------------------------

ESTIMATE_HEADER = ("t", "phi_est", "theta_est", "psi_est", "ax", "ay", "az", "rssi_dbm")
TRUTH_HEADER = ("t", "qw", "qx", "qy", "qz", "wx", "wy", "wz", "phi", "theta", "psi", "ax", "ay", "az")


@dataclass
class EstimateSeries:
    t: np.ndarray
    euler: np.ndarray  # (n, 3) deg
    accel: np.ndarray  # (n, 3) m/s^2
    rssi: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def empty(cls) -> "EstimateSeries":
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))

    @classmethod
    def from_log(cls, log: InventoryLog, field_model: MagneticField = MagneticField()) -> "EstimateSeries":
        rows = []
        for s in log.successes:
            try:
                e = estimate_attitude(s.payload, field_model, s.t)
            except DegenerateAttitude:
                continue
            rows.append((s.t, *e.euler.as_tuple(), *e.accel, s.rssi))
        if not rows:
            return cls.empty()
        a = np.array(rows)
        return cls(a[:, 0], a[:, 1:4], a[:, 4:7], a[:, 7])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ESTIMATE_HEADER)
        for i in range(len(self)):
            w.writerow([f"{self.t[i]:.6f}", *(f"{v:.6f}" for v in self.euler[i]),
                        *(f"{v:.6f}" for v in self.accel[i]), f"{self.rssi[i]:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EstimateSeries":
        rows = _read_csv(text, ESTIMATE_HEADER)
        if not rows:
            return cls.empty()
        a = np.array(rows, dtype=float)
        return cls(a[:, 0], a[:, 1:4], a[:, 4:7], a[:, 7])


@dataclass
class TruthSeries:
    t: np.ndarray
    q: np.ndarray
    omega: np.ndarray
    euler: np.ndarray
    accel: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "TruthSeries":
        sl = traj.logged()
        q = traj.q[sl]
        return cls(traj.t[sl], q, traj.omega[sl], traj.euler_deg(sl), traj.specific_force[sl])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for i in range(len(self)):
            vals = [self.t[i], *self.q[i], *self.omega[i], *self.euler[i], *self.accel[i]]
            w.writerow([f"{v:.9f}" for v in vals])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TruthSeries":
        rows = _read_csv(text, TRUTH_HEADER)
        a = np.array(rows, dtype=float).reshape(-1, len(TRUTH_HEADER))
        return cls(a[:, 0], a[:, 1:5], a[:, 5:8], a[:, 8:11], a[:, 11:14])


def _read_csv(text: str, header: Sequence[str]) -> list[list[float]]:
    reader = csv.reader(io.StringIO(text))
    try:
        got = next(reader)
    except StopIteration:
        raise ValueError("empty CSV") from None
    if tuple(got) != tuple(header):
        raise ValueError(f"unexpected CSV header {got}")
    return [[float(v) for v in row] for row in reader if row]


# -- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    max_abs_error_roll_deg: float
    max_abs_error_pitch_deg: float
    max_abs_error_yaw_deg: float
    accel_repeatability_mps2: float
    mean_read_rate_hz: float
    rssi_min_dbm: float
    rssi_max_dbm: float
    n_aligned: int
    n_runs: int

    def to_dict(self) -> dict:
        return asdict(self)


def angle_error(a_deg, b_deg) -> np.ndarray:
    """Smallest absolute angle between two headings, in degrees."""
    d = (np.asarray(a_deg, dtype=float) - np.asarray(b_deg, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def align_nearest(t_query: np.ndarray, t_ref: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices (query, ref) of pairs whose nearest-neighbour gap is within ``tol``."""
    t_query, t_ref = np.asarray(t_query, dtype=float), np.asarray(t_ref, dtype=float)
    if len(t_query) == 0 or len(t_ref) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    j = np.clip(np.searchsorted(t_ref, t_query), 1, len(t_ref) - 1) if len(t_ref) > 1 else np.zeros(len(t_query), dtype=int)
    if len(t_ref) > 1:
        left = j - 1
        j = np.where(np.abs(t_query - t_ref[left]) <= np.abs(t_ref[j] - t_query), left, j)
    ok = np.abs(t_ref[j] - t_query) <= tol + 1e-9
    return np.nonzero(ok)[0], j[ok]


def attitude_errors(est: EstimateSeries, truth: TruthSeries,
                    field_model: MagneticField = MagneticField(),
                    lock_exclusion_deg: float = 60.0) -> tuple[np.ndarray, int]:
    """Per-sample absolute errors (n, 3) and the number of aligned pairs.

    Roll and yaw are NaN where ``|true pitch| >= lock_exclusion_deg``; near
    gimbal lock those two angles trade off freely and are not comparable.
    """
    period = float(np.median(np.diff(truth.t))) if len(truth) > 1 else 0.0
    ie, it = align_nearest(est.t, truth.t, period / 2)
    tr = truth.euler[it].copy()
    tr[:, 2] = [magnetic_heading(y, field_model) for y in tr[:, 2]]
    err = angle_error(est.euler[ie], tr)
    locked = np.abs(tr[:, 1]) >= lock_exclusion_deg
    err[locked, 0] = np.nan
    err[locked, 2] = np.nan
    return err, len(ie)


def accel_repeatability(runs: Sequence[EstimateSeries], window: int = 9) -> float:
    """Max over time and axes of the cross-run std-dev of smoothed acceleration."""
    runs = [r for r in runs if len(r) > 0]
    if len(runs) < 2:
        return 0.0
    ref = runs[0]
    period = float(np.median(np.diff(ref.t))) if len(ref) > 1 else 0.0
    stacks = [smooth(ref.accel, window)]
    keep = np.ones(len(ref), dtype=bool)
    for r in runs[1:]:
        sm = smooth(r.accel, window)
        ie, ir = align_nearest(ref.t, r.t, period / 2)
        full = np.full_like(stacks[0], np.nan)
        full[ie] = sm[ir]
        mask = np.zeros(len(ref), dtype=bool)
        mask[ie] = True
        keep &= mask
        stacks.append(full)
    if not keep.any():
        raise AlignmentError("runs share no aligned samples")
    data = np.stack([s[keep] for s in stacks])
    return float(np.max(np.std(data, axis=0)))


def compute_metrics(est: EstimateSeries, truth: TruthSeries,
                    runs: Optional[Sequence[EstimateSeries]] = None, *, duration: float,
                    window: int = 9, field_model: MagneticField = MagneticField(),
                    lock_exclusion_deg: float = 60.0, min_pairs: int = 10) -> MetricsReport:
    """Attitude errors of ``est`` against ``truth``; repeatability across ``runs``.

    ``runs`` defaults to ``[est]``; read rate and RSSI extremes pool all runs.
    """
    runs = list(runs) if runs else [est]
    err, n_pairs = attitude_errors(est, truth, field_model, lock_exclusion_deg)
    if n_pairs < min_pairs:
        raise AlignmentError(f"only {n_pairs} aligned samples, need {min_pairs}")

    def peak(col):
        vals = err[:, col]
        vals = vals[~np.isnan(vals)]
        return float(vals.max()) if len(vals) else 0.0

    rssi = np.concatenate([r.rssi for r in runs])
    rate = float(np.mean([len(r) / duration for r in runs])) if duration > 0 else 0.0
    return MetricsReport(peak(0), peak(1), peak(2), accel_repeatability(runs, window), rate,
                         float(rssi.min()), float(rssi.max()), n_pairs, len(runs))


# -- static attitude experiment -------------------------------------------------

def static_attitude_sweep(axis: str, geom: LinkGeometry, node_factory: Callable[[], SensorNode],
                          step_deg: float = 15.0, dwell: float = 1.0,
                          timing: ReaderTiming = ReaderTiming(), window: int = 9,
                          lock_exclusion_deg: float = 60.0) -> list[dict]:
    """Hold each pose for ``dwell`` seconds and score the estimate series.

    ``max_err`` scores the smoothed estimate the ground station reports;
    ``max_err_raw`` scores every decoded packet on its own.
    """
    rows = []
    for i in range(int(round(360.0 / step_deg))):
        angle = i * step_deg
        q = quat_from_axis_angle(AXES[axis], math.radians(angle))
        node = node_factory()
        log = run_inventory(static_truth(q), geom, node, dwell, timing)
        est = EstimateSeries.from_log(log, node.field)
        true = euler_from_quaternion(q).as_tuple()
        true = np.array([true[0], true[1], magnetic_heading(true[2], node.field)])
        locked = abs(true[1]) >= lock_exclusion_deg
        rows.append({"angle_deg": angle, "n": len(est),
                     "max_err": _peak_errors(smooth_angles(est.euler, window), true, locked),
                     "max_err_raw": _peak_errors(est.euler, true, locked)})
    return rows


def _peak_errors(euler: np.ndarray, true: np.ndarray, locked: bool) -> list[float]:
    if len(euler) == 0:
        return [0.0, 0.0, 0.0]
    err = angle_error(euler, true)
    peak = [float(v) for v in err.max(axis=0)]
    if locked:
        peak[0] = peak[2] = 0.0
    return peak
