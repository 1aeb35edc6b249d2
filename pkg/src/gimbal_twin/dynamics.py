"""Rotational dynamics of a quadrotor mounted on a 3-axis gimbal.

Frames: world and body are both x-forward, y-left, z-up. ``q`` is a unit
quaternion (w, x, y, z) that rotates body-frame vectors into the world frame,
so ``R(q) @ v_body = v_world``. Euler angles follow the Z-Y-X intrinsic
sequence, ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.

The gimbal rings are folded into a single rigid body: each ring adds a
scalar inertia and a viscous bearing friction on its own body axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, SimulationFault

G0 = 9.80665  # m/s^2
RPM_MAX = 26000.0  # crazyflie-class 16 mm coreless motor
MAX_THRUST_N = 15.7e-3 * G0  # 15.7 gram-force at RPM_MAX
RPM_TO_RADS = 2.0 * math.pi / 60.0
GIMBAL_LOCK_DEG = 89.0

# X layout, rotor 0 front-right, counting clockwise seen from above
ROTOR_ANGLES = (-math.pi / 4, -3 * math.pi / 4, 3 * math.pi / 4, math.pi / 4)
ROTOR_SPINS = (1, -1, 1, -1)


# -- rotations ----------------------------------------------------------------

def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if not math.isfinite(n) or n == 0.0:
        raise SimulationFault(f"cannot normalize quaternion {q}")
    q = q / n
    # one Newton correction pulls the norm onto 1 to the last ulp
    return q * (1.5 - 0.5 * float(q @ q))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis: Sequence[float], angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    s = math.sin(angle_rad / 2)
    return np.array([math.cos(angle_rad / 2), *(s * axis)])


def _wrap180(deg: float) -> float:
    out = (deg + 180.0) % 360.0 - 180.0
    # fmod can round -180-eps up to exactly 180
    return -180.0 if out >= 180.0 else out


@dataclass(frozen=True)
class EulerAngles:
    """Roll, pitch, yaw in degrees; roll/yaw in [-180, 180), pitch in [-90, 90]."""

    roll: float
    pitch: float
    yaw: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.roll, self.pitch, self.yaw)


def euler_from_matrix(R: np.ndarray) -> EulerAngles:
    s = max(-1.0, min(1.0, -float(R[2, 0])))
    pitch = math.degrees(math.asin(s))
    if abs(pitch) >= GIMBAL_LOCK_DEG:
        # roll is unobservable apart from yaw; pin it to zero and let yaw take it
        roll = 0.0
        yaw = math.degrees(math.atan2(-R[0, 1], R[1, 1]))
    else:
        roll = math.degrees(math.atan2(R[2, 1], R[2, 2]))
        yaw = math.degrees(math.atan2(R[1, 0], R[0, 0]))
    return EulerAngles(_wrap180(roll), pitch, _wrap180(yaw))


def euler_from_quaternion(q: np.ndarray) -> EulerAngles:
    return euler_from_matrix(quat_to_matrix(np.asarray(q, dtype=float)))


def quaternion_from_euler(e: EulerAngles) -> np.ndarray:
    r, p, y = (math.radians(a) / 2 for a in e.as_tuple())
    cr, sr, cp, sp, cy, sy = math.cos(r), math.sin(r), math.cos(p), math.sin(p), math.cos(y), math.sin(y)
    q = np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])
    return q if q[0] >= 0 else -q


# -- rotors -------------------------------------------------------------------

def _default_ct() -> float:
    return MAX_THRUST_N / (RPM_MAX * RPM_TO_RADS) ** 2


@dataclass(frozen=True)
class RotorSet:
    cmd: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    rpm: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    spin: tuple[int, ...] = ROTOR_SPINS
    failed: tuple[bool, ...] = (False, False, False, False)
    c_t: float = field(default_factory=_default_ct)  # N/(rad/s)^2
    c_q: float = field(default_factory=lambda: 0.006 * _default_ct())  # N*m/(rad/s)^2
    tau_m: float = 0.05  # s, assumed
    rpm_max: float = RPM_MAX

    def targets(self) -> np.ndarray:
        cmd = np.clip(np.asarray(self.cmd, dtype=float), 0.0, 1.0)
        return np.where(np.asarray(self.failed), 0.0, cmd * self.rpm_max)

    def speeds(self) -> np.ndarray:
        """Rotor speeds in rad/s."""
        return np.asarray(self.rpm, dtype=float) * RPM_TO_RADS

    def thrusts(self) -> np.ndarray:
        return self.c_t * self.speeds() ** 2

    def torques(self) -> np.ndarray:
        return np.asarray(self.spin) * self.c_q * self.speeds() ** 2


def rotor_rpm_at(rotors: RotorSet, elapsed: float) -> np.ndarray:
    """Exact first-order response after ``elapsed`` seconds under the held commands."""
    target = rotors.targets()
    rpm0 = np.clip(np.asarray(rotors.rpm, dtype=float), 0.0, rotors.rpm_max)
    return target + (rpm0 - target) * math.exp(-elapsed / rotors.tau_m)


def rotor_step(rotors: RotorSet, dt: float) -> RotorSet:
    if dt <= 0:
        raise ValueError("dt must be positive")
    rpm = np.clip(rotor_rpm_at(rotors, dt), 0.0, rotors.rpm_max)
    return replace(rotors, rpm=tuple(float(v) for v in rpm))


# -- rigid body ---------------------------------------------------------------

@dataclass(frozen=True)
class InertiaModel:
    j_uav: tuple[tuple[float, ...], ...] = ((1.4e-5, 0.0, 0.0), (0.0, 1.4e-5, 0.0), (0.0, 0.0, 2.2e-5))
    j_gimbal_axis: tuple[float, float, float] = (0.0, 0.0, 0.0)  # roll, pitch, yaw rings
    b_axis: tuple[float, float, float] = (1e-6, 1e-6, 1e-6)  # N*m*s/rad
    arm: float = 0.046  # m, half the 92 mm diagonal
    j_rotor: float = 1.0e-9  # kg*m^2, assumed for a 45 mm prop

    def __post_init__(self):
        J = self.matrix()
        if not np.allclose(J, J.T) or np.any(np.linalg.eigvalsh(J) <= 0):
            raise ConfigError("inertia tensor must be symmetric positive definite")
        if min(self.b_axis) < 0:
            raise ConfigError("bearing friction must be non-negative")
        if self.arm <= 0:
            raise ConfigError("arm length must be positive")

    @classmethod
    def with_gimbal(cls, frame_mass: float = 0.0413,
                    split: Sequence[float] = (0.25, 0.35, 0.40),
                    radii: Sequence[float] = (0.06, 0.07, 0.08), **kw) -> "InertiaModel":
        """Ring inertias as ring mass times radius squared.

        ``split`` and ``radii`` are ordered roll, pitch, yaw (innermost first).
        The 41.3 g frame mass is measured; the split and the radii are guesses.
        """
        j = tuple(frame_mass * s * r * r for s, r in zip(split, radii))
        return cls(j_gimbal_axis=j, **kw)

    def matrix(self) -> np.ndarray:
        return np.asarray(self.j_uav, dtype=float) + np.diag(self.j_gimbal_axis)

    def rotor_positions(self) -> np.ndarray:
        return np.array([[self.arm * math.cos(a), self.arm * math.sin(a)] for a in ROTOR_ANGLES])


def _torque_from_speeds(w_rot: np.ndarray, spins: Sequence[int], c_t: float, c_q: float,
                        inertia: InertiaModel, omega: np.ndarray,
                        gyroscopic: bool = True) -> np.ndarray:
    pos = inertia.rotor_positions()
    thrust = [c_t * w * w for w in w_rot]
    tx = ty = tz = 0.0
    spin_sum = 0.0
    for (x, y), T, s, w in zip(pos, thrust, spins, w_rot):
        tx += y * T
        ty -= x * T
        tz += s * c_q * w * w
        spin_sum += s * w
    tau = np.array([tx, ty, tz])
    if gyroscopic:
        # (J_r * sum(spin_i w_i) e_z) x omega
        h = inertia.j_rotor * spin_sum
        tau += np.array([-h * omega[1], h * omega[0], 0.0])
    return tau


def body_torque(rotors: RotorSet, inertia: InertiaModel, omega: Sequence[float],
                gyroscopic: bool = True) -> np.ndarray:
    return _torque_from_speeds(rotors.speeds(), rotors.spin, rotors.c_t, rotors.c_q,
                               inertia, np.asarray(omega, dtype=float), gyroscopic)


@dataclass(frozen=True)
class AttitudeState:
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def euler(self) -> EulerAngles:
        return euler_from_quaternion(self.q)


@lru_cache(maxsize=64)
def _inertia_arrays(inertia: InertiaModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    J = inertia.matrix()
    return J, np.linalg.inv(J), np.asarray(inertia.b_axis, dtype=float)


TorqueInput = Union[Sequence[float], np.ndarray, Callable[[float, np.ndarray, np.ndarray], np.ndarray]]


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross carries heavy axis bookkeeping for 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def angular_acceleration(omega: np.ndarray, torque: np.ndarray, J: np.ndarray,
                         J_inv: np.ndarray, b: np.ndarray) -> np.ndarray:
    return J_inv @ (torque - _cross(omega, J @ omega) - b * omega)


def step(state: AttitudeState, torque: TorqueInput, inertia: InertiaModel, dt: float,
         omega_cap: float = 200.0) -> AttitudeState:
    """Advance one fixed RK4 step.

    ``torque`` is either a constant body-frame vector or a callable
    ``torque(s, q, omega)`` with ``s`` the time elapsed inside the step.
    """
    if not 0.0 < dt <= 0.01:
        raise ValueError(f"dt must lie in (0, 0.01], got {dt}")
    J, J_inv, b = _inertia_arrays(inertia)
    if callable(torque):
        tau_fn = torque
    else:
        tau_const = np.asarray(torque, dtype=float)
        tau_fn = lambda s, q, w: tau_const  # noqa: E731

    def deriv(s, q, w):
        qdot = 0.5 * quat_mul(q, np.array([0.0, *w]))
        return qdot, angular_acceleration(w, tau_fn(s, q, w), J, J_inv, b)

    q0, w0 = np.asarray(state.q, dtype=float), np.asarray(state.omega, dtype=float)
    k1q, k1w = deriv(0.0, q0, w0)
    k2q, k2w = deriv(dt / 2, q0 + dt / 2 * k1q, w0 + dt / 2 * k1w)
    k3q, k3w = deriv(dt / 2, q0 + dt / 2 * k2q, w0 + dt / 2 * k2w)
    k4q, k4w = deriv(dt, q0 + dt * k3q, w0 + dt * k3w)
    q = q0 + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
    w = w0 + dt / 6 * (k1w + 2 * k2w + 2 * k3w + k4w)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(w))):
        raise SimulationFault(f"non-finite state at t={state.t + dt:.6f}")
    if np.max(np.abs(w)) > omega_cap:
        raise SimulationFault(f"body rate {np.max(np.abs(w)):.1f} rad/s exceeds cap {omega_cap}")
    return AttitudeState(quat_normalize(q), w, state.t + dt)


def kinetic_energy(state: AttitudeState, inertia: InertiaModel) -> float:
    w = state.omega
    return 0.5 * float(w @ inertia.matrix() @ w)


def world_angular_momentum(state: AttitudeState, inertia: InertiaModel) -> np.ndarray:
    return quat_to_matrix(state.q) @ (inertia.matrix() @ state.omega)


# -- maneuvers ----------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    """Held setpoints over [t_start, t_end).

    In ``rate`` mode setpoints are body rates (rad/s); in ``attitude`` mode
    they are Euler angles (deg). ``None`` leaves an axis without feedback.
    """

    t_start: float
    t_end: float
    thrust: float = 0.0
    mode: str = "rate"
    roll: Optional[float] = None
    pitch: Optional[float] = None
    yaw: Optional[float] = None


@dataclass(frozen=True)
class ManeuverScript:
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        prev_end = 0.0
        for seg in self.segments:
            if seg.mode not in ("rate", "attitude"):
                raise ConfigError(f"unknown segment mode {seg.mode!r}")
            if seg.t_start < prev_end - 1e-12 or seg.t_end <= seg.t_start:
                raise ConfigError("segments must be ordered, non-overlapping and non-empty")
            if not 0.0 <= seg.thrust <= 1.0:
                raise ConfigError("thrust setpoint must lie in [0, 1]")
            prev_end = seg.t_end

    @property
    def duration(self) -> float:
        return self.segments[-1].t_end if self.segments else 0.0

    def active(self, t: float) -> Optional[Segment]:
        for seg in self.segments:
            if seg.t_start <= t < seg.t_end:
                return seg
        return None


@dataclass(frozen=True)
class ControllerGains:
    rate: tuple[float, float, float] = (0.02, 0.02, 0.6)  # command per rad/s
    attitude: tuple[float, float, float] = (4.0, 4.0, 2.0)  # (rad/s) per rad


def mixer_matrix(inertia: InertiaModel, spins: Sequence[int] = ROTOR_SPINS) -> np.ndarray:
    pos = inertia.rotor_positions()
    return np.array([[np.sign(y), -np.sign(x), s] for (x, y), s in zip(pos, spins)])


def controller_commands(seg: Optional[Segment], state: AttitudeState, gains: ControllerGains,
                        mixer: np.ndarray) -> np.ndarray:
    """Proportional rate (optionally cascaded attitude) controller with desaturation."""
    if seg is None:
        return np.zeros(4)
    u = np.zeros(3)
    setpoints = (seg.roll, seg.pitch, seg.yaw)
    if seg.mode == "attitude":
        e = state.euler().as_tuple()
        for i, sp in enumerate(setpoints):
            if sp is not None:
                rate_sp = gains.attitude[i] * math.radians(_wrap180(sp - e[i]))
                u[i] = gains.rate[i] * (rate_sp - state.omega[i])
    else:
        for i, sp in enumerate(setpoints):
            if sp is not None:
                u[i] = gains.rate[i] * (sp - state.omega[i])
    cmd = seg.thrust + mixer @ u
    excess = cmd.max() - 1.0
    if excess > 0:
        cmd = cmd - excess
    return np.clip(cmd, 0.0, 1.0)


@dataclass(frozen=True)
class DynamicsConfig:
    inertia: InertiaModel = field(default_factory=InertiaModel.with_gimbal)
    rotors: RotorSet = field(default_factory=RotorSet)
    gains: ControllerGains = field(default_factory=ControllerGains)
    dt: float = 1e-3
    control_rate: float = 500.0
    log_rate: float = 100.0
    omega_cap: float = 200.0
    gyroscopic: bool = True
    mount_offset: tuple[float, float, float] = (0.0, 0.0, -0.01)  # m, sensor below the UAV
    gravity: float = G0
    fail_rotor: Optional[int] = None
    fail_time: float = 1.0

    def __post_init__(self):
        if self.fail_rotor is not None and self.fail_rotor not in range(4):
            raise ConfigError(f"rotor index must be 0..3, got {self.fail_rotor}")
        for name, rate in (("control_rate", self.control_rate), ("log_rate", self.log_rate)):
            ratio = 1.0 / (rate * self.dt)
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ConfigError(f"{name} period must be a whole number of dt steps")


@dataclass
class Trajectory:
    """Dense record, one row per integration step, plus the logging stride."""

    t: np.ndarray
    q: np.ndarray
    omega: np.ndarray
    alpha: np.ndarray
    specific_force: np.ndarray
    rpm: np.ndarray
    log_stride: int
    dt: float

    def index_at(self, t: float) -> int:
        i = int(round(t / self.dt))
        return min(max(i, 0), len(self.t) - 1)

    def logged(self) -> slice:
        return slice(0, len(self.t), self.log_stride)

    def euler_deg(self, idx=None) -> np.ndarray:
        qs = self.q if idx is None else self.q[idx]
        return np.array([euler_from_quaternion(q).as_tuple() for q in qs]).reshape(-1, 3)


def specific_force(q: np.ndarray, omega: np.ndarray, alpha: np.ndarray,
                   r: np.ndarray, gravity: float = G0) -> np.ndarray:
    """Accelerometer reading at mount offset ``r``; reads +g on z when level at rest."""
    up = quat_to_matrix(q).T @ np.array([0.0, 0.0, gravity])
    return up + _cross(omega, _cross(omega, r)) + _cross(alpha, r)


def run_maneuver(script: ManeuverScript, config: DynamicsConfig = DynamicsConfig(),
                 duration: Optional[float] = None,
                 initial: AttitudeState = AttitudeState()) -> Trajectory:
    if not isinstance(script, ManeuverScript):
        raise ConfigError("script must be a ManeuverScript")
    duration = script.duration if duration is None else duration
    if duration < 0:
        raise ConfigError("duration must be non-negative")
    dt = config.dt
    n = int(round(duration / dt))
    ctrl_stride = int(round(1.0 / (config.control_rate * dt)))
    log_stride = int(round(1.0 / (config.log_rate * dt)))
    inertia = config.inertia
    J, J_inv = inertia.matrix(), np.linalg.inv(inertia.matrix())
    b = np.asarray(inertia.b_axis, dtype=float)
    r = np.asarray(config.mount_offset, dtype=float)
    mixer = mixer_matrix(inertia, config.rotors.spin)
    fail_step = None if config.fail_rotor is None else int(round(config.fail_time / dt))

    rotors = config.rotors
    state = initial
    rows_t, rows_q, rows_w, rows_a, rows_f, rows_rpm = [], [], [], [], [], []

    def torque_at(rot: RotorSet):
        c_t, c_q, spins = rot.c_t, rot.c_q, rot.spin

        def fn(s, q, w):
            w_rot = rotor_rpm_at(rot, s) * RPM_TO_RADS
            return _torque_from_speeds(w_rot, spins, c_t, c_q, inertia, w, config.gyroscopic)
        return fn

    def record(st: AttitudeState, rot: RotorSet):
        tau = torque_at(rot)(0.0, st.q, st.omega)
        alpha = angular_acceleration(st.omega, tau, J, J_inv, b)
        rows_t.append(st.t)
        rows_q.append(st.q)
        rows_w.append(st.omega)
        rows_a.append(alpha)
        rows_f.append(specific_force(st.q, st.omega, alpha, r, config.gravity))
        rows_rpm.append(rot.rpm)

    for k in range(n):
        if fail_step is not None and k == fail_step:
            failed = tuple(i == config.fail_rotor for i in range(4))
            rotors = replace(rotors, failed=failed)
        if k % ctrl_stride == 0:
            cmd = controller_commands(script.active(state.t + 1e-12), state, config.gains, mixer)
            rotors = replace(rotors, cmd=tuple(float(c) for c in cmd))
        record(state, rotors)
        state = step(state, torque_at(rotors), inertia, dt, config.omega_cap)
        state = replace(state, t=(k + 1) * dt)
        rotors = rotor_step(rotors, dt)
    record(state, rotors)
    return Trajectory(np.array(rows_t), np.array(rows_q), np.array(rows_w), np.array(rows_a),
                      np.array(rows_f), np.array(rows_rpm), log_stride, dt)


@dataclass(frozen=True)
class FailureResponse:
    yaw_rate_end: float  # rad/s at fail_time + horizon
    sign_matches: bool  # sign equals minus the failed rotor's spin
    monotone: bool  # |yaw rate| strictly increases over the horizon


def failure_response(t: np.ndarray, yaw_rate: np.ndarray, spin: int, fail_time: float,
                     horizon: float = 0.5) -> FailureResponse:
    """Score the parasitic yaw spin that follows a single-rotor failure."""
    t, w = np.asarray(t, dtype=float), np.asarray(yaw_rate, dtype=float)
    sel = (t > fail_time + 1e-9) & (t <= fail_time + horizon + 1e-9)
    if sel.sum() < 2:
        raise ConfigError("trace does not cover the post-failure horizon")
    w = w[sel]
    end = float(w[-1])
    return FailureResponse(end, bool(np.sign(end) == -spin), bool(np.all(np.diff(np.abs(w)) > 0)))
