"""Orientation-dependent UHF link between the reader and the tag.

Forward power follows free-space Friis with a cos^n reader pattern and a
dipole tag pattern with a finite null. The backscatter return adds the tag
gain, a modulation loss and a second path loss, so RSSI falls as 1/d^4.
``rssi_offset_db`` models the reader's reporting calibration, which is
what places reported values inside the measured envelope.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .dynamics import EulerAngles, euler_from_quaternion, quat_from_axis_angle, quat_to_matrix
from .epc_codec import (Ack, Query, QueryRep, SensorPayload, decode_reply, decode_sensor_epc,
                        encode_command)
from .errors import CodecError
from .sensor_node import SensorNode

C_LIGHT = 299_792_458.0
DIPOLE_GAIN = 1.64


class Mount(str, enum.Enum):
    PARALLEL = "PARALLEL"  # antenna long side along body y
    PERPENDICULAR = "PERPENDICULAR"  # along body x

    @property
    def body_axis(self) -> np.ndarray:
        return np.array([0.0, 1.0, 0.0]) if self is Mount.PARALLEL else np.array([1.0, 0.0, 0.0])


AXES = {"roll": (1.0, 0.0, 0.0), "pitch": (0.0, 1.0, 0.0), "yaw": (0.0, 0.0, 1.0)}


@dataclass(frozen=True)
class LinkGeometry:
    reader_pos: tuple[float, float, float] = (1.5, 0.0, 0.0)  # m, lateral, facing the gimbal
    reader_gain_dbi: float = 8.0
    reader_back_dbi: float = -20.0
    mount: Mount = Mount.PARALLEL
    freq_hz: float = 915e6
    p_tx_dbm: float = 40.0  # calibrated, see README
    null_floor_db: float = -20.0
    l_pol_db: float = 3.0  # circular reader, linear tag
    l_misc_db: float = 0.0
    l_mod_db: float = 5.0
    rssi_offset_db: float = 31.0  # calibrated reporting offset
    shadow_sigma_db: float = 0.0
    reader_sensitivity_dbm: float = -80.0
    demod_sensitivity_dbm: Optional[float] = None  # defaults to the node harvest threshold

    def __post_init__(self):
        if self.distance <= 0.1:
            raise ValueError("reader must be more than 0.1 m from the gimbal centre")

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.reader_pos))

    @property
    def wavelength(self) -> float:
        return C_LIGHT / self.freq_hz


def fspl_db(d: float, freq_hz: float) -> float:
    return 20.0 * math.log10(4.0 * math.pi * d * freq_hz / C_LIGHT)


def reader_gain_db(geom: LinkGeometry, theta_rad: float) -> float:
    """cos^n lobe whose directivity 2(n+1) equals the rated peak gain."""
    if theta_rad >= math.pi / 2:
        return geom.reader_back_dbi
    peak = 10.0 ** (geom.reader_gain_dbi / 10.0)
    n = peak / 2.0 - 1.0
    c = math.cos(theta_rad)
    if c <= 0.0:
        return geom.reader_back_dbi
    return max(10.0 * math.log10(peak) + 10.0 * n * math.log10(c), geom.reader_back_dbi)


def tag_gain_db(psi_rad: float, floor_db: float = -20.0) -> float:
    """Dipole gain at angle ``psi`` from the antenna axis, with a finite null."""
    s = math.sin(psi_rad)
    return 10.0 * math.log10(DIPOLE_GAIN * s * s + 10.0 ** (floor_db / 10.0))


def _angles(geom: LinkGeometry, q: np.ndarray) -> tuple[float, float]:
    """(reader off-boresight angle, dipole-to-reader angle), both in rad."""
    to_reader = np.asarray(geom.reader_pos, dtype=float) / geom.distance
    # reader boresight points at the gimbal centre, where the tag sits
    theta = 0.0
    axis = quat_to_matrix(np.asarray(q, dtype=float)) @ geom.mount.body_axis
    cos_psi = max(-1.0, min(1.0, float(axis @ to_reader)))
    return theta, math.acos(cos_psi)


def forward_power(geom: LinkGeometry, q: np.ndarray,
                  rng: Optional[np.random.Generator] = None) -> float:
    theta, psi = _angles(geom, q)
    p = (geom.p_tx_dbm + reader_gain_db(geom, theta) + tag_gain_db(psi, geom.null_floor_db)
         - fspl_db(geom.distance, geom.freq_hz) - geom.l_pol_db - geom.l_misc_db)
    if geom.shadow_sigma_db > 0 and rng is not None:
        p += geom.shadow_sigma_db * float(rng.standard_normal())
    return p


def backscatter_rssi(geom: LinkGeometry, q: np.ndarray, p_tag: Optional[float] = None) -> float:
    """Reported RSSI at the reader (physical return plus ``rssi_offset_db``)."""
    theta, psi = _angles(geom, q)
    if p_tag is None:
        p_tag = forward_power(geom, q)
    physical = (p_tag + tag_gain_db(psi, geom.null_floor_db) - geom.l_mod_db
                - fspl_db(geom.distance, geom.freq_hz) + reader_gain_db(geom, theta) - geom.l_pol_db)
    return physical + geom.rssi_offset_db


@dataclass(frozen=True)
class ReaderTiming:
    round_time: float = 0.016  # s per inventory round
    window: float = 10.0  # s measured by read_rate
    warmup: float = 0.0  # s of unmeasured rounds before the window
    q: int = 0

    @property
    def cap(self) -> float:
        return 1.0 / self.round_time


@dataclass
class Faults:
    """Seeded on-air fault injection for robustness tests."""

    reply_flip_prob: float = 0.0  # flip one random bit of the EPC reply
    ack_mismatch_prob: float = 0.0  # reader ACKs with a wrong RN16
    seed: int = 0
    rng: np.random.Generator = field(init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def corrupt(self, bits: tuple) -> tuple:
        if self.reply_flip_prob > 0 and self.rng.random() < self.reply_flip_prob:
            i = int(self.rng.integers(0, len(bits)))
            bits = bits[:i] + (1 - bits[i],) + bits[i + 1:]
        return bits

    def ack_rn16(self, rn16: int) -> int:
        if self.ack_mismatch_prob > 0 and self.rng.random() < self.ack_mismatch_prob:
            return rn16 ^ 0x0001
        return rn16


@dataclass(frozen=True)
class LinkSample:
    t: float
    success: bool
    rssi: Optional[float] = None
    attitude: Optional[EulerAngles] = None
    payload: Optional[SensorPayload] = None


_QUERY_CACHE: dict[int, tuple] = {}


def _query_bits(q: int) -> tuple:
    if q not in _QUERY_CACHE:
        _QUERY_CACHE[q] = encode_command(Query(q=q))
    return _QUERY_CACHE[q]


_QUERYREP_BITS = encode_command(QueryRep())


def attempt_read(geom: LinkGeometry, q: np.ndarray, node: SensorNode,
                 timing: ReaderTiming = ReaderTiming(), *, t: float = 0.0,
                 specific_force: Optional[np.ndarray] = None,
                 faults: Optional[Faults] = None, p_tag: Optional[float] = None,
                 rssi: Optional[float] = None,
                 attitude: Optional[EulerAngles] = None) -> LinkSample:
    """One inventory round: Query (+QueryReps) -> RN16 -> ACK -> PC/EPC/CRC-16.

    Succeeds only if the tag can demodulate the reader, is awake with energy
    for its replies, and the reader can hear the backscatter.
    """
    if p_tag is None:
        p_tag = forward_power(geom, q)
    demod = geom.demod_sensitivity_dbm
    if demod is None:
        demod = node.power.p_sensitivity
    fail = LinkSample(t, False, None, attitude, None)
    if not p_tag >= demod:
        return fail
    if specific_force is None:
        specific_force = quat_to_matrix(np.asarray(q, dtype=float)).T @ np.array([0.0, 0.0, 9.80665])

    reply = node.receive(_query_bits(timing.q))
    for _ in range((1 << timing.q) - 1):
        if reply is not None:
            break
        reply = node.receive(_QUERYREP_BITS)
    if reply is None:
        return fail
    if rssi is None:
        rssi = backscatter_rssi(geom, q, p_tag)
    if rssi - geom.rssi_offset_db < geom.reader_sensitivity_dbm:
        return fail
    try:
        rn16 = decode_reply(reply, "rn16").rn16
    except CodecError:
        return fail
    if faults is not None:
        rn16 = faults.ack_rn16(rn16)
    epc_bits = node.receive(encode_command(Ack(rn16)), q, specific_force)
    if epc_bits is None:
        return fail
    if faults is not None:
        epc_bits = faults.corrupt(epc_bits)
    try:
        payload = decode_sensor_epc(decode_reply(epc_bits, "epc").epc)
    except CodecError:
        return fail
    if attitude is None:
        attitude = euler_from_quaternion(q)
    return LinkSample(t, True, rssi, attitude, payload)


@dataclass(frozen=True)
class ReadStats:
    n_success: int
    n_attempts: int
    window: float
    mean_rssi: Optional[float]

    @property
    def rate(self) -> float:
        return self.n_success / self.window if self.window > 0 else 0.0


def measure_static(geom: LinkGeometry, q: np.ndarray, node: SensorNode,
                   timing: ReaderTiming = ReaderTiming()) -> ReadStats:
    """Hold an orientation; harvest and run inventory rounds back to back."""
    p_tag = forward_power(geom, q)
    rssi = backscatter_rssi(geom, q, p_tag)
    att = euler_from_quaternion(q)
    sf = quat_to_matrix(np.asarray(q, dtype=float)).T @ np.array([0.0, 0.0, 9.80665])
    dt = timing.round_time
    n_warm = int(round(timing.warmup / dt))
    n_win = int(round(timing.window / dt))
    succ, rssis = 0, []
    for k in range(n_warm + n_win):
        node.harvest(p_tag, dt)
        s = attempt_read(geom, q, node, timing, t=(k + 1) * dt, specific_force=sf,
                         p_tag=p_tag, rssi=rssi, attitude=att)
        if k >= n_warm and s.success:
            succ += 1
            rssis.append(s.rssi)
    mean = float(np.mean(rssis)) if rssis else None
    return ReadStats(succ, n_win, n_win * dt, mean)


def read_rate(geom: LinkGeometry, q: np.ndarray, node: SensorNode,
              timing: ReaderTiming = ReaderTiming()) -> float:
    return measure_static(geom, q, node, timing).rate


SWEEP_HEADER = ("axis", "angle_deg", "config", "mean_rssi_dbm", "read_rate_hz", "n_success", "n_attempts")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    angle_deg: float
    config: str
    mean_rssi_dbm: Optional[float]
    read_rate_hz: float
    n_success: int
    n_attempts: int

    def csv_fields(self) -> list[str]:
        rssi = "" if self.mean_rssi_dbm is None else f"{self.mean_rssi_dbm:.6f}"
        return [self.axis, f"{self.angle_deg:g}", self.config, rssi,
                f"{self.read_rate_hz:.6f}", str(self.n_success), str(self.n_attempts)]


def orientation_sweep(axis: str, geom: LinkGeometry, node_factory: Callable[[], SensorNode],
                      timing: ReaderTiming = ReaderTiming(), step_deg: float = 15.0) -> list[SweepRow]:
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}")
    n = 360.0 / step_deg
    if step_deg <= 0 or abs(n - round(n)) > 1e-9:
        raise ValueError("step must divide 360")
    rows = []
    for i in range(int(round(n))):
        angle = i * step_deg
        q = quat_from_axis_angle(AXES[axis], math.radians(angle))
        stats = measure_static(geom, q, node_factory(), timing)
        rows.append(SweepRow(axis, angle, geom.mount.value, stats.mean_rssi, stats.rate,
                             stats.n_success, stats.n_attempts))
    return rows


def sweep_angles(step_deg: float) -> Iterable[float]:
    return [i * step_deg for i in range(int(round(360.0 / step_deg)))]
