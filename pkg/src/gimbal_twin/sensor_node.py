"""Batteryless sensor node: RF harvesting into a storage capacitor, a
COLD/CHARGING/ACTIVE supply state machine, a quantizing accel+mag IMU and
the tag side of the inventory exchange.

Energy is the state variable (``E = C V^2 / 2``); voltage is derived. Every
step records how much energy was accepted from the harvester and how much
was drawn, so the ledger ``E = E0 + harvested - consumed`` can be audited.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .dynamics import G0, quat_to_matrix
from .epc_codec import (Ack, Bits, Query, QueryRep, ReaderCommand, Rn16Reply,
                        SensorPayload, TagReply, decode_command, encode_reply, sensor_reply)
from .errors import CodecError, NotPowered

CODE_MIN, CODE_MAX = -2048, 2047
ACCEL_FULL_SCALE = 2.0 * G0  # m/s^2, +-2 g range
ACCEL_LSB = ACCEL_FULL_SCALE / 2048
MAG_FULL_SCALE = 49.152  # uT
MAG_LSB = MAG_FULL_SCALE / 2048

STATUS_ACCEL_SAT = 0x01
STATUS_MAG_SAT = 0x02

SUPPLY_RAIL = 1.8  # V, assumed
COMPARATOR_CURRENT = 10e-6  # A, demodulator quiescent draw
ACCEL_CURRENT = 12.6e-6  # A, accelerometer normal mode


def quantize(value: float, lsb: float) -> tuple[int, bool]:
    """Round to the nearest code and clamp to the 12-bit range; flags saturation."""
    code = int(math.floor(value / lsb + 0.5))
    if code > CODE_MAX:
        return CODE_MAX, True
    if code < CODE_MIN:
        return CODE_MIN, True
    return code, False


def dequantize(code: int, lsb: float) -> float:
    return code * lsb


def accel_to_si(codes: Sequence[int]) -> np.ndarray:
    return np.array([dequantize(c, ACCEL_LSB) for c in codes])


def mag_to_ut(codes: Sequence[int]) -> np.ndarray:
    return np.array([dequantize(c, MAG_LSB) for c in codes])


def dbm_to_watts(dbm: float) -> float:
    if dbm == -math.inf:
        return 0.0
    return 10.0 ** (dbm / 10.0) / 1000.0


class Fsm(str, enum.Enum):
    COLD = "COLD"
    CHARGING = "CHARGING"
    ACTIVE = "ACTIVE"


@dataclass(frozen=True)
class NodePowerModel:
    # (dBm, efficiency) breakpoints; zero below the first, flat above the last
    eta_points: tuple[tuple[float, float], ...] = ((-20.0, 0.0), (-10.0, 0.42))
    p_sleep: float = COMPARATOR_CURRENT * SUPPLY_RAIL
    p_active: float = (COMPARATOR_CURRENT + ACCEL_CURRENT) * SUPPLY_RAIL
    e_reply: float = 2e-6  # J per backscatter reply
    p_sensitivity: Optional[float] = None  # dBm, defaults to the first breakpoint

    def __post_init__(self):
        xs = [p for p, _ in self.eta_points]
        if xs != sorted(xs) or any(not 0.0 <= e <= 1.0 for _, e in self.eta_points):
            raise ValueError("eta breakpoints must be ordered with efficiencies in [0, 1]")
        if not self.p_active > self.p_sleep > 0:
            raise ValueError("need p_active > p_sleep > 0")
        if self.p_sensitivity is None:
            object.__setattr__(self, "p_sensitivity", xs[0])

    def eta(self, p_in_dbm: float) -> float:
        if p_in_dbm < self.p_sensitivity:
            return 0.0
        xs = [p for p, _ in self.eta_points]
        ys = [e for _, e in self.eta_points]
        return float(np.interp(p_in_dbm, xs, ys))

    def harvested_power(self, p_in_dbm: float) -> float:
        return _harvested_power(self, p_in_dbm)


@functools.lru_cache(maxsize=4096)
def _harvested_power(pm: NodePowerModel, p_in_dbm: float) -> float:
    return pm.eta(p_in_dbm) * dbm_to_watts(p_in_dbm)


@dataclass(frozen=True)
class HarvesterState:
    c: float = 100e-6  # F
    energy: float = 0.0  # J
    v_on: float = 2.8
    v_off: float = 1.8
    v_max: float = 5.5
    fsm: Fsm = Fsm.COLD
    harvested: float = 0.0  # running totals for the energy ledger
    consumed: float = 0.0

    def __post_init__(self):
        if not self.v_off < self.v_on <= self.v_max:
            raise ValueError("need v_off < v_on <= v_max")

    @property
    def v(self) -> float:
        return math.sqrt(2.0 * self.energy / self.c)

    @property
    def e_max(self) -> float:
        return 0.5 * self.c * self.v_max ** 2

    @classmethod
    def at_voltage(cls, v: float, fsm: Fsm = Fsm.CHARGING, **kw) -> "HarvesterState":
        c = kw.get("c", cls.c)
        return cls(energy=0.5 * c * v * v, fsm=fsm, **kw)

    def charged(self) -> "HarvesterState":
        """Woken at the turn-on threshold, as after a long enough warm-up."""
        return replace(self, energy=0.5 * self.c * self.v_on ** 2, fsm=Fsm.ACTIVE)


def harvest_step(h: HarvesterState, pm: NodePowerModel, p_in_dbm: float, dt: float) -> HarvesterState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    gain = pm.harvested_power(p_in_dbm) * dt
    draw = (pm.p_active if h.fsm is Fsm.ACTIVE else pm.p_sleep) * dt
    available = h.energy + gain
    used = min(draw, available)
    energy = available - used
    if energy > h.e_max:
        gain -= energy - h.e_max
        energy = h.e_max

    fsm = h.fsm
    v = math.sqrt(2.0 * energy / h.c)
    if fsm is Fsm.COLD:
        if gain > 0:
            fsm = Fsm.CHARGING
    elif fsm is Fsm.CHARGING:
        if v >= h.v_on:
            fsm = Fsm.ACTIVE
        elif energy == 0.0 and gain == 0.0:
            fsm = Fsm.COLD
    elif v < h.v_off:
        fsm = Fsm.CHARGING
    return replace(h, energy=energy, fsm=fsm,
                   harvested=h.harvested + gain, consumed=h.consumed + used)


def spend(h: HarvesterState, joules: float) -> HarvesterState:
    """Draw a burst of energy; browning out below ``v_off`` drops ACTIVE to CHARGING."""
    if joules < 0 or joules > h.energy:
        raise ValueError(f"cannot spend {joules} J from {h.energy} J")
    energy = h.energy - joules
    fsm = h.fsm
    if fsm is Fsm.ACTIVE and math.sqrt(2.0 * energy / h.c) < h.v_off:
        fsm = Fsm.CHARGING
    return replace(h, energy=energy, fsm=fsm, consumed=h.consumed + joules)


# -- IMU ----------------------------------------------------------------------

@dataclass(frozen=True)
class MagneticField:
    """Uniform field; declination is the CCW angle of its horizontal part from world +x."""

    magnitude: float = 49.0  # uT
    inclination_deg: float = 60.0
    declination_deg: float = 0.0

    def world_vector(self) -> np.ndarray:
        inc, dec = math.radians(self.inclination_deg), math.radians(self.declination_deg)
        horiz = self.magnitude * math.cos(inc)
        return np.array([horiz * math.cos(dec), horiz * math.sin(dec),
                         -self.magnitude * math.sin(inc)])


@dataclass(frozen=True)
class ImuNoise:
    sigma_accel: float = 0.03  # m/s^2
    sigma_mag: float = 0.003 * 49.0  # uT
    bias_accel: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bias_mag: tuple[float, float, float] = (0.0, 0.0, 0.0)


NOISELESS = ImuNoise(0.0, 0.0)


@dataclass(frozen=True)
class ImuSample:
    accel: tuple[int, int, int]
    mag: tuple[int, int, int]
    counter: int
    status: int = 0

    def payload(self) -> SensorPayload:
        return SensorPayload(self.accel, self.mag, self.counter, self.status, 0)


def _as_rng(rng: Union[np.random.Generator, int, None]) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def sample_imu(h: HarvesterState, true_q: np.ndarray, true_specific_force: Sequence[float],
               mag_world: Sequence[float], rng: Union[np.random.Generator, int, None] = None,
               noise: ImuNoise = ImuNoise(), counter: int = 0) -> ImuSample:
    if h.fsm is not Fsm.ACTIVE:
        raise NotPowered(f"IMU read requested while {h.fsm.value}")
    rng = _as_rng(rng)
    mag_body = quat_to_matrix(np.asarray(true_q, dtype=float)).T @ np.asarray(mag_world, dtype=float)
    accel = (np.asarray(true_specific_force, dtype=float) + np.asarray(noise.bias_accel)
             + noise.sigma_accel * rng.standard_normal(3))
    mag = mag_body + np.asarray(noise.bias_mag) + noise.sigma_mag * rng.standard_normal(3)
    a_codes, a_sat = zip(*(quantize(v, ACCEL_LSB) for v in accel))
    m_codes, m_sat = zip(*(quantize(v, MAG_LSB) for v in mag))
    status = (STATUS_ACCEL_SAT if any(a_sat) else 0) | (STATUS_MAG_SAT if any(m_sat) else 0)
    return ImuSample(tuple(a_codes), tuple(m_codes), (counter + 1) % 256, status)


# -- tag protocol -------------------------------------------------------------

@dataclass(frozen=True)
class TagSession:
    slot: Optional[int] = None
    rn16: Optional[int] = None


def node_respond(h: HarvesterState, pm: NodePowerModel, frame: ReaderCommand,
                 sample: Optional[ImuSample], session: TagSession = TagSession(),
                 rng: Union[np.random.Generator, int, None] = None,
                 ) -> tuple[HarvesterState, Optional[TagReply], TagSession]:
    """Tag reaction to one decoded reader command.

    Replies cost ``pm.e_reply``; a node that is not ACTIVE or cannot afford
    the reply stays silent and its state is unchanged.
    """
    if h.fsm is not Fsm.ACTIVE or h.energy < pm.e_reply:
        return h, None, session
    rng = _as_rng(rng)
    if isinstance(frame, Query):
        slot = int(rng.integers(0, 1 << frame.q))
        if slot != 0:
            return h, None, TagSession(slot=slot)
        rn16 = int(rng.integers(0, 1 << 16))
        return spend(h, pm.e_reply), Rn16Reply(rn16), TagSession(slot=0, rn16=rn16)
    if isinstance(frame, QueryRep):
        if session.slot is None or session.slot == 0:
            return h, None, TagSession()
        slot = session.slot - 1
        if slot != 0:
            return h, None, TagSession(slot=slot)
        rn16 = int(rng.integers(0, 1 << 16))
        return spend(h, pm.e_reply), Rn16Reply(rn16), TagSession(slot=0, rn16=rn16)
    if isinstance(frame, Ack):
        if session.rn16 is None or frame.rn16 != session.rn16 or sample is None:
            return h, None, TagSession()
        return spend(h, pm.e_reply), sensor_reply(sample.payload()), TagSession()
    return h, None, session


class SensorNode:
    """Mutable wrapper the simulation loop owns: supply state, tag session,
    sequence counter and a private RNG stream."""

    def __init__(self, harvester: HarvesterState = HarvesterState(),
                 power: NodePowerModel = NodePowerModel(), noise: ImuNoise = ImuNoise(),
                 field_model: MagneticField = MagneticField(), seed: Optional[int] = 0):
        self.h = harvester
        self.power = power
        self.noise = noise
        self.field = field_model
        self.session = TagSession()
        self.counter = 0
        self.rng = np.random.default_rng(seed)
        self._mag_world = field_model.world_vector()

    @property
    def active(self) -> bool:
        return self.h.fsm is Fsm.ACTIVE

    def can_reply(self) -> bool:
        return self.active and self.h.energy >= self.power.e_reply

    def harvest(self, p_in_dbm: float, dt: float) -> None:
        self.h = harvest_step(self.h, self.power, p_in_dbm, dt)

    def receive(self, bits: Bits, q=None, specific_force=None) -> Optional[Bits]:
        """Demodulate a reader frame and return the backscattered reply bits, if any."""
        try:
            cmd = decode_command(bits)
        except CodecError:
            return None
        sample = None
        if (isinstance(cmd, Ack) and cmd.rn16 == self.session.rn16
                and self.can_reply() and q is not None):
            sample = sample_imu(self.h, q, specific_force, self._mag_world, self.rng,
                                self.noise, self.counter)
        self.h, reply, self.session = node_respond(self.h, self.power, cmd, sample,
                                                   self.session, self.rng)
        if reply is None:
            return None
        if sample is not None:
            self.counter = sample.counter
        return encode_reply(reply)
