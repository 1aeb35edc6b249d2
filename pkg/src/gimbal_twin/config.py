"""Scenario configuration: strict JSON models and conversion to runtime objects.

Keys starting with ``_`` are treated as comments at every level and dropped
before validation, so config files can carry provenance notes next to values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import dynamics as dyn
from .errors import ConfigError
from .link import AXES, LinkGeometry, Mount, ReaderTiming
from .sensor_node import HarvesterState, ImuNoise, MagneticField, NodePowerModel, SensorNode

Vec3 = tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True,
                              json_schema_extra={"patternProperties": {"^_": {}}})

    @model_validator(mode="before")
    @classmethod
    def _drop_comments(cls, data):
        if isinstance(data, dict):
            return {k: v for k, v in data.items() if not (isinstance(k, str) and k.startswith("_"))}
        return data


# -- physical parameters --------------------------------------------------------

class InertiaCfg(_Strict):
    j_uav: tuple[Vec3, Vec3, Vec3] = dyn.InertiaModel.j_uav
    frame_mass: float = Field(0.0413, gt=0)
    ring_split: Vec3 = (0.25, 0.35, 0.40)
    ring_radii: Vec3 = (0.06, 0.07, 0.08)
    b_axis: Vec3 = dyn.InertiaModel.b_axis
    arm: float = Field(dyn.InertiaModel.arm, gt=0)
    j_rotor: float = Field(dyn.InertiaModel.j_rotor, ge=0)


class RotorCfg(_Strict):
    spin: tuple[int, int, int, int] = dyn.RotorSet.spin
    c_t: Optional[float] = Field(None, gt=0, description="N/(rad/s)^2; null derives it from max thrust")
    c_q_ratio: float = Field(0.006, gt=0, description="c_Q / c_T in metres")
    tau_m: float = Field(dyn.RotorSet.tau_m, gt=0)
    rpm_max: float = Field(dyn.RotorSet.rpm_max, gt=0)


class GainsCfg(_Strict):
    rate: Vec3 = dyn.ControllerGains.rate
    attitude: Vec3 = dyn.ControllerGains.attitude


class DynamicsCfg(_Strict):
    inertia: InertiaCfg = InertiaCfg()
    rotors: RotorCfg = RotorCfg()
    gains: GainsCfg = GainsCfg()
    dt: float = Field(dyn.DynamicsConfig.dt, gt=0, le=0.01)
    control_rate: float = Field(dyn.DynamicsConfig.control_rate, gt=0)
    log_rate: float = Field(dyn.DynamicsConfig.log_rate, gt=0)
    omega_cap: float = Field(dyn.DynamicsConfig.omega_cap, gt=0)
    gyroscopic: bool = True
    mount_offset: Vec3 = dyn.DynamicsConfig.mount_offset
    gravity: float = Field(dyn.G0, gt=0)


class NoiseCfg(_Strict):
    sigma_accel: float = Field(ImuNoise.sigma_accel, ge=0)
    sigma_mag: float = Field(ImuNoise.sigma_mag, ge=0)
    bias_accel: Vec3 = ImuNoise.bias_accel
    bias_mag: Vec3 = ImuNoise.bias_mag


class FieldCfg(_Strict):
    magnitude: float = Field(MagneticField.magnitude, gt=0)
    inclination_deg: float = Field(MagneticField.inclination_deg, ge=-90, le=90)
    declination_deg: float = MagneticField.declination_deg


class NodeCfg(_Strict):
    eta_points: tuple[tuple[float, float], ...] = NodePowerModel.eta_points
    p_sleep: float = Field(NodePowerModel.p_sleep, gt=0)
    p_active: float = Field(NodePowerModel.p_active, gt=0)
    e_reply: float = Field(NodePowerModel.e_reply, gt=0)
    p_sensitivity: Optional[float] = None
    capacitance: float = Field(HarvesterState.c, gt=0)
    v_on: float = HarvesterState.v_on
    v_off: float = HarvesterState.v_off
    v_max: float = HarvesterState.v_max
    initial: Literal["cold", "charged"] = "cold"
    noise: NoiseCfg = NoiseCfg()
    field: FieldCfg = FieldCfg()


class LinkCfg(_Strict):
    reader_pos: Vec3 = LinkGeometry.reader_pos
    reader_gain_dbi: float = LinkGeometry.reader_gain_dbi
    reader_back_dbi: float = LinkGeometry.reader_back_dbi
    mount: Mount = Mount.PARALLEL
    freq_hz: float = Field(LinkGeometry.freq_hz, gt=0)
    p_tx_dbm: float = LinkGeometry.p_tx_dbm
    null_floor_db: float = LinkGeometry.null_floor_db
    l_pol_db: float = LinkGeometry.l_pol_db
    l_misc_db: float = LinkGeometry.l_misc_db
    l_mod_db: float = LinkGeometry.l_mod_db
    rssi_offset_db: float = LinkGeometry.rssi_offset_db
    shadow_sigma_db: float = Field(LinkGeometry.shadow_sigma_db, ge=0)
    reader_sensitivity_dbm: float = LinkGeometry.reader_sensitivity_dbm
    demod_sensitivity_dbm: Optional[float] = None
    round_time: float = Field(ReaderTiming.round_time, gt=0)
    q: int = Field(0, ge=0, le=15)


class GroundCfg(_Strict):
    smooth_window: int = Field(9, ge=1)
    lock_exclusion_deg: float = Field(60.0, gt=0, le=90)

    @model_validator(mode="after")
    def _odd(self):
        if self.smooth_window % 2 == 0:
            raise ValueError("smooth_window must be odd")
        return self


# -- scenarios ----------------------------------------------------------------------

class SegmentCfg(_Strict):
    t_start: float = Field(ge=0)
    t_end: float
    thrust: float = Field(0.0, ge=0, le=1)
    mode: Literal["rate", "attitude"] = "rate"
    roll: Optional[float] = Field(None, description="rad/s in rate mode, deg in attitude mode; null = no feedback")
    pitch: Optional[float] = None
    yaw: Optional[float] = None


class ManeuverScenario(_Strict):
    kind: Literal["maneuver"]
    segments: tuple[SegmentCfg, ...]
    duration: Optional[float] = Field(None, ge=0)
    repeats: int = Field(5, ge=1)


class SweepScenario(_Strict):
    kind: Literal["sweep"]
    axes: tuple[Literal["roll", "pitch", "yaw"], ...] = ("roll", "pitch", "yaw")
    mounts: tuple[Mount, ...] = (Mount.PARALLEL, Mount.PERPENDICULAR)
    step_deg: float = Field(15.0, gt=0)
    window: float = Field(40.0, gt=0)
    warmup: float = Field(15.0, ge=0)


class RotorFailureScenario(_Strict):
    kind: Literal["rotor_failure"]
    segments: tuple[SegmentCfg, ...]
    duration: Optional[float] = Field(None, ge=0)
    rotor: Optional[int] = Field(0, description="failed rotor index 0-3; null runs the baseline")
    fail_time: float = Field(1.0, ge=0)


Scenario = Annotated[Union[ManeuverScenario, SweepScenario, RotorFailureScenario],
                     Field(discriminator="kind")]


class ScenarioConfig(_Strict):
    name: str = "scenario"
    seed: int = Field(0, ge=0)
    out: str = "out"
    scenario: Scenario
    dynamics: DynamicsCfg = DynamicsCfg()
    node: NodeCfg = NodeCfg()
    link: LinkCfg = LinkCfg()
    ground: GroundCfg = GroundCfg()


def config_schema() -> dict:
    return ScenarioConfig.model_json_schema()


def load_config(source: Union[str, Path, dict]) -> ScenarioConfig:
    """Parse and validate a config file (or an already-loaded mapping)."""
    if isinstance(source, dict):
        data = source
    else:
        try:
            data = json.loads(Path(source).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        cfg = ScenarioConfig.model_validate(data)
        build(cfg)  # surface cross-field errors at load time
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


# -- conversion ---------------------------------------------------------------------

@dataclass(frozen=True)
class Runtime:
    """Everything a scenario runner needs, as plain runtime objects."""

    dynamics: dyn.DynamicsConfig
    geometry: LinkGeometry
    timing: ReaderTiming
    power: NodePowerModel
    harvester: HarvesterState
    noise: ImuNoise
    field: MagneticField
    script: Optional[dyn.ManeuverScript]

    def node(self, seed) -> SensorNode:
        return SensorNode(self.harvester, self.power, self.noise, self.field, seed=seed)


def _script(segments) -> dyn.ManeuverScript:
    return dyn.ManeuverScript(tuple(dyn.Segment(**s.model_dump()) for s in segments))


def build(cfg: ScenarioConfig) -> Runtime:
    try:
        d, n, lk = cfg.dynamics, cfg.node, cfg.link
        inertia = dyn.InertiaModel.with_gimbal(
            d.inertia.frame_mass, d.inertia.ring_split, d.inertia.ring_radii,
            j_uav=d.inertia.j_uav, b_axis=d.inertia.b_axis, arm=d.inertia.arm,
            j_rotor=d.inertia.j_rotor)
        rot_kw = dict(spin=d.rotors.spin, tau_m=d.rotors.tau_m, rpm_max=d.rotors.rpm_max)
        if d.rotors.c_t is not None:
            rot_kw["c_t"] = d.rotors.c_t
        rotors = dyn.RotorSet(**rot_kw)
        rotors = replace(rotors, c_q=d.rotors.c_q_ratio * rotors.c_t)
        sc = cfg.scenario
        fail = dict(fail_rotor=sc.rotor, fail_time=sc.fail_time) if isinstance(sc, RotorFailureScenario) else {}
        dcfg = dyn.DynamicsConfig(
            inertia=inertia, rotors=rotors, gains=dyn.ControllerGains(d.gains.rate, d.gains.attitude),
            dt=d.dt, control_rate=d.control_rate, log_rate=d.log_rate, omega_cap=d.omega_cap,
            gyroscopic=d.gyroscopic, mount_offset=d.mount_offset, gravity=d.gravity, **fail)
        geom = LinkGeometry(**lk.model_dump(exclude={"round_time", "q"}))
        timing = ReaderTiming(round_time=lk.round_time, q=lk.q)
        power = NodePowerModel(n.eta_points, n.p_sleep, n.p_active, n.e_reply, n.p_sensitivity)
        h = HarvesterState(c=n.capacitance, v_on=n.v_on, v_off=n.v_off, v_max=n.v_max)
        if n.initial == "charged":
            h = h.charged()
        noise = ImuNoise(**n.noise.model_dump())
        field = MagneticField(**n.field.model_dump())
        script = _script(sc.segments) if hasattr(sc, "segments") else None
        if isinstance(sc, SweepScenario) and any(a not in AXES for a in sc.axes):
            raise ConfigError("unknown sweep axis")
        return Runtime(dcfg, geom, timing, power, h, noise, field, script)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
