"""Output file schemas and the validator every CLI command runs before exit."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .ground_station import ESTIMATE_HEADER, TRUTH_HEADER
from .link import SWEEP_HEADER

YAW_RATE_HEADER = ("t", "yaw_rate", "rpm0", "rpm1", "rpm2", "rpm3")
FIG5_HEADER = SWEEP_HEADER
FIG6_HEADER = ("t", "phi_true", "theta_true", "psi_true", "phi_est", "theta_est", "psi_est")
FIG7_HEADER = ("run", "t", "ax", "ay", "az")


class _Out(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class MetricsModel(_Out):
    max_abs_error_roll_deg: float = Field(ge=0)
    max_abs_error_pitch_deg: float = Field(ge=0)
    max_abs_error_yaw_deg: float = Field(ge=0)
    accel_repeatability_mps2: float = Field(ge=0)
    mean_read_rate_hz: float = Field(ge=0)
    rssi_min_dbm: float
    rssi_max_dbm: float
    n_aligned: int = Field(ge=0)
    n_runs: int = Field(ge=1)


class RotorSummaryModel(_Out):
    rotor: Optional[int]
    spin: Optional[int]
    fail_time: float
    yaw_rate_end: float
    sign_matches: Optional[bool]
    monotone_first_half_second: Optional[bool]


class SweepPanelModel(_Out):
    axis: str
    config: str
    rate_min_hz: float = Field(ge=0)
    rate_max_hz: float = Field(ge=0)
    rssi_min_dbm: Optional[float]
    rssi_max_dbm: Optional[float]


class SweepSummaryModel(_Out):
    panels: list[SweepPanelModel]


class ManifestModel(_Out):
    kind: str
    name: str
    seed: int
    duration: float = Field(ge=0)
    files: list[str]
    config: dict


JSON_MODELS = {
    "metrics.json": MetricsModel,
    "rotor_failure.json": RotorSummaryModel,
    "sweep_summary.json": SweepSummaryModel,
    "run.json": ManifestModel,
}


def csv_header_for(name: str) -> Optional[tuple[str, ...]]:
    if name == "truth.csv":
        return TRUTH_HEADER
    if name.startswith("estimates"):
        return ESTIMATE_HEADER
    if name.startswith("sweep_"):
        return SWEEP_HEADER
    if name == "yaw_rate.csv":
        return YAW_RATE_HEADER
    return {"fig5_sweep.csv": FIG5_HEADER, "fig6_attitude.csv": FIG6_HEADER,
            "fig7_accel.csv": FIG7_HEADER}.get(name)


class SchemaViolation(Exception):
    """An output file does not match its declared schema."""


def _check_csv(path: Path, header: tuple[str, ...]) -> None:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != header:
        raise SchemaViolation(f"{path.name}: header mismatch")
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise SchemaViolation(f"{path.name}:{i}: expected {len(header)} fields")
        for name, cell in zip(header, row):
            if name in ("axis", "config") or (name == "mean_rssi_dbm" and cell == ""):
                continue
            try:
                v = float(cell)
            except ValueError:
                raise SchemaViolation(f"{path.name}:{i}: {name}={cell!r} is not numeric") from None
            if not math.isfinite(v):
                raise SchemaViolation(f"{path.name}:{i}: {name} is not finite")


def validate_file(path: Path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        model = JSON_MODELS.get(path.name)
        if model is None:
            return
        try:
            model.model_validate(json.loads(path.read_text()))
        except (ValidationError, json.JSONDecodeError) as exc:
            raise SchemaViolation(f"{path.name}: {exc}") from exc
    elif path.suffix == ".csv":
        header = csv_header_for(path.name)
        if header is not None:
            _check_csv(path, header)


def validate_dir(out: Path) -> None:
    for p in sorted(Path(out).iterdir()):
        if p.is_file():
            validate_file(p)


def output_schemas() -> dict:
    """JSON schemas of the JSON outputs plus the CSV column lists."""
    return {
        "json": {name: m.model_json_schema() for name, m in JSON_MODELS.items()},
        "csv": {"truth.csv": list(TRUTH_HEADER), "estimates*.csv": list(ESTIMATE_HEADER),
                "sweep_<axis>_<config>.csv": list(SWEEP_HEADER), "yaw_rate.csv": list(YAW_RATE_HEADER),
                "fig5_sweep.csv": list(FIG5_HEADER), "fig6_attitude.csv": list(FIG6_HEADER),
                "fig7_accel.csv": list(FIG7_HEADER)},
    }
