"""``gimbal-twin`` command line: run a scenario, write CSV/JSON, validate them.

Exit codes: 0 success, 1 configuration error, 2 simulation fault, 3 alignment
error while computing metrics.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import schemas
from .config import (ManeuverScenario, RotorFailureScenario, Runtime, ScenarioConfig, SweepScenario,
                     build, load_config)
from .dynamics import ROTOR_SPINS, failure_response, run_maneuver
from .errors import AlignmentError, ConfigError, GimbalTwinError
from .ground_station import (EstimateSeries, MetricsReport, TruthSeries, align_nearest, compute_metrics,
                             run_inventory, smooth, trajectory_truth)
from .link import SWEEP_HEADER, Mount, ReaderTiming, orientation_sweep

BUNDLED_DIR = Path(__file__).parent / "configs"
EXIT_OK, EXIT_CONFIG, EXIT_FAULT, EXIT_ALIGN = 0, 1, 2, 3

FIG5_HEADER, FIG6_HEADER, FIG7_HEADER = schemas.FIG5_HEADER, schemas.FIG6_HEADER, schemas.FIG7_HEADER


# -- small I/O helpers ------------------------------------------------------------

def _write(out: Path, name: str, text: str, files: list[str]) -> None:
    (out / name).write_text(text)
    files.append(name)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _manifest(cfg: ScenarioConfig, duration: float, files: list[str]) -> str:
    return _dump_json({"kind": cfg.scenario.kind, "name": cfg.name, "seed": cfg.seed,
                       "duration": duration, "files": sorted(files),
                       "config": cfg.model_dump(mode="json", exclude={"out"})})


def _finish(out: Path, cfg: ScenarioConfig, duration: float, files: list[str]) -> None:
    _write(out, "run.json", _manifest(cfg, duration, files + ["run.json"]), [])
    schemas.validate_dir(out)


# -- maneuver ---------------------------------------------------------------------------

def empty_metrics(n_runs: int) -> MetricsReport:
    return MetricsReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, n_runs)


def maneuver_metrics(cfg: ScenarioConfig, truth_csv: str, est_csvs: Sequence[str],
                     duration: float) -> MetricsReport:
    """Metrics computed from the stored CSV text, shared by the run and report paths."""
    runs = [EstimateSeries.from_csv(t) for t in est_csvs]
    if duration == 0:
        return empty_metrics(len(runs))
    truth = TruthSeries.from_csv(truth_csv)
    rt = build(cfg)
    return compute_metrics(runs[0], truth, runs, duration=duration, window=cfg.ground.smooth_window,
                           field_model=rt.field, lock_exclusion_deg=cfg.ground.lock_exclusion_deg)


def _estimate_names(n: int) -> list[str]:
    return ["estimates.csv"] + [f"estimates_run{k}.csv" for k in range(1, n)]


def cmd_maneuver(cfg: ScenarioConfig, out: Path) -> MetricsReport:
    sc = cfg.scenario
    if not isinstance(sc, ManeuverScenario):
        raise ConfigError("maneuver needs a scenario of kind 'maneuver'")
    rt = build(cfg)
    duration = rt.script.duration if sc.duration is None else sc.duration
    traj = run_maneuver(rt.script, rt.dynamics, duration)
    truth_csv = TruthSeries.from_trajectory(traj).to_csv()
    est_csvs = []
    for ss in np.random.SeedSequence(cfg.seed).spawn(sc.repeats):
        log = run_inventory(trajectory_truth(traj), rt.geometry, rt.node(ss), duration, rt.timing,
                            meta={"scenario": cfg.name, "seed": cfg.seed})
        est_csvs.append(EstimateSeries.from_log(log, rt.field).to_csv())
    metrics = maneuver_metrics(cfg, truth_csv, est_csvs, duration)

    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    _write(out, "truth.csv", truth_csv, files)
    for name, text in zip(_estimate_names(sc.repeats), est_csvs):
        _write(out, name, text, files)
    _write(out, "metrics.json", _dump_json(metrics.to_dict()), files)
    _finish(out, cfg, duration, files)
    return metrics


# -- sweep ----------------------------------------------------------------------------------

def sweep_file(axis: str, mount: Mount) -> str:
    return f"sweep_{axis}_{mount.value.lower()}.csv"


def sweep_summary(tables: dict[tuple[str, str], list[list[str]]]) -> dict:
    panels = []
    for (axis, config), rows in tables.items():
        rates = [float(r[4]) for r in rows]
        rssi = [float(r[3]) for r in rows if r[3] != ""]
        panels.append({"axis": axis, "config": config,
                       "rate_min_hz": min(rates, default=0.0), "rate_max_hz": max(rates, default=0.0),
                       "rssi_min_dbm": min(rssi) if rssi else None,
                       "rssi_max_dbm": max(rssi) if rssi else None})
    return {"panels": panels}


def cmd_sweep(cfg: ScenarioConfig, out: Path, axes: Optional[Sequence[str]] = None,
              mounts: Optional[Sequence[Mount]] = None, step: Optional[float] = None) -> dict:
    sc = cfg.scenario
    if not isinstance(sc, SweepScenario):
        raise ConfigError("sweep needs a scenario of kind 'sweep'")
    rt = build(cfg)
    step = sc.step_deg if step is None else step
    n = 360.0 / step
    if abs(n - round(n)) > 1e-9:
        raise ConfigError("step must divide 360")
    timing = ReaderTiming(round_time=rt.timing.round_time, window=sc.window, warmup=sc.warmup,
                          q=rt.timing.q)
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    tables = {}
    for mi, mount in enumerate(mounts or sc.mounts):
        geom = replace(rt.geometry, mount=mount)
        for ai, axis in enumerate(axes or sc.axes):
            counter = itertools.count()
            factory = lambda: rt.node(np.random.SeedSequence([cfg.seed, mi, ai, next(counter)]))
            rows = [r.csv_fields() for r in orientation_sweep(axis, geom, factory, timing, step)]
            tables[(axis, mount.value)] = rows
            _write(out, sweep_file(axis, mount), _csv_text(SWEEP_HEADER, rows), files)
    summary = sweep_summary(tables)
    _write(out, "sweep_summary.json", _dump_json(summary), files)
    _finish(out, cfg, sc.window, files)
    return summary


# -- rotor failure ------------------------------------------------------------------------

def rotor_summary(t, yaw_rate, rotor: Optional[int], fail_time: float,
                  spins: Sequence[int] = ROTOR_SPINS) -> dict:
    """Yaw-spin verdicts; ``None`` where the trace cannot support them."""
    spin = None if rotor is None else int(spins[rotor])
    summary = {"rotor": rotor, "spin": spin, "fail_time": fail_time,
               "yaw_rate_end": float(yaw_rate[-1]) if len(yaw_rate) else 0.0,
               "sign_matches": None, "monotone_first_half_second": None}
    if rotor is not None:
        try:
            resp = failure_response(t, yaw_rate, spin, fail_time)
        except ConfigError:  # run ends before the horizon
            return summary
        summary.update(yaw_rate_end=resp.yaw_rate_end, sign_matches=resp.sign_matches,
                       monotone_first_half_second=resp.monotone)
    return summary


def _read_yaw_trace(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != schemas.YAW_RATE_HEADER:
        raise ConfigError("yaw_rate.csv has an unexpected header")
    a = np.array([[float(v) for v in r] for r in rows[1:] if r]).reshape(-1, len(schemas.YAW_RATE_HEADER))
    return a[:, 0], a[:, 1]


def cmd_rotor_failure(cfg: ScenarioConfig, out: Path, rotor: Optional[int] = -1) -> dict:
    sc = cfg.scenario
    if not isinstance(sc, RotorFailureScenario):
        raise ConfigError("rotor-failure needs a scenario of kind 'rotor_failure'")
    if rotor != -1:
        cfg = cfg.model_copy(update={"scenario": sc.model_copy(update={"rotor": rotor})})
        sc = cfg.scenario
    rt: Runtime = build(cfg)
    duration = rt.script.duration if sc.duration is None else sc.duration
    traj = run_maneuver(rt.script, rt.dynamics, duration)
    sl = traj.logged()
    trace = _csv_text(schemas.YAW_RATE_HEADER,
                      [[f"{t:.9f}", f"{w:.9f}", *(f"{r:.6f}" for r in rpm)]
                       for t, w, rpm in zip(traj.t[sl], traj.omega[sl, 2], traj.rpm[sl])])
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    _write(out, "truth.csv", TruthSeries.from_trajectory(traj).to_csv(), files)
    _write(out, "yaw_rate.csv", trace, files)
    summary = rotor_summary(*_read_yaw_trace(trace), sc.rotor, sc.fail_time, rt.dynamics.rotors.spin)
    _write(out, "rotor_failure.json", _dump_json(summary), files)
    _finish(out, cfg, duration, files)
    return summary


# -- report -------------------------------------------------------------------------------------

def cmd_report(run_dir: Path, out: Optional[Path] = None) -> dict:
    """Recompute metrics and figure data from a previous run directory."""
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / "run.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{run_dir} is not a run directory: {exc}") from exc
    cfg = load_config(manifest["config"])
    out = Path(out) if out is not None else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    kind, duration = manifest["kind"], float(manifest["duration"])

    def read(name: str) -> str:
        try:
            return (run_dir / name).read_text()
        except OSError as exc:
            raise ConfigError(f"missing run file {name}") from exc

    if kind == "maneuver":
        names = [n for n in _estimate_names(cfg.scenario.repeats)]
        est_csvs = [read(n) for n in names]
        truth_csv = read("truth.csv")
        try:
            metrics = maneuver_metrics(cfg, truth_csv, est_csvs, duration)
        except ValueError as exc:
            raise AlignmentError(f"stored series are unusable: {exc}") from exc
        result = metrics.to_dict()
        _write(out, "metrics.json", _dump_json(result), files)
        truth = TruthSeries.from_csv(truth_csv)
        runs = [EstimateSeries.from_csv(t) for t in est_csvs]
        rows6 = []
        if len(truth) > 1 and len(runs[0]):
            period = float(np.median(np.diff(truth.t)))
            ie, it = align_nearest(runs[0].t, truth.t, period / 2)
            rows6 = [[f"{runs[0].t[i]:.6f}", *(f"{v:.6f}" for v in truth.euler[j]),
                      *(f"{v:.6f}" for v in runs[0].euler[i])] for i, j in zip(ie, it)]
        _write(out, "fig6_attitude.csv", _csv_text(FIG6_HEADER, rows6), files)
        rows7 = []
        for k, r in enumerate(runs):
            sm = smooth(r.accel, cfg.ground.smooth_window)
            rows7 += [[k, f"{r.t[i]:.6f}", *(f"{v:.6f}" for v in sm[i])] for i in range(len(r))]
        _write(out, "fig7_accel.csv", _csv_text(FIG7_HEADER, rows7), files)
    elif kind == "sweep":
        tables = {}
        for name in sorted(n for n in manifest["files"] if n.startswith("sweep_") and n.endswith(".csv")):
            rows = list(csv.reader(io.StringIO(read(name))))[1:]
            if rows:
                tables[(rows[0][0], rows[0][2])] = rows
        result = sweep_summary(tables)
        _write(out, "sweep_summary.json", _dump_json(result), files)
        _write(out, "fig5_sweep.csv",
               _csv_text(FIG5_HEADER, [r for rows in tables.values() for r in rows]), files)
    elif kind == "rotor_failure":
        t, w = _read_yaw_trace(read("yaw_rate.csv"))
        sc = cfg.scenario
        result = rotor_summary(t, w, sc.rotor, sc.fail_time, build(cfg).dynamics.rotors.spin)
        _write(out, "rotor_failure.json", _dump_json(result), files)
    else:
        raise ConfigError(f"unknown run kind {kind!r}")
    for name in files:
        schemas.validate_file(out / name)
    return result


# -- argument parsing ------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors, not exit 2
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gimbal-twin", description="Batteryless gimbal sensor digital twin")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="scenario JSON file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory (overrides the config)")

    m = sub.add_parser("maneuver", help="scripted maneuver with repeated seeded runs")
    common(m)
    m.add_argument("--duration", type=float, help="override the scenario duration (s)")
    s = sub.add_parser("sweep", help="static orientation sweep of read rate and RSSI")
    common(s)
    s.add_argument("--duration", type=float, help="override the measurement window (s)")
    s.add_argument("--step", type=float, help="angle step in degrees (must divide 360)")
    s.add_argument("--axis", choices=("roll", "pitch", "yaw"), action="append")
    s.add_argument("--antenna", choices=[m_.value for m_ in Mount], action="append")
    r = sub.add_parser("rotor-failure", help="single rotor failure and the resulting yaw spin")
    common(r)
    r.add_argument("--duration", type=float, help="override the scenario duration (s)")
    r.add_argument("--rotor", help="failed rotor index 0-3, or 'none' for the baseline")
    rp = sub.add_parser("report", help="recompute metrics and figure data from a run directory")
    rp.add_argument("run_dir", nargs="?", help="directory written by a previous command")
    common(rp, config_required=False)
    return p


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    update = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        update["seed"] = args.seed
    if args.out is not None:
        update["out"] = args.out
    if getattr(args, "duration", None) is not None:
        if args.duration < 0:
            raise ConfigError("duration must be non-negative")
        key = "window" if isinstance(cfg.scenario, SweepScenario) else "duration"
        if key == "window" and args.duration <= 0:
            raise ConfigError("sweep window must be positive")
        update["scenario"] = cfg.scenario.model_copy(update={key: args.duration})
    return cfg.model_copy(update=update) if update else cfg


def _parse_rotor(text: Optional[str]) -> Optional[int]:
    if text is None:
        return -1
    if text.lower() == "none":
        return None
    try:
        idx = int(text)
    except ValueError:
        raise ConfigError(f"rotor must be an integer 0-3 or 'none', got {text!r}") from None
    if not 0 <= idx <= 3:
        raise ConfigError(f"rotor index must be 0..3, got {idx}")
    return idx


def resolve_config(name: str) -> Path:
    """A path as given, or else the bundled config of that file name."""
    p = Path(name)
    if p.exists():
        return p
    bundled = BUNDLED_DIR / p.name
    return bundled if bundled.exists() else p


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run one command; raises package errors."""
    args = _parser().parse_args(argv)
    if args.command == "report":
        run_dir = args.run_dir
        if run_dir is None:
            if args.config is None:
                raise ConfigError("report needs a run directory")
            run_dir = load_config(resolve_config(args.config)).out
        cmd_report(Path(run_dir), Path(args.out) if args.out else None)
        return EXIT_OK
    cfg = _apply_overrides(load_config(resolve_config(args.config)), args)
    out = Path(cfg.out)
    if args.command == "maneuver":
        cmd_maneuver(cfg, out)
    elif args.command == "sweep":
        mounts = [Mount(a) for a in args.antenna] if args.antenna else None
        cmd_sweep(cfg, out, args.axis, mounts, args.step)
    else:
        cmd_rotor_failure(cfg, out, _parse_rotor(args.rotor))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AlignmentError as exc:
        print(f"alignment error: {exc}", file=sys.stderr)
        return EXIT_ALIGN
    except GimbalTwinError as exc:
        print(f"simulation fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except schemas.SchemaViolation as exc:
        print(f"output schema violation: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
