"""Run configuration and the simulate/assess/CCT/sweep pipelines behind the CLI."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from imeac.core.assessment import (
    AnalysisSettings,
    CctResult,
    ClearingOutcome,
    assess_clearing,
    cct_bisect,
    theta_oracle,
)
from imeac.core.dynamics import GRID_TOLERANCE, Stage, Trajectory, simulate
from imeac.core.kimbark import DetectionTolerances, IdentificationParams, kimbark_curve
from imeac.network.case_model import PowerSystemCase, resolve_case
from imeac.network.reduction import build_staged_network
from imeac.utils import config as config_utils
from imeac.utils import export
from imeac.utils.logging import get_logger, run_context

logger = get_logger(__name__)

__all__ = [
    "RunConfig",
    "SweepRow",
    "build_run_config",
    "clamp_tolerance",
    "run_assess",
    "run_cct",
    "run_export_kimbark",
    "run_simulate",
    "run_sweep",
]


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation needs; keys match the long flag names."""

    command: str
    case: str = "ts1"
    inertia_unit: Optional[str] = None
    fault_bus: Tuple[str, ...] = ()
    tcl: Tuple[float, ...] = ()
    tend: float = 2.0
    step: float = 1e-3
    window: float = 0.05
    min_excursion: float = 1e-6
    energy_share: float = 0.05
    eps_f: float = 1e-6
    eps_omega: float = 1e-6
    eps_energy: float = 1e-6
    oracle_threshold: float = 2.0 * math.pi
    horizon_extensions: int = 1
    monitor: Tuple[int, ...] = ()
    machine: Tuple[int, ...] = ()
    t_lo: Optional[float] = None
    t_hi: Optional[float] = None
    tol: float = 1e-3
    jobs: int = 1
    output: Path = Path("imeac_out")

    def settings(self) -> AnalysisSettings:
        return AnalysisSettings(
            step=self.step,
            t_end=self.tend,
            identification=IdentificationParams(
                window=self.window,
                min_excursion=self.min_excursion,
                energy_share=self.energy_share,
            ),
            tolerances=DetectionTolerances(
                eps_f=self.eps_f, eps_omega=self.eps_omega, eps_energy=self.eps_energy
            ),
            oracle_threshold=self.oracle_threshold,
            horizon_extensions=self.horizon_extensions,
        )


_TUPLE_FIELDS = {"fault_bus": str, "tcl": float, "monitor": int, "machine": int}
_FLOAT_FIELDS = {
    "tend",
    "step",
    "window",
    "min_excursion",
    "energy_share",
    "eps_f",
    "eps_omega",
    "eps_energy",
    "oracle_threshold",
    "t_lo",
    "t_hi",
    "tol",
}
_POSITIVE_FIELDS = (
    "window",
    "min_excursion",
    "energy_share",
    "eps_f",
    "eps_omega",
    "eps_energy",
    "oracle_threshold",
    "tol",
)
_INT_FIELDS = {"horizon_extensions", "jobs"}
_FILE_KEYS = {f.name for f in fields(RunConfig)} - {"command"}


def _on_grid(value: float, step: float) -> bool:
    ratio = value / step
    return abs(ratio - round(ratio)) <= GRID_TOLERANCE


def _coerce(key: str, value: Any) -> Any:
    try:
        if key in _TUPLE_FIELDS:
            items = value if isinstance(value, (list, tuple)) else [value]
            return tuple(_TUPLE_FIELDS[key](item) for item in items)
        if key in _FLOAT_FIELDS:
            return None if value is None else float(value)
        if key in _INT_FIELDS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if key == "output":
            return Path(value).expanduser()
    except (TypeError, ValueError) as exc:
        raise config_utils.ConfigError(f"Invalid value for '{key}': {value!r}") from exc
    return value


def _load_run_file(path: Path) -> Dict[str, Any]:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise config_utils.ConfigError(f"Cannot read run config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise config_utils.ConfigError(f"Run config {path} is not valid JSON") from exc
    if not isinstance(payload, dict):
        raise config_utils.ConfigError(f"Run config {path} must contain a JSON object")
    normalized = {str(key).replace("-", "_"): value for key, value in payload.items()}
    unknown = sorted(set(normalized) - _FILE_KEYS)
    if unknown:
        raise config_utils.ConfigError(
            f"Unknown run config key '{unknown[0]}' in {path}"
        )
    return normalized


def build_run_config(
    command: str,
    flags: Mapping[str, Any],
    *,
    config_file: Optional[Path] = None,
) -> RunConfig:
    """Defaults, then user settings, then ``config_file``, then explicit flags."""

    values: Dict[str, Any] = config_utils.run_defaults()
    if config_file is not None:
        values.update(_load_run_file(config_file))
    values.update(
        {key: value for key, value in flags.items() if value not in (None, (), [])}
    )
    unknown = sorted(set(values) - _FILE_KEYS)
    if unknown:
        raise config_utils.ConfigError(f"Unknown run option '{unknown[0]}'")

    coerced = {key: _coerce(key, value) for key, value in values.items()}
    config = RunConfig(command=command, **coerced)
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    error = config_utils.ConfigError
    if not config.step > 0:
        raise error(f"step must be positive, got {config.step!r}")
    if not config.tend > 0 or not _on_grid(config.tend, config.step):
        raise error(
            f"tend={config.tend!r} must be a positive multiple of step={config.step!r}"
        )
    for t_cl in config.tcl:
        if not 0 < t_cl < config.tend:
            raise error(f"tcl={t_cl!r} must satisfy 0 < tcl < tend={config.tend!r}")
        if not _on_grid(t_cl, config.step):
            raise error(f"tcl={t_cl!r} is not a multiple of step={config.step!r}")
    if config.jobs < 1:
        raise error("jobs must be at least 1")
    if config.horizon_extensions < 0:
        raise error("horizon_extensions must not be negative")
    for key in _POSITIVE_FIELDS:
        if not getattr(config, key) > 0:
            raise error(f"{key} must be positive")
    if config.energy_share > 1:
        raise error("energy_share must not exceed 1")
    try:
        config.output.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise error(f"Cannot create output directory {config.output}: {exc}") from exc
    if not os.access(config.output, os.W_OK):
        raise error(f"Output directory {config.output} is not writable")


def _single(values: Sequence[Any], label: str) -> Any:
    if len(values) != 1:
        raise config_utils.ConfigError(
            f"exactly one {label} is required, got {len(values)}"
        )
    return values[0]


def _load(config: RunConfig) -> PowerSystemCase:
    return resolve_case(config.case, inertia_unit=config.inertia_unit)


def _run_summary(
    case: PowerSystemCase, fault_bus: Optional[int], traj: Trajectory, threshold: float
) -> Dict[str, Any]:
    excursion = np.max(np.abs(traj.theta - traj.theta[0]), axis=0)
    peak = np.max(np.abs(traj.theta), axis=0)
    fault_rows = int(np.count_nonzero(traj.stage == Stage.FAULT_ON))
    return {
        "case": case.name,
        "fault_bus": fault_bus,
        "machines": len(traj.machine_ids),
        "samples": traj.samples,
        "instants": len(traj),
        "t_cl": traj.t_cl,
        "t_end": traj.t_end,
        "step": traj.step,
        "stages": [
            {
                "stage": Stage.FAULT_ON.label,
                "start": 0.0,
                "end": traj.t_cl,
                "samples": fault_rows,
            },
            {
                "stage": Stage.POST_FAULT.label,
                "start": traj.t_cl,
                "end": traj.t_end,
                "samples": traj.samples - fault_rows,
            },
        ],
        "coi_residuals": traj.coi_residuals(),
        "max_excursion": {
            str(m): float(excursion[k]) for k, m in enumerate(traj.machine_ids)
        },
        "departed": [m for k, m in enumerate(traj.machine_ids) if peak[k] > threshold],
        "oracle": theta_oracle(traj, threshold).value,
    }


def run_simulate(config: RunConfig) -> Dict[str, Any]:
    case = _load(config)
    network = build_staged_network(case, _single(config.fault_bus, "fault bus"))
    t_cl = _single(config.tcl, "clearing time")
    traj = simulate(network, case, t_cl, config.tend, config.step)
    export.write_trajectory_csv(config.output / "trajectory.csv", traj)
    summary = _run_summary(case, network.fault_bus, traj, config.oracle_threshold)
    export.write_json(config.output / "summary.json", summary)
    return summary


def run_export_kimbark(config: RunConfig) -> List[Path]:
    case = _load(config)
    network = build_staged_network(case, _single(config.fault_bus, "fault bus"))
    t_cl = _single(config.tcl, "clearing time")
    traj = simulate(network, case, t_cl, config.tend, config.step)
    machines = config.machine or traj.machine_ids
    return [
        export.write_kimbark_csv(
            config.output / f"kimbark_{machine}.csv",
            kimbark_curve(traj, machine, eps_omega=config.eps_omega),
        )
        for machine in machines
    ]


def run_assess(config: RunConfig) -> ClearingOutcome:
    case = _load(config)
    network = build_staged_network(case, _single(config.fault_bus, "fault bus"))
    t_cl = _single(config.tcl, "clearing time")
    with run_context(case=case.name, fault_bus=network.fault_bus, t_cl=t_cl):
        outcome = assess_clearing(
            case, network, t_cl, config.settings(), monitored=config.monitor or None
        )
    report = outcome.report
    export.write_events_csv(config.output / "events.csv", report.events.values())
    export.write_report_csv(config.output / "report.csv", report)
    (config.output / "report.txt").write_text(
        export.render_report(
            report, case_name=case.name, fault_bus=network.fault_bus, t_cl=t_cl
        ),
        encoding="utf-8",
    )
    for machine in outcome.critical.machines:
        export.write_kimbark_csv(
            config.output / f"kimbark_{machine}.csv",
            kimbark_curve(outcome.trajectory, machine, eps_omega=config.eps_omega),
        )
    summary = _run_summary(
        case, network.fault_bus, outcome.trajectory, config.oracle_threshold
    )
    summary.update(
        {
            "critical": list(outcome.critical.machines),
            "no_disturbance": outcome.critical.no_disturbance,
            "verdict": report.verdict.value,
            "verdict_time": report.verdict_time,
            "horizon_extensions_used": outcome.extensions,
        }
    )
    export.write_json(config.output / "summary.json", summary)
    return outcome


def _resolve_workers(jobs: int, tasks: int) -> int:
    return max(1, min(jobs, tasks))


def run_cct(config: RunConfig) -> List[CctResult]:
    if config.t_lo is None or config.t_hi is None:
        raise config_utils.ConfigError("cct needs both t_lo and t_hi")
    if not config.t_hi < config.tend:
        raise config_utils.ConfigError(
            f"t_hi={config.t_hi!r} must be below tend={config.tend!r}"
        )
    if not config.fault_bus:
        raise config_utils.ConfigError("cct needs at least one fault bus")
    case = _load(config)
    settings = config.settings()
    buses = list(dict.fromkeys(config.fault_bus))
    workers = _resolve_workers(config.jobs, len(buses))

    results: Dict[str, CctResult] = {}
    if workers == 1:
        for bus in buses:
            with run_context(case=case.name, fault_bus=bus):
                results[bus] = cct_bisect(
                    case, bus, config.t_lo, config.t_hi, config.tol, settings
                )
    else:
        logger.info(
            "cct_parallel_start buses=%d workers=%d",
            len(buses),
            workers,
            extra={"buses": len(buses), "workers": workers},
        )
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(
                    cct_bisect,
                    case,
                    bus,
                    config.t_lo,
                    config.t_hi,
                    config.tol,
                    settings,
                ): bus
                for bus in buses
            }
            for future in as_completed(futures):
                results[futures[future]] = future.result()

    ordered = [results[bus] for bus in buses]
    export.write_cct_csv(config.output / "cct.csv", ordered)
    export.write_rows(
        config.output / "cct_probes.csv",
        export.CCT_PROBE_COLUMNS,
        (
            (result.fault_bus, export.fmt(probe.t_cl), probe.verdict.value)
            for result in ordered
            for probe in result.probes
        ),
    )
    (config.output / "cct.txt").write_text(export.render_cct(ordered), encoding="utf-8")
    return ordered


@dataclass(frozen=True)
class SweepRow:
    fault_bus: int
    t_cl: float
    verdict: str
    oracle: str
    critical: Tuple[int, ...]
    leading_losp: Optional[int]
    leading_losp_time: Optional[float]
    extensions: int

    @property
    def agrees(self) -> bool:
        return self.verdict == self.oracle


def _sweep_bus(
    case: PowerSystemCase,
    fault_bus: str,
    clearing_times: Sequence[float],
    settings: AnalysisSettings,
) -> List[SweepRow]:
    network = build_staged_network(case, fault_bus)
    rows = []
    for t_cl in clearing_times:
        with run_context(case=case.name, fault_bus=network.fault_bus, t_cl=t_cl):
            outcome = assess_clearing(case, network, t_cl, settings)
        leading = outcome.report.leading_losp
        rows.append(
            SweepRow(
                fault_bus=network.fault_bus,
                t_cl=t_cl,
                verdict=outcome.report.verdict.value,
                oracle=outcome.oracle.value,
                critical=outcome.critical.machines,
                leading_losp=None if leading is None else leading.machine_id,
                leading_losp_time=None if leading is None else leading.time,
                extensions=outcome.extensions,
            )
        )
    return rows


def run_sweep(config: RunConfig) -> List[SweepRow]:
    """Assess every (fault bus, clearing time) pair against the angle oracle."""

    if not config.fault_bus or not config.tcl:
        raise config_utils.ConfigError(
            "sweep needs at least one fault bus and one clearing time"
        )
    case = _load(config)
    settings = config.settings()
    buses = list(dict.fromkeys(config.fault_bus))
    clearing_times = sorted(set(config.tcl))
    workers = _resolve_workers(config.jobs, len(buses))
    logger.info(
        "sweep_start buses=%d clearing_times=%d workers=%d",
        len(buses),
        len(clearing_times),
        workers,
        extra={
            "buses": len(buses),
            "clearing_times": len(clearing_times),
            "workers": workers,
        },
    )

    per_bus: Dict[str, List[SweepRow]] = {}
    if workers == 1:
        for bus in buses:
            per_bus[bus] = _sweep_bus(case, bus, clearing_times, settings)
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(_sweep_bus, case, bus, clearing_times, settings): bus
                for bus in buses
            }
            for future in as_completed(futures):
                bus = futures[future]
                try:
                    per_bus[bus] = future.result()
                except Exception as exc:
                    logger.error(
                        "sweep_bus_failed fault_bus=%s error=%s",
                        bus,
                        str(exc),
                        extra={"fault_bus": bus, "error": str(exc)},
                    )
                    raise

    rows = [row for bus in buses for row in per_bus[bus]]
    export.write_rows(
        config.output / "sweep.csv",
        export.SWEEP_COLUMNS,
        (
            (
                row.fault_bus,
                export.fmt(row.t_cl),
                row.verdict,
                row.oracle,
                "yes" if row.agrees else "no",
                " ".join(map(str, row.critical)),
                "" if row.leading_losp is None else row.leading_losp,
                (
                    ""
                    if row.leading_losp_time is None
                    else export.fmt(row.leading_losp_time)
                ),
                row.extensions,
            )
            for row in rows
        ),
    )
    mismatches = sum(1 for row in rows if not row.agrees)
    logger.info(
        "sweep_complete pairs=%d mismatches=%d",
        len(rows),
        mismatches,
        extra={"pairs": len(rows), "mismatches": mismatches},
    )
    return rows


def clamp_tolerance(config: RunConfig) -> Tuple[RunConfig, Optional[str]]:
    """Raise a CCT tolerance finer than the step to the step itself."""

    if config.tol >= config.step:
        return config, None
    message = (
        f"tolerance {export.fmt(config.tol)} s is below the step; "
        f"using {export.fmt(config.step)} s"
    )
    logger.warning(
        "cct_tolerance_clamped tol=%.9g step=%.9g",
        config.tol,
        config.step,
        extra={"tol": config.tol, "step": config.step},
    )
    return replace(config, tol=config.step), message
