import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, TypeVar

import typer

from imeac.core import runner
from imeac.core.assessment import AssessmentError
from imeac.core.dynamics import SimulationError
from imeac.core.kimbark import AnalysisError
from imeac.network.case_model import CaseError
from imeac.network.reduction import NetworkError
from imeac.utils import config as config_utils
from imeac.utils import export
from imeac.utils.logging import (
    LOG_DIR,
    LOG_FILE,
    active_log_dir,
    active_log_file,
    get_logger,
    setup_logging,
)

logger = get_logger(__name__)

_LOG_LEVEL_CHOICES = {
    name: getattr(logging, name.upper()) for name in config_utils.LOG_LEVEL_VALUES
}
_LOG_LEVEL_CHOICES["warn"] = logging.WARNING

ERROR_EXIT_CODE = 4
_RUN_ERRORS = (
    CaseError,
    NetworkError,
    SimulationError,
    AnalysisError,
    AssessmentError,
    config_utils.ConfigError,
    OSError,
)

T = TypeVar("T")

app = typer.Typer(
    help="IMEAC - transient stability simulation and individual-machine assessment.",
    no_args_is_help=True,
)
config_app = typer.Typer(help="Inspect and edit IMEAC configuration.")
app.add_typer(config_app, name="config")


def _emit_config_error(error: config_utils.ConfigError) -> None:
    typer.echo(f"Configuration error: {error}", err=True)
    raise typer.Exit(code=1)


def _render_config_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value)


def _get_config_value(key: str) -> Any:
    try:
        return config_utils.get_value(key)
    except config_utils.ConfigError as exc:
        _emit_config_error(exc)
    raise AssertionError("unreachable")


def _guarded(action: Callable[[], T]) -> T:
    """Run a pipeline step, mapping library errors to exit code 4."""

    try:
        return action()
    except _RUN_ERRORS as exc:
        logger.error("run_failed error=%s", str(exc), extra={"error": str(exc)})
        typer.echo(f"Error: {exc}", err=True)
        raise typer.Exit(code=ERROR_EXIT_CODE)


def _build(command: str, config_file: Optional[Path], **flags: Any) -> runner.RunConfig:
    return _guarded(
        lambda: runner.build_run_config(command, flags, config_file=config_file)
    )


_CASE_HELP = (
    f"Case file path or name (env {config_utils.CASE_DIR_ENV_VAR} is searched, "
    "then bundled cases)."
)


@app.callback()
def configure_logging(
    log_level: Optional[str] = typer.Option(
        None,
        help="Logging level (config key: log.level).",
        metavar="LEVEL",
    ),
) -> None:
    """Configure logging before executing a sub-command."""

    configured_level = _get_config_value("log.level")

    candidate = log_level.lower() if log_level else configured_level
    candidate = "warning" if candidate == "warn" else candidate

    if candidate not in _LOG_LEVEL_CHOICES:
        choices = ", ".join(sorted(v for v in config_utils.LOG_LEVEL_VALUES))
        raise typer.BadParameter(
            f"Unsupported log level '{candidate}'. Choose from {choices}."
        )

    setup_logging(level=_LOG_LEVEL_CHOICES[candidate])


@app.command()
def simulate(
    case: Optional[str] = typer.Option(None, "--case", help=_CASE_HELP),
    fault_bus: Optional[str] = typer.Option(
        None, "--fault-bus", help="Bus with the solid three-phase fault."
    ),
    tcl: Optional[float] = typer.Option(
        None, "--tcl", help="Clearing time in seconds after inception."
    ),
    tend: Optional[float] = typer.Option(
        None, "--tend", help="Simulation horizon in seconds (config key: sim.t_end)."
    ),
    step: Optional[float] = typer.Option(
        None, "--step", help="Integration step in seconds (config key: sim.step)."
    ),
    inertia_unit: Optional[str] = typer.Option(
        None, "--inertia-unit", help="Override the case inertia unit (M or H)."
    ),
    output: Optional[Path] = typer.Option(
        None, "--output", "-o", help="Directory for output files."
    ),
    config_file: Optional[Path] = typer.Option(
        None, "--config", help="JSON run configuration; flags override it."
    ),
) -> None:
    """Simulate one fault and write trajectory.csv and summary.json."""

    config = _build(
        "simulate",
        config_file,
        case=case,
        fault_bus=fault_bus,
        tcl=tcl,
        tend=tend,
        step=step,
        inertia_unit=inertia_unit,
        output=output,
    )
    summary = _guarded(lambda: runner.run_simulate(config))
    written = config.output / "trajectory.csv"
    typer.echo(f"Wrote {written} ({summary['samples']} samples)")
    residuals = summary["coi_residuals"]
    typer.echo(
        "COI residuals: "
        + " ".join(
            f"{key}={export.fmt(value)}" for key, value in sorted(residuals.items())
        )
    )
    departed = summary["departed"]
    listed = ", ".join(map(str, departed)) if departed else "(none)"
    typer.echo(f"Departed machines: {listed}")


@app.command()
def assess(
    case: Optional[str] = typer.Option(None, "--case", help=_CASE_HELP),
    fault_bus: Optional[str] = typer.Option(
        None, "--fault-bus", help="Bus with the solid three-phase fault."
    ),
    tcl: Optional[float] = typer.Option(
        None, "--tcl", help="Clearing time in seconds after inception."
    ),
    tend: Optional[float] = typer.Option(
        None, "--tend", help="Simulation horizon in seconds (config key: sim.t_end)."
    ),
    step: Optional[float] = typer.Option(
        None, "--step", help="Integration step in seconds (config key: sim.step)."
    ),
    monitor: Optional[List[int]] = typer.Option(
        None, "--monitor", help="Judge from this critical machine only (repeatable)."
    ),
    window: Optional[float] = typer.Option(
        None, "--window", help="Critical-machine observation window in seconds."
    ),
    energy_share: Optional[float] = typer.Option(
        None,
        "--energy-share",
        help="Share of the largest kinetic energy that marks a machine critical.",
    ),
    eps_f: Optional[float] = typer.Option(
        None, "--eps-f", help="Accelerating-power tolerance (p.u.)."
    ),
    eps_omega: Optional[float] = typer.Option(
        None, "--eps-omega", help="Relative-speed tolerance (rad/s)."
    ),
    inertia_unit: Optional[str] = typer.Option(
        None, "--inertia-unit", help="Override the case inertia unit (M or H)."
    ),
    output: Optional[Path] = typer.Option(
        None, "--output", "-o", help="Directory for output files."
    ),
    config_file: Optional[Path] = typer.Option(
        None, "--config", help="JSON run configuration; flags override it."
    ),
) -> None:
    """Assess one fault.

    The exit code is 0 stable, 1 unstable, 2 undecided, 3 critical-stable.
    """

    config = _build(
        "assess",
        config_file,
        case=case,
        fault_bus=fault_bus,
        tcl=tcl,
        tend=tend,
        step=step,
        monitor=monitor,
        window=window,
        energy_share=energy_share,
        eps_f=eps_f,
        eps_omega=eps_omega,
        inertia_unit=inertia_unit,
        output=output,
    )
    outcome = _guarded(lambda: runner.run_assess(config))
    typer.echo((config.output / "report.txt").read_text(encoding="utf-8"), nl=False)
    raise typer.Exit(code=outcome.report.exit_code)


@app.command("export-kimbark")
def export_kimbark(
    case: Optional[str] = typer.Option(None, "--case", help=_CASE_HELP),
    fault_bus: Optional[str] = typer.Option(
        None, "--fault-bus", help="Bus with the solid three-phase fault."
    ),
    tcl: Optional[float] = typer.Option(
        None, "--tcl", help="Clearing time in seconds after inception."
    ),
    tend: Optional[float] = typer.Option(
        None, "--tend", help="Simulation horizon in seconds (config key: sim.t_end)."
    ),
    step: Optional[float] = typer.Option(
        None, "--step", help="Integration step in seconds (config key: sim.step)."
    ),
    machine: Optional[List[int]] = typer.Option(
        None, "--machine", help="Machine to export (repeatable; default all)."
    ),
    inertia_unit: Optional[str] = typer.Option(
        None, "--inertia-unit", help="Override the case inertia unit (M or H)."
    ),
    output: Optional[Path] = typer.Option(
        None, "--output", "-o", help="Directory for output files."
    ),
    config_file: Optional[Path] = typer.Option(
        None, "--config", help="JSON run configuration; flags override it."
    ),
) -> None:
    """Write kimbark_<machine>.csv with the sampled (t, theta, f, omega_rel) path."""

    config = _build(
        "export-kimbark",
        config_file,
        case=case,
        fault_bus=fault_bus,
        tcl=tcl,
        tend=tend,
        step=step,
        machine=machine,
        inertia_unit=inertia_unit,
        output=output,
    )
    paths = _guarded(lambda: runner.run_export_kimbark(config))
    for path in paths:
        typer.echo(f"Wrote {path}")


@app.command()
def cct(
    case: Optional[str] = typer.Option(None, "--case", help=_CASE_HELP),
    fault_bus: Optional[List[str]] = typer.Option(
        None, "--fault-bus", help="Faulted bus (repeatable)."
    ),
    t_lo: Optional[float] = typer.Option(
        None, "--t-lo", help="Clearing time known to be stable."
    ),
    t_hi: Optional[float] = typer.Option(
        None, "--t-hi", help="Clearing time known to be unstable."
    ),
    tol: Optional[float] = typer.Option(
        None, "--tol", help="Bracket width in seconds (config key: cct.tolerance)."
    ),
    tend: Optional[float] = typer.Option(
        None, "--tend", help="Simulation horizon in seconds (config key: sim.t_end)."
    ),
    step: Optional[float] = typer.Option(
        None, "--step", help="Integration step in seconds (config key: sim.step)."
    ),
    jobs: Optional[int] = typer.Option(
        None,
        "--jobs",
        help="Worker processes across fault buses (config key: run.jobs).",
    ),
    inertia_unit: Optional[str] = typer.Option(
        None, "--inertia-unit", help="Override the case inertia unit (M or H)."
    ),
    output: Optional[Path] = typer.Option(
        None, "--output", "-o", help="Directory for output files."
    ),
    config_file: Optional[Path] = typer.Option(
        None, "--config", help="JSON run configuration; flags override it."
    ),
) -> None:
    """Bisect the critical clearing time of each fault bus."""

    config = _build(
        "cct",
        config_file,
        case=case,
        fault_bus=fault_bus,
        t_lo=t_lo,
        t_hi=t_hi,
        tol=tol,
        tend=tend,
        step=step,
        jobs=jobs,
        inertia_unit=inertia_unit,
        output=output,
    )
    config, warning = runner.clamp_tolerance(config)
    if warning:
        typer.echo(f"Warning: {warning}", err=True)
    results = _guarded(lambda: runner.run_cct(config))
    typer.echo(export.render_cct(results), nl=False)


@app.command()
def sweep(
    case: Optional[str] = typer.Option(None, "--case", help=_CASE_HELP),
    fault_bus: Optional[List[str]] = typer.Option(
        None, "--fault-bus", help="Faulted bus (repeatable)."
    ),
    tcl: Optional[List[float]] = typer.Option(
        None, "--tcl", help="Clearing time in seconds (repeatable)."
    ),
    tend: Optional[float] = typer.Option(
        None, "--tend", help="Simulation horizon in seconds (config key: sim.t_end)."
    ),
    step: Optional[float] = typer.Option(
        None, "--step", help="Integration step in seconds (config key: sim.step)."
    ),
    jobs: Optional[int] = typer.Option(
        None,
        "--jobs",
        help="Worker processes across fault buses (config key: run.jobs).",
    ),
    inertia_unit: Optional[str] = typer.Option(
        None, "--inertia-unit", help="Override the case inertia unit (M or H)."
    ),
    output: Optional[Path] = typer.Option(
        None, "--output", "-o", help="Directory for output files."
    ),
    config_file: Optional[Path] = typer.Option(
        None, "--config", help="JSON run configuration; flags override it."
    ),
) -> None:
    """Assess every (fault bus, clearing time) pair against the angle oracle."""

    config = _build(
        "sweep",
        config_file,
        case=case,
        fault_bus=fault_bus,
        tcl=tcl,
        tend=tend,
        step=step,
        jobs=jobs,
        inertia_unit=inertia_unit,
        output=output,
    )
    rows = _guarded(lambda: runner.run_sweep(config))
    mismatches = [row for row in rows if not row.agrees]
    typer.echo(
        f"Wrote {config.output / 'sweep.csv'} ({len(rows)} cases, "
        f"{len(mismatches)} disagree with the oracle)"
    )
    for row in mismatches:
        typer.echo(
            f"  bus-{row.fault_bus} t_cl={export.fmt(row.t_cl)}s "
            f"imeac={row.verdict} oracle={row.oracle}"
        )


def _storage_paths() -> Dict[str, Optional[str]]:
    def _text(path: Optional[Path]) -> Optional[str]:
        return None if path is None else str(path)

    return {
        "config_dir": str(config_utils.config_dir()),
        "config_file": str(config_utils.config_path()),
        "case_dir": _text(config_utils.case_dir()),
        "log_dir": str(LOG_DIR),
        "log_file": str(LOG_FILE),
        "log_dir_active": _text(active_log_dir()),
        "log_file_active": _text(active_log_file()),
    }


@config_app.command("show")
def config_show(
    as_json: bool = typer.Option(False, "--json", help="Emit configuration as JSON."),
) -> None:
    """Display effective settings by section with the run flag each one seeds."""

    try:
        data = config_utils.list_config()
    except config_utils.ConfigError as exc:
        _emit_config_error(exc)
    paths = _storage_paths()

    if as_json:
        typer.echo(json.dumps({"options": data, "paths": paths}, indent=2))
        return

    section = None
    for key in sorted(data):
        info = data[key]
        head, _, name = key.partition(".")
        if head != section:
            section = head
            typer.echo(f"[{section}]")
        run_field = info["run_field"]
        flag = f" (--{run_field.replace('_', '-')})" if run_field else ""
        marker = "*" if info["source"] == "user" else " "
        value = _render_config_value(info["value"])
        typer.echo(f" {marker} {name:<18} = {value}{flag}")
        typer.echo(f"    {info['description']}")
        if info["source"] == "user":
            typer.echo(f"    default {_render_config_value(info['default'])}")
        if info["choices"]:
            typer.echo(f"    one of {', '.join(info['choices'])}")

    typer.echo("")
    typer.echo("Storage paths:")
    for label, value in paths.items():
        typer.echo(f"  {label.replace('_', ' '):<15} : {value}")


@config_app.command("set")
def config_set(key: str, value: str) -> None:
    """Persist a default for later runs."""

    try:
        parsed = config_utils.set_value(key, value)
    except config_utils.ConfigError as exc:
        _emit_config_error(exc)
    typer.echo(f"{key} = {_render_config_value(parsed)}")


@config_app.command("unset")
def config_unset(key: str) -> None:
    """Drop a saved default."""

    try:
        config_utils.unset_value(key)
    except config_utils.ConfigError as exc:
        _emit_config_error(exc)
    typer.echo(f"Reset {key} to its default value")


@config_app.command("path")
def config_path_cmd() -> None:
    """Show where the configuration file lives."""

    typer.echo(str(config_utils.config_path()))


def _log_candidates() -> List[Path]:
    active = active_log_file()
    return list(dict.fromkeys(p for p in (active, LOG_FILE) if p is not None))


@app.command()
def log(
    case: Optional[str] = typer.Option(
        None, help="Only lines logged for this case name."
    ),
    fault_bus: Optional[int] = typer.Option(
        None, help="Only lines logged for this fault bus."
    ),
    tail: int = typer.Option(
        0, min=0, help="Show only the last N matching lines (0 = all)."
    ),
) -> None:
    """Show logged run events, optionally narrowed to one case or fault bus."""

    wanted = [
        f"{key}={value}"
        for key, value in (("case", case), ("fault_bus", fault_bus))
        if value is not None
    ]
    for candidate in _log_candidates():
        try:
            if not candidate.exists():
                continue
            lines = candidate.read_text().splitlines()
        except OSError as exc:
            typer.echo(f"Unable to read log file {candidate}: {exc}", err=True)
            continue
        selected = [
            line for line in lines if all(token in line.split() for token in wanted)
        ]
        for line in selected[-tail:] if tail else selected:
            typer.echo(line)
        return

    typer.echo("No logs found.")


def main() -> None:
    """Console script entrypoint invoked by the ``imeac`` binary."""

    app()


def entrypoint() -> None:
    """Alias for console script entrypoint (packaging compatibility)."""

    main()


if __name__ == "__main__":
    main()
