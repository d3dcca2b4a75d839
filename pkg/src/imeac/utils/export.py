"""Deterministic writers for trajectories, curves, events and reports.

Every number is written with 9 significant digits and files carry no
timestamps, so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from imeac.core.assessment import AssessmentReport, CctResult, Verdict
from imeac.core.dynamics import Stage, Trajectory
from imeac.core.kimbark import KimbarkCurve, SwingEvent

__all__ = [
    "CCT_COLUMNS",
    "CCT_PROBE_COLUMNS",
    "EVENT_COLUMNS",
    "KIMBARK_COLUMNS",
    "REPORT_COLUMNS",
    "SWEEP_COLUMNS",
    "TRAJECTORY_COLUMNS",
    "fmt",
    "render_cct",
    "render_report",
    "rounded",
    "write_cct_csv",
    "write_events_csv",
    "write_json",
    "write_kimbark_csv",
    "write_report_csv",
    "write_rows",
    "write_trajectory_csv",
]

TRAJECTORY_COLUMNS = (
    "t",
    "stage",
    "machine",
    "delta",
    "omega",
    "theta",
    "omega_rel",
    "pe",
    "f",
)
KIMBARK_COLUMNS = ("t", "theta", "f", "omega_rel", "stage")
EVENT_COLUMNS = ("machine", "kind", "time", "theta", "residual_ke", "a_acc", "a_dec")
REPORT_COLUMNS = ("event_order", "time", "machine", "kind", "verdict_so_far")
CCT_COLUMNS = ("fault_bus", "t_stable", "t_unstable", "probes")
CCT_PROBE_COLUMNS = ("fault_bus", "t_cl", "verdict")
SWEEP_COLUMNS = (
    "fault_bus",
    "t_cl",
    "verdict",
    "oracle",
    "agrees",
    "critical",
    "leading_losp",
    "leading_losp_time",
    "extensions",
)


def fmt(value: float) -> str:
    return f"{float(value):.9g}"


def rounded(value: Any) -> Any:
    """Recursively round floats to 9 significant digits for JSON output."""

    if isinstance(value, float):
        return float(fmt(value))
    if isinstance(value, Mapping):
        return {str(k): rounded(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [rounded(v) for v in value]
    return value


def write_rows(
    path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]
) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
    return path


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    text = json.dumps(rounded(payload), indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")
    return path


def _stage_label(code: int) -> str:
    return Stage(int(code)).label


def write_trajectory_csv(path: Path, traj: Trajectory) -> Path:
    def rows():
        for k in range(traj.samples):
            t = fmt(traj.time[k])
            stage = _stage_label(traj.stage[k])
            for column, machine in enumerate(traj.machine_ids):
                yield (
                    t,
                    stage,
                    machine,
                    fmt(traj.delta[k, column]),
                    fmt(traj.omega[k, column]),
                    fmt(traj.theta[k, column]),
                    fmt(traj.omega_rel[k, column]),
                    fmt(traj.pe[k, column]),
                    fmt(traj.accel[k, column]),
                )

    return write_rows(path, TRAJECTORY_COLUMNS, rows())


def write_kimbark_csv(path: Path, curve: KimbarkCurve) -> Path:
    rows = (
        (
            fmt(curve.time[k]),
            fmt(curve.theta[k]),
            fmt(curve.accel[k]),
            fmt(curve.omega_rel[k]),
            _stage_label(curve.stage[k]),
        )
        for k in range(len(curve))
    )
    return write_rows(path, KIMBARK_COLUMNS, rows)


def _event_row(event: SwingEvent) -> Sequence[str]:
    return (
        str(event.machine_id),
        event.kind.value,
        fmt(event.time),
        fmt(event.theta),
        fmt(event.residual_ke),
        fmt(event.a_acc),
        fmt(event.a_dec),
    )


def write_events_csv(path: Path, events: Iterable[Optional[SwingEvent]]) -> Path:
    found = sorted(
        (e for e in events if e is not None), key=lambda e: (e.time, e.machine_id)
    )
    return write_rows(path, EVENT_COLUMNS, (_event_row(e) for e in found))


def write_report_csv(path: Path, report: AssessmentReport) -> Path:
    rows = (
        (
            entry.order,
            fmt(entry.time),
            entry.machine_id,
            entry.kind.value,
            entry.verdict_so_far,
        )
        for entry in report.timeline
    )
    return write_rows(path, REPORT_COLUMNS, rows)


def render_report(
    report: AssessmentReport,
    *,
    case_name: str,
    fault_bus: Optional[int],
    t_cl: float,
) -> str:
    lines = [
        f"fault: [{case_name}, bus-{fault_bus}, {fmt(t_cl)}s]",
        f"critical machines: {', '.join(map(str, report.critical)) or '(none)'}",
    ]
    if set(report.monitored) != set(report.critical):
        lines.append(f"monitored machines: {', '.join(map(str, report.monitored))}")
    lines.append("")
    lines.append("timeline:")
    if not report.timeline:
        lines.append("  (no events)")
    for entry in report.timeline:
        lines.append(
            f"  {entry.order:>2}. t={fmt(entry.time)}s "
            f"{entry.kind.value}{entry.machine_id} -> {entry.verdict_so_far}"
        )
    undecided = [
        m for m, v in report.machine_verdicts.items() if v is Verdict.UNDECIDED
    ]
    if undecided:
        lines.append(f"  no event before horizon: {', '.join(map(str, undecided))}")
    if report.gaps:
        lines.append(f"  missing events: {', '.join(map(str, report.gaps))}")
    lines.append("")
    lines.append("machine verdicts:")
    for machine, verdict in report.machine_verdicts.items():
        lines.append(f"  {machine}: {verdict.value}")
    lines.append("")
    if report.leading_losp is not None:
        losp = report.leading_losp
        suffix = (
            ""
            if report.leading_losp_available
            else " (lagging; leading LOSP not observable)"
        )
        lines.append(f"leading LOSP: DLP{losp.machine_id} at {fmt(losp.time)}s{suffix}")
    if report.lagging_losps:
        lagging = ", ".join(
            f"DLP{e.machine_id} at {fmt(e.time)}s" for e in report.lagging_losps
        )
        lines.append(f"lagging LOSPs: {lagging}")
    if report.audit:
        lines.append("energy audit (a_acc, a_dec, max residual, closure):")
        for row in report.audit:
            closure = {None: "-", True: "closed", False: "OPEN"}[row.closed]
            lines.append(
                f"  {row.machine_id}: {fmt(row.a_acc)} {fmt(row.a_dec)}"
                f" {fmt(row.max_residual)} {closure}"
            )
    when = "" if report.verdict_time is None else f" at {fmt(report.verdict_time)}s"
    lines.append(f"system verdict: {report.verdict.value}{when}")
    return "\n".join(lines) + "\n"


def write_cct_csv(path: Path, results: Iterable[CctResult]) -> Path:
    rows = (
        (
            result.fault_bus,
            fmt(result.t_stable),
            fmt(result.t_unstable),
            len(result.probes),
        )
        for result in results
    )
    return write_rows(path, CCT_COLUMNS, rows)


def render_cct(results: Iterable[CctResult]) -> str:
    lines = []
    for result in results:
        lines.append(
            f"bus-{result.fault_bus}: t_stable={fmt(result.t_stable)}s"
            f" t_unstable={fmt(result.t_unstable)}s"
        )
        for probe in result.probes:
            lines.append(f"  t_cl={fmt(probe.t_cl)}s {probe.verdict.value}")
    return "\n".join(lines) + "\n"
