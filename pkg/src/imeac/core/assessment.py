"""System verdicts from per-machine events, CCT bisection and trajectory oracles.

The system is unstable as soon as any critical machine liberates and stable
only when every critical machine reaches its stationary point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import (
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from imeac.core.dynamics import Trajectory, simulate
from imeac.core.kimbark import (
    CriticalSet,
    DetectionTolerances,
    EventKind,
    IdentificationParams,
    SwingEvent,
    acceleration_area,
    area_closure,
    deceleration_profile,
    detect_events,
    energy_residual,
    identify_critical,
    kimbark_curve,
)
from imeac.network.case_model import PowerSystemCase
from imeac.network.reduction import StagedNetwork, build_staged_network
from imeac.utils.logging import get_logger

logger = get_logger(__name__)

__all__ = [
    "AnalysisSettings",
    "AssessmentError",
    "AssessmentReport",
    "BracketError",
    "CctProbe",
    "CctResult",
    "ClearingOutcome",
    "EXIT_CODES",
    "EnergyAudit",
    "PENDING",
    "TimelineEntry",
    "Verdict",
    "assess",
    "assess_clearing",
    "assess_subset",
    "cct_bisect",
    "energy_audit",
    "omib_critical_clearing_time",
    "theta_oracle",
]

PENDING = "pending"


class AssessmentError(ValueError):
    """Raised for inconsistent assessment requests."""


class BracketError(AssessmentError):
    """Raised when the clearing-time predicate is not bracketed."""


class Verdict(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    CRITICAL_STABLE = "critical-stable"
    UNDECIDED = "undecided"

    @property
    def is_stable_side(self) -> bool:
        return self in (Verdict.STABLE, Verdict.CRITICAL_STABLE)


EXIT_CODES: Dict[Verdict, int] = {
    Verdict.STABLE: 0,
    Verdict.UNSTABLE: 1,
    Verdict.UNDECIDED: 2,
    Verdict.CRITICAL_STABLE: 3,
}

_MACHINE_VERDICT = {
    EventKind.DLP: Verdict.UNSTABLE,
    EventKind.DSP: Verdict.STABLE,
    EventKind.CDSP: Verdict.CRITICAL_STABLE,
}


@dataclass(frozen=True)
class TimelineEntry:
    order: int
    time: float
    machine_id: int
    kind: EventKind
    verdict_so_far: str


@dataclass(frozen=True)
class EnergyAudit:
    """Area balance of one critical machine.

    ``closed`` is ``None`` unless the machine reached a stationary point.
    """

    machine_id: int
    a_acc: float
    a_dec: float
    max_residual: float
    closed: Optional[bool] = None


@dataclass(frozen=True)
class AssessmentReport:
    critical: Tuple[int, ...]
    monitored: Tuple[int, ...]
    machine_verdicts: Mapping[int, Verdict]
    events: Mapping[int, Optional[SwingEvent]]
    verdict: Verdict
    verdict_time: Optional[float]
    leading_losp: Optional[SwingEvent]
    lagging_losps: Tuple[SwingEvent, ...]
    timeline: Tuple[TimelineEntry, ...]
    gaps: Tuple[int, ...] = ()
    leading_losp_available: bool = False
    audit: Tuple[EnergyAudit, ...] = ()

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.verdict]


def _combine(verdicts: Mapping[int, Verdict], extreme: Optional[int]) -> Verdict:
    """Critical-stable needs the extreme machine at a CDSP and the rest at DSPs."""

    values = list(verdicts.values())
    if Verdict.UNSTABLE in values:
        return Verdict.UNSTABLE
    if Verdict.UNDECIDED in values:
        return Verdict.UNDECIDED
    if verdicts.get(extreme) is Verdict.CRITICAL_STABLE:
        others = [v for m, v in verdicts.items() if m != extreme]
        if all(v is Verdict.STABLE for v in others):
            return Verdict.CRITICAL_STABLE
    return Verdict.STABLE


def _dlps(
    events: Mapping[int, Optional[SwingEvent]], machines: Iterable[int]
) -> List[SwingEvent]:
    found = [
        events[m]
        for m in machines
        if events.get(m) is not None and events[m].kind is EventKind.DLP
    ]
    return sorted(found, key=lambda e: (e.time, e.machine_id))


def _build_report(
    events: Mapping[int, Optional[SwingEvent]],
    critical: Sequence[int],
    monitored: Sequence[int],
    *,
    complete: bool,
) -> AssessmentReport:
    gaps = tuple(m for m in monitored if m not in events)
    machine_verdicts = {
        m: (
            _MACHINE_VERDICT[events[m].kind]
            if events.get(m) is not None
            else Verdict.UNDECIDED
        )
        for m in monitored
    }
    extreme = critical[0] if critical else None
    verdict = _combine(machine_verdicts, extreme) if monitored else Verdict.STABLE
    if not complete and verdict.is_stable_side:
        verdict = Verdict.UNDECIDED

    occurred = sorted(
        (events[m] for m in monitored if events.get(m) is not None),
        key=lambda e: (e.time, e.machine_id),
    )
    timeline = []
    seen: Dict[int, Verdict] = {}
    for order, event in enumerate(occurred, start=1):
        seen[event.machine_id] = _MACHINE_VERDICT[event.kind]
        if Verdict.UNSTABLE in seen.values():
            so_far = Verdict.UNSTABLE.value
        elif len(seen) == len(monitored):
            so_far = (
                _combine(seen, extreme).value if complete else Verdict.UNDECIDED.value
            )
        else:
            so_far = PENDING
        timeline.append(
            TimelineEntry(
                order=order,
                time=event.time,
                machine_id=event.machine_id,
                kind=event.kind,
                verdict_so_far=so_far,
            )
        )

    dlps = _dlps(events, monitored)
    leading = dlps[0] if dlps else None
    global_dlps = _dlps(events, critical)
    available = leading is not None and global_dlps[0] is leading

    if verdict is Verdict.UNSTABLE:
        verdict_time: Optional[float] = leading.time
    elif verdict.is_stable_side and occurred:
        verdict_time = occurred[-1].time
    else:
        verdict_time = None

    return AssessmentReport(
        critical=tuple(critical),
        monitored=tuple(monitored),
        machine_verdicts=machine_verdicts,
        events={m: events.get(m) for m in monitored},
        verdict=verdict,
        verdict_time=verdict_time,
        leading_losp=leading,
        lagging_losps=tuple(dlps[1:]),
        timeline=tuple(timeline),
        gaps=gaps,
        leading_losp_available=available,
    )


def assess(
    events: Mapping[int, Optional[SwingEvent]],
    critical: Iterable[int],
    *,
    audit: Sequence[EnergyAudit] = (),
) -> AssessmentReport:
    """Judge the system from the events of all critical machines."""

    critical = tuple(critical)
    report = _build_report(events, critical, critical, complete=True)
    if report.gaps:
        logger.warning(
            "assessment_gaps machines=%s",
            ",".join(map(str, report.gaps)),
            extra={"gaps": list(report.gaps)},
        )
    logger.info(
        "assessment_complete verdict=%s critical=%s",
        report.verdict.value,
        ",".join(map(str, critical)),
        extra={"verdict": report.verdict.value, "critical": list(critical)},
    )
    return replace(report, audit=tuple(audit))


def assess_subset(
    events: Mapping[int, Optional[SwingEvent]],
    critical: Iterable[int],
    monitored: Iterable[int],
    *,
    audit: Sequence[EnergyAudit] = (),
) -> AssessmentReport:
    """Judge the system while watching only ``monitored`` critical machines.

    A liberation in the subset settles instability; an all-stationary proper
    subset cannot confirm stability and stays undecided.
    """

    critical = tuple(critical)
    monitored = tuple(dict.fromkeys(monitored))
    if not monitored:
        raise AssessmentError("monitored subset must not be empty")
    outside = [m for m in monitored if m not in critical]
    if outside:
        raise AssessmentError(
            f"monitored machines {', '.join(map(str, outside))} are not critical "
            f"(critical: {', '.join(map(str, critical)) or 'none'})"
        )
    complete = set(monitored) == set(critical)
    report = _build_report(events, critical, monitored, complete=complete)
    logger.info(
        "subset_assessment_complete verdict=%s monitored=%s leading_losp_available=%s",
        report.verdict.value,
        ",".join(map(str, monitored)),
        report.leading_losp_available,
        extra={
            "verdict": report.verdict.value,
            "monitored": list(monitored),
            "leading_losp_available": report.leading_losp_available,
        },
    )
    return replace(report, audit=tuple(audit))


def theta_oracle(traj: Trajectory, threshold: float = 2.0 * math.pi) -> Verdict:
    """Unstable iff some machine's COI angle exceeds ``threshold`` before the end."""

    peak = float(np.max(np.abs(traj.theta)))
    return Verdict.UNSTABLE if peak > threshold else Verdict.STABLE


def energy_audit(
    traj: Trajectory,
    machines: Iterable[int],
    events: Mapping[int, Optional[SwingEvent]],
    tol: DetectionTolerances = DetectionTolerances(),
) -> Tuple[EnergyAudit, ...]:
    """Area balance per machine; stationary points must close A_ACC = A_DEC."""

    rows = []
    for machine in machines:
        curve = kimbark_curve(traj, machine, eps_omega=tol.eps_omega)
        event = events.get(machine)
        closed = None
        if event is None:
            a_dec = float(deceleration_profile(curve)[-1])
        else:
            a_dec = event.a_dec
            if event.kind is not EventKind.DLP:
                closed = area_closure(event, tol)
                if not closed:
                    logger.warning(
                        "area_closure_failed machine=%s a_acc=%.6g a_dec=%.6g",
                        machine,
                        event.a_acc,
                        event.a_dec,
                        extra={
                            "machine": machine,
                            "a_acc": event.a_acc,
                            "a_dec": event.a_dec,
                        },
                    )
        rows.append(
            EnergyAudit(
                machine_id=machine,
                a_acc=acceleration_area(curve),
                a_dec=a_dec,
                max_residual=float(np.max(np.abs(energy_residual(curve)))),
                closed=closed,
            )
        )
    return tuple(rows)


@dataclass(frozen=True)
class AnalysisSettings:
    step: float = 1e-3
    t_end: float = 2.0
    identification: IdentificationParams = field(default_factory=IdentificationParams)
    tolerances: DetectionTolerances = field(default_factory=DetectionTolerances)
    oracle_threshold: float = 2.0 * math.pi
    horizon_extensions: int = 1


@dataclass(frozen=True)
class ClearingOutcome:
    trajectory: Trajectory
    critical: CriticalSet
    report: AssessmentReport
    oracle: Verdict
    extensions: int = 0


def _grid_time(t: float, step: float) -> float:
    return round(round(t / step) * step, 12)


def assess_clearing(
    case: PowerSystemCase,
    network: StagedNetwork,
    t_cl: float,
    settings: AnalysisSettings = AnalysisSettings(),
    *,
    monitored: Optional[Sequence[int]] = None,
    extend: bool = True,
) -> ClearingOutcome:
    """Simulate one clearing time and judge it.

    Undecided verdicts are retried with the horizon doubled, up to
    ``settings.horizon_extensions`` times.
    """

    t_end = settings.t_end
    attempts = settings.horizon_extensions if extend else 0
    extensions = 0
    while True:
        horizon = _grid_time(t_end, settings.step)
        trajectory = simulate(network, case, t_cl, horizon, settings.step)
        critical = identify_critical(trajectory, settings.identification)
        events = detect_events(trajectory, critical.machines, settings.tolerances)
        audit = energy_audit(trajectory, critical.machines, events, settings.tolerances)
        if monitored:
            report = assess_subset(events, critical.machines, monitored, audit=audit)
        else:
            report = assess(events, critical.machines, audit=audit)
        decided = report.verdict is not Verdict.UNDECIDED
        if decided or extensions >= attempts or report.gaps:
            break
        if monitored and set(monitored) != set(critical.machines) and all(
            events.get(m) is not None for m in monitored
        ):
            break
        extensions += 1
        t_end *= 2.0
        logger.info(
            "horizon_extended t_cl=%.9g t_end=%.9g",
            t_cl,
            t_end,
            extra={"t_cl": t_cl, "t_end": t_end},
        )

    return ClearingOutcome(
        trajectory=trajectory,
        critical=critical,
        report=report,
        oracle=theta_oracle(trajectory, settings.oracle_threshold),
        extensions=extensions,
    )


@dataclass(frozen=True)
class CctProbe:
    t_cl: float
    verdict: Verdict
    stable_side: bool


@dataclass(frozen=True)
class CctResult:
    fault_bus: Optional[int]
    t_stable: float
    t_unstable: float
    probes: Tuple[CctProbe, ...]

    @property
    def width(self) -> float:
        return self.t_unstable - self.t_stable


def cct_bisect(
    case: PowerSystemCase,
    fault_bus: Union[int, str],
    t_lo: float,
    t_hi: float,
    tol: float,
    settings: AnalysisSettings = AnalysisSettings(),
    *,
    predicate: Optional[Callable[[float], Verdict]] = None,
) -> CctResult:
    """Bisect the clearing time between a stable ``t_lo`` and unstable ``t_hi``.

    Midpoints are placed on the integration grid and each is simulated once.
    Verdicts still undecided after horizon extension count as unstable.
    """

    step = settings.step
    if not t_lo < t_hi:
        raise AssessmentError(
            f"inverted bracket: t_lo={t_lo!r} must be below t_hi={t_hi!r}"
        )
    if tol < step * (1.0 - 1e-9):
        raise AssessmentError(f"tolerance {tol!r} s is finer than the step {step!r} s")
    lo = int(round(t_lo / step))
    hi = int(round(t_hi / step))
    if lo < 1 or hi <= lo:
        raise AssessmentError(
            "bracket does not contain two distinct positive grid clearing times"
        )

    if predicate is None:
        network = build_staged_network(case, fault_bus)
        fault_bus = network.fault_bus

        def predicate(t_cl: float) -> Verdict:
            return assess_clearing(case, network, t_cl, settings).report.verdict

    cache: Dict[int, CctProbe] = {}

    def probe(k: int) -> bool:
        if k not in cache:
            t_cl = _grid_time(k * step, step)
            verdict = predicate(t_cl)
            cache[k] = CctProbe(
                t_cl=t_cl, verdict=verdict, stable_side=verdict.is_stable_side
            )
            logger.info(
                "cct_probe fault_bus=%s t_cl=%.9g verdict=%s",
                fault_bus,
                t_cl,
                verdict.value,
                extra={"fault_bus": fault_bus, "t_cl": t_cl, "verdict": verdict.value},
            )
        return cache[k].stable_side

    lo_stable = probe(lo)
    hi_stable = probe(hi)
    if not lo_stable or hi_stable:
        raise BracketError(
            f"clearing times not bracketed: t_lo={lo * step:.9g} s is "
            f"{cache[lo].verdict.value}, t_hi={hi * step:.9g} s is "
            f"{cache[hi].verdict.value}"
        )

    while (hi - lo) * step > tol * (1.0 + 1e-9) and hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(mid):
            lo = mid
        else:
            hi = mid

    result = CctResult(
        fault_bus=fault_bus,
        t_stable=_grid_time(lo * step, step),
        t_unstable=_grid_time(hi * step, step),
        probes=tuple(cache[k] for k in cache),
    )
    logger.info(
        "cct_complete fault_bus=%s t_stable=%.9g t_unstable=%.9g probes=%d",
        fault_bus,
        result.t_stable,
        result.t_unstable,
        len(result.probes),
        extra={
            "fault_bus": fault_bus,
            "t_stable": result.t_stable,
            "t_unstable": result.t_unstable,
            "probes": len(result.probes),
        },
    )
    return result


def omib_critical_clearing_time(network: StagedNetwork, case: PowerSystemCase) -> float:
    """Closed-form CCT of a lossless two-machine case faulted at machine 1's terminal.

    The pair reduces to one machine with M = M1 M2 / (M1 + M2) swinging on
    the transfer curve Pmax sin(delta); machine 1 carries no electrical power
    while the fault is on.
    """

    if len(network) != 2:
        raise AssessmentError("closed-form CCT needs exactly two machines")
    m1, m2 = case.inertia
    m_eq = m1 * m2 / (m1 + m2)
    p_max = float(network.emf[0] * network.emf[1] * abs(network.y_post[0, 1].imag))
    p_m = float(abs(network.pm[0]))
    delta0 = float(abs(network.delta0[0] - network.delta0[1]))
    delta_u = math.pi - delta0
    cos_c = (p_m / p_max) * (delta_u - delta0) + math.cos(delta_u)
    delta_c = math.acos(cos_c)
    return math.sqrt(2.0 * m_eq * (delta_c - delta0) / p_m)
