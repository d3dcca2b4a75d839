"""Per-machine Kimbark curves, area integrals and first-swing event detection.

Each machine is viewed against the centre of inertia: its curve is the
sampled path (t, theta_i, f_i, omega_rel_i) of the simulated trajectory. The
kinetic energy gathered during the fault, 1/2 M_i omega_rel_i(t_cl)^2, is the
acceleration area; the post-fault work -int f_i omega_rel_i dt is the
deceleration area. A first-swing event is either a liberation point (the
machine re-accelerates while still moving away) or a stationary point (the
relative speed returns to zero).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.stats import rankdata

from imeac.core.dynamics import Trajectory
from imeac.utils.logging import get_logger

logger = get_logger(__name__)

__all__ = [
    "AnalysisError",
    "AreaPair",
    "CriticalSet",
    "DetectionTolerances",
    "EventKind",
    "IdentificationParams",
    "KimbarkCurve",
    "SwingEvent",
    "acceleration_area",
    "area_closure",
    "areas",
    "deceleration_profile",
    "detect_event",
    "detect_events",
    "energy_residual",
    "fault_on_work",
    "identify_critical",
    "kimbark_curve",
]


AREA_CLOSURE_RTOL = 1e-3


class AnalysisError(ValueError):
    """Raised when a trajectory cannot support the requested analysis."""


class EventKind(str, Enum):
    DLP = "DLP"
    DSP = "DSP"
    CDSP = "CDSP"


@dataclass(frozen=True)
class DetectionTolerances:
    eps_f: float = 1e-6
    eps_omega: float = 1e-6
    eps_energy: float = 1e-6
    # None means a tenth of the integration step.
    eps_t: Optional[float] = None

    def time_tolerance(self, step: float) -> float:
        return step / 10.0 if self.eps_t is None else self.eps_t


@dataclass(frozen=True)
class IdentificationParams:
    window: float = 0.05
    min_excursion: float = 1e-6
    # Kinetic energy, as a fraction of the largest, that makes a machine critical.
    energy_share: float = 0.05


@dataclass(frozen=True)
class KimbarkCurve:
    """One machine's path in the (t, theta, f) space with its relative speed.

    ``clearing_index`` is the first post-fault sample. ``sigma`` is the
    direction the machine moves in at clearing; ``degenerate`` marks a
    machine that never leaves rest after the fault.
    """

    machine_id: int
    inertia: float
    time: np.ndarray
    theta: np.ndarray
    accel: np.ndarray
    omega_rel: np.ndarray
    stage: np.ndarray
    clearing_index: int
    sigma: int
    degenerate: bool
    t_cl: float
    step: float

    def __len__(self) -> int:
        return len(self.time)

    @property
    def t_end(self) -> float:
        return float(self.time[-1])

    @property
    def kinetic_energy(self) -> np.ndarray:
        return 0.5 * self.inertia * self.omega_rel**2


@dataclass(frozen=True)
class AreaPair:
    acc: float
    dec: float


@dataclass(frozen=True)
class SwingEvent:
    machine_id: int
    kind: EventKind
    time: float
    theta: float
    residual_ke: float
    a_acc: float
    a_dec: float


@dataclass(frozen=True)
class CriticalSet:
    """Critical machines ordered by disturbance score (highest first)."""

    machines: Tuple[int, ...]
    no_disturbance: bool
    observed_at: float
    scores: Mapping[int, float] = field(default_factory=dict)

    def __iter__(self):
        return iter(self.machines)

    def __len__(self) -> int:
        return len(self.machines)

    def __contains__(self, machine_id: object) -> bool:
        return machine_id in self.machines


def kimbark_curve(
    traj: Trajectory, machine: int, *, eps_omega: float = DetectionTolerances.eps_omega
) -> KimbarkCurve:
    try:
        column = traj.machine_index(machine)
    except KeyError:
        known = ", ".join(map(str, traj.machine_ids))
        raise AnalysisError(
            f"machine {machine} is not in the trajectory (machines: {known})"
        ) from None

    clearing = traj.clearing_index + 1
    omega_rel = traj.omega_rel[:, column]
    post = omega_rel[clearing:]
    moving = np.flatnonzero(np.abs(post) > eps_omega)
    degenerate = moving.size == 0
    sigma = 1 if degenerate else int(np.sign(post[moving[0]]))

    return KimbarkCurve(
        machine_id=machine,
        inertia=float(traj.inertia[column]),
        time=traj.time,
        theta=traj.theta[:, column],
        accel=traj.accel[:, column],
        omega_rel=omega_rel,
        stage=traj.stage,
        clearing_index=clearing,
        sigma=sigma,
        degenerate=degenerate,
        t_cl=traj.t_cl,
        step=traj.step,
    )


def _corrected_cumulative_work(
    power: np.ndarray, speed: np.ndarray, step: float
) -> np.ndarray:
    """Cumulative int(power * speed) dt with the trapezoid end correction."""

    integrand = power * speed
    work = cumulative_trapezoid(integrand, dx=step, initial=0.0)
    if integrand.size >= 3:
        slope = np.gradient(integrand, step, edge_order=2)
        work -= step**2 / 12.0 * (slope - slope[0])
    return work


def fault_on_work(curve: KimbarkCurve) -> float:
    """Work int_0^t_cl f omega_rel dt done on the machine while the fault is on."""

    stop = curve.clearing_index
    work = _corrected_cumulative_work(
        curve.accel[:stop], curve.omega_rel[:stop], curve.step
    )
    return float(work[-1])


def acceleration_area(curve: KimbarkCurve) -> float:
    return float(0.5 * curve.inertia * curve.omega_rel[curve.clearing_index] ** 2)


def deceleration_profile(curve: KimbarkCurve) -> np.ndarray:
    """A_DEC at every post-fault sample, starting from zero at clearing."""

    start = curve.clearing_index
    return -_corrected_cumulative_work(
        curve.accel[start:], curve.omega_rel[start:], curve.step
    )


def _check_post_fault(curve: KimbarkCurve) -> None:
    if curve.clearing_index >= len(curve) - 1:
        raise AnalysisError(
            f"curve for machine {curve.machine_id} ends at clearing; "
            "no post-fault samples"
        )


def _interpolate_post(curve: KimbarkCurve, values: np.ndarray, t: float) -> float:
    times = curve.time[curve.clearing_index:]
    return float(np.interp(t, times, values))


def areas(curve: KimbarkCurve, upto: float) -> AreaPair:
    if upto < curve.t_cl - curve.step * 1e-6:
        raise AnalysisError(f"upto={upto!r} s precedes clearing at {curve.t_cl!r} s")
    if upto > curve.t_end + curve.step * 1e-6:
        raise AnalysisError(
            f"upto={upto!r} s is beyond the trajectory end {curve.t_end!r} s"
        )
    _check_post_fault(curve)
    upto = min(max(upto, curve.t_cl), curve.t_end)
    return AreaPair(
        acc=acceleration_area(curve),
        dec=_interpolate_post(curve, deceleration_profile(curve), upto),
    )


def energy_residual(curve: KimbarkCurve) -> np.ndarray:
    """A_ACC - A_DEC(t) - 1/2 M omega_rel(t)^2 at every post-fault sample."""

    _check_post_fault(curve)
    start = curve.clearing_index
    kinetic = curve.kinetic_energy[start:]
    return acceleration_area(curve) - deceleration_profile(curve) - kinetic


def area_closure(
    event: SwingEvent, tol: DetectionTolerances = DetectionTolerances()
) -> bool:
    """Whether A_DEC matches A_ACC at the event within the energy tolerance."""

    allowed = max(AREA_CLOSURE_RTOL * event.a_acc, tol.eps_energy)
    return abs(event.a_acc - event.a_dec) <= allowed


def _zero_crossing(t0: float, t1: float, v0: float, v1: float) -> float:
    if v1 == v0:
        return t1
    return t0 + (t1 - t0) * v0 / (v0 - v1)


def detect_event(
    curve: KimbarkCurve, tol: DetectionTolerances = DetectionTolerances()
) -> Optional[SwingEvent]:
    """First liberation or stationary point after clearing, or ``None``.

    A stationary point is where sigma*omega_rel drops to zero. A liberation
    point is where sigma*f turns from decelerating to accelerating while the
    machine still moves away; the re-acceleration must persist for one full
    step past the crossing.
    """

    _check_post_fault(curve)
    start = curve.clearing_index
    times = curve.time[start:]
    speed = curve.sigma * curve.omega_rel[start:]
    power = curve.sigma * curve.accel[start:]
    a_acc = acceleration_area(curve)
    a_dec = deceleration_profile(curve)

    def build(kind: EventKind, t: float) -> SwingEvent:
        omega_at = _interpolate_post(curve, curve.omega_rel[start:], t)
        event = SwingEvent(
            machine_id=curve.machine_id,
            kind=kind,
            time=t,
            theta=_interpolate_post(curve, curve.theta[start:], t),
            residual_ke=0.5 * curve.inertia * omega_at**2,
            a_acc=a_acc,
            a_dec=float(np.interp(t, times, a_dec)),
        )
        logger.debug(
            "event_detected machine=%s kind=%s time=%.9g",
            curve.machine_id,
            kind.value,
            t,
            extra={"machine": curve.machine_id, "kind": kind.value, "time": t},
        )
        return event

    if curve.degenerate:
        if np.all(np.abs(power) <= tol.eps_f):
            return None
        return build(EventKind.DSP, float(times[0]))

    last = len(times) - 1
    eps_t = tol.time_tolerance(curve.step)
    for p in range(last):
        t_dsp = t_dlp = None
        if speed[p] > 0.0 >= speed[p + 1]:
            t_dsp = _zero_crossing(times[p], times[p + 1], speed[p], speed[p + 1])
        if power[p] < 0.0 <= power[p + 1]:
            crossing = _zero_crossing(times[p], times[p + 1], power[p], power[p + 1])
            moving = float(np.interp(crossing, times[p : p + 2], speed[p : p + 2]))
            sustained = power[min(p + 2, last)] > tol.eps_f
            if moving > tol.eps_omega and sustained:
                t_dlp = crossing

        if t_dsp is None and t_dlp is None:
            continue
        if t_dsp is not None and t_dlp is not None and abs(t_dsp - t_dlp) <= eps_t:
            return build(EventKind.CDSP, min(t_dsp, t_dlp))
        if t_dlp is not None and (t_dsp is None or t_dlp < t_dsp):
            return build(EventKind.DLP, t_dlp)
        accel_at = abs(_interpolate_post(curve, curve.accel[start:], t_dsp))
        kind = EventKind.CDSP if accel_at <= tol.eps_f else EventKind.DSP
        return build(kind, t_dsp)

    logger.debug(
        "event_undecided machine=%s t_end=%.9g",
        curve.machine_id,
        curve.t_end,
        extra={"machine": curve.machine_id, "t_end": curve.t_end},
    )
    return None


def detect_events(
    traj: Trajectory,
    machines: Iterable[int],
    tol: DetectionTolerances = DetectionTolerances(),
) -> Dict[int, Optional[SwingEvent]]:
    return {
        machine: detect_event(
            kimbark_curve(traj, machine, eps_omega=tol.eps_omega), tol
        )
        for machine in machines
    }


def identify_critical(
    traj: Trajectory, params: IdentificationParams = IdentificationParams()
) -> CriticalSet:
    """Severely disturbed machines with advanced angles shortly after clearing.

    Machines are split at the largest gap of |theta| sampled ``window``
    seconds after clearing and the leading group is critical. Machines whose
    kinetic energy at that instant reaches ``energy_share`` of the largest
    one join the set. Members are ordered by the sum of their normalised
    ranks in |theta| and kinetic energy, ties broken by machine id.
    """

    observed_at = traj.t_cl + params.window
    if observed_at > traj.t_end + traj.step * 1e-6:
        raise AnalysisError(
            f"trajectory ends at {traj.t_end!r} s, "
            f"before the observation instant {observed_at!r} s"
        )
    row = traj.row_at(round(observed_at / traj.step) * traj.step)

    excursion = np.max(np.abs(traj.theta[: row + 1] - traj.theta[0]))
    if excursion < params.min_excursion:
        logger.info(
            "critical_identification no_disturbance max_excursion=%.3e",
            excursion,
            extra={"max_excursion": float(excursion)},
        )
        return CriticalSet(machines=(), no_disturbance=True, observed_at=observed_at)

    ids = np.array(traj.machine_ids)
    snapshot = traj.state(row)
    angle = np.abs(snapshot.theta)
    energy = 0.5 * traj.inertia * snapshot.omega_rel**2
    n = len(ids)
    score = rankdata(angle) / n + rankdata(energy) / n

    by_angle = np.lexsort((ids, -angle))
    if n == 1:
        cut = 1
    else:
        gaps = angle[by_angle[:-1]] - angle[by_angle[1:]]
        cut = int(np.argmax(gaps)) + 1
    critical = set(ids[by_angle[:cut]].tolist())
    peak = float(np.max(energy))
    if peak > 0.0:
        critical.update(ids[energy >= params.energy_share * peak].tolist())
    critical_score = {
        int(m): float(score[traj.machine_index(int(m))]) for m in critical
    }
    ordered = tuple(sorted(critical_score, key=lambda m: (-critical_score[m], m)))

    logger.info(
        "critical_identified machines=%s observed_at=%.9g",
        ",".join(map(str, ordered)),
        observed_at,
        extra={"machines": list(ordered), "observed_at": observed_at},
    )
    return CriticalSet(
        machines=ordered,
        no_disturbance=False,
        observed_at=observed_at,
        scores=critical_score,
    )
