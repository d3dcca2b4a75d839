"""Classical-model swing dynamics in absolute and centre-of-inertia coordinates."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import TYPE_CHECKING, Dict, NamedTuple, Optional, Tuple

import numpy as np

from imeac.utils.logging import get_logger

if TYPE_CHECKING:
    from imeac.network.case_model import PowerSystemCase
    from imeac.network.reduction import StagedNetwork

logger = get_logger(__name__)

__all__ = [
    "CoiAggregate",
    "RelativeState",
    "SimulationError",
    "Stage",
    "SystemState",
    "Trajectory",
    "coi_aggregate",
    "electrical_power",
    "relative_state",
    "simulate",
    "steps_for",
]

GRID_TOLERANCE = 1e-6


class SimulationError(RuntimeError):
    """Raised for invalid integration requests or a numerically unstable run."""

    def __init__(self, message: str, *, time: Optional[float] = None) -> None:
        super().__init__(message if time is None else f"{message} (t={time:.9g} s)")
        self.time = time


class Stage(IntEnum):
    FAULT_ON = 0
    POST_FAULT = 1

    @property
    def label(self) -> str:
        return "fault-on" if self is Stage.FAULT_ON else "post-fault"


class CoiAggregate(NamedTuple):
    delta: np.ndarray
    omega: np.ndarray
    power: np.ndarray


class RelativeState(NamedTuple):
    theta: np.ndarray
    omega_rel: np.ndarray
    accel: np.ndarray


def electrical_power(
    y_red: np.ndarray, emf: np.ndarray, delta: np.ndarray
) -> np.ndarray:
    """Pe_i = Re(E_i conj(sum_j Y_ij E_j)) for phasors E_i at angle delta_i.

    ``delta`` may be a single state ``(n,)`` or a stack of states ``(k, n)``.
    """

    phasors = emf * np.exp(1j * np.asarray(delta, dtype=float))
    currents = phasors @ np.asarray(y_red).T
    return np.real(phasors * np.conj(currents))


def coi_aggregate(
    delta: np.ndarray,
    omega: np.ndarray,
    pm: np.ndarray,
    pe: np.ndarray,
    inertia: np.ndarray,
) -> CoiAggregate:
    """Inertia-weighted angle and speed of the COI, and its net accelerating power."""

    total = inertia.sum()
    return CoiAggregate(
        delta=(np.asarray(delta) @ inertia) / total,
        omega=(np.asarray(omega) @ inertia) / total,
        power=np.sum(pm - pe, axis=-1),
    )


def relative_state(
    delta: np.ndarray,
    omega: np.ndarray,
    pm: np.ndarray,
    pe: np.ndarray,
    inertia: np.ndarray,
    coi: Optional[CoiAggregate] = None,
) -> RelativeState:
    """Angles, speeds and accelerating powers of each machine against the COI."""

    if coi is None:
        coi = coi_aggregate(delta, omega, pm, pe, inertia)
    share = inertia / inertia.sum()
    return RelativeState(
        theta=np.asarray(delta) - np.asarray(coi.delta)[..., None],
        omega_rel=np.asarray(omega) - np.asarray(coi.omega)[..., None],
        accel=(pm - pe) - np.asarray(coi.power)[..., None] * share,
    )


@dataclass(frozen=True)
class SystemState:
    t: float
    stage: Stage
    delta: np.ndarray
    omega: np.ndarray
    pe: np.ndarray
    theta: np.ndarray
    omega_rel: np.ndarray
    accel: np.ndarray
    delta_coi: float
    omega_coi: float
    p_coi: float


@dataclass(frozen=True)
class Trajectory:
    """Samples of a fault-on/post-fault run on a fixed grid.

    Rows are time-ordered; the clearing instant appears twice, once closing
    the fault-on stage (``clearing_index``) and once opening the post-fault
    stage (``clearing_index + 1``). ``len()`` counts distinct instants.
    """

    machine_ids: Tuple[int, ...]
    inertia: np.ndarray
    pm: np.ndarray
    time: np.ndarray
    stage: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    pe: np.ndarray
    delta_coi: np.ndarray
    omega_coi: np.ndarray
    p_coi: np.ndarray
    theta: np.ndarray
    omega_rel: np.ndarray
    accel: np.ndarray
    t_cl: float
    t_end: float
    step: float
    clearing_index: int

    def __len__(self) -> int:
        return len(self.time) - 1

    @property
    def samples(self) -> int:
        return len(self.time)

    @property
    def total_inertia(self) -> float:
        return float(self.inertia.sum())

    def machine_index(self, machine_id: int) -> int:
        try:
            return self.machine_ids.index(machine_id)
        except ValueError:
            raise KeyError(machine_id) from None

    def row_at(self, t: float, *, stage: Stage = Stage.POST_FAULT) -> int:
        """Row of grid instant ``t``; at clearing ``stage`` picks the copy."""

        k = int(round(t / self.step))
        off_grid = abs(t / self.step - k) > GRID_TOLERANCE
        if off_grid or k < 0 or k * self.step > self.t_end + self.step * GRID_TOLERANCE:
            raise KeyError(t)
        n_cl = self.clearing_index
        if k < n_cl or (k == n_cl and stage is Stage.FAULT_ON):
            return k
        return k + 1

    def state(self, row: int) -> SystemState:
        return SystemState(
            t=float(self.time[row]),
            stage=Stage(int(self.stage[row])),
            delta=self.delta[row],
            omega=self.omega[row],
            pe=self.pe[row],
            theta=self.theta[row],
            omega_rel=self.omega_rel[row],
            accel=self.accel[row],
            delta_coi=float(self.delta_coi[row]),
            omega_coi=float(self.omega_coi[row]),
            p_coi=float(self.p_coi[row]),
        )

    def coi_residuals(self) -> Dict[str, float]:
        """Largest per-sample violations of the COI identities."""

        return {
            "theta": float(np.max(np.abs(self.theta @ self.inertia))),
            "omega_rel": float(np.max(np.abs(self.omega_rel @ self.inertia))),
            "accel": float(np.max(np.abs(self.accel.sum(axis=1)))),
        }


def steps_for(duration: float, step: float, *, label: str) -> int:
    """Number of integration steps spanning ``duration``; must be a whole number."""

    count = int(round(duration / step))
    if count < 1 or abs(duration / step - count) > GRID_TOLERANCE:
        raise SimulationError(
            f"{label}={duration!r} s is not a positive integer multiple "
            f"of the step {step!r} s"
        )
    return count


def _rk4_step(
    delta: np.ndarray,
    omega: np.ndarray,
    h: float,
    y_red: np.ndarray,
    emf: np.ndarray,
    pm: np.ndarray,
    inertia: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    def rates(d: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return w, (pm - electrical_power(y_red, emf, d)) / inertia

    k1_d, k1_w = rates(delta, omega)
    k2_d, k2_w = rates(delta + 0.5 * h * k1_d, omega + 0.5 * h * k1_w)
    k3_d, k3_w = rates(delta + 0.5 * h * k2_d, omega + 0.5 * h * k2_w)
    k4_d, k4_w = rates(delta + h * k3_d, omega + h * k3_w)
    return (
        delta + h / 6.0 * (k1_d + 2.0 * k2_d + 2.0 * k3_d + k4_d),
        omega + h / 6.0 * (k1_w + 2.0 * k2_w + 2.0 * k3_w + k4_w),
    )


def simulate(
    net: "StagedNetwork",
    case: "PowerSystemCase",
    t_cl: float,
    t_end: float,
    h: float,
) -> Trajectory:
    """Integrate the swing equations through the fault-on and post-fault stages.

    Fixed-step RK4 from the pre-fault equilibrium at t=0, fault-on network up
    to ``t_cl`` and post-fault network until ``t_end``. Speeds are deviations
    from synchronous speed in rad/s.
    """

    if not h > 0:
        raise SimulationError(f"step must be positive, got {h!r}")
    if not 0 < t_cl < t_end:
        raise SimulationError(
            "clearing time must satisfy 0 < t_cl < t_end, "
            f"got t_cl={t_cl!r} t_end={t_end!r}"
        )
    if tuple(net.machine_ids) != tuple(case.machine_ids):
        raise SimulationError("network and case describe different machines")
    n_cl = steps_for(t_cl, h, label="t_cl")
    n_end = steps_for(t_end, h, label="t_end")

    inertia = case.inertia
    pm = np.asarray(net.pm, dtype=float)
    emf = np.asarray(net.emf, dtype=float)
    n_rows = n_end + 2
    n_machines = len(inertia)
    delta = np.empty((n_rows, n_machines))
    omega = np.empty((n_rows, n_machines))
    stage = np.empty(n_rows, dtype=np.int8)
    time = np.empty(n_rows)

    d = np.array(net.delta0, dtype=float)
    w = np.zeros(n_machines)
    row = 0
    for k in range(n_end + 1):
        if k <= n_cl:
            delta[row], omega[row] = d, w
            stage[row], time[row] = Stage.FAULT_ON, k * h
            row += 1
        if k >= n_cl:
            delta[row], omega[row] = d, w
            stage[row], time[row] = Stage.POST_FAULT, k * h
            row += 1
        if k == n_end:
            break
        y_red = net.y_fault if k < n_cl else net.y_post
        with np.errstate(over="ignore", invalid="ignore"):
            d, w = _rk4_step(d, w, h, y_red, emf, pm, inertia)
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(w))):
            raise SimulationError("state became non-finite", time=(k + 1) * h)

    pe = np.empty_like(delta)
    fault_rows = stage == Stage.FAULT_ON
    pe[fault_rows] = electrical_power(net.y_fault, emf, delta[fault_rows])
    pe[~fault_rows] = electrical_power(net.y_post, emf, delta[~fault_rows])
    coi = coi_aggregate(delta, omega, pm, pe, inertia)
    relative = relative_state(delta, omega, pm, pe, inertia, coi)

    trajectory = Trajectory(
        machine_ids=tuple(case.machine_ids),
        inertia=inertia,
        pm=pm,
        time=time,
        stage=stage,
        delta=delta,
        omega=omega,
        pe=pe,
        delta_coi=coi.delta,
        omega_coi=coi.omega,
        p_coi=coi.power,
        theta=relative.theta,
        omega_rel=relative.omega_rel,
        accel=relative.accel,
        t_cl=n_cl * h,
        t_end=n_end * h,
        step=h,
        clearing_index=n_cl,
    )
    for array in (
        inertia,
        pm,
        time,
        stage,
        delta,
        omega,
        pe,
        coi.delta,
        coi.omega,
        coi.power,
        relative.theta,
        relative.omega_rel,
        relative.accel,
    ):
        array.setflags(write=False)

    logger.info(
        "simulate_complete machines=%d samples=%d t_cl=%.9g t_end=%.9g step=%.9g",
        n_machines,
        n_rows,
        t_cl,
        t_end,
        h,
        extra={
            "machines": n_machines,
            "samples": n_rows,
            "t_cl": t_cl,
            "t_end": t_end,
            "step": h,
        },
    )
    return trajectory
