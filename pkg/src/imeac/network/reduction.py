"""Admittance assembly and Kron reduction to generator internal nodes."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from imeac.core.dynamics import electrical_power
from imeac.network.case_model import PowerSystemCase
from imeac.utils.logging import get_logger

logger = get_logger(__name__)

__all__ = [
    "INTERNAL_NODE_PREFIX",
    "NetworkError",
    "SingularReductionError",
    "StagedNetwork",
    "bus_admittance_matrix",
    "build_staged_network",
    "internal_emfs",
    "kron_reduce",
]

INTERNAL_NODE_PREFIX = "E"
REBALANCE_WARN_THRESHOLD = 1e-3


class NetworkError(ValueError):
    """Raised when a staged network cannot be built for the requested fault."""


class SingularReductionError(NetworkError):
    """Raised when the eliminated block of a Kron reduction is singular."""


@dataclass(frozen=True)
class StagedNetwork:
    """Reduced networks for the three stages of a cleared bus fault.

    Row/column ``k`` of every matrix belongs to ``machine_ids[k]``. ``pm`` is
    the mechanical power that holds the pre-fault operating point in
    equilibrium. ``fault_bus`` is ``None`` for an unfaulted baseline.
    """

    machine_ids: Tuple[int, ...]
    y_pre: np.ndarray
    y_fault: np.ndarray
    y_post: np.ndarray
    emf: np.ndarray
    delta0: np.ndarray
    pm: np.ndarray
    fault_bus: Optional[int] = None

    def __len__(self) -> int:
        return len(self.machine_ids)


def kron_reduce(y: np.ndarray, retained: Sequence[int]) -> np.ndarray:
    """Eliminate every node not in ``retained``: Yrr - Yre Yee^-1 Yer."""

    y = np.asarray(y, dtype=complex)
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise NetworkError(f"admittance matrix must be square, got shape {y.shape}")
    size = y.shape[0]
    keep = np.asarray(list(retained), dtype=int)
    if keep.size and (keep.min() < 0 or keep.max() >= size):
        raise NetworkError("retained index out of range")
    if len(set(keep.tolist())) != keep.size:
        raise NetworkError("retained indices must be unique")
    drop = np.setdiff1d(np.arange(size), keep)

    y_rr = y[np.ix_(keep, keep)]
    if drop.size == 0:
        return y_rr.copy()

    y_re = y[np.ix_(keep, drop)]
    y_er = y[np.ix_(drop, keep)]
    y_ee = y[np.ix_(drop, drop)]
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            elimination = scipy.linalg.solve(y_ee, y_er)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise SingularReductionError(
                f"eliminated block of size {drop.size} is singular ({exc})"
            ) from exc
    if not np.all(np.isfinite(elimination)):
        raise SingularReductionError("eliminated block produced non-finite values")

    reduced = y_rr - y_re @ elimination
    if np.allclose(y, y.T, rtol=0.0, atol=1e-12):
        reduced = 0.5 * (reduced + reduced.T)
    return reduced


def bus_admittance_matrix(case: PowerSystemCase) -> np.ndarray:
    """Bus admittance matrix with loads as constant shunt admittances.

    Branches use the pi model with the off-nominal tap on the ``from`` side.
    """

    index = {bus_id: k for k, bus_id in enumerate(case.bus_ids)}
    y = np.zeros((len(index), len(index)), dtype=complex)
    for branch in case.branches:
        i = index[branch.from_bus]
        j = index[branch.to_bus]
        series = 1.0 / complex(branch.r, branch.x)
        shunt = 0.5j * branch.b
        tap = branch.ratio
        y[i, i] += (series + shunt) / tap**2
        y[j, j] += series + shunt
        y[i, j] -= series / tap
        y[j, i] -= series / tap
    nominal = case.load_model == "nominal"
    for bus in case.buses:
        if bus.pd or bus.qd:
            v_squared = 1.0 if nominal else bus.vm**2
            y[index[bus.id], index[bus.id]] += complex(bus.pd, -bus.qd) / v_squared
    return y


def internal_emfs(case: PowerSystemCase) -> Tuple[np.ndarray, np.ndarray]:
    """EMF magnitudes and angles behind x'd from the solved terminal conditions."""

    emf = np.empty(len(case.generators), dtype=complex)
    for k, gen in enumerate(case.generators):
        terminal = case.bus(gen.bus).voltage
        current = np.conj(complex(gen.pg, gen.qg) / terminal)
        emf[k] = terminal + 1j * gen.xd_prime * current
    return np.abs(emf), np.angle(emf)


def _augmented_matrix(case: PowerSystemCase) -> np.ndarray:
    """Internal generator nodes first, then the network buses."""

    n_gen = len(case.generators)
    y_bus = bus_admittance_matrix(case)
    size = n_gen + y_bus.shape[0]
    y = np.zeros((size, size), dtype=complex)
    y[n_gen:, n_gen:] = y_bus
    bus_index = {bus_id: n_gen + k for k, bus_id in enumerate(case.bus_ids)}
    for k, gen in enumerate(case.generators):
        admittance = 1.0 / complex(0.0, gen.xd_prime)
        j = bus_index[gen.bus]
        y[k, k] += admittance
        y[j, j] += admittance
        y[k, j] -= admittance
        y[j, k] -= admittance
    return y


def _resolve_fault_bus(case: PowerSystemCase, fault_bus: Union[int, str]) -> int:
    if isinstance(fault_bus, str):
        label = fault_bus.strip()
        if label.upper().startswith(INTERNAL_NODE_PREFIX):
            raise NetworkError(
                f"fault location {fault_bus!r} names a generator internal node; "
                "faults must be applied at a network bus"
            )
        try:
            fault_bus = int(label)
        except ValueError as exc:
            raise NetworkError(f"fault bus {fault_bus!r} is not a bus id") from exc
    if fault_bus not in set(case.bus_ids):
        raise NetworkError(f"fault bus {fault_bus} does not exist in case {case.name}")
    return fault_bus


def _read_only(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


def build_staged_network(
    case: PowerSystemCase, fault_bus: Optional[Union[int, str]]
) -> StagedNetwork:
    """Pre-fault, fault-on and post-fault networks for a solid bus fault.

    The faulted bus is held at zero voltage, which removes its row and column
    before reduction. The fault clears without switching, so the post-fault
    matrix is the pre-fault one. ``fault_bus=None`` builds an unfaulted
    baseline whose fault-on matrix also equals the pre-fault one.
    """

    n_gen = len(case.generators)
    retained = range(n_gen)
    y_full = _augmented_matrix(case)
    y_pre = kron_reduce(y_full, retained)

    if fault_bus is None:
        bus_id = None
        y_fault = y_pre.copy()
    else:
        bus_id = _resolve_fault_bus(case, fault_bus)
        grounded = n_gen + case.bus_ids.index(bus_id)
        survivors = [k for k in range(y_full.shape[0]) if k != grounded]
        y_fault = kron_reduce(y_full[np.ix_(survivors, survivors)], retained)

    emf, delta0 = internal_emfs(case)
    pe0 = electrical_power(y_pre, emf, delta0)
    case_pm = np.array([gen.pm for gen in case.generators], dtype=float)
    correction = float(np.max(np.abs(pe0 - case_pm)))
    log = logger.warning if correction > REBALANCE_WARN_THRESHOLD else logger.debug
    log(
        "operating_point_rebalanced case=%s max_correction=%.3e",
        case.name,
        correction,
        extra={"case": case.name, "max_correction": correction},
    )

    network = StagedNetwork(
        machine_ids=case.machine_ids,
        y_pre=_read_only(y_pre),
        y_fault=_read_only(y_fault),
        y_post=_read_only(y_pre),
        emf=_read_only(emf),
        delta0=_read_only(delta0),
        pm=_read_only(pe0),
        fault_bus=bus_id,
    )
    logger.info(
        "network_staged case=%s fault_bus=%s machines=%d",
        case.name,
        bus_id,
        n_gen,
        extra={"case": case.name, "fault_bus": bus_id, "machines": n_gen},
    )
    return network
