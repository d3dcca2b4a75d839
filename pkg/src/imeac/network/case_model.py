"""Power-system case files: schema, validation and bundled-case lookup.

A case file is a single JSON document carrying a solved operating point of a
network described on a common MVA base. Field names are frozen in
``CASE_FIELDS`` (see ``docs/case_format.md``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from imeac.utils import config as config_utils
from imeac.utils.logging import get_logger

logger = get_logger(__name__)

__all__ = [
    "BUS_TYPES",
    "BUNDLED_CASES",
    "Branch",
    "Bus",
    "CASE_FIELDS",
    "CaseError",
    "Generator",
    "INERTIA_UNITS",
    "LOAD_MODELS",
    "PowerSystemCase",
    "load_case",
    "load_case_file",
    "resolve_case",
]

BUS_TYPES = ("pq", "pv", "slack")
INERTIA_UNITS = ("M", "H")
LOAD_MODELS = ("impedance", "nominal")
BUNDLED_CASES = ("ts1", "omib", "omib_mirror")

CASE_FIELDS: Dict[str, Tuple[str, ...]] = {
    "document": ("name", "description", "system", "buses", "branches", "generators"),
    "system": ("base_mva", "frequency_hz", "inertia_unit", "load_model"),
    "buses": ("id", "type", "vm", "va", "pd", "qd"),
    "branches": ("from", "to", "r", "x", "b", "ratio"),
    "generators": ("bus", "inertia", "xd_prime", "pm", "pg", "qg"),
}

_OPTIONAL_FIELDS = {
    "document": {"name", "description"},
    "system": {"inertia_unit", "load_model"},
    "buses": {"pd", "qd"},
    "branches": {"r", "b", "ratio"},
    "generators": {"pm"},
}


class CaseError(ValueError):
    """Raised when a case document violates the schema; ``path`` names the field."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    vm: float
    va: float
    pd: float = 0.0
    qd: float = 0.0

    @property
    def voltage(self) -> complex:
        return complex(self.vm * math.cos(self.va), self.vm * math.sin(self.va))


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    ratio: float = 1.0


@dataclass(frozen=True)
class Generator:
    bus: int
    inertia: float
    xd_prime: float
    pm: float
    pg: float
    qg: float


@dataclass(frozen=True)
class PowerSystemCase:
    """Validated network, generator data and solved operating point.

    ``Generator.inertia`` is always the swing-equation coefficient M in
    p.u.*s^2/rad; files written with H in seconds are converted on load.
    Machines are identified by the id of the bus they are connected to.
    ``load_model`` selects how bus loads become shunts: ``"impedance"``
    divides by the solved voltage squared, ``"nominal"`` uses 1 p.u.
    """

    name: str
    base_mva: float
    frequency_hz: float
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    generators: Tuple[Generator, ...]
    description: str = ""
    load_model: str = "impedance"

    @property
    def synchronous_speed(self) -> float:
        return 2.0 * math.pi * self.frequency_hz

    @property
    def machine_ids(self) -> Tuple[int, ...]:
        return tuple(gen.bus for gen in self.generators)

    @property
    def bus_ids(self) -> Tuple[int, ...]:
        return tuple(bus.id for bus in self.buses)

    @property
    def inertia(self) -> np.ndarray:
        return np.array([gen.inertia for gen in self.generators], dtype=float)

    @property
    def total_inertia(self) -> float:
        return float(self.inertia.sum())

    def bus(self, bus_id: int) -> Bus:
        for bus in self.buses:
            if bus.id == bus_id:
                return bus
        raise KeyError(bus_id)

    def generator(self, machine_id: int) -> Generator:
        for gen in self.generators:
            if gen.bus == machine_id:
                return gen
        raise KeyError(machine_id)


def _require(record: Mapping[str, Any], key: str, path: str) -> Any:
    if key not in record:
        raise CaseError(f"{path}.{key}", "required field is missing")
    return record[key]


def _number(value: Any, path: str, *, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseError(path, f"expected a number, got {value!r}")
    number = float(value)
    if not math.isfinite(number):
        raise CaseError(path, "must be finite")
    if positive and number <= 0:
        raise CaseError(path, f"must be strictly positive, got {number!r}")
    return number


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise CaseError(path, f"expected an integer id, got {value!r}")
    return value


def _records(document: Mapping[str, Any], section: str) -> Sequence[Mapping[str, Any]]:
    records = _require(document, section, "$")
    if not isinstance(records, list) or not records:
        raise CaseError(section, "expected a non-empty array")
    for index, record in enumerate(records):
        if not isinstance(record, dict):
            raise CaseError(f"{section}[{index}]", "expected an object")
    return records


def _reject_unknown(record: Mapping[str, Any], section: str, path: str) -> None:
    unknown = sorted(set(record) - set(CASE_FIELDS[section]))
    if unknown:
        raise CaseError(f"{path}.{unknown[0]}", "unknown field")


def _parse_system(document: Mapping[str, Any]) -> Dict[str, Any]:
    system = _require(document, "system", "$")
    if not isinstance(system, dict):
        raise CaseError("system", "expected an object")
    _reject_unknown(system, "system", "system")
    unit = system.get("inertia_unit", "M")
    if unit not in INERTIA_UNITS:
        raise CaseError(
            "system.inertia_unit", f"must be one of {', '.join(INERTIA_UNITS)}"
        )
    load_model = system.get("load_model", "impedance")
    if load_model not in LOAD_MODELS:
        raise CaseError(
            "system.load_model", f"must be one of {', '.join(LOAD_MODELS)}"
        )
    return {
        "base_mva": _number(
            _require(system, "base_mva", "system"), "system.base_mva", positive=True
        ),
        "frequency_hz": _number(
            _require(system, "frequency_hz", "system"),
            "system.frequency_hz",
            positive=True,
        ),
        "inertia_unit": unit,
        "load_model": load_model,
    }


def _parse_buses(records: Iterable[Mapping[str, Any]]) -> Tuple[Bus, ...]:
    buses = []
    seen = set()
    for index, record in enumerate(records):
        path = f"buses[{index}]"
        _reject_unknown(record, "buses", path)
        bus_id = _integer(_require(record, "id", path), f"{path}.id")
        if bus_id in seen:
            raise CaseError(f"{path}.id", f"duplicate bus id {bus_id}")
        seen.add(bus_id)
        bus_type = _require(record, "type", path)
        if bus_type not in BUS_TYPES:
            raise CaseError(f"{path}.type", f"must be one of {', '.join(BUS_TYPES)}")
        buses.append(
            Bus(
                id=bus_id,
                type=bus_type,
                vm=_number(_require(record, "vm", path), f"{path}.vm", positive=True),
                va=_number(_require(record, "va", path), f"{path}.va"),
                pd=_number(record.get("pd", 0.0), f"{path}.pd"),
                qd=_number(record.get("qd", 0.0), f"{path}.qd"),
            )
        )
    return tuple(buses)


def _parse_branches(
    records: Iterable[Mapping[str, Any]], bus_ids: set
) -> Tuple[Branch, ...]:
    branches = []
    for index, record in enumerate(records):
        path = f"branches[{index}]"
        _reject_unknown(record, "branches", path)
        ends = []
        for end in ("from", "to"):
            bus_id = _integer(_require(record, end, path), f"{path}.{end}")
            if bus_id not in bus_ids:
                raise CaseError(f"{path}.{end}", f"references unknown bus {bus_id}")
            ends.append(bus_id)
        if ends[0] == ends[1]:
            raise CaseError(f"{path}.to", "branch must connect two different buses")
        branches.append(
            Branch(
                from_bus=ends[0],
                to_bus=ends[1],
                r=_number(record.get("r", 0.0), f"{path}.r"),
                x=_number(_require(record, "x", path), f"{path}.x", positive=True),
                b=_number(record.get("b", 0.0), f"{path}.b"),
                ratio=_number(record.get("ratio", 1.0), f"{path}.ratio", positive=True),
            )
        )
    return tuple(branches)


def _parse_generators(
    records: Iterable[Mapping[str, Any]],
    bus_ids: set,
    *,
    inertia_unit: str,
    synchronous_speed: float,
) -> Tuple[Generator, ...]:
    generators = []
    seen = set()
    for index, record in enumerate(records):
        path = f"generators[{index}]"
        _reject_unknown(record, "generators", path)
        bus_id = _integer(_require(record, "bus", path), f"{path}.bus")
        if bus_id not in bus_ids:
            raise CaseError(f"{path}.bus", f"references unknown bus {bus_id}")
        if bus_id in seen:
            raise CaseError(f"{path}.bus", f"bus {bus_id} already hosts a generator")
        seen.add(bus_id)
        inertia = _number(
            _require(record, "inertia", path), f"{path}.inertia", positive=True
        )
        if inertia_unit == "H":
            inertia = 2.0 * inertia / synchronous_speed
        pg = _number(_require(record, "pg", path), f"{path}.pg")
        generators.append(
            Generator(
                bus=bus_id,
                inertia=inertia,
                xd_prime=_number(
                    _require(record, "xd_prime", path),
                    f"{path}.xd_prime",
                    positive=True,
                ),
                pm=_number(record.get("pm", pg), f"{path}.pm"),
                pg=pg,
                qg=_number(_require(record, "qg", path), f"{path}.qg"),
            )
        )
    return tuple(generators)


def load_case(
    case_text: Union[str, bytes, Mapping[str, Any]],
    *,
    inertia_unit: Optional[str] = None,
    name: Optional[str] = None,
) -> PowerSystemCase:
    """Parse and validate a case document.

    ``inertia_unit`` overrides ``system.inertia_unit``: ``"M"`` stores the
    swing coefficient directly, ``"H"`` stores the inertia constant in
    seconds and is converted with M = 2H / omega_s.
    """

    if isinstance(case_text, Mapping):
        document: Any = case_text
    else:
        try:
            document = json.loads(case_text)
        except json.JSONDecodeError as exc:
            raise CaseError(
                "$", f"not valid JSON ({exc.msg} at line {exc.lineno})"
            ) from exc
    if not isinstance(document, dict):
        raise CaseError("$", "case document must be a JSON object")
    _reject_unknown(document, "document", "$")

    system = _parse_system(document)
    if inertia_unit is not None:
        if inertia_unit not in INERTIA_UNITS:
            raise CaseError(
                "system.inertia_unit", f"must be one of {', '.join(INERTIA_UNITS)}"
            )
        system["inertia_unit"] = inertia_unit

    buses = _parse_buses(_records(document, "buses"))
    bus_ids = {bus.id for bus in buses}
    branches = _parse_branches(_records(document, "branches"), bus_ids)
    generators = _parse_generators(
        _records(document, "generators"),
        bus_ids,
        inertia_unit=system["inertia_unit"],
        synchronous_speed=2.0 * math.pi * system["frequency_hz"],
    )

    case = PowerSystemCase(
        name=str(name or document.get("name") or "case"),
        description=str(document.get("description", "")),
        base_mva=system["base_mva"],
        frequency_hz=system["frequency_hz"],
        buses=buses,
        branches=branches,
        generators=generators,
        load_model=system["load_model"],
    )
    logger.debug(
        "case_loaded name=%s buses=%d branches=%d generators=%d",
        case.name,
        len(buses),
        len(branches),
        len(generators),
        extra={"case": case.name, "buses": len(buses), "generators": len(generators)},
    )
    return case


def load_case_file(
    path: Union[str, Path], *, inertia_unit: Optional[str] = None
) -> PowerSystemCase:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CaseError(
            str(path), f"cannot read case file ({exc.strerror or exc})"
        ) from exc
    return load_case(text, inertia_unit=inertia_unit, name=None)


def resolve_case(
    reference: str, *, inertia_unit: Optional[str] = None
) -> PowerSystemCase:
    """Load a case by file path, ``$IMEAC_CASE_DIR/<name>.json`` or bundled name."""

    candidate = Path(reference).expanduser()
    if candidate.suffix == ".json" or candidate.exists():
        return load_case_file(candidate, inertia_unit=inertia_unit)

    search_dir = config_utils.case_dir()
    if search_dir is not None:
        in_dir = search_dir / f"{reference}.json"
        if in_dir.exists():
            return load_case_file(in_dir, inertia_unit=inertia_unit)

    if reference in BUNDLED_CASES:
        text = resources.files("imeac.cases").joinpath(f"{reference}.json").read_text(
            encoding="utf-8"
        )
        return load_case(text, inertia_unit=inertia_unit)

    raise CaseError(
        reference,
        "no such case file or bundled case "
        f"(bundled: {', '.join(BUNDLED_CASES)})",
    )
