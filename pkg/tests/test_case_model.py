import copy
import json
import math
from pathlib import Path

import pytest

from imeac.network import case_model
from imeac.network.case_model import CaseError, load_case, load_case_file, resolve_case
from imeac.utils import config as config_utils

DATA_DIR = Path(__file__).parent / "data"


def test_case_fields_match_golden_file():
    golden = json.loads((DATA_DIR / "case_fields.json").read_text())
    assert {key: list(value) for key, value in case_model.CASE_FIELDS.items()} == golden


def test_inertia_in_seconds_is_converted(three_bus_case):
    omega_s = 2.0 * math.pi * 50.0
    assert three_bus_case.generator(1).inertia == pytest.approx(2.0 * 4.0 / omega_s)
    assert three_bus_case.generator(2).inertia == pytest.approx(2.0 * 3.0 / omega_s)


def test_inertia_unit_override(three_bus_document):
    case = load_case(three_bus_document, inertia_unit="M")
    assert case.generator(1).inertia == pytest.approx(4.0)


def test_optional_fields_take_defaults(three_bus_case):
    assert three_bus_case.generator(1).pm == pytest.approx(0.5)
    assert three_bus_case.generator(2).pm == pytest.approx(0.72)
    tie = three_bus_case.branches[2]
    assert (tie.r, tie.b, tie.ratio) == (0.0, 0.0, 1.0)
    assert three_bus_case.bus(1).pd == 0.0
    assert three_bus_case.machine_ids == (1, 2)


def test_bus_voltage_phasor(three_bus_case):
    bus = three_bus_case.bus(3)
    assert abs(bus.voltage) == pytest.approx(0.98)
    assert math.atan2(bus.voltage.imag, bus.voltage.real) == pytest.approx(-0.08)


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d["generators"][1].update(bus=9), "generators[1].bus"),
        (lambda d: d["branches"][0].update(to=7), "branches[0].to"),
        (lambda d: d["branches"][0].update(x=0.0), "branches[0].x"),
        (lambda d: d["generators"][0].update(xd_prime=-0.1), "generators[0].xd_prime"),
        (lambda d: d["generators"][0].update(inertia=0), "generators[0].inertia"),
        (lambda d: d["buses"][2].update(vm=0.0), "buses[2].vm"),
        (lambda d: d["buses"][2].update(id=1), "buses[2].id"),
        (lambda d: d["buses"][0].update(kind="pq"), "buses[0].kind"),
        (lambda d: d["buses"][0].pop("va"), "buses[0].va"),
        (lambda d: d["system"].update(inertia_unit="kgm2"), "system.inertia_unit"),
        (lambda d: d["system"].update(load_model="zip"), "system.load_model"),
        (
            lambda d: d["generators"].append(dict(d["generators"][0])),
            "generators[2].bus",
        ),
    ],
)
def test_invalid_documents_name_the_field(three_bus_document, mutate, path):
    document = copy.deepcopy(three_bus_document)
    mutate(document)
    with pytest.raises(CaseError) as excinfo:
        load_case(document)
    assert excinfo.value.path == path
    assert str(excinfo.value).startswith(f"{path}: ")


def test_dangling_generator_message(three_bus_document):
    three_bus_document["generators"][1]["bus"] = 99
    message = r"generators\[1\]\.bus: references unknown bus 99"
    with pytest.raises(CaseError, match=message):
        load_case(three_bus_document)


def test_invalid_json_text():
    with pytest.raises(CaseError, match="not valid JSON"):
        load_case("{not json")


def test_load_case_file_reports_unreadable_path(tmp_path):
    with pytest.raises(CaseError, match="cannot read case file"):
        load_case_file(tmp_path / "missing.json")


def test_resolve_case_prefers_path_then_case_dir(
    monkeypatch, tmp_path, three_bus_document
):
    case_file = tmp_path / "mine.json"
    case_file.write_text(json.dumps(three_bus_document))
    assert resolve_case(str(case_file)).name == "three-bus"

    search = tmp_path / "cases"
    search.mkdir()
    three_bus_document["name"] = "from-dir"
    (search / "ts1.json").write_text(json.dumps(three_bus_document))
    monkeypatch.setenv(config_utils.CASE_DIR_ENV_VAR, str(search))
    assert resolve_case("ts1").name == "from-dir"


def test_bundled_cases_load():
    ts1 = resolve_case("ts1")
    assert len(ts1.buses) == 39
    assert ts1.machine_ids == tuple(range(30, 40))
    two_h = ts1.generator(39).inertia * ts1.synchronous_speed
    assert two_h == pytest.approx(194.0, rel=1e-6)
    assert ts1.load_model == "nominal"

    omib = resolve_case("omib")
    mirror = resolve_case("omib_mirror")
    assert omib.machine_ids == mirror.machine_ids == (1, 2)
    assert mirror.bus(1).va == pytest.approx(-omib.bus(1).va)


def test_resolve_case_unknown_name():
    with pytest.raises(CaseError, match="no such case file or bundled case"):
        resolve_case("ts99")


def test_load_model_defaults_to_impedance(three_bus_document):
    assert load_case(three_bus_document).load_model == "impedance"
    three_bus_document["system"]["load_model"] = "nominal"
    assert load_case(three_bus_document).load_model == "nominal"
