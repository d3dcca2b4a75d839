import dataclasses
import json

import pytest

from imeac.core import runner
from imeac.utils import config as config_utils


def test_user_settings_fill_unset_flags(tmp_path):
    config_utils.set_value("sim.t_end", "0.8")
    config = runner.build_run_config("simulate", {"tcl": 0.1, "output": tmp_path})
    assert config.tend == pytest.approx(0.8)
    assert config.tcl == (0.1,)

    flagged = runner.build_run_config("simulate", {"tend": 0.5, "output": tmp_path})
    assert flagged.tend == pytest.approx(0.5)


def test_run_file_rejects_unknown_keys(tmp_path):
    run_file = tmp_path / "run.json"
    run_file.write_text(json.dumps({"fault-bus": [3, 4], "colour": "blue"}))
    with pytest.raises(config_utils.ConfigError, match="config key 'colour'"):
        runner.build_run_config("sweep", {"output": tmp_path}, config_file=run_file)


def test_run_file_lists_become_tuples(tmp_path):
    run_file = tmp_path / "run.json"
    run_file.write_text(json.dumps({"fault-bus": [3, 4], "tcl": [0.1, 0.2]}))
    config = runner.build_run_config(
        "sweep", {"output": tmp_path}, config_file=run_file
    )
    assert config.fault_bus == ("3", "4")
    assert config.tcl == (0.1, 0.2)


@pytest.mark.parametrize(
    "flags, message",
    [
        ({"step": 0.0}, "step must be positive"),
        ({"tend": 0.0005}, "positive multiple of step"),
        ({"tcl": 3.0}, "0 < tcl < tend"),
        ({"jobs": 0}, "jobs must be at least 1"),
        ({"energy_share": 1.5}, "energy_share must not exceed 1"),
        ({"energy_share": 0.0}, "energy_share must be positive"),
    ],
)
def test_validation_errors(tmp_path, flags, message):
    with pytest.raises(config_utils.ConfigError, match=message):
        runner.build_run_config("simulate", {"output": tmp_path, **flags})


def test_unwritable_output_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(config_utils.ConfigError, match="Cannot create output"):
        runner.build_run_config("simulate", {"output": blocker / "out"})


def test_clamp_tolerance(tmp_path):
    config = runner.build_run_config("cct", {"tol": 1e-4, "output": tmp_path})
    clamped, message = runner.clamp_tolerance(config)
    assert clamped.tol == pytest.approx(config.step)
    assert "below the step" in message
    unchanged, none = runner.clamp_tolerance(clamped)
    assert unchanged is clamped and none is None


def test_parallel_sweep_matches_sequential(tmp_path):
    flags = {"case": "omib", "fault_bus": ["1", "2"], "tcl": [0.25, 0.1], "tend": 1.0}
    serial = runner.run_sweep(
        runner.build_run_config(
            "sweep", {**flags, "jobs": 1, "output": tmp_path / "serial"}
        )
    )
    parallel = runner.run_sweep(
        runner.build_run_config(
            "sweep", {**flags, "jobs": 2, "output": tmp_path / "parallel"}
        )
    )
    assert serial == parallel
    pairs = [(row.fault_bus, row.t_cl) for row in serial]
    assert pairs == [(1, 0.1), (1, 0.25), (2, 0.1), (2, 0.25)]
    assert (tmp_path / "serial" / "sweep.csv").read_bytes() == (
        tmp_path / "parallel" / "sweep.csv"
    ).read_bytes()


def test_single_value_commands_need_exactly_one(tmp_path):
    config = runner.build_run_config(
        "simulate",
        {"case": "omib", "fault_bus": ["1", "2"], "tcl": 0.1, "output": tmp_path},
    )
    with pytest.raises(config_utils.ConfigError, match="exactly one fault bus"):
        runner.run_simulate(config)


def test_every_option_seeds_a_run_field():
    run_fields = {f.name for f in dataclasses.fields(runner.RunConfig)}
    seeded = config_utils.run_defaults()
    assert set(seeded) <= run_fields
    assert seeded["step"] == pytest.approx(1e-3)
    assert seeded["horizon_extensions"] == 1
    assert seeded["energy_share"] == pytest.approx(0.05)


def test_energy_share_reaches_identification(tmp_path):
    config_utils.set_value("identify.energy_share", "0.2")
    config = runner.build_run_config("assess", {"output": tmp_path})
    assert config.settings().identification.energy_share == pytest.approx(0.2)
    with pytest.raises(config_utils.ConfigError, match="must not exceed 1"):
        config_utils.set_value("identify.energy_share", "2")


def test_hand_edited_settings_are_validated(tmp_path):
    config_utils.config_path().parent.mkdir(parents=True, exist_ok=True)
    config_utils.config_path().write_text(json.dumps({"run.jobs": 0}))
    with pytest.raises(config_utils.ConfigError, match="greater than or equal to 1"):
        runner.build_run_config("sweep", {"output": tmp_path})
