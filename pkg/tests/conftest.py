import logging
from datetime import datetime
from pathlib import Path

import pytest

from imeac.network.case_model import load_case, resolve_case
from imeac.network.reduction import build_staged_network
from imeac.utils import logging as imeac_logging


def pytest_addoption(parser):
    parser.addoption("--log-debug", action="store_true", help="Enable debug logging")
    parser.addoption(
        "--reproduction",
        action="store_true",
        help="Run the slower 39-bus case reproductions.",
    )
    parser.addoption(
        "--keep-artifacts",
        action="store_true",
        help="Persist test artifacts under logs/artifacts for inspection.",
    )
    parser.addoption(
        "--artifact-dir",
        action="store",
        default=None,
        help="Custom base directory for storing test artifacts.",
    )


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "reproduction: mark tests that require --reproduction to run"
    )


def pytest_runtest_setup(item):
    if "reproduction" in item.keywords and not item.config.getoption("--reproduction"):
        pytest.skip("reproduction tests require --reproduction flag")


@pytest.fixture(scope="session", autouse=True)
def setup_logging(request):
    """Route test logs through the structured file format the CLI uses."""
    debug = request.config.getoption("--log-debug", default=False)
    level = logging.DEBUG if debug else logging.INFO

    artifact_root_option = request.config.getoption("--artifact-dir")
    if artifact_root_option:
        log_file_path = Path(artifact_root_option).expanduser().resolve() / "pytest.log"
    elif request.config.getoption("--keep-artifacts"):
        log_file_path = Path("logs") / "artifacts" / "pytest.log"
    else:
        log_file_path = Path("logs") / "test.log"
    log_file_path.parent.mkdir(parents=True, exist_ok=True)

    file_handler = logging.FileHandler(log_file_path)
    formatter = imeac_logging.StructuredFormatter(imeac_logging.LOG_FORMAT)
    file_handler.setFormatter(formatter)
    file_handler.addFilter(imeac_logging.RunContextFilter())
    logging.basicConfig(
        level=level, handlers=[logging.StreamHandler(), file_handler], force=True
    )
    logging.getLogger(__name__).debug("test_logging_ready log_file=%s", log_file_path)


@pytest.fixture
def artifact_dir(request, tmp_path_factory):
    """Return a directory for test artifacts, optionally persisted between runs."""

    base_dir_option = request.config.getoption("--artifact-dir")
    keep_flag = request.config.getoption("--keep-artifacts")

    if base_dir_option:
        base_path = Path(base_dir_option).expanduser().resolve()
        base_path.mkdir(parents=True, exist_ok=True)
    elif keep_flag:
        timestamp = datetime.utcnow().strftime("%Y%m%dT%H%M%SZ")
        base_path = Path("logs") / "artifacts" / timestamp
        base_path.mkdir(parents=True, exist_ok=True)
    else:
        base_path = tmp_path_factory.mktemp("artifacts")

    node_name = request.node.name
    safe_name = "".join(
        c if c.isalnum() or c in ("-", "_") else "_" for c in node_name
    )
    artifact_path = base_path / safe_name
    artifact_path.mkdir(parents=True, exist_ok=True)
    return artifact_path


@pytest.fixture(autouse=True)
def isolated_config(monkeypatch, tmp_path):
    """Keep user settings and case lookups out of the developer's home."""

    from imeac.utils import config as config_utils

    monkeypatch.setenv(config_utils.CONFIG_ENV_VAR, str(tmp_path / ".imeac_config"))
    monkeypatch.delenv(config_utils.CASE_DIR_ENV_VAR, raising=False)


@pytest.fixture(scope="session")
def omib_case():
    return resolve_case("omib")


@pytest.fixture(scope="session")
def omib_network(omib_case):
    return build_staged_network(omib_case, 1)


@pytest.fixture(scope="session")
def ts1_case():
    return resolve_case("ts1")


@pytest.fixture
def three_bus_document():
    """Small lossy case with a load, a tap and line charging."""

    return {
        "name": "three-bus",
        "system": {"base_mva": 100.0, "frequency_hz": 50.0, "inertia_unit": "H"},
        "buses": [
            {"id": 1, "type": "slack", "vm": 1.02, "va": 0.0},
            {"id": 2, "type": "pv", "vm": 1.01, "va": 0.05},
            {"id": 3, "type": "pq", "vm": 0.98, "va": -0.08, "pd": 1.2, "qd": 0.4},
        ],
        "branches": [
            {"from": 1, "to": 3, "r": 0.01, "x": 0.1, "b": 0.02},
            {"from": 2, "to": 3, "r": 0.01, "x": 0.12, "b": 0.02, "ratio": 1.05},
            {"from": 1, "to": 2, "x": 0.2},
        ],
        "generators": [
            {"bus": 1, "inertia": 4.0, "xd_prime": 0.25, "pg": 0.5, "qg": 0.2},
            {
                "bus": 2,
                "inertia": 3.0,
                "xd_prime": 0.3,
                "pm": 0.72,
                "pg": 0.7,
                "qg": 0.1,
            },
        ],
    }


@pytest.fixture
def three_bus_case(three_bus_document):
    return load_case(three_bus_document)
