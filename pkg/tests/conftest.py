import sys

import pytest

from distill_gym.config import load_config
from distill_gym.thermo import ATM, Stream, load_component_library


@pytest.fixture(scope="session")
def library():
    return load_component_library()


@pytest.fixture(scope="session")
def btx(library):
    return [library[n] for n in ("benzene", "toluene", "p-xylene")]


@pytest.fixture(scope="session")
def hydrocarbons(library):
    return [library[n] for n in ("ethane", "propane", "isobutane", "n-butane", "isopentane", "n-pentane")]


@pytest.fixture(scope="session")
def btx_problem():
    return load_config("btx")[0]


@pytest.fixture(scope="session")
def hc_problem():
    return load_config("hydrocarbon")[0]


@pytest.fixture
def btx_feed():
    return Stream([3.35, 3.35, 3.35], 298.15, ATM)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}  [{detail}]")
