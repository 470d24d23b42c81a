import json
from pathlib import Path

import pytest

from esae.keychain import KdfParams

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def fast_kdf():
    # lowest permitted cost; key derivation semantics are unchanged
    return KdfParams(iterations=1000)


@pytest.fixture(scope="session")
def keychain_vectors():
    return json.loads((GOLDEN / "keychain_vectors.json").read_text())["vectors"]


_acceptance_results = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and rep.when == "call":
        _acceptance_results.append((marker.args[0], item.name, rep.outcome.upper()))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for n, name, outcome in sorted(_acceptance_results):
        terminalreporter.write_line(f"[{'PASS' if outcome == 'PASSED' else 'FAIL'}] criterion {n}: {name}")
