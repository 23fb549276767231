import numpy as np
import pytest

from deidpolicy import default_hierarchy, enumerate_policies

import synth


@pytest.fixture(scope="session")
def hierarchy():
    return default_hierarchy()


@pytest.fixture(scope="session")
def policies(hierarchy):
    return enumerate_policies(hierarchy)


@pytest.fixture(scope="session")
def small_pop(hierarchy):
    rng = np.random.default_rng(101)
    return synth.make_population("47001", 20_000, hierarchy, rng)


@pytest.fixture(scope="session")
def tiny_pop(hierarchy):
    rng = np.random.default_rng(102)
    return synth.make_population("47175", 8, hierarchy, rng)


# one PASS/FAIL/SKIP line per acceptance criterion in the terminal summary
_acceptance_results: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if "test_acceptance" not in item.nodeid:
        return
    if report.when == "setup" and report.skipped:
        _acceptance_results[item.name] = "SKIP"
    elif report.when == "call":
        _acceptance_results[item.name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if _acceptance_results:
        terminalreporter.section("acceptance criteria")
        for name in sorted(_acceptance_results):
            terminalreporter.write_line(f"{name}: {_acceptance_results[name]}")
