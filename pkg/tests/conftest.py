import numpy as np
import pytest

from graphrom import _backend
from graphrom.dataset import SyntheticCase, build_mesh

_CRITERIA = {}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        n = mark.args[0]
        status = "skip" if rep.skipped else ("pass" if rep.passed else "fail")
        _CRITERIA.setdefault(n, []).append((item.name, status, getattr(item, "_detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        rows = _CRITERIA[n]
        ran = [s for _, s, _ in rows if s != "skip"]
        verdict = "FAIL" if "fail" in ran else ("PASS" if ran else "SKIP")
        tr.write_line(f"criterion {n}: {verdict}")
        for name, status, detail in rows:
            tr.write_line(f"    {status:4s} {name}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the acceptance summary."""

    def set_detail(text):
        request.node._detail = text
        print(text)

    return set_detail


@pytest.fixture(autouse=True)
def _single_thread():
    prev = _backend.threads()
    _backend.set_threads(1)
    yield
    _backend.set_threads(prev)


@pytest.fixture(scope="session")
def demo_case():
    return SyntheticCase()


@pytest.fixture(scope="session")
def demo_mesh(demo_case):
    return build_mesh(demo_case)


@pytest.fixture(scope="session")
def big_case():
    return SyntheticCase(n_chord=60, n_span=50)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
