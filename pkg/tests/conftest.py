import numpy as np
import pytest

from cmpa.data import Dataset, SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_dataset():
    """40 short recordings; enough for a full split and a few epochs."""
    spec = SyntheticSpec(n_recordings=40, min_len=300, max_len=600, noise_std=0.0, seed=3)
    return Dataset.from_lists(*generate_synthetic(spec))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion n")


_verdicts = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    n, text = mark.args
    ok = report.passed and _verdicts.get(n, (True,))[0]
    if report.skipped:
        ok = False
    _verdicts[n] = (ok, text)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        ok, text = _verdicts[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
