import numpy as np
import pytest

from kmot.measures import Measure, MeasureCollection, SupportSpace

_REPORT = []


@pytest.fixture
def report():
    """Record one acceptance line: ``report(number, passed, detail)``."""

    def record(number, passed, detail):
        _REPORT.append((number, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_REPORT):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def line_support():
    return SupportSpace([[5], [10]])


@pytest.fixture
def grid_support():
    from kmot.designs import experiment_support

    return experiment_support()


def random_collection(rng, N, k, d=2, support=None, sizes=None):
    support = support or SupportSpace(rng.normal(size=(N, d)).round(6))
    W = rng.dirichlet(np.ones(support.N), size=k)
    sizes = sizes or [None] * k
    return MeasureCollection(tuple(Measure(w, support, n) for w, n in zip(W, sizes)))
