import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rjpdmp.targets import Dataset, SpikeSlabPrior

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def joint_z(a, b):
    """Per-coordinate z-scores of the difference of two replicate means."""
    a, b = np.asarray(a), np.asarray(b)
    se = np.sqrt(a.var(axis=0, ddof=1) / len(a) + b.var(axis=0, ddof=1) / len(b))
    return np.abs(a.mean(axis=0) - b.mean(axis=0)) / np.maximum(se, 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def logistic_data(rng):
    n, p = 40, 4
    X = rng.standard_normal((n, p))
    psi = X @ np.array([1.0, -0.5, 0.0, 0.3])
    y = (rng.random(n) < 1 / (1 + np.exp(-psi))).astype(float)
    return Dataset(X, y)


@pytest.fixture
def robust_data(rng):
    n, p = 40, 4
    X = rng.standard_normal((n, p))
    y = X @ np.array([1.0, 1.0, 0.0, 0.0]) + rng.standard_cauchy(n)
    return Dataset(X, y)


@pytest.fixture
def prior():
    return SpikeSlabPrior(0.5, 4.0)


# -- acceptance report ----------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[mark.args[0]] = ("PASS" if rep.passed else "FAIL", mark.args[1], detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        line = f"criterion {n:>2} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
