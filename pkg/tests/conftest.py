import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nonholo import scenarios, simulate
from nonholo.integrate import IntegratorOpts

settings.register_profile(
    "repo", derandomize=True, deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_RUNS = {}


def sphere_run(method, tol=1e-10, t_end=2.0):
    """Shared rolling-sphere integrations; each takes a few seconds."""
    key = ("rolling-sphere", method, tol, t_end)
    if key not in _RUNS:
        cfg = scenarios.builtin("rolling-sphere")
        _RUNS[key] = simulate.run(cfg, method, t_end, IntegratorOpts(rel_tol=tol, abs_tol=tol))
    return _RUNS[key]


def scenario_run(name, method, t_end, tol=1e-10):
    key = (name, method, tol, t_end)
    if key not in _RUNS:
        cfg = scenarios.builtin(name)
        _RUNS[key] = simulate.run(cfg, method, t_end, IntegratorOpts(rel_tol=tol, abs_tol=tol))
    return _RUNS[key]


# criterion id -> (passed, one-line measurement); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}: {detail}")
