import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import scenario_run
from nonholo import model, scenarios, simulate
from nonholo.errors import DriftAbort, MaxStepsExceeded, NoConvergence
from nonholo.integrate import IntegratorOpts, integrate, project
from nonholo.model import ConfigState

PENDULUM = scenarios.builtin("rod-pendulum")


def test_linear_flow_dp45():
    traj = integrate(lambda t, y: np.array([y[1], 0.0]), 0.0, [0.0, 3.0], 2.0,
                     IntegratorOpts(rel_tol=1e-12, abs_tol=1e-12))
    assert abs(traj.states[-1][0] - 6.0) < 1e-11
    assert traj.times[-1] == 2.0


def test_harmonic_oscillator_energy_over_ten_periods():
    T = 2 * np.pi
    traj = integrate(lambda t, y: np.array([y[1], -y[0]]), 0.0, [1.0, 0.0], 10 * T,
                     IntegratorOpts(rel_tol=1e-10, abs_tol=1e-10))
    e = 0.5 * (traj.states[:, 0] ** 2 + traj.states[:, 1] ** 2)
    assert np.max(np.abs(e - 0.5)) / 0.5 < 1e-8
    assert np.max(np.abs(traj.states[-1] - [1.0, 0.0])) < 1e-8


def test_drift_abort():
    # a broken rhs pushes the "constraint" y off zero
    with pytest.raises(DriftAbort) as info:
        integrate(lambda t, y: np.array([1.0]), 0.0, [0.0], 1.0,
                  IntegratorOpts(drift_abort=1e-3),
                  monitor=lambda t, y: {"residual": abs(y[0])})
    assert 0 < info.value.t <= 1.0


def test_max_steps():
    with pytest.raises(MaxStepsExceeded):
        integrate(lambda t, y: -y, 0.0, [1.0], 1.0, IntegratorOpts(scheme="rk4", dt=1e-3, max_steps=10))


def test_step_floor():
    # a singular rhs drives the controller below the 1e-12 floor
    with pytest.raises((MaxStepsExceeded, NoConvergence)):
        integrate(lambda t, y: np.array([1.0 / (1.0 - t) ** 3]), 0.0, [0.0], 2.0)


@pytest.mark.parametrize("bad", [dict(scheme="euler"), dict(rel_tol=0.0), dict(max_steps=0),
                                 dict(stabilization="baumgarte")])
def test_opts_validation(bad):
    with pytest.raises(ValueError):
        IntegratorOpts(**bad)


def test_trajectory_invariants():
    traj = integrate(lambda t, y: np.array([y[1], -y[0]]), 0.0, [1.0, 0.0], 3.0)
    assert np.all(np.diff(traj.times) > 0)
    assert len(traj.diag) == len(traj.times)
    assert np.all(np.isfinite(traj.states))


def _cubic_forced(t, y):
    # free particle under a cubic potential plus a time-dependent force
    return np.array([y[1], -y[0] ** 3 + np.cos(t)])


def test_rk4_global_error_is_fourth_order():
    ref = integrate(_cubic_forced, 0.0, [0.5, 0.0], 2.0, IntegratorOpts(rel_tol=1e-13, abs_tol=1e-13))
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        traj = integrate(_cubic_forced, 0.0, [0.5, 0.0], 2.0, IntegratorOpts(scheme="rk4", dt=dt))
        errs.append(np.max(np.abs(traj.states[-1] - ref.states[-1])))
    for coarse, fine in zip(errs, errs[1:]):
        assert 8 <= coarse / fine <= 32


@given(st.floats(0.0, 2.0))
def test_dense_output_is_accurate(t):
    ts = [t]
    ref = np.array([np.cos(t), -np.sin(t)])
    for opts in (IntegratorOpts(rel_tol=1e-10, abs_tol=1e-10), IntegratorOpts(scheme="rk4", dt=1e-2)):
        traj = integrate(lambda s, y: np.array([y[1], -y[0]]), 0.0, [1.0, 0.0], 2.0, opts)
        assert np.max(np.abs(traj.sample(ts)[0] - ref)) < 1e-8


def test_tolerance_is_honored_on_the_pendulum():
    ref = scenario_run("rod-pendulum", "oracle", 2.0, tol=1e-13).trajectory.states[-1][:2]
    errs = []
    for tol in (1e-6, 5e-7, 2.5e-7, 1.25e-7):
        run = simulate.run(PENDULUM, "flannery", 2.0, IntegratorOpts(rel_tol=tol, abs_tol=tol))
        errs.append(np.max(np.abs(run.trajectory.states[-1][:2] - ref)))
    assert all(b <= a for a, b in zip(errs, errs[1:])), errs


# -- projection ---------------------------------------------------------------

def _pendulum_state(theta, omega=0.0):
    q = np.array([np.sin(theta), -np.cos(theta)])
    qd = omega * np.array([np.cos(theta), np.sin(theta)])
    cs = ConfigState(0.0, q, qd)
    return cs, model.momenta(PENDULUM.spec, cs)


def _g(s):
    return model.constraint_values(PENDULUM.spec, ConfigState(0, s.q, np.zeros(2)))[0]


def test_projection_fixed_point():
    system = simulate.PhaseSystem(PENDULUM, "flannery")
    s0 = system.s0
    out = project(PENDULUM.spec, s0)
    assert np.max(np.abs(out.q - s0.q)) <= 1e-15
    assert np.max(np.abs(out.p - s0.p)) <= 1e-15


def test_projection_restores_small_violation():
    cs, p = _pendulum_state(0.4, 1.0)
    s = model.PhaseState(0.0, cs.q * (1 + 5e-7), p, [0.0], [0.0])
    assert abs(_g(s)) == pytest.approx(1e-6, rel=1e-3)
    out = project(PENDULUM.spec, s)
    assert abs(_g(out)) < 1e-12
    qd = model.legendre_invert(PENDULUM.spec, 0, out.q, out.p, out.lam)
    assert abs(out.q @ qd) < 1e-12


def test_projection_keeps_q_for_velocity_constraints():
    cfg = scenarios.builtin("twist-toy")
    s0 = scenarios.initial_phase_state(cfg)
    s = s0.replace(p=s0.p + [0.0, 1e-6, 0.0])
    out = project(cfg.spec, s)
    np.testing.assert_array_equal(out.q, s.q)
    qd = model.legendre_invert(cfg.spec, 0, out.q, out.p, out.lam)
    assert abs(model.constraint_values(cfg.spec, ConfigState(0, out.q, qd))[0]) < 1e-12


def test_projection_far_off_surface():
    cs, p = _pendulum_state(0.4)
    s = model.PhaseState(0.0, cs.q * np.sqrt(11.0), p, [0.0], [0.0])
    assert abs(_g(s)) == pytest.approx(10.0)
    with pytest.raises(NoConvergence):
        project(PENDULUM.spec, s)


def test_projection_run_keeps_constraint_tight():
    opts = IntegratorOpts(scheme="rk4", dt=2e-2, stabilization="projection")
    run = simulate.run(PENDULUM, "flannery", 2.0, opts)
    assert max(d["residual"] for d in run.trajectory.diag) < 1e-12
    loose = simulate.run(PENDULUM, "flannery", 2.0, IntegratorOpts(scheme="rk4", dt=2e-2))
    assert max(d["residual"] for d in loose.trajectory.diag) > 1e-9
