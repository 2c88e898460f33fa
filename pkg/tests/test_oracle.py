import math

import numpy as np
import pytest

from conftest import sphere_run
from nonholo import model, oracle, scenarios, simulate
from nonholo.errors import SingularConstraintBlock, SingularMass
from nonholo.integrate import IntegratorOpts
from nonholo.model import ConfigState, SystemSpec


def test_sphere_start():
    cfg = scenarios.builtin("rolling-sphere")
    out = oracle.lda_rhs(cfg.spec, cfg.config_state())
    assert out.qdd[0] == pytest.approx(3.5, abs=1e-12)
    assert out.mu[0] == pytest.approx(-1.4, abs=1e-12)
    assert out.residual < 1e-10


def test_pendulum_at_rest():
    # force direction dg/dq = (0, -2) at the bottom; balancing gravity needs mu = -4.9
    spec = scenarios.builtin("rod-pendulum").spec
    out = oracle.lda_rhs(spec, ConfigState(0, [0, -1], [0, 0]))
    np.testing.assert_allclose(out.qdd, 0, atol=1e-14)
    assert out.mu[0] == pytest.approx(-4.9, abs=1e-12)


def test_free_particle():
    spec = scenarios.builtin("free-particle").spec
    assert oracle.lda_rhs(spec, ConfigState(0, [0], [3])).qdd.tolist() == [0.0]


def test_singular_systems():
    with pytest.raises(SingularMass):
        oracle.lda_rhs(SystemSpec.from_strings("lin", ["x"], {}, "x_dot"), ConfigState(0, [0], [1]))
    dup = SystemSpec.from_strings("dup", ["x", "y", "z"], {}, "0.5*(x_dot^2 + y_dot^2 + z_dot^2)",
                                  ["x_dot - y_dot", "2*x_dot - 2*y_dot"])
    with pytest.raises(SingularConstraintBlock):
        oracle.lda_rhs(dup, ConfigState(0, [0, 0, 0], [1, 1, 0]))


def test_analytic_sphere():
    assert oracle.rolling_sphere_analytic(0.0) == (0.0, 0.0, 2.5)
    x, _, _ = oracle.rolling_sphere_analytic(1.0)
    assert x == pytest.approx(1.75, abs=1e-12)
    x, xd, wz = oracle.rolling_sphere_analytic(2.0)
    assert (x, wz) == (pytest.approx(7.0, abs=1e-12), 2.5)
    assert xd == pytest.approx(7.0, abs=1e-12)


def test_integrated_sphere_matches_closed_form():
    run = sphere_run("oracle")
    ts = np.linspace(0, 2, 201)
    recs = run.table(ts)
    wz = simulate.evaluate_outputs(run.cfg.spec, recs, ["phi_dot + psi_dot*cos(theta)"])[:, 0]
    x = np.array([r["q"][0] for r in recs])
    x_exact = np.array([oracle.rolling_sphere_analytic(t)[0] for t in ts])
    assert np.max(np.abs(x - x_exact)) < 1e-8
    assert np.max(np.abs(wz - 2.5)) < 1e-8


def test_oracle_sphere_conserves_energy():
    run = sphere_run("oracle")
    e = np.array([d["energy"] for d in run.trajectory.diag])
    assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-8


def test_small_oscillation_period():
    th0 = 1e-3
    doc = scenarios.builtin("rod-pendulum").to_dict()
    doc["initial"].update(x=math.sin(th0), y=-math.cos(th0))
    cfg = scenarios.from_dict(doc)
    run = simulate.run(cfg, "oracle", 4.5, IntegratorOpts(rel_tol=1e-12, abs_tol=1e-14))
    ts = np.linspace(0, 4.5, 45001)
    x = run.sample_q(ts)[:, 0]
    down = np.nonzero((x[:-1] > 0) & (x[1:] <= 0))[0]
    crossings = ts[down] + x[down] / (x[down] - x[down + 1]) * (ts[1] - ts[0])
    period = crossings[1] - crossings[0]
    assert period == pytest.approx(2 * math.pi * math.sqrt(1 / 9.8), rel=1e-5)
