"""Named cross-module invariants, run by ``nonholo check``.

Every check looks engine functions up through their module at call time,
so a patched ``brackets.solve_f`` is what the check exercises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import brackets, dynamics, exprlang, integrate, model, oracle, scenarios
from .model import ConfigState, PhaseState

SEED = 20240611


@dataclass
class CheckResult:
    group: str
    name: str
    ok: bool
    detail: str = ""


REGISTRY: list[tuple[str, str, Callable[[], None]]] = []


def invariant(group: str, name: str):
    def register(fn):
        REGISTRY.append((group, name, fn))
        return fn
    return register


def _require(cond: bool, detail: str):
    if not cond:
        raise AssertionError(detail)


def _rng(salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(SEED + salt)


# -- exprlang ----------------------------------------------------------------

_SOURCES = ("2*x + sin(t)", "x^2^3", "-x^2 + y/(1 + x^2)", "exp(-x)*cos(y)*sqrt(1 + x^2)",
            "log(2 + sin(x*y)) - tan(0.3*y)", "abs(x - 3) * pi")


@invariant("exprlang", "print-parse-fixed-point")
def _print_parse():
    for src in _SOURCES:
        once = exprlang.to_source(exprlang.parse(src))
        _require(exprlang.to_source(exprlang.parse(once)) == once, f"unstable print of {src!r}")


@invariant("exprlang", "ad-matches-finite-difference")
def _ad_fd():
    rng, h = _rng(1), 1e-6
    for src in _SOURCES:
        e = exprlang.parse(src)
        names = sorted(exprlang.free_vars(e))
        for _ in range(5):
            env = {v: float(x) for v, x in zip(names, rng.uniform(-2, 2, len(names)))}
            _, grad, _ = exprlang.eval_derivs(e, env, names, order=2)
            for i, v in enumerate(names):
                hi, lo = dict(env), dict(env)
                hi[v] += h
                lo[v] -= h
                fd = (exprlang.evaluate(e, hi) - exprlang.evaluate(e, lo)) / (2 * h)
                _require(abs(grad[i] - fd) / (1 + abs(grad[i])) < 1e-6,
                         f"d/d{v} of {src!r}: AD {grad[i]!r} vs FD {fd!r}")


# -- model -------------------------------------------------------------------

def _random_config(cfg, rng, spread=0.3):
    q = cfg.q0() + spread * rng.standard_normal(cfg.spec.n)
    qd = cfg.qd0() + spread * rng.standard_normal(cfg.spec.n)
    return ConfigState(0.0, q, qd)


@invariant("model", "legendre-roundtrip")
def _legendre_roundtrip():
    rng = _rng(2)
    for name in scenarios.BUILTINS:
        cfg = scenarios.builtin(name)
        for _ in range(5):
            cs = _random_config(cfg, rng)
            lam = rng.standard_normal(cfg.spec.m)
            p = model.momenta(cfg.spec, cs, lam)
            qd = model.legendre_invert(cfg.spec, cs.t, cs.q, p, lam)
            err = float(np.max(np.abs(qd - cs.qd)))
            _require(err < 1e-10, f"{name}: roundtrip error {err:.2e}")


@invariant("model", "envelope-identity")
def _envelope():
    rng = _rng(3)
    for name in scenarios.BUILTINS:
        cfg = scenarios.builtin(name)
        spec = cfg.spec
        for _ in range(5):
            cs = _random_config(cfg, rng)
            lam = rng.standard_normal(spec.m)
            s = PhaseState(0.0, cs.q, model.momenta(spec, cs, lam), lam, np.zeros(spec.m))
            grad = model.grad_hamiltonian(spec, s)
            g = model.constraint_values(spec, cs)
            _require(np.allclose(grad.dlam, g, rtol=0, atol=1e-9),
                     f"{name}: dH/dlam {grad.dlam} vs g {g}")


# -- brackets ----------------------------------------------------------------

@invariant("brackets", "transposition-residual")
def _transposition_residual():
    A = np.array([[-5.0, 1.0, 0.0]])
    G = np.array([[-2.0, 0.0, 1.0]])
    expected = np.array([[10, 0, -5], [-2, 0, 1], [0, 0, 0]]) / 26.0
    f = brackets.solve_f(A, G)
    _require(np.max(np.abs(f - expected)) < 1e-14, "worked pseudoinverse example mismatch")
    cfg = scenarios.builtin("twist-toy")
    rng = _rng(4)
    for _ in range(20):
        cs = ConfigState(0.0, rng.uniform(-2, 2, 3), rng.uniform(-2, 2, 3))
        A = brackets.velocity_jacobian(cfg.spec, cs)
        G = brackets.gkj_matrix(cfg.spec, cs, rng.uniform(-2, 2, 3))
        res = float(np.max(np.abs(A @ brackets.solve_f(A, G) - G)))
        _require(res < 1e-10, f"twist-toy residual {res:.2e}")


def _random_phase_state(spec, rng) -> PhaseState:
    n, m = spec.n, spec.m
    return PhaseState(float(rng.uniform(0, 1)), rng.uniform(-1, 1, n), rng.uniform(-1, 1, n),
                      rng.uniform(-1, 1, m), rng.uniform(-1, 1, m))


def _poly_observables(spec):
    q, p = spec.coords, spec.momenta_names
    srcs = [f"{q[0]}*{p[-1]}^2", f"{p[0]}*{q[-1]} + {q[0]}^2"]
    if spec.m:
        srcs.append(f"{spec.lam_names[0]}*{p[0]} + {spec.plam_names[0]}*{q[0]}")
    return [brackets.Observable(s, spec) for s in srcs]


@invariant("brackets", "poisson-antisymmetry")
def _poisson_antisymmetry():
    rng = _rng(5)
    for name in ("rolling-sphere", "rod-pendulum", "twist-toy"):
        spec = scenarios.builtin(name).spec
        obs = _poly_observables(spec)
        for _ in range(5):
            s = _random_phase_state(spec, rng)
            for X in obs:
                for Y in obs:
                    dev = abs(brackets.poisson(X, Y, s) + brackets.poisson(Y, X, s))
                    _require(dev < 1e-12, f"{name}: {X} {Y} antisymmetry {dev:.2e}")


@invariant("brackets", "canonical-pairs")
def _canonical():
    spec = scenarios.builtin("rolling-sphere").spec
    s = _random_phase_state(spec, _rng(6))
    f = _rng(7).standard_normal((spec.n, spec.n))
    for i, qi in enumerate(spec.coords):
        for j, pj in enumerate(spec.momenta_names):
            X, Y = brackets.Observable(qi, spec), brackets.Observable(pj, spec)
            want = 1.0 if i == j else 0.0
            _require(brackets.poisson(X, Y, s) == want, f"{{{qi},{pj}}}_PB")
            _require(brackets.flannery(X, Y, s, f) == want, f"{{{qi},{pj}}}_FB")


@invariant("brackets", "flannery-antisymmetry-deficit")
def _deficit():
    rng = _rng(8)
    spec = scenarios.builtin("twist-toy").spec
    obs = _poly_observables(spec)
    for _ in range(5):
        s = _random_phase_state(spec, rng)
        f = rng.standard_normal((spec.n, spec.n))
        pf = s.p @ f
        for X in obs:
            for Y in obs:
                lhs = brackets.flannery(X, Y, s, f) + brackets.flannery(Y, X, s, f)
                rhs = (X.gradient(s).dp + Y.gradient(s).dp) @ pf
                _require(abs(lhs - rhs) < 1e-10, f"deficit mismatch {lhs - rhs:.2e}")


# -- dynamics ----------------------------------------------------------------

@invariant("dynamics", "multiplier-idempotence")
def _idempotence():
    for name in ("rolling-sphere", "rod-pendulum", "twist-toy"):
        cfg = scenarios.builtin(name)
        s0 = scenarios.initial_phase_state(cfg)
        first = dynamics.solve_multipliers(cfg.spec, 0.0, s0.q, s0.p, "flannery", warm=s0.lam)
        again = dynamics.solve_multipliers(cfg.spec, 0.0, s0.q, s0.p, "flannery",
                                           warm=first.lam)
        dev = float(np.max(np.abs(first.lam - again.lam), initial=0.0))
        _require(dev < 1e-13, f"{name}: re-solve moved lam by {dev:.2e}")


@invariant("dynamics", "holonomic-methods-coincide")
def _holonomic_equal():
    for name in ("rod-pendulum", "constant-velocity"):
        cfg = scenarios.builtin(name)
        s0 = scenarios.initial_phase_state(cfg)
        a = dynamics.rhs(cfg.spec, s0, "dirac")
        b = dynamics.rhs(cfg.spec, s0, "flannery")
        dev = max(np.max(np.abs(a.q - b.q)), np.max(np.abs(a.p - b.p)))
        _require(dev < 1e-14, f"{name}: dirac and flannery differ by {dev:.2e}")


@invariant("dynamics", "sphere-initial-acceleration")
def _sphere_accel():
    cfg = scenarios.builtin("rolling-sphere")
    s0 = scenarios.initial_phase_state(cfg)
    point = dynamics.PhaseFlow(cfg.spec, "flannery").evaluate(0.0, s0.q, s0.p, s0.lam)
    want = 5.0 / 7.0 * 9.8 * math.sin(math.pi / 6)
    _require(abs(point.qdd[0] - want) < 1e-9, f"x_ddot = {point.qdd[0]!r}, want {want!r}")


@invariant("dynamics", "rate-consistency")
def _rates():
    cfg = scenarios.builtin("rolling-sphere")
    spec = cfg.spec
    s0 = scenarios.initial_phase_state(cfg)
    flow = dynamics.PhaseFlow(spec, "flannery")
    point = flow.evaluate(0.0, s0.q, s0.p, s0.lam)
    for i, c in enumerate(spec.coords):
        rate = dynamics.observable_rate(brackets.Observable(c, spec), spec, s0)
        _require(abs(rate - point.qd[i]) < 1e-10, f"d{c}/dt {rate!r} vs {point.qd[i]!r}")
    for i, pn in enumerate(spec.momenta_names):
        rate = dynamics.observable_rate(brackets.Observable(pn, spec), spec, s0)
        _require(abs(rate - point.pdot[i]) < 1e-10, f"d{pn}/dt {rate!r} vs {point.pdot[i]!r}")


# -- oracle ------------------------------------------------------------------

@invariant("oracle", "sphere-closed-form-start")
def _oracle_sphere():
    cfg = scenarios.builtin("rolling-sphere")
    out = oracle.lda_rhs(cfg.spec, cfg.config_state())
    _require(abs(out.qdd[0] - 3.5) < 1e-12, f"x_ddot = {out.qdd[0]!r}")
    _require(abs(out.mu[0] + 1.4) < 1e-12, f"mu_1 = {out.mu[0]!r}")


@invariant("oracle", "flannery-agrees-at-start")
def _oracle_vs_flannery():
    for name in ("rolling-sphere", "twist-toy", "rod-pendulum"):
        cfg = scenarios.builtin(name)
        s0 = scenarios.initial_phase_state(cfg)
        point = dynamics.PhaseFlow(cfg.spec, "flannery").evaluate(0.0, s0.q, s0.p, s0.lam)
        ref = oracle.lda_rhs(cfg.spec, cfg.config_state())
        dev = float(np.max(np.abs(point.qdd - ref.qdd)))
        _require(dev < 1e-9, f"{name}: accelerations differ by {dev:.2e}")


# -- integrate ---------------------------------------------------------------

@invariant("integrate", "linear-flow")
def _linear_flow():
    opts = integrate.IntegratorOpts(rel_tol=1e-12, abs_tol=1e-12)
    traj = integrate.integrate(lambda t, y: np.array([y[1], 0.0]), 0.0, [0.0, 3.0], 2.0, opts)
    _require(abs(traj.states[-1][0] - 6.0) < 1e-11, f"q(2) = {traj.states[-1][0]!r}")


@invariant("integrate", "projection-restores-constraint")
def _projection():
    cfg = scenarios.builtin("rod-pendulum")
    s0 = scenarios.initial_phase_state(cfg)
    moved = s0.replace(q=s0.q * (1 + 5e-7))
    fixed = integrate.project(cfg.spec, moved)
    g = model.constraint_values(cfg.spec, ConfigState(0.0, fixed.q, np.zeros(2)))
    _require(abs(g[0]) < 1e-12, f"|g| after projection {abs(g[0]):.2e}")


def run_checks(filter: str | None = None) -> list[CheckResult]:
    results = []
    for group, name, fn in REGISTRY:
        if filter and filter != group and filter not in name:
            continue
        try:
            fn()
            results.append(CheckResult(group, name, True))
        except Exception as exc:  # a crashing invariant is a failing invariant
            results.append(CheckResult(group, name, False, f"{type(exc).__name__}: {exc}"))
    return results
