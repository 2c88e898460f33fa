"""Glue between scenarios, right-hand sides and the integrator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model, oracle
from .dynamics import MethodKind, PhaseFlow
from .exprlang import evaluate, parse
from .integrate import IntegratorOpts, Trajectory, integrate, project
from .model import ConfigState, PhaseState
from .scenarios import ScenarioConfig, initial_phase_state

METHODS = ("oracle", "dirac", "flannery")


class PhaseSystem:
    """Flat-vector view y = (q, p, plam) of one method's phase-space flow."""

    def __init__(self, cfg: ScenarioConfig, method, f_metric: str = "mass"):
        self.cfg = cfg
        self.spec = cfg.spec
        self.method = MethodKind(method)
        self.flow = PhaseFlow(self.spec, self.method, f_metric)
        s0 = initial_phase_state(cfg, self.method)
        self.s0 = s0
        self.flow.reset(s0.lam, cfg.qd0())

    def pack(self, s: PhaseState) -> np.ndarray:
        return np.concatenate([s.q, s.p, s.plam])

    def unpack(self, y):
        n = self.spec.n
        return y[:n], y[n:2 * n], y[2 * n:]

    def point(self, t, y):
        q, p, _ = self.unpack(y)
        return self.flow.evaluate(t, q, p)

    def rhs(self, t, y):
        pt = self.point(t, y)
        return np.concatenate([pt.qd, pt.pdot, -pt.g])

    def monitor(self, t, y):
        pt = self.point(t, y)
        _, _, plam = self.unpack(y)
        cs = ConfigState(t, pt.q, pt.qd)
        return {
            "residual": float(np.max(np.abs(pt.g), initial=0.0)),
            "g": pt.g.copy(),
            "lam": pt.lam.copy(),
            "plam": float(np.max(np.abs(plam), initial=0.0)),
            "energy": model.physical_energy(self.spec, cs),
            "H": pt.hamiltonian(),
            "f_norm": float(np.max(np.abs(pt.f), initial=0.0)),
            "legendre_iterations": pt.legendre_iterations,
            "multiplier_iterations": pt.report.iterations,
        }

    def post_step(self, t, y):
        q, p, plam = self.unpack(y)
        s = PhaseState(t, q, p, self.flow._lam, plam)
        return self.pack(project(self.spec, s, self.method))

    def describe(self, t, y) -> dict:
        pt = self.point(t, y)
        _, _, plam = self.unpack(y)
        cs = ConfigState(t, pt.q, pt.qd)
        return {"t": float(t), "q": pt.q.copy(), "qd": pt.qd.copy(), "p": pt.p.copy(),
                "lam": pt.lam.copy(), "plam": np.array(plam), "g": pt.g.copy(),
                "energy": model.physical_energy(self.spec, cs), "H": pt.hamiltonian()}


class OracleSystem:
    """Flat-vector view y = (q, qd) of the Lagrange-d'Alembert equations."""

    method = "oracle"

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.spec = cfg.spec
        self.s0 = cfg.config_state()

    def pack(self, cs: ConfigState) -> np.ndarray:
        return np.concatenate([cs.q, cs.qd])

    def rhs(self, t, y):
        n = self.spec.n
        out = oracle.lda_rhs(self.spec, ConfigState(t, y[:n], y[n:]))
        return np.concatenate([y[n:], out.qdd])

    def monitor(self, t, y):
        n = self.spec.n
        cs = ConfigState(t, y[:n], y[n:])
        g = model.constraint_values(self.spec, cs)
        return {"residual": float(np.max(np.abs(g), initial=0.0)), "g": g,
                "energy": model.physical_energy(self.spec, cs)}

    post_step = None

    def describe(self, t, y) -> dict:
        n = self.spec.n
        cs = ConfigState(t, y[:n], y[n:])
        out = oracle.lda_rhs(self.spec, cs)
        energy = model.physical_energy(self.spec, cs)
        return {"t": float(t), "q": cs.q.copy(), "qd": cs.qd.copy(),
                "p": model.momenta(self.spec, cs), "lam": out.mu,
                "plam": np.zeros(self.spec.m), "g": model.constraint_values(self.spec, cs),
                "energy": energy, "H": energy}


def make_system(cfg: ScenarioConfig, method: str, f_metric: str = "mass"):
    if method == "oracle":
        return OracleSystem(cfg)
    if method in ("dirac", "flannery"):
        return PhaseSystem(cfg, method, f_metric)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


@dataclass
class RunResult:
    cfg: ScenarioConfig
    method: str
    opts: IntegratorOpts
    system: object
    trajectory: Trajectory

    def table(self, ts) -> list[dict]:
        """Full per-sample records at times ``ts`` from the dense output."""
        ys = self.trajectory.sample(ts)
        return [self.system.describe(t, y) for t, y in zip(np.atleast_1d(ts), ys)]

    def sample_q(self, ts) -> np.ndarray:
        return self.trajectory.sample(ts)[:, :self.cfg.spec.n]


def run(cfg: ScenarioConfig, method: str, t_end: float,
        opts: IntegratorOpts | None = None, f_metric: str = "mass") -> RunResult:
    opts = opts or IntegratorOpts()
    system = make_system(cfg, method, f_metric)
    post = system.post_step if (opts.stabilization == "projection"
                                and system.post_step is not None) else None
    traj = integrate(system.rhs, 0.0, system.pack(system.s0), t_end, opts,
                     monitor=system.monitor, post_step=post)
    return RunResult(cfg, method, opts, system, traj)


def output_env(spec, record: dict) -> dict:
    env = spec.bindings(record["t"], record["q"], record["qd"])
    env.update(zip(spec.momenta_names, map(float, record["p"])))
    env.update(zip(spec.lam_names, map(float, record["lam"])))
    env.update(zip(spec.plam_names, map(float, record["plam"])))
    return env


def evaluate_outputs(spec, records: list[dict], sources) -> np.ndarray:
    """Evaluate output expressions (may use velocities) on sampled records."""
    exprs = [parse(s) for s in sources]
    return np.array([[evaluate(e, output_env(spec, r)) for e in exprs] for r in records])
