"""Observed convergence order of fixed-step RK4 on constrained scenarios.

For each scenario and method, integrates with dt, dt/2, dt/4, ... and
reports the final-state error against a tight DP45 reference together with
the observed order log2(e(dt) / e(dt/2)).
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass

import numpy as np

from nonholo import scenarios, simulate
from nonholo.integrate import IntegratorOpts


@dataclass
class OrderStudy:
    scenario: str = "rod-pendulum"
    method: str = "flannery"
    t_end: float = 1.0
    dt0: float = 0.04
    levels: int = 4
    ref_tol: float = 1e-13


def study(cfg: OrderStudy) -> list[tuple[float, float, float]]:
    scenario = scenarios.builtin(cfg.scenario)
    n = scenario.spec.n
    ref = simulate.run(scenario, cfg.method, cfg.t_end,
                       IntegratorOpts(rel_tol=cfg.ref_tol, abs_tol=cfg.ref_tol))
    q_ref = ref.trajectory.states[-1][:n]
    rows, prev = [], None
    for level in range(cfg.levels):
        dt = cfg.dt0 / 2**level
        run = simulate.run(scenario, cfg.method, cfg.t_end, IntegratorOpts(scheme="rk4", dt=dt))
        err = float(np.max(np.abs(run.trajectory.states[-1][:n] - q_ref)))
        order = float("nan") if prev is None else float(np.log2(prev / err))
        rows.append((dt, err, order))
        prev = err
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="rod-pendulum")
    ap.add_argument("--method", default="flannery")
    ap.add_argument("--t-end", type=float, default=1.0)
    ap.add_argument("--dt0", type=float, default=0.04)
    ap.add_argument("--levels", type=int, default=4)
    args = ap.parse_args()
    cfg = OrderStudy(args.scenario, args.method, args.t_end, args.dt0, args.levels)
    print(f"# {cfg.scenario} / {cfg.method}, t_end = {cfg.t_end}")
    print(f"{'dt':>10} {'max|dq|':>12} {'order':>6}")
    for dt, err, order in study(cfg):
        print(f"{dt:10.5f} {err:12.3e} {order:6.2f}")


if __name__ == "__main__":
    main()
