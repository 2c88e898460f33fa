"""Configuration-space reference dynamics (Lagrange-d'Alembert with Chetaev forces).

    d/dt dL/dqd - dL/dq = mu_k dh_k/dqd,     h_k_dot = 0

where h_k = g_k for velocity-dependent constraints and h_k = g_k_dot for
holonomic ones, so the force direction of a holonomic constraint is dg/dq.
No phase-space or bracket machinery is used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import model
from .errors import SingularConstraintBlock, SingularMass
from .model import ConfigState, SystemSpec

MAX_CONDITION = 1e12


@dataclass
class OracleRhs:
    qdd: np.ndarray
    mu: np.ndarray
    residual: float


def lda_rhs(spec: SystemSpec, cs: ConfigState) -> OracleRhs:
    d = model.local_derivs(spec, cs.t, cs.q, cs.qd, full=True)
    n, m = spec.n, spec.m
    Q, V, T = d.Q, d.V, d.T
    qd = cs.qd
    M = d.d2L[V, V]
    if np.linalg.cond(M) > MAX_CONDITION:
        raise SingularMass(f"mass matrix of {spec.name!r} is singular")
    force = d.dL[Q] - d.d2L[V, Q] @ qd - d.d2L[V, T]

    B = np.zeros((m, n))   # dh/dqd
    c = np.zeros(m)        # h_dot without the qdd term
    for k in range(m):
        H = d.d2g[k]
        if spec.velocity_dependent(k):
            B[k] = d.dg[k, V]
            c[k] = d.dg[k, Q] @ qd + d.dg[k, T]
        else:
            B[k] = d.dg[k, Q]
            c[k] = qd @ H[Q, Q] @ qd + 2.0 * H[Q, T] @ qd + H[T, T]

    K = np.zeros((n + m, n + m))
    K[:n, :n] = M
    K[:n, n:] = -B.T
    K[n:, :n] = B
    if m and np.linalg.cond(K) > MAX_CONDITION:
        raise SingularConstraintBlock("constraint block of the oracle system is singular")
    rhs = np.concatenate([force, -c])
    z = np.linalg.solve(K, rhs)
    residual = float(np.max(np.abs(K @ z - rhs)))
    return OracleRhs(z[:n], z[n:], residual)


ROLLING_SPHERE_DEFAULTS = {"M": 1.0, "r": 1.0, "g_e": 9.8, "alpha": math.pi / 6,
                           "omega_z0": 2.5}


def rolling_sphere_analytic(t: float, params: Mapping[str, float] | None = None):
    """Closed form (x, x_dot, omega_z) for a uniform sphere released from rest in x."""
    pr = dict(ROLLING_SPHERE_DEFAULTS)
    pr.update(params or {})
    a = 5.0 / 7.0 * pr["g_e"] * math.sin(pr["alpha"])
    return 0.5 * a * t * t, a * t, pr["omega_z0"]
