"""Phase-space equations of motion for the adjoined Hamiltonian.

Both flows share ``qd = dH~/dp`` and ``plam_dot = -dH~/dlam = -g``; they
differ in the momentum equation::

    dirac:     p_dot_i = -dH~/dq_i
    flannery:  p_dot_i = -dH~/dq_i + p_j f[j, i]

Multipliers are eliminated algebraically.  A velocity-dependent constraint
fixes its multiplier directly through ``g(q, qd(q, p, lam), t) = 0``
(chain depth 0) and its rate ``u = lam_dot`` through ``g_dot = 0``.  A
holonomic constraint only sees its multiplier in ``g_ddot`` (depth 2).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import brackets, model
from .brackets import PhaseGradient, TranspositionField
from .errors import ChainTooDeep, DegenerateLegendre, NoConvergence, SingularConsistency
from .exprlang import free_vars
from .model import ConfigState, LocalDerivs, PhaseState, SystemSpec

MULTIPLIER_TOL = 1e-12
MULTIPLIER_MAX_ITER = 50
F_TOL = 1e-12
F_MAX_ITER = 50
MAX_CONDITION = 1e12
RATE_STEP = 1e-5
F_METRICS = ("mass", "identity")


class MethodKind(str, enum.Enum):
    DIRAC = "dirac"
    FLANNERY = "flannery"


def as_method(method) -> MethodKind:
    return method if isinstance(method, MethodKind) else MethodKind(str(method))


@dataclass
class ConsistencyReport:
    lam: np.ndarray
    u: np.ndarray
    chain_depth: tuple[int, ...]
    condition: float
    iterations: int = 0


@dataclass
class FlowPoint:
    """Everything the flow needs at one (t, q, p) after eliminating lam."""

    t: float
    q: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    pdot: np.ndarray
    u: np.ndarray  # nan for holonomic rows until rates are requested
    derivs: LocalDerivs = field(repr=False)
    tf: TranspositionField = field(repr=False)
    report: ConsistencyReport = field(repr=False)
    legendre_iterations: int = 0
    f_iterations: int = 0

    @property
    def f(self) -> np.ndarray:
        return self.tf.f

    @property
    def g(self) -> np.ndarray:
        return self.derivs.g

    def state(self, plam=None) -> PhaseState:
        plam = np.zeros(len(self.lam)) if plam is None else plam
        return PhaseState(self.t, self.q, self.p, self.lam, plam)

    def hamiltonian(self) -> float:
        return float(self.qd @ self.p) - self.derivs.Lt(self.lam)


class PhaseFlow:
    """Right-hand side of one method for one system, with a warm-start cache.

    The cache (last multipliers and velocities) makes an instance
    single-trajectory state; create one per integration.
    """

    def __init__(self, spec: SystemSpec, method="flannery", f_metric="mass"):
        self.spec = spec
        self.method = as_method(method)
        if f_metric not in F_METRICS:
            raise ValueError(f"unknown f_metric {f_metric!r}; choose from {F_METRICS}")
        self.f_metric = f_metric
        self.vrows = [k for k in range(spec.m) if spec.velocity_dependent(k)]
        self.hrows = [k for k in range(spec.m) if k not in self.vrows]
        coords = set(spec.coords)
        for k in self.hrows:
            if not free_vars(spec.constraints[k]) & coords:
                raise ChainTooDeep(
                    f"constraint {k + 1} depends on neither velocities nor coordinates")
        self.depths = tuple(0 if k in self.vrows else 2 for k in range(spec.m))
        self._lam = np.zeros(spec.m)
        self._qd = None

    def _metric(self, D: LocalDerivs):
        # "mass": minimum norm in the kinetic metric; "identity": plain Moore-Penrose
        return D.mass if self.f_metric == "mass" else None

    def reset(self, lam=None, qd=None):
        self._lam = np.zeros(self.spec.m) if lam is None else np.array(lam, dtype=float)
        self._qd = None if qd is None else np.array(qd, dtype=float)

    # -- multiplier elimination -------------------------------------------

    def _solve_velocity_rows(self, t, q, p, lam):
        """Joint Newton on (qd, lam_v): L~_qd(qd, lam) = p and g_v(qd) = 0."""
        spec, v = self.spec, self.vrows
        if not v:
            sol = model.legendre_solve(spec, t, q, p, lam, self._qd)
            return lam, sol.qd, 1.0, 0, sol.iterations
        n, mv = spec.n, len(v)
        qd = np.zeros(n) if self._qd is None else self._qd.copy()
        lam = lam.copy()
        tol = MULTIPLIER_TOL * max(1.0, float(np.max(np.abs(p), initial=0.0)))
        for it in range(MULTIPLIER_MAX_ITER + 1):
            d = model.local_derivs(spec, t, q, qd, full=False)
            r_p = d.Lt_v(lam) - p
            r_g = d.g[v]
            W = d.W(lam)
            Av = d.A[v]
            if max(np.max(np.abs(r_p)), np.max(np.abs(r_g))) < tol:
                break
            if it == MULTIPLIER_MAX_ITER:
                raise NoConvergence(
                    f"multiplier solve did not converge in {MULTIPLIER_MAX_ITER} iterations")
            if np.linalg.cond(W) > MAX_CONDITION:
                raise DegenerateLegendre(
                    f"velocity Hessian of the adjoined Lagrangian is singular for {spec.name!r}")
            K = np.zeros((n + mv, n + mv))
            K[:n, :n] = W
            K[:n, n:] = -Av.T
            K[n:, :n] = Av
            if np.linalg.cond(K) > MAX_CONDITION:
                raise SingularConsistency(
                    f"velocity constraints of {spec.name!r} are dependent at t={t!r}")
            step = np.linalg.solve(K, np.concatenate([r_p, r_g]))
            qd = qd - step[:n]
            lam[v] -= step[n:]
        J = Av @ np.linalg.solve(W, Av.T)
        cond = float(np.linalg.cond(J))
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise SingularConsistency(f"velocity-constraint Jacobian condition {cond:.3e}")
        return lam, qd, cond, it, it

    def _accelerations(self, D: LocalDerivs, lam, p, f, solve_holonomic: bool):
        """qdd and u for fixed f; optionally eliminates holonomic multipliers."""
        n = D.n
        v, h = self.vrows, self.hrows
        Q, T = D.Q, D.T
        qd = D.qd
        Av = D.A[v]
        mv = len(v)
        K = np.zeros((n + mv, n + mv))
        K[:n, :n] = D.W(lam)
        K[:n, n:] = -Av.T
        K[n:, :n] = Av
        b = D.Lt_q(lam) + p @ f - D.Lt_vq(lam) @ qd - D.Lt_vt(lam)
        c = -(D.dg[v][:, Q] @ qd + D.dg[v, T])
        rhs0 = np.concatenate([b, c])
        cond = 1.0
        lam = lam.copy()
        if solve_holonomic and h:
            gq = D.dg[h][:, Q]
            cols = np.vstack([-gq.T, np.zeros((mv, len(h)))])
            sol = np.linalg.solve(K, np.column_stack([rhs0, cols]))
            z0, X = sol[:, 0], sol[:, 1:]
            d2 = D.d2g[h]
            curv = (np.einsum("kij,i,j->k", d2[:, Q, Q], qd, qd)
                    + 2.0 * d2[:, Q, T] @ qd + d2[:, T, T])
            phi = curv + gq @ z0[:n]
            J = gq @ X[:n]
            cond = float(np.linalg.cond(J))
            if not np.isfinite(cond) or cond > MAX_CONDITION:
                raise SingularConsistency(f"holonomic consistency Jacobian condition {cond:.3e}")
            # g_ddot is affine in the holonomic multipliers: one Newton step is exact
            step = -np.linalg.solve(J, phi)
            lam[h] += step
            z = z0 + X @ step
        else:
            z = np.linalg.solve(K, rhs0)
        u = np.full(self.spec.m, np.nan)
        u[v] = z[n:]
        return z[:n], u, lam, cond

    def evaluate(self, t: float, q, p, warm_lam=None) -> FlowPoint:
        spec = self.spec
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        lam = self._lam.copy() if warm_lam is None else np.array(warm_lam, dtype=float)
        lam, qd, cond_v, iters, leg_iters = self._solve_velocity_rows(t, q, p, lam)
        D = model.local_derivs(spec, t, q, qd, full=True)
        n = spec.n
        f = np.zeros((n, n))
        f_iters = 0
        linear = not D.d2g[:, D.V, D.V].any()
        qdd, u, lam_new, cond_h = self._accelerations(D, lam, p, f, True)
        if self.method is MethodKind.FLANNERY and D.A.any():
            while True:
                f_iters += 1
                G = brackets.gkj_from_derivs(D, qdd)
                f_new = brackets.solve_f(D.A, G, metric=self._metric(D))
                done = linear or np.max(np.abs(f_new - f)) < F_TOL
                f = f_new
                qdd, u, lam_new, cond_h = self._accelerations(D, lam, p, f, True)
                if done:
                    break
                if f_iters >= F_MAX_ITER:
                    raise NoConvergence("transposition fixed point did not converge")
        lam = lam_new
        G = brackets.gkj_from_derivs(D, qdd) if spec.m else np.zeros((0, n))
        tf = TranspositionField(D.A, G, f, float(np.max(np.abs(D.A @ f - G), initial=0.0)))
        pdot = D.Lt_q(lam) + p @ f
        report = ConsistencyReport(lam.copy(), u.copy(), self.depths, max(cond_v, cond_h),
                                   iters + (1 if self.hrows else 0))
        self._lam = lam.copy()
        self._qd = qd.copy()
        return FlowPoint(float(t), q, p, lam, qd, qdd, pdot, u, D, tf, report,
                         leg_iters, f_iters)

    def multiplier_rates(self, point: FlowPoint) -> np.ndarray:
        """u for every row; holonomic rows by central difference along the flow."""
        u = point.u.copy()
        if not self.hrows:
            return u
        saved = (self._lam.copy(), None if self._qd is None else self._qd.copy())
        tau = RATE_STEP
        lams = []
        for sgn in (1.0, -1.0):
            pt = self.evaluate(point.t + sgn * tau, point.q + sgn * tau * point.qd,
                               point.p + sgn * tau * point.pdot, warm_lam=point.lam)
            lams.append(pt.lam)
        self._lam, self._qd = saved
        u[self.hrows] = ((lams[0] - lams[1]) / (2 * tau))[self.hrows]
        point.u = u
        point.report.u = u.copy()
        return u

    def hamiltonian_gradient(self, point: FlowPoint, rates: bool = False) -> PhaseGradient:
        D = point.derivs
        u = self.multiplier_rates(point) if rates else np.nan_to_num(point.u, nan=0.0)
        return PhaseGradient(point.hamiltonian(), -D.Lt_q(point.lam), point.qd.copy(),
                             D.g.copy(), u, -D.Lt_t(point.lam))


# ---------------------------------------------------------------------------
# functional interface

def solve_multipliers(spec: SystemSpec, t: float, q, p, method="flannery",
                      warm=None) -> ConsistencyReport:
    flow = PhaseFlow(spec, method)
    point = flow.evaluate(t, q, p, warm_lam=warm)
    flow.multiplier_rates(point)
    return point.report


def rhs(spec: SystemSpec, s: PhaseState, method="flannery") -> PhaseState:
    """Time derivative of ``s``; ``s.lam`` only warm-starts the multiplier solve."""
    flow = PhaseFlow(spec, method)
    point = flow.evaluate(s.t, s.q, s.p, warm_lam=s.lam)
    u = flow.multiplier_rates(point)
    return PhaseState(1.0, point.qd, point.pdot, u, -point.g)


def self_consistent_f(spec: SystemSpec, cs: ConfigState, p, lam, method="flannery",
                      f_metric="mass"):
    """Fixed point f = solve_f(A, G(qdd(f))) at fixed multipliers.

    Returns ``(f, qdd, iterations)``.
    """
    flow = PhaseFlow(spec, method, f_metric)
    lam = np.asarray(lam, dtype=float).reshape(spec.m)
    p = np.asarray(p, dtype=float)
    D = model.local_derivs(spec, cs.t, cs.q, cs.qd, full=True)
    n = spec.n
    f = np.zeros((n, n))
    qdd, *_ = flow._accelerations(D, lam, p, f, False)
    if flow.method is MethodKind.DIRAC or not spec.m:
        return f, qdd, 0
    linear = not D.d2g[:, D.V, D.V].any()
    for it in range(1, F_MAX_ITER + 1):
        f_new = brackets.solve_f(D.A, brackets.gkj_from_derivs(D, qdd), metric=flow._metric(D))
        done = linear or np.max(np.abs(f_new - f)) < F_TOL
        f = f_new
        qdd, *_ = flow._accelerations(D, lam, p, f, False)
        if done:
            return f, qdd, it
    raise NoConvergence("transposition fixed point did not converge")


def observable_rate(X, spec: SystemSpec, s: PhaseState, method="flannery") -> float:
    """dX/dt = {X, H~} + dX/dt|explicit, with the method's bracket."""
    flow = PhaseFlow(spec, method)
    point = flow.evaluate(s.t, s.q, s.p, warm_lam=s.lam)
    at = s.replace(lam=point.lam)
    x = brackets._gradient(X, at)
    need_rates = bool(flow.hrows) and bool(np.any(x.dlam[flow.hrows]))
    H = flow.hamiltonian_gradient(point, rates=need_rates)
    if flow.method is MethodKind.FLANNERY:
        rate = brackets.flannery(x, H, at, point.tf)
    else:
        rate = brackets.poisson(x, H, at)
    return rate + x.dt
