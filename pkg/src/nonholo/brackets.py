"""Generalized transposition data and the Poisson / Flannery brackets.

For constrained variations the commutator of variation and time derivative
satisfies ``A (dq_var_dot - d/dt dq_var) = G dq_var`` with ``A = dg/dqd`` and
``G_kj = d/dt(dg_k/dqd_j) - dg_k/dq_j``.  Writing the commutator as
``f @ dq_var`` gives the linear relation ``A f = G`` solved by
:func:`solve_f`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np

from . import model
from .exprlang import Expr, eval_derivs, free_vars, parse
from .model import ConfigState, LocalDerivs, PhaseState, SystemSpec

PINV_RCOND = 1e-12


@dataclass
class TranspositionField:
    A: np.ndarray
    G: np.ndarray
    f: np.ndarray
    residual: float


def velocity_jacobian(spec: SystemSpec, cs: ConfigState, lam=None) -> np.ndarray:
    """A_kj = dg_k/dqd_j."""
    return model.local_derivs(spec, cs.t, cs.q, cs.qd, full=False).A


def gkj_from_derivs(d: LocalDerivs, qdd) -> np.ndarray:
    Q, V, T = d.Q, d.V, d.T
    qd = d.qd
    qdd = np.asarray(qdd, dtype=float)
    # d/dt (dg/dqd_j) = g_{q_i qd_j} qd_i + g_{qd_i qd_j} qdd_i + g_{t qd_j}
    ddt = (np.einsum("kij,i->kj", d.d2g[:, Q, V], qd)
           + np.einsum("kij,i->kj", d.d2g[:, V, V], qdd)
           + d.d2g[:, T, V])
    return ddt - d.dg[:, Q]


def gkj_matrix(spec: SystemSpec, cs: ConfigState, qdd) -> np.ndarray:
    """G_kj = d/dt(dg_k/dqd_j) - dg_k/dq_j along (qd, qdd)."""
    return gkj_from_derivs(model.local_derivs(spec, cs.t, cs.q, cs.qd), qdd)


def _metric_root_inv(metric: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (metric + metric.T))
    return (V / np.sqrt(np.abs(w))) @ V.T


def solve_f(A, G, metric=None) -> np.ndarray:
    """Minimum-norm solution of ``A f = G``.

    Without ``metric`` this is the Moore-Penrose solution ``pinv(A) @ G``.
    With a symmetric positive-definite ``metric`` W the column norm
    ``f.T W f`` is minimised instead, i.e. ``S pinv(A S) G`` with
    ``S = W^-1/2``. Singular values below ``1e-12 * sigma_max`` count as zero,
    so a zero ``A`` or a zero ``G`` gives exactly ``f = 0``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.zeros((n, n))
    if metric is None:
        return np.linalg.pinv(A, rcond=PINV_RCOND) @ G
    S = _metric_root_inv(np.asarray(metric, dtype=float))
    return S @ (np.linalg.pinv(A @ S, rcond=PINV_RCOND) @ G)


def transposition_field(A, G, metric=None) -> TranspositionField:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    f = solve_f(A, G, metric)
    residual = float(np.max(np.abs(A @ f - G), initial=0.0)) if A.size else 0.0
    return TranspositionField(A, G, f, residual)


# ---------------------------------------------------------------------------
# observables

class PhaseGradient(NamedTuple):
    value: float
    dq: np.ndarray
    dp: np.ndarray
    dlam: np.ndarray
    dplam: np.ndarray
    dt: float = 0.0


class PhaseFunction(Protocol):
    def gradient(self, s: PhaseState) -> PhaseGradient: ...


def phase_names(spec: SystemSpec) -> tuple[str, ...]:
    return spec.coords + spec.momenta_names + spec.lam_names + spec.plam_names


class Observable:
    """Scalar expression over (q, p, lam, plam, t) and the system parameters."""

    def __init__(self, expr: Expr | str, spec: SystemSpec):
        self.expr = parse(expr) if isinstance(expr, str) else expr
        self.spec = spec
        allowed = set(phase_names(spec)) | set(spec.params) | {"t"}
        extra = free_vars(self.expr) - allowed
        if extra:
            raise ValueError(f"observable uses names outside phase space: {sorted(extra)}")

    def __repr__(self) -> str:
        return f"Observable({str(self.expr)!r})"

    def gradient(self, s: PhaseState) -> PhaseGradient:
        spec = self.spec
        n, m = spec.n, spec.m
        wrt = list(phase_names(spec)) + ["t"]
        val, grad, _ = eval_derivs(self.expr, s.bindings(spec), wrt, order=1)
        return PhaseGradient(val, grad[:n], grad[n:2 * n], grad[2 * n:2 * n + m],
                             grad[2 * n + m:2 * n + 2 * m], float(grad[-1]))

    def value(self, s: PhaseState) -> float:
        return self.gradient(s).value


class HamiltonianObservable:
    """H~ as a phase-space function; ``u`` supplies dH~/dplam (the lam rates)."""

    def __init__(self, spec: SystemSpec, u=None):
        self.spec = spec
        self.u = None if u is None else np.asarray(u, dtype=float)

    def gradient(self, s: PhaseState) -> PhaseGradient:
        h = model.grad_hamiltonian(self.spec, s)
        u = np.zeros(self.spec.m) if self.u is None else self.u
        return PhaseGradient(h.value, h.dq, h.dp, h.dlam, u, h.dt)


class ConstraintObservable:
    """g_k(q, qd(q, p, lam), t) with the velocity from the Legendre inversion."""

    def __init__(self, spec: SystemSpec, k: int):
        self.spec = spec
        self.k = k

    def gradient(self, s: PhaseState) -> PhaseGradient:
        spec, k = self.spec, self.k
        qd = model.legendre_invert(spec, s.t, s.q, s.p, s.lam)
        d = model.local_derivs(spec, s.t, s.q, qd, full=True)
        W = d.W(s.lam)
        a = d.A[k]
        # p = L~_qd(q, qd, lam, t) held fixed: W dqd = -L~_qdq dq + A^T dlam - L~_qdt dt
        aw = np.linalg.solve(W.T, a)
        dq = d.dg[k, d.Q] - aw @ d.Lt_vq(s.lam)
        dlam = aw @ d.A.T
        dt = float(d.dg[k, d.T] - aw @ d.Lt_vt(s.lam))
        return PhaseGradient(float(d.g[k]), dq, aw, dlam, np.zeros(spec.m), dt)


def _gradient(X, s: PhaseState) -> PhaseGradient:
    return X if isinstance(X, PhaseGradient) else X.gradient(s)


def poisson(X, Y, s: PhaseState) -> float:
    """Extended Poisson bracket over (q, p) and (lam, plam)."""
    x, y = _gradient(X, s), _gradient(Y, s)
    return float(x.dq @ y.dp - x.dp @ y.dq + x.dlam @ y.dplam - x.dplam @ y.dlam)


def flannery(X, Y, s: PhaseState, tf) -> float:
    """Flannery bracket; ``tf`` is a TranspositionField or the f matrix itself.

    {X,Y}_FB = X_q.Y_p - X_p.(Y_q - p f) plus the Poisson lam-sector terms,
    where (p f)_i = p_j f[j, i].
    """
    f = tf.f if isinstance(tf, TranspositionField) else np.asarray(tf, dtype=float)
    x, y = _gradient(X, s), _gradient(Y, s)
    pf = s.p @ f
    return float(x.dq @ y.dp - x.dp @ (y.dq - pf) + x.dlam @ y.dplam - x.dplam @ y.dlam)
