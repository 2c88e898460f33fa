"""System definitions, the adjoined Lagrangian and its Legendre transform.

Naming convention shared by every expression: coordinate ``x`` has velocity
``x_dot`` and momentum ``p_x``; multiplier ``k`` (1-based) is ``lam_k`` with
momentum ``plam_k``; ``t`` is time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateLegendre, NoConvergence
from .exprlang import Expr, eval_derivs, evaluate, free_vars, parse, to_source

LEGENDRE_TOL = 1e-12
LEGENDRE_MAX_ITER = 50
MAX_CONDITION = 1e12


def velocity_name(coord: str) -> str:
    return f"{coord}_dot"


def momentum_name(coord: str) -> str:
    return f"p_{coord}"


def lam_name(k: int) -> str:
    return f"lam_{k + 1}"


def plam_name(k: int) -> str:
    return f"plam_{k + 1}"


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Declarative mechanical system: coordinates, parameters, L and g_k."""

    name: str
    coords: tuple[str, ...]
    params: Mapping[str, float]
    lagrangian: Expr
    constraints: tuple[Expr, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "params", dict(self.params))
        if len(self.coords) < 1:
            raise ValueError("at least one coordinate is required")
        if len(self.constraints) >= len(self.coords):
            raise ValueError("need fewer constraints than coordinates")
        names = list(self.coords) + list(self.velocities) + list(self.params) + ["t"]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate names among coordinates/velocities/params: {names}")
        allowed = set(names)
        for label, expr in [("lagrangian", self.lagrangian)] + [
                (f"constraint {k + 1}", g) for k, g in enumerate(self.constraints)]:
            extra = free_vars(expr) - allowed
            if extra:
                raise ValueError(f"{label} uses undeclared names {sorted(extra)}")

    @classmethod
    def from_strings(cls, name: str, coords: Sequence[str], params: Mapping[str, float],
                     lagrangian: str, constraints: Sequence[str] = ()) -> "SystemSpec":
        return cls(name, tuple(coords), dict(params), parse(lagrangian),
                   tuple(parse(g) for g in constraints))

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def velocities(self) -> tuple[str, ...]:
        return tuple(velocity_name(c) for c in self.coords)

    @property
    def momenta_names(self) -> tuple[str, ...]:
        return tuple(momentum_name(c) for c in self.coords)

    @property
    def lam_names(self) -> tuple[str, ...]:
        return tuple(lam_name(k) for k in range(self.m))

    @property
    def plam_names(self) -> tuple[str, ...]:
        return tuple(plam_name(k) for k in range(self.m))

    def velocity_dependent(self, k: int) -> bool:
        return bool(free_vars(self.constraints[k]) & set(self.velocities))

    def bindings(self, t: float, q, qd=None) -> dict[str, float]:
        env = dict(self.params)
        env["t"] = float(t)
        for i, c in enumerate(self.coords):
            env[c] = float(q[i])
            if qd is not None:
                env[velocity_name(c)] = float(qd[i])
        return env

    def same_as(self, other: "SystemSpec") -> bool:
        """Structural equality, comparing expressions by printed text."""
        return (self.name == other.name and self.coords == other.coords
                and dict(self.params) == dict(other.params)
                and to_source(self.lagrangian) == to_source(other.lagrangian)
                and [to_source(g) for g in self.constraints]
                == [to_source(g) for g in other.constraints])


@dataclass
class PhaseState:
    """Point (t, q, p, lam, plam) of the extended phase space."""

    t: float
    q: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    plam: np.ndarray

    def __post_init__(self):
        self.t = float(self.t)
        for name in ("q", "p", "lam", "plam"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))

    def bindings(self, spec: SystemSpec) -> dict[str, float]:
        env = spec.bindings(self.t, self.q)
        env.update(zip(spec.momenta_names, map(float, self.p)))
        env.update(zip(spec.lam_names, map(float, self.lam)))
        env.update(zip(spec.plam_names, map(float, self.plam)))
        return env

    def replace(self, **changes) -> "PhaseState":
        fields = dict(t=self.t, q=self.q, p=self.p, lam=self.lam, plam=self.plam)
        fields.update(changes)
        return PhaseState(**fields)


@dataclass
class ConfigState:
    t: float
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        self.t = float(self.t)
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.qd = np.asarray(self.qd, dtype=float).reshape(-1)


@dataclass
class LocalDerivs:
    """Derivatives of L and every g_k at one (t, q, qd).

    With ``full=True`` the variable order is z = (q, qd, t); otherwise only
    the velocities are differentiated.
    """

    n: int
    full: bool
    L: float
    dL: np.ndarray
    d2L: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    d2g: np.ndarray
    qd: np.ndarray = field(repr=False)

    @property
    def Q(self) -> slice:
        self._need_full()
        return slice(0, self.n)

    @property
    def V(self) -> slice:
        return slice(self.n, 2 * self.n) if self.full else slice(0, self.n)

    @property
    def T(self) -> int:
        self._need_full()
        return 2 * self.n

    def _need_full(self):
        if not self.full:
            raise ValueError("position/time derivatives need full=True")

    @property
    def A(self) -> np.ndarray:
        """Velocity Jacobian of the constraints, dg_k/dqd_j."""
        return self.dg[:, self.V]

    @property
    def mass(self) -> np.ndarray:
        """Velocity Hessian of L alone."""
        return self.d2L[self.V, self.V]

    # adjoined quantities, L~ = L - lam.g
    def Lt(self, lam) -> float:
        return self.L - float(np.dot(lam, self.g))

    def Lt_v(self, lam) -> np.ndarray:
        return self.dL[self.V] - lam @ self.dg[:, self.V]

    def W(self, lam) -> np.ndarray:
        V = self.V
        return self.d2L[V, V] - np.tensordot(lam, self.d2g[:, V, V], axes=1)

    def Lt_q(self, lam) -> np.ndarray:
        return self.dL[self.Q] - lam @ self.dg[:, self.Q]

    def Lt_t(self, lam) -> float:
        return self.dL[self.T] - float(lam @ self.dg[:, self.T])

    def Lt_vq(self, lam) -> np.ndarray:
        V, Q = self.V, self.Q
        return self.d2L[V, Q] - np.tensordot(lam, self.d2g[:, V, Q], axes=1)

    def Lt_vt(self, lam) -> np.ndarray:
        V, T = self.V, self.T
        return self.d2L[V, T] - lam @ self.d2g[:, V, T]


def local_derivs(spec: SystemSpec, t: float, q, qd, full: bool = True) -> LocalDerivs:
    env = spec.bindings(t, q, qd)
    wrt = (list(spec.coords) + list(spec.velocities) + ["t"]) if full else list(spec.velocities)
    L, dL, d2L = eval_derivs(spec.lagrangian, env, wrt, order=2)
    k = len(wrt)
    m = spec.m
    g = np.zeros(m)
    dg = np.zeros((m, k))
    d2g = np.zeros((m, k, k))
    for i, expr in enumerate(spec.constraints):
        g[i], dg[i], d2g[i] = eval_derivs(expr, env, wrt, order=2)
    return LocalDerivs(spec.n, full, L, dL, d2L, g, dg, d2g, np.asarray(qd, dtype=float))


def _lam(spec: SystemSpec, lam) -> np.ndarray:
    return np.zeros(spec.m) if lam is None else np.asarray(lam, dtype=float).reshape(spec.m)


def lagrangian(spec: SystemSpec, cs: ConfigState) -> float:
    return evaluate(spec.lagrangian, spec.bindings(cs.t, cs.q, cs.qd))


def constraint_values(spec: SystemSpec, cs: ConfigState) -> np.ndarray:
    env = spec.bindings(cs.t, cs.q, cs.qd)
    return np.array([evaluate(g, env) for g in spec.constraints])


def adjoined_lagrangian(spec: SystemSpec, cs: ConfigState, lam=None) -> float:
    return lagrangian(spec, cs) - float(_lam(spec, lam) @ constraint_values(spec, cs))


def momenta(spec: SystemSpec, cs: ConfigState, lam=None) -> np.ndarray:
    """p_i = dL~/dqd_i."""
    d = local_derivs(spec, cs.t, cs.q, cs.qd, full=False)
    return d.Lt_v(_lam(spec, lam))


def physical_energy(spec: SystemSpec, cs: ConfigState) -> float:
    """Energy function qd.dL/dqd - L of the unconstrained Lagrangian."""
    env = spec.bindings(cs.t, cs.q, cs.qd)
    L, dL, _ = eval_derivs(spec.lagrangian, env, spec.velocities, order=1)
    return float(cs.qd @ dL) - L


class LegendreSolution(NamedTuple):
    qd: np.ndarray
    derivs: LocalDerivs  # velocity-only derivatives at the solution
    iterations: int


def legendre_solve(spec: SystemSpec, t: float, q, p, lam=None, guess=None) -> LegendreSolution:
    """Newton solve of dL~/dqd(q, qd, lam, t) = p for qd."""
    lam = _lam(spec, lam)
    p = np.asarray(p, dtype=float)
    qd = np.zeros(spec.n) if guess is None else np.array(guess, dtype=float)
    tol = LEGENDRE_TOL * max(1.0, float(np.max(np.abs(p), initial=0.0)))
    for it in range(LEGENDRE_MAX_ITER + 1):
        d = local_derivs(spec, t, q, qd, full=False)
        resid = d.Lt_v(lam) - p
        W = d.W(lam)
        if not np.all(np.isfinite(W)) or np.linalg.cond(W) > MAX_CONDITION:
            raise DegenerateLegendre(
                f"velocity Hessian of the adjoined Lagrangian is singular for {spec.name!r}")
        if np.max(np.abs(resid), initial=0.0) < tol:
            return LegendreSolution(qd, d, it)
        if it == LEGENDRE_MAX_ITER:
            break
        qd = qd - np.linalg.solve(W, resid)
    raise NoConvergence(f"Legendre inversion did not converge in {LEGENDRE_MAX_ITER} iterations")


def legendre_invert(spec: SystemSpec, t: float, q, p, lam=None, guess=None) -> np.ndarray:
    return legendre_solve(spec, t, q, p, lam, guess).qd


def hamiltonian(spec: SystemSpec, s: PhaseState, guess=None) -> float:
    """H~ = qd.p - L~ with qd obtained by inverting the momentum map."""
    qd = legendre_invert(spec, s.t, s.q, s.p, s.lam, guess)
    cs = ConfigState(s.t, s.q, qd)
    return float(qd @ s.p) - adjoined_lagrangian(spec, cs, s.lam)


class HamiltonianGradient(NamedTuple):
    value: float
    dq: np.ndarray
    dp: np.ndarray
    dlam: np.ndarray
    dt: float
    qd: np.ndarray


def grad_hamiltonian(spec: SystemSpec, s: PhaseState, guess=None) -> HamiltonianGradient:
    """Partials of H~ via the envelope form dH = qd.dp - L~_q.dq + g.dlam - L~_t dt."""
    qd = legendre_invert(spec, s.t, s.q, s.p, s.lam, guess)
    d = local_derivs(spec, s.t, s.q, qd, full=True)
    value = float(qd @ s.p) - d.Lt(s.lam)
    return HamiltonianGradient(value, -d.Lt_q(s.lam), qd.copy(), d.g.copy(),
                               -d.Lt_t(s.lam), qd)
