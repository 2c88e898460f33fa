"""Explicit Runge-Kutta time stepping with dense output and drift checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dynamics, model
from .errors import DriftAbort, MaxStepsExceeded, NoConvergence
from .model import PhaseState, SystemSpec

H_MIN = 1e-12

# Dormand & Prince (1980) 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension (Hairer, Norsett & Wanner), y(t0 + th*h) = y0 + h K^T P [th, th^2, th^3, th^4]
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

# step-size controller (Hairer's DOPRI5 PI settings)
_SAFE, _FACMIN, _FACMAX, _BETA = 0.9, 0.2, 10.0, 0.04
_EXPO1 = 0.2 - _BETA * 0.75


@dataclass
class IntegratorOpts:
    scheme: str = "dp45"          # "rk4" or "dp45"
    dt: float = 1e-2              # rk4 step
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    max_steps: int = 1_000_000
    drift_abort: Optional[float] = None
    stabilization: str = "none"   # "none" or "projection"

    def __post_init__(self):
        if self.scheme not in ("rk4", "dp45"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.stabilization not in ("none", "projection"):
            raise ValueError(f"unknown stabilization {self.stabilization!r}")
        if min(self.dt, self.rel_tol, self.abs_tol) <= 0:
            raise ValueError("step size and tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass
class _Segment:
    t0: float
    h: float
    y0: np.ndarray
    Q: np.ndarray  # (dim, 4) interpolation coefficients

    def __call__(self, t: float) -> np.ndarray:
        th = (t - self.t0) / self.h
        return self.y0 + self.h * (self.Q @ np.array([th, th**2, th**3, th**4]))


@dataclass
class Trajectory:
    """Accepted steps of one integration plus a dense interpolant."""

    times: np.ndarray
    states: np.ndarray
    diag: list[dict]
    segments: list[_Segment] = field(default_factory=list, repr=False)
    rhs_evals: int = 0

    def __len__(self) -> int:
        return len(self.times)

    def sample(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.empty((len(ts), self.states.shape[1]))
        starts = np.array([s.t0 for s in self.segments])
        for i, t in enumerate(ts):
            if t <= self.times[0]:
                out[i] = self.states[0]
            elif t >= self.times[-1]:
                out[i] = self.states[-1]
            else:
                j = max(int(np.searchsorted(starts, t, side="right")) - 1, 0)
                out[i] = self.segments[j](t)
        return out


def _hermite(t0, h, y0, y1, f0, f1) -> _Segment:
    # cubic Hermite written in the same th-power basis as the DP45 extension
    d = y1 - y0
    c1 = f0
    c2 = (3 * d / h - 2 * f0 - f1)
    c3 = (-2 * d / h + f0 + f1)
    Q = np.column_stack([c1, c2, c3, np.zeros_like(c1)])
    return _Segment(t0, h, y0.copy(), Q)


def _rms(x) -> float:
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def _initial_step(rhs, t0, y0, f0, t_end, rtol, atol) -> float:
    scale = atol + np.abs(y0) * rtol
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_end - t0)
    f1 = rhs(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_end - t0)


def integrate(rhs: Callable[[float, np.ndarray], np.ndarray], t0: float, y0, t_end: float,
              opts: IntegratorOpts | None = None,
              monitor: Callable[[float, np.ndarray], dict] | None = None,
              post_step: Callable[[float, np.ndarray], np.ndarray] | None = None) -> Trajectory:
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t_end``.

    ``monitor(t, y)`` returns per-step diagnostics; a ``"residual"`` entry is
    compared against ``opts.drift_abort``. ``post_step`` may modify the state
    after each accepted step (stabilization).
    """
    opts = opts or IntegratorOpts()
    y = np.array(y0, dtype=float)
    t = float(t0)
    if not t_end > t:
        raise ValueError("t_end must exceed the initial time")
    if not np.all(np.isfinite(y)):
        raise ValueError("initial state is not finite")

    evals = 0

    def f(tt, yy):
        nonlocal evals
        evals += 1
        out = np.asarray(rhs(tt, yy), dtype=float)
        if not np.all(np.isfinite(out)):
            raise NoConvergence(f"non-finite derivative at t={tt!r}")
        return out

    times, states, diags, segments = [t], [y.copy()], [], []

    def record(tt, yy, h):
        d = dict(monitor(tt, yy)) if monitor else {}
        d["step"] = h
        diags.append(d)
        if opts.drift_abort is not None and "residual" in d and d["residual"] > opts.drift_abort:
            raise DriftAbort(tt, d["residual"], opts.drift_abort)

    record(t, y, 0.0)
    k0 = f(t, y)
    steps = 0
    span = t_end - t

    if opts.scheme == "rk4":
        while t < t_end and not np.isclose(t, t_end, rtol=0, atol=1e-14 * span):
            if steps >= opts.max_steps:
                raise MaxStepsExceeded(f"exceeded {opts.max_steps} steps at t={t!r}")
            h = min(opts.dt, t_end - t)
            k1 = k0
            k2 = f(t + h / 2, y + h / 2 * k1)
            k3 = f(t + h / 2, y + h / 2 * k2)
            k4 = f(t + h, y + h * k3)
            y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t_new = t + h
            if post_step is not None:
                y_new = post_step(t_new, y_new)
            k_new = f(t_new, y_new)
            segments.append(_hermite(t, h, y, y_new, k1, k_new))
            t, y, k0 = t_new, y_new, k_new
            steps += 1
            times.append(t)
            states.append(y.copy())
            record(t, y, h)
        return Trajectory(np.array(times), np.array(states), diags, segments, evals)

    rtol, atol = opts.rel_tol, opts.abs_tol
    h = _initial_step(f, t, y, k0, t_end, rtol, atol)
    facold = 1e-4
    rejected_last = False
    K = np.empty((7, y.size))
    while t < t_end:
        if steps >= opts.max_steps:
            raise MaxStepsExceeded(f"exceeded {opts.max_steps} steps at t={t!r}")
        if h < H_MIN:
            raise MaxStepsExceeded(f"step size {h:.3e} fell below {H_MIN:.0e} at t={t!r}")
        last = t + h >= t_end or (t_end - (t + h)) < 1e-12 * span
        if last:
            h = t_end - t
        K[0] = k0
        for i in range(1, 7):
            K[i] = f(t + _C[i] * h, y + h * (np.asarray(_A[i]) @ K[:i]))
        y_new = y + h * (_B @ K)
        err = h * (_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = _rms(err / scale)
        steps += 1
        fac11 = max(err_norm, 1e-16) ** _EXPO1
        if err_norm <= 1.0:
            fac = fac11 / facold**_BETA
            fac = min(1 / _FACMIN, max(1 / _FACMAX, fac / _SAFE))
            h_new = h / fac
            if rejected_last:
                h_new = min(h_new, h)
            segments.append(_Segment(t, h, y.copy(), K.T @ _P))
            t_new = t_end if last else t + h
            k_new = K[6]
            if post_step is not None:
                y_new = post_step(t_new, y_new)
                k_new = f(t_new, y_new)
            facold = max(err_norm, 1e-4)
            t, y, k0 = t_new, y_new, k_new
            times.append(t)
            states.append(y.copy())
            record(t, y, h)
            h = h_new
            rejected_last = False
        else:
            h = h / min(1 / _FACMIN, fac11 / _SAFE)
            rejected_last = True
    return Trajectory(np.array(times), np.array(states), diags, segments, evals)


# ---------------------------------------------------------------------------
# constraint stabilization

PROJECTION_TOL = 1e-12
PROJECTION_MAX_ITER = 50
PROJECTION_BASIN = 1e-2


def _min_norm_newton(residual, jacobian, x, what: str):
    r = residual(x)
    norm = np.max(np.abs(r), initial=0.0)
    if norm > PROJECTION_BASIN:
        raise NoConvergence(f"{what} residual {norm:.3e} is outside the projection basin")
    for _ in range(PROJECTION_MAX_ITER):
        if norm < PROJECTION_TOL:
            return x
        J = jacobian(x)
        x = x - J.T @ np.linalg.solve(J @ J.T, r)
        r = residual(x)
        new = np.max(np.abs(r))
        if not new < norm and new >= PROJECTION_TOL:
            raise NoConvergence(f"{what} projection stopped contracting at {new:.3e}")
        norm = new
    if norm < PROJECTION_TOL:
        return x
    raise NoConvergence(f"{what} projection did not converge")


def project(spec: SystemSpec, s: PhaseState, method="flannery") -> PhaseState:
    """Minimal-norm Newton correction back onto the constraint surface.

    Velocity-dependent constraints are restored through their multipliers,
    so ``q`` stays put unless the system has holonomic constraints, whose
    position-level residual can only be removed by moving ``q``.
    """
    flow = dynamics.PhaseFlow(spec, method)
    h = flow.hrows
    q, p = s.q.copy(), s.p.copy()
    if h:
        def g_h(qq):
            d = model.local_derivs(spec, s.t, qq, np.zeros(spec.n), full=True)
            return d.g[h], d.dg[h][:, d.Q], d

        q = _min_norm_newton(lambda qq: g_h(qq)[0], lambda qq: g_h(qq)[1], q, "position")

        def gdot(pp):
            qd = model.legendre_invert(spec, s.t, q, pp, s.lam)
            d = model.local_derivs(spec, s.t, q, qd, full=True)
            return d.dg[h][:, d.Q] @ qd + d.dg[h, d.T], d

        def gdot_jac(pp):
            _, d = gdot(pp)
            return d.dg[h][:, d.Q] @ np.linalg.inv(d.W(s.lam))

        p = _min_norm_newton(lambda pp: gdot(pp)[0], gdot_jac, p, "velocity")
    point = flow.evaluate(s.t, q, p, warm_lam=s.lam)
    return PhaseState(s.t, q, p, point.lam, s.plam)
