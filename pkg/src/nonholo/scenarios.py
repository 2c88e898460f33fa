"""Built-in systems and JSON scenario files.

Scenario file layout (all values SI)::

    {
      "name": "rod-pendulum",
      "coordinates": ["x", "y"],
      "parameters": {"m": 1.0, "l": 1.0, "g_e": 9.8},
      "lagrangian": "0.5*m*(x_dot^2 + y_dot^2) - m*g_e*y",
      "constraints": ["x^2 + y^2 - l^2"],
      "initial": {"x": 0.7071, "y": -0.7071, "x_dot": 0, "y_dot": 0},
      "observables": ["x^2 + y^2"]          # optional
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import dynamics, model
from .errors import ConstraintViolated
from .exprlang import ExprError, parse, to_source
from .model import ConfigState, PhaseState, SystemSpec, velocity_name

INITIAL_TOL = 1e-10
LAMBDA_TOL = 1e-10

SCHEMA = {
    "type": "object",
    "required": ["name", "coordinates", "parameters", "lagrangian", "constraints", "initial"],
    "properties": {
        "name": {"type": "string"},
        "coordinates": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "parameters": {"type": "object", "additionalProperties": {"type": "number"}},
        "lagrangian": {"type": "string"},
        "constraints": {"type": "array", "items": {"type": "string"}},
        "initial": {"type": "object", "additionalProperties": {"type": "number"}},
        "observables": {"type": "array", "items": {"type": "string"}},
    },
    "additionalProperties": False,
}


class ScenarioError(ValueError):
    """Invalid scenario file; ``pointer`` is a JSON pointer into the document."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    spec: SystemSpec
    initial: dict[str, float]
    outputs: tuple[str, ...] = field(default=())

    def q0(self) -> np.ndarray:
        return np.array([self.initial[c] for c in self.spec.coords])

    def qd0(self) -> np.ndarray:
        return np.array([self.initial[velocity_name(c)] for c in self.spec.coords])

    def config_state(self) -> ConfigState:
        return ConfigState(0.0, self.q0(), self.qd0())

    def to_dict(self) -> dict:
        spec = self.spec
        out = {
            "name": spec.name,
            "coordinates": list(spec.coords),
            "parameters": dict(spec.params),
            "lagrangian": to_source(spec.lagrangian),
            "constraints": [to_source(g) for g in spec.constraints],
            "initial": dict(self.initial),
        }
        if self.outputs:
            out["observables"] = list(self.outputs)
        return out


def validate_initial(cfg: ScenarioConfig, tol: float = INITIAL_TOL) -> None:
    spec = cfg.spec
    missing = [name for name in spec.coords + spec.velocities if name not in cfg.initial]
    if missing:
        raise ScenarioError("/initial", f"missing initial values for {missing}")
    cs = cfg.config_state()
    d = model.local_derivs(spec, 0.0, cs.q, cs.qd, full=True)
    for k in range(spec.m):
        if abs(d.g[k]) > tol:
            raise ConstraintViolated(
                f"initial data violates constraint {k + 1}: g = {d.g[k]:.3e}")
        if not spec.velocity_dependent(k):
            gdot = d.dg[k, d.Q] @ cs.qd + d.dg[k, d.T]
            if abs(gdot) > tol:
                raise ConstraintViolated(
                    f"initial velocity not tangent to constraint {k + 1}: g_dot = {gdot:.3e}")


def _make(name, coords, params, lagrangian, constraints, initial, outputs=()) -> ScenarioConfig:
    spec = SystemSpec.from_strings(name, coords, params, lagrangian, constraints)
    cfg = ScenarioConfig(spec, {k: float(v) for k, v in initial.items()}, tuple(outputs))
    validate_initial(cfg)
    return cfg


def _rolling_sphere() -> ScenarioConfig:
    wx = "(theta_dot*cos(phi) + psi_dot*sin(theta)*sin(phi))"
    wy = "(theta_dot*sin(phi) - psi_dot*sin(theta)*cos(phi))"
    wz = "(phi_dot + psi_dot*cos(theta))"
    lagrangian = (f"0.5*M*(x_dot^2 + y_dot^2)"
                  f" + 0.5*(0.4*M*r^2)*({wx}^2 + {wy}^2 + {wz}^2)"
                  f" + M*g_e*sin(alpha)*x")
    return _make(
        "rolling-sphere", ["x", "y", "theta", "phi", "psi"],
        {"M": 1.0, "r": 1.0, "g_e": 9.8, "alpha": math.pi / 6},
        lagrangian, [f"x_dot - r*{wy}", f"y_dot + r*{wx}"],
        {"x": 0.0, "y": 0.0, "theta": math.pi / 2, "phi": 0.0, "psi": 0.0,
         "x_dot": 0.0, "y_dot": 0.0, "theta_dot": 0.0, "phi_dot": 2.5, "psi_dot": 0.0},
        outputs=[wz[1:-1], wx[1:-1], wy[1:-1]],
    )


def _rod_pendulum() -> ScenarioConfig:
    th0 = math.pi / 4
    return _make(
        "rod-pendulum", ["x", "y"], {"m": 1.0, "l": 1.0, "g_e": 9.8},
        "0.5*m*(x_dot^2 + y_dot^2) - m*g_e*y", ["x^2 + y^2 - l^2"],
        {"x": math.sin(th0), "y": -math.cos(th0), "x_dot": 0.0, "y_dot": 0.0},
        outputs=["x^2 + y^2"],
    )


def _free_particle() -> ScenarioConfig:
    return _make("free-particle", ["x"], {"m": 1.0}, "0.5*m*x_dot^2", [],
                 {"x": 0.0, "x_dot": 3.0})


def _constant_velocity() -> ScenarioConfig:
    return _make(
        "constant-velocity", ["x", "y"], {"m": 1.0, "k": 1.0, "c": 3.0},
        "0.5*m*(x_dot^2 + y_dot^2) - 0.5*k*y^2", ["x_dot - c"],
        {"x": 0.0, "y": 1.0, "x_dot": 3.0, "y_dot": 0.0},
    )


def _twist_toy() -> ScenarioConfig:
    return _make(
        "twist-toy", ["q1", "q2", "q3"], {},
        "0.5*(q1_dot^2 + q2_dot^2 + q3_dot^2)", ["q2_dot - q3*q1_dot"],
        {"q1": 0.0, "q2": 0.0, "q3": 0.0, "q1_dot": 1.0, "q2_dot": 0.0, "q3_dot": 0.5},
    )


BUILTINS = {
    "rolling-sphere": _rolling_sphere,
    "rod-pendulum": _rod_pendulum,
    "free-particle": _free_particle,
    "constant-velocity": _constant_velocity,
    "twist-toy": _twist_toy,
}


def builtin(name: str) -> ScenarioConfig:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory()


def _pointer(path) -> str:
    return "".join(f"/{str(p).replace('~', '~0').replace('/', '~1')}" for p in path)


def from_dict(doc) -> ScenarioConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        if err.validator == "required":
            missing = [k for k in err.validator_value if k not in err.instance]
            path.append(missing[0])
        raise ScenarioError(_pointer(path), err.message)

    def parsed(pointer, source):
        try:
            return parse(source)
        except ExprError as exc:
            raise ScenarioError(pointer, str(exc)) from exc

    lagrangian = parsed("/lagrangian", doc["lagrangian"])
    constraints = tuple(parsed(f"/constraints/{i}", g) for i, g in enumerate(doc["constraints"]))
    outputs = tuple(doc.get("observables", ()))
    for i, src in enumerate(outputs):
        parsed(f"/observables/{i}", src)
    try:
        spec = SystemSpec(doc["name"], tuple(doc["coordinates"]), doc["parameters"],
                          lagrangian, constraints)
    except ValueError as exc:
        raise ScenarioError("", str(exc)) from exc
    cfg = ScenarioConfig(spec, {k: float(v) for k, v in doc["initial"].items()}, outputs)
    validate_initial(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"invalid JSON: {exc}") from exc
    return from_dict(doc)


def dump_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")


def resolve(name_or_path: str) -> ScenarioConfig:
    if name_or_path in BUILTINS:
        return builtin(name_or_path)
    if name_or_path.endswith(".json") or Path(name_or_path).is_file():
        return load_config(name_or_path)
    return builtin(name_or_path)


def initial_phase_state(cfg: ScenarioConfig, method="flannery") -> PhaseState:
    """Momenta from the initial velocities at lam = 0, then a consistency re-solve."""
    spec = cfg.spec
    cs = cfg.config_state()
    lam0 = np.zeros(spec.m)
    p0 = model.momenta(spec, cs, lam0)
    report = dynamics.solve_multipliers(spec, 0.0, cs.q, p0, method, warm=lam0)
    vrows = [k for k in range(spec.m) if spec.velocity_dependent(k)]
    if vrows and np.max(np.abs(report.lam[vrows])) > LAMBDA_TOL:
        raise ConstraintViolated(
            f"initial multipliers not consistent with lam = 0: {report.lam[vrows]}")
    lam = report.lam.copy()
    lam[vrows] = 0.0
    return PhaseState(0.0, cs.q, p0, lam, np.zeros(spec.m))
