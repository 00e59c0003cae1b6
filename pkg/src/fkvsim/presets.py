"""Analytic space-time presets for loads, boundary data, and initial fields.

A field is a sum of separable terms ``direction * spatial(x) * temporal(t)``.
Temporal factors carry two derivatives so Dirichlet data can supply the
exact initial velocity and the work integrals can be cross-checked.  Values
are produced directly on mesh nodes in dof order (node-major, component
fastest).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SQ2 = math.sqrt(2.0)


@dataclass(frozen=True)
class Temporal:
    kind: str = "poly"
    coeffs: tuple[float, ...] = (1.0,)
    amplitude: float = 1.0
    omega: float = 1.0
    phase: float = 0.0

    def value(self, t: float, deriv: int = 0) -> float:
        if self.kind == "poly":
            return sum(c * _poly_term(k, t, deriv) for k, c in enumerate(self.coeffs))
        arg = self.omega * t + self.phase
        if self.kind == "cos":
            seq = (math.cos(arg), -math.sin(arg), -math.cos(arg))
        elif self.kind == "sin":
            seq = (math.sin(arg), math.cos(arg), -math.sin(arg))
        else:
            raise ValueError(f"unknown temporal kind {self.kind!r}")
        return self.amplitude * self.omega**deriv * seq[deriv]


def _poly_term(k: int, t: float, deriv: int) -> float:
    if deriv > k:
        return 0.0
    fac = 1.0
    for i in range(deriv):
        fac *= k - i
    return fac * t ** (k - deriv)


_SPATIAL = {
    "one": lambda x: np.ones(x.shape[0]),
    "x": lambda x: x[:, 0],
    "y": lambda x: x[:, 1],
    "sin_pi_x": lambda x: np.sin(np.pi * x[:, 0]),
    "sin_pi_y": lambda x: np.sin(np.pi * x[:, 1]),
    "sin_pi_x_sin_pi_y": lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
    "parabola_x": lambda x: x[:, 0] * (1.0 - x[:, 0]),
}


@dataclass(frozen=True)
class Term:
    spatial: str
    temporal: Temporal
    direction: tuple[float, ...]

    def eval(self, nodes: np.ndarray, ncomp: int, t: float, deriv: int = 0) -> np.ndarray:
        if self.spatial not in _SPATIAL:
            raise ValueError(f"unknown spatial profile {self.spatial!r}")
        if self.spatial in ("y", "sin_pi_y", "sin_pi_x_sin_pi_y") and nodes.shape[1] < 2:
            raise ValueError(f"spatial profile {self.spatial!r} needs a 2D mesh")
        prof = _SPATIAL[self.spatial](nodes)
        direction = np.asarray(self.direction, dtype=float)
        if len(direction) != ncomp:
            raise ValueError(f"direction has {len(direction)} components, field needs {ncomp}")
        return (prof[:, None] * direction[None, :]).ravel() * self.temporal.value(t, deriv)


@dataclass(frozen=True)
class FieldSpec:
    """Sum of separable terms; the empty sum is the zero field."""

    terms: tuple[Term, ...] = ()

    def eval(self, nodes: np.ndarray, ncomp: int, t: float, deriv: int = 0) -> np.ndarray:
        out = np.zeros(nodes.shape[0] * ncomp)
        for term in self.terms:
            out += term.eval(nodes, ncomp, t, deriv)
        return out

    @property
    def is_zero(self) -> bool:
        return len(self.terms) == 0


ZERO_FIELD = FieldSpec()


def _parse_temporal(spec, where: str) -> Temporal:
    if spec is None:
        return Temporal()
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ValueError(f"{where}: temporal must be a single-key mapping")
    kind, body = next(iter(spec.items()))
    if kind == "poly":
        coeffs = tuple(float(c) for c in body)
        return Temporal("poly", coeffs=coeffs)
    if kind in ("cos", "sin"):
        body = body or {}
        return Temporal(kind, amplitude=float(body.get("amplitude", 1.0)),
                        omega=float(body.get("omega", 1.0)),
                        phase=float(body.get("phase", 0.0)))
    raise ValueError(f"{where}: unknown temporal kind {kind!r}")


def make_field(spec, ncomp: int, where: str = "field") -> FieldSpec:
    """Build a FieldSpec from its config mapping (or list of term mappings)."""
    if spec is None:
        return ZERO_FIELD
    if isinstance(spec, list):
        terms = []
        for i, sub in enumerate(spec):
            terms.extend(make_field(sub, ncomp, f"{where}[{i}]").terms)
        return FieldSpec(tuple(terms))
    if not isinstance(spec, dict):
        raise ValueError(f"{where}: expected a mapping, got {type(spec).__name__}")
    known = {"preset", "value", "spatial", "temporal", "direction", "amplitude"}
    unknown = set(spec) - known
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    preset = spec.get("preset")
    if preset == "zero":
        return ZERO_FIELD
    if preset == "constant":
        value = spec.get("value", 0.0)
        vec = [float(value)] if np.isscalar(value) else [float(v) for v in value]
        if len(vec) == 1 and ncomp > 1:
            raise ValueError(f"{where}: constant value needs {ncomp} components")
        return FieldSpec((Term("one", Temporal(), tuple(vec)),))
    if preset == "separable":
        spatial = spec.get("spatial", "one")
        temporal = _parse_temporal(spec.get("temporal"), where)
        amp = float(spec.get("amplitude", 1.0))
        direction = spec.get("direction")
        if direction is None:
            if ncomp != 1:
                raise ValueError(f"{where}: 'direction' is required for vector fields")
            direction = [1.0]
        direction = tuple(amp * float(v) for v in direction)
        if spatial not in _SPATIAL:
            raise ValueError(f"{where}: unknown spatial profile {spatial!r}")
        return FieldSpec((Term(spatial, temporal, direction),))
    raise ValueError(f"{where}: unknown preset {preset!r}")
