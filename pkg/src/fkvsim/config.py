"""Run configuration: a strict, fully validated key-value tree.

Validation collects *every* problem before reporting (misconfiguration is
the dominant failure mode of simulation campaigns), distinguishes errors
from warnings (a crack segment releasing after the horizon is legal but
suspicious), and rejects unknown keys in strict mode.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .analysis import CONVERGENCE_CASES, ProblemSetup
from .assembly import Material, ProblemData, isotropic_tensor, scalar_tensor
from .domain import NEVER, CrackSchedule, build_mesh
from .errors import ConfigError
from .kernel import ConstantProfile, ExponentialProfile, FractionalKernel, \
    RegularizedKernel, SmoothKernel
from .presets import make_field

MODES = ("run", "sweep", "convergence", "uniqueness", "positivity")

_TOP_KEYS = {"mode", "geometry", "material", "kernel", "data",
             "discretization", "outputs", "sweep", "convergence",
             "positivity", "uniqueness"}
_GEOMETRY_KEYS = {"kind", "length", "elements", "size", "cells", "dirichlet",
                  "crack", "schedule", "path"}
_CRACK_KEYS = {"axis", "value", "from", "to", "segments"}
_MATERIAL_KEYS = {"elastic", "viscous"}
_KERNEL_KEYS = {"type", "alpha", "epsilon", "horizon", "beta", "value"}
_DATA_KEYS = {"body_force", "neumann", "dirichlet",
              "initial_displacement", "initial_velocity"}
_DISC_KEYS = {"steps", "t_final", "linear_solver", "deterministic"}
_OUTPUT_KEYS = {"directory", "snapshot_stride", "figures"}
_SIDES = {"left", "right", "bottom", "top"}


@dataclass
class RunConfig:
    mode: str
    tree: dict
    warnings: list[str] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.tree, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @property
    def n(self) -> int:
        return int(self.tree["discretization"]["steps"])

    @property
    def t_final(self) -> float:
        return float(self.tree["discretization"]["t_final"])

    @property
    def deterministic(self) -> bool:
        return bool(self.tree["discretization"].get("deterministic", True))

    @property
    def linear_tol(self):
        v = self.tree["discretization"].get("linear_solver", "direct")
        return "direct" if v == "direct" else float(v)

    @property
    def outputs(self) -> dict:
        out = dict(self.tree.get("outputs", {}))
        out.setdefault("directory", "out")
        out.setdefault("snapshot_stride", max(1, self.n // 20))
        out.setdefault("figures", True)
        return out

    def mode_block(self) -> dict:
        return dict(self.tree.get(self.mode, {}))

    def build(self) -> ProblemSetup:
        """Construct the problem objects from the validated tree."""
        geo = self.tree["geometry"]
        mesh = build_mesh(geo)
        schedule = _build_schedule(geo, mesh)
        material = _build_material(self.tree["material"], mesh.dim)
        kernel = _build_kernel(self.tree.get("kernel"), material)
        data = _build_data(self.tree.get("data", {}), mesh.ncomp)
        return ProblemSetup(mesh=mesh, schedule=schedule, material=material,
                            data=data, kernel=kernel, t_final=self.t_final,
                            linear_tol=self.linear_tol)


def _build_schedule(geo: dict, mesh) -> CrackSchedule:
    raw = geo.get("schedule") or {}
    release = {}
    for seg, when in raw.items():
        release[seg] = NEVER if (isinstance(when, str)) else float(when)
    for seg in mesh.segment_ids:
        release.setdefault(seg, NEVER)
    return CrackSchedule(release)


def _build_material(block: dict, dim: int) -> Material:
    def tensor(spec, allow_zero):
        kind = spec.get("kind")
        if kind == "isotropic":
            return isotropic_tensor(float(spec["lam"]), float(spec["mu"]))
        if kind == "scalar":
            return scalar_tensor(float(spec["value"]))
        if kind == "zero":
            vd = 1 if dim == 1 else 3
            return np.zeros((vd, vd))
        raise ConfigError([f"material tensor kind {kind!r} unknown"])

    return Material(elastic=tensor(block["elastic"], False),
                    viscous=tensor(block["viscous"], True))


def _build_kernel(block: dict | None, material: Material) -> RegularizedKernel | None:
    if block is None or block.get("type", "none") == "none":
        return None
    ktype = block["type"]
    if ktype == "fractional":
        base = FractionalKernel(alpha=float(block["alpha"]),
                                visc_tensor=material.viscous,
                                horizon=float(block.get("horizon", 1.0)))
        return RegularizedKernel(base, epsilon=float(block["epsilon"]))
    if ktype == "exponential":
        base = SmoothKernel(ExponentialProfile(float(block.get("beta", 1.0))),
                            material.viscous)
        return RegularizedKernel(base, epsilon=float(block.get("epsilon", 0.0)))
    if ktype == "constant":
        base = SmoothKernel(ConstantProfile(float(block.get("value", 1.0))),
                            material.viscous)
        return RegularizedKernel(base, epsilon=float(block.get("epsilon", 0.0)))
    raise ConfigError([f"kernel type {ktype!r} unknown"])


def _build_data(block: dict, ncomp: int) -> ProblemData:
    fields = {}
    for key in _DATA_KEYS:
        fields[key] = make_field(block.get(key), ncomp, where=f"data.{key}")
    return ProblemData(**fields)


def parse_config(path, strict: bool = True) -> RunConfig:
    """Read and validate a config file; raises ConfigError listing every
    problem found (not just the first)."""
    with open(path) as fh:
        tree = yaml.safe_load(fh)
    return validate_config(tree, strict=strict)


def validate_config(tree, strict: bool = True) -> RunConfig:
    errors: list[str] = []
    warnings: list[str] = []
    if not isinstance(tree, dict):
        raise ConfigError(["config root must be a mapping"])

    def unknown(block, known, where):
        extra = sorted(set(block) - known)
        if extra:
            msg = f"{where}: unknown keys {extra}"
            (errors if strict else warnings).append(msg)

    unknown(tree, _TOP_KEYS, "top level")

    mode = str(tree.get("mode", "run")).lower()
    if mode not in MODES:
        errors.append(f"mode: {tree.get('mode')!r} is not one of {MODES}")

    # --- geometry ---------------------------------------------------------
    geo = tree.get("geometry")
    dim = None
    declared_segments: set[str] = set()
    if not isinstance(geo, dict):
        errors.append("geometry: required block is missing")
        geo = {}
    else:
        unknown(geo, _GEOMETRY_KEYS, "geometry")
        kind = geo.get("kind")
        if kind == "interval":
            dim = 1
            _num(errors, geo, "length", "geometry.length", lo=0.0, lo_open=True)
            _num(errors, geo, "elements", "geometry.elements", lo=1, integer=True)
            if geo.get("crack") is not None:
                errors.append("geometry.crack: interval meshes do not support cracks")
        elif kind == "rectangle":
            dim = 2
            for key in ("size", "cells"):
                v = geo.get(key)
                if not (isinstance(v, (list, tuple)) and len(v) == 2):
                    errors.append(f"geometry.{key}: expected a pair")
            crack = geo.get("crack")
            if crack is not None:
                unknown(crack, _CRACK_KEYS, "geometry.crack")
                if crack.get("axis") not in ("x", "y"):
                    errors.append("geometry.crack.axis: must be 'x' or 'y'")
                for key in ("value", "from", "to"):
                    _num(errors, crack, key, f"geometry.crack.{key}")
                segs = crack.get("segments", [])
                for i, s in enumerate(segs):
                    if not isinstance(s, dict) or "id" not in s or "to" not in s:
                        errors.append(f"geometry.crack.segments[{i}]: needs 'id' and 'to'")
                    else:
                        declared_segments.add(str(s["id"]))
                if not segs and crack.get("axis") in ("x", "y"):
                    declared_segments.add("crack")
        elif kind == "file":
            if "path" not in geo:
                errors.append("geometry.path: required for kind 'file'")
        else:
            errors.append(f"geometry.kind: {kind!r} is not one of "
                          "('interval', 'rectangle', 'file')")
        bad_sides = set(geo.get("dirichlet", ())) - _SIDES
        if bad_sides:
            errors.append(f"geometry.dirichlet: unknown sides {sorted(bad_sides)}")

    # --- discretization ---------------------------------------------------
    disc = tree.get("discretization")
    t_final = None
    if not isinstance(disc, dict):
        errors.append("discretization: required block is missing")
    else:
        unknown(disc, _DISC_KEYS, "discretization")
        _num(errors, disc, "steps", "discretization.steps", lo=1, integer=True)
        t_final = _num(errors, disc, "t_final", "discretization.t_final",
                       lo=0.0, lo_open=True)
        solver = disc.get("linear_solver", "direct")
        if solver != "direct":
            try:
                tol = float(solver)
                if tol <= 0.0:
                    errors.append("discretization.linear_solver: tolerance must be positive")
                elif tol > 1e-10:
                    warnings.append("discretization.linear_solver: tolerance above "
                                    "1e-10; acceptance checks assume tighter solves")
            except (TypeError, ValueError):
                errors.append("discretization.linear_solver: 'direct' or a tolerance")

    # --- schedule vs segments --------------------------------------------
    sched = (geo.get("schedule") or {}) if isinstance(geo, dict) else {}
    for seg, when in sched.items():
        if seg not in declared_segments:
            errors.append(f"geometry.schedule: segment {seg!r} is not declared by the crack")
        elif isinstance(when, str):
            if when.lower() != "never":
                errors.append(f"geometry.schedule.{seg}: expected a time or 'never'")
        else:
            try:
                when_f = float(when)
                if when_f < 0.0:
                    errors.append(f"geometry.schedule.{seg}: release time must be >= 0")
                elif t_final is not None and when_f > t_final:
                    warnings.append(f"geometry.schedule.{seg}: releases at {when_f} "
                                    f"after the horizon {t_final}; the segment never "
                                    "opens within this run")
            except (TypeError, ValueError):
                errors.append(f"geometry.schedule.{seg}: expected a time or 'never'")
    for seg in declared_segments - set(sched):
        warnings.append(f"geometry.schedule: segment {seg!r} has no entry; "
                        "it stays glued (never releases)")

    # --- material ---------------------------------------------------------
    mat = tree.get("material")
    if not isinstance(mat, dict):
        errors.append("material: required block is missing")
    else:
        unknown(mat, _MATERIAL_KEYS, "material")
        for key in ("elastic", "viscous"):
            spec = mat.get(key)
            if not isinstance(spec, dict) or "kind" not in spec:
                errors.append(f"material.{key}: expected a mapping with 'kind'")
                continue
            kind = spec["kind"]
            if kind == "isotropic":
                if dim == 1:
                    errors.append(f"material.{key}: isotropic tensors need a 2D mesh")
                _num(errors, spec, "lam", f"material.{key}.lam")
                _num(errors, spec, "mu", f"material.{key}.mu")
            elif kind == "scalar":
                if dim == 2:
                    errors.append(f"material.{key}: scalar tensors need a 1D mesh")
                _num(errors, spec, "value", f"material.{key}.value")
            elif kind != "zero":
                errors.append(f"material.{key}.kind: {kind!r} unknown")

    # --- kernel -----------------------------------------------------------
    ker = tree.get("kernel")
    if ker is not None:
        unknown(ker, _KERNEL_KEYS, "kernel")
        ktype = ker.get("type", "none")
        if ktype == "fractional":
            alpha = _num(errors, ker, "alpha", "kernel.alpha")
            if alpha is not None and not 0.0 < alpha < 1.0:
                errors.append(f"kernel.alpha: {alpha} violates the (0, 1) constraint")
            eps = _num(errors, ker, "epsilon", "kernel.epsilon")
            if eps is not None and eps <= 0.0:
                errors.append("kernel.epsilon: a fractional kernel needs epsilon > 0")
            horizon = ker.get("horizon", 1.0)
            if eps is not None and isinstance(horizon, (int, float)) and eps >= horizon:
                errors.append(f"kernel.epsilon: {eps} must stay below horizon {horizon}")
        elif ktype == "exponential":
            beta = ker.get("beta", 1.0)
            if not isinstance(beta, (int, float)) or beta <= 0:
                errors.append("kernel.beta: must be a positive number")
        elif ktype == "constant":
            val = ker.get("value", 1.0)
            if not isinstance(val, (int, float)) or val < 0:
                errors.append("kernel.value: must be nonnegative")
        elif ktype != "none":
            errors.append(f"kernel.type: {ktype!r} unknown")

    # --- data -------------------------------------------------------------
    data = tree.get("data", {})
    if data is not None and isinstance(data, dict):
        unknown(data, _DATA_KEYS, "data")
        ncomp = 1 if dim == 1 else 2
        for key, spec in data.items():
            if key not in _DATA_KEYS:
                continue
            try:
                make_field(spec, ncomp, where=f"data.{key}")
            except ValueError as exc:
                errors.append(str(exc))
    elif data is not None:
        errors.append("data: expected a mapping")

    # --- outputs ----------------------------------------------------------
    outputs = tree.get("outputs", {})
    if isinstance(outputs, dict):
        unknown(outputs, _OUTPUT_KEYS, "outputs")
        if "snapshot_stride" in outputs:
            _num(errors, outputs, "snapshot_stride", "outputs.snapshot_stride",
                 lo=1, integer=True)
    else:
        errors.append("outputs: expected a mapping")

    # --- mode blocks --------------------------------------------------------
    if mode == "sweep":
        blk = tree.get("sweep", {})
        unknown(blk, {"eps0", "levels"}, "sweep")
        _num(errors, blk, "eps0", "sweep.eps0", lo=0.0, lo_open=True)
        _num(errors, blk, "levels", "sweep.levels", lo=2, integer=True)
    elif mode == "convergence":
        blk = tree.get("convergence", {})
        unknown(blk, {"case", "ladder"}, "convergence")
        if blk.get("case") not in CONVERGENCE_CASES:
            errors.append(f"convergence.case: must be one of {CONVERGENCE_CASES}")
    elif mode == "positivity":
        blk = tree.get("positivity", {})
        unknown(blk, {"n_max"}, "positivity")
        _num(errors, blk, "n_max", "positivity.n_max", lo=8, integer=True)
        if ker is None or ker.get("type", "none") == "none":
            errors.append("positivity mode needs a kernel block")

    if errors:
        raise ConfigError(errors)
    return RunConfig(mode=mode, tree=tree, warnings=warnings)


def _num(errors, block, key, where, lo=None, hi=None, lo_open=False, integer=False):
    v = block.get(key)
    if v is None:
        errors.append(f"{where}: required value is missing")
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append(f"{where}: expected a number, got {v!r}")
        return None
    if integer and int(v) != v:
        errors.append(f"{where}: expected an integer, got {v!r}")
        return None
    if lo is not None and (v <= lo if lo_open else v < lo):
        op = ">" if lo_open else ">="
        errors.append(f"{where}: must be {op} {lo}, got {v}")
        return None
    if hi is not None and v > hi:
        errors.append(f"{where}: must be <= {hi}, got {v}")
        return None
    return float(v)
