"""Numerical studies mirroring the limit arguments and theorems.

* ``epsilon_sweep``: Cauchy-in-epsilon diagnostics for the regularization
  limit (the desk-scale surrogate of the compactness argument),
* ``positivity_test``: eigenvalue certificates for the discrete double
  convolution plus a two-resolution check of the kernel-splitting identity,
* ``uniqueness_check``: determinism/perturbation probe for the fixed-crack
  uniqueness statement,
* ``manufactured_convergence``: closed-form oracle cases for the scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import Material, ProblemData, scalar_tensor, stiffness_matrix
from .domain import CrackSchedule, CrackedMesh, build_interval_mesh
from .energy import discrete_energy_audit
from .errors import MovingCrackError
from .kernel import FractionalKernel, RegularizedKernel, kernel_positivity_matrix, \
    sample_grid, zero_kernel_samples
from .presets import make_field
from .stepper import DiscreteTrajectory, SolverConfig, init, run


@dataclass(frozen=True)
class ProblemSetup:
    """A full problem instance: geometry, material, data, kernel, horizon."""

    mesh: CrackedMesh
    schedule: CrackSchedule
    material: Material
    data: ProblemData
    kernel: RegularizedKernel | None
    t_final: float
    linear_tol: float | str = "direct"

    def samples(self, n: int, kernel: RegularizedKernel | None = None):
        k = self.kernel if kernel is None else kernel
        if k is None:
            return zero_kernel_samples(n, self.t_final, self.material.vdim)
        return sample_grid(k, n, self.t_final)

    def solve(self, n: int, kernel: RegularizedKernel | None = None,
              **config_overrides) -> DiscreteTrajectory:
        cfg = SolverConfig(n=n, linear_tol=config_overrides.pop("linear_tol", self.linear_tol),
                           **config_overrides)
        ctx = init(self.data, self.mesh, self.schedule, self.material,
                   self.samples(n, kernel), cfg)
        return run(ctx)


@dataclass
class SweepReport:
    """Successive-difference diagnostics of the regularization ladder."""

    epsilons: np.ndarray
    diffs_uH: np.ndarray
    diffs_strain: np.ndarray
    energy_margins: np.ndarray
    n: int

    @property
    def strictly_decreasing(self) -> bool:
        d = self.diffs_uH
        return bool(np.all(d[1:] < d[:-1]))


def epsilon_sweep(problem: ProblemSetup, eps0: float, levels: int, n: int,
                  workers: int = 1) -> SweepReport:
    """Run the scheme once per shift eps_k = eps0 * 2^-k and compare
    consecutive trajectories in L-inf(H) and L2(strain).

    Runs are independent; ``workers`` > 1 fans them out on a thread pool
    (results are gathered in ladder order, so the report is deterministic).
    """
    if levels < 2:
        raise ValueError(f"need at least 2 ladder levels, got {levels}")
    if problem.kernel is None:
        raise ValueError("the sweep needs a kernel to regularize")
    base = problem.kernel.base
    if isinstance(base, FractionalKernel) and eps0 >= base.horizon:
        raise ValueError(f"eps0 = {eps0} must stay below the kernel horizon")

    epsilons = eps0 * 0.5 ** np.arange(levels)

    def solve_one(eps: float):
        try:
            return problem.solve(n, kernel=RegularizedKernel(base, float(eps)))
        except Exception as exc:
            raise RuntimeError(f"sweep run at epsilon = {eps:g} failed: {exc}") from exc

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajectories = list(pool.map(solve_one, epsilons))
    else:
        trajectories = [solve_one(eps) for eps in epsilons]
    margins = []
    for traj in trajectories:
        led = discrete_energy_audit(traj, traj.ctx.ks)
        margins.append(led.min_margin() / led.scale)

    M = trajectories[0].ctx.M
    K_I = stiffness_matrix(problem.mesh, np.eye(problem.material.vdim))
    tau = trajectories[0].tau
    diffs_u, diffs_e = [], []
    for a, b in zip(trajectories, trajectories[1:]):
        D = a.u[1:] - b.u[1:]
        diffs_u.append(max(math.sqrt(max(d @ (M @ d), 0.0)) for d in D))
        diffs_e.append(math.sqrt(max(tau * sum(d @ (K_I @ d) for d in D), 0.0)))
    return SweepReport(epsilons=epsilons, diffs_uH=np.array(diffs_u),
                       diffs_strain=np.array(diffs_e),
                       energy_margins=np.array(margins), n=n)


@dataclass
class PositivityReport:
    grid_sizes: np.ndarray
    min_eigs: np.ndarray
    norms: np.ndarray
    identity_residuals: tuple[float, float]
    identity_grids: tuple[int, int]

    @property
    def worst_ratio(self) -> float:
        """Most negative min-eig relative to the matrix norm."""
        return float((self.min_eigs / self.norms).min())

    @property
    def identity_ratio(self) -> float:
        coarse, fine = self.identity_residuals
        return coarse / max(fine, 1e-300)


def positivity_test(kernel: RegularizedKernel, n_max: int, t_final: float = 1.0,
                    seed: int = 0) -> PositivityReport:
    """Eigenvalue certificate of the double-convolution form on dyadic grids
    plus a two-resolution residual check of the splitting identity."""
    ns, mins, norms = [], [], []
    n = 8
    while n <= n_max:
        Q = kernel_positivity_matrix(kernel, n, t_final / n)
        eigs = np.linalg.eigvalsh(Q)
        ns.append(n)
        mins.append(float(eigs.min()))
        norms.append(float(np.abs(eigs).max()))
        n *= 2
    grids = (128, 256)
    res = tuple(_kernel_identity_residual(m, t_final, seed) for m in grids)
    return PositivityReport(grid_sizes=np.array(ns), min_eigs=np.array(mins),
                            norms=np.array(norms), identity_residuals=res,
                            identity_grids=grids)


def _kernel_identity_residual(m: int, t_final: float, seed: int) -> float:
    """Residual of the three-term splitting of the convolution-rate integral
    for K(t) = exp(-t) on a random smooth path, all terms quadratured
    independently (trapezoid + finite-difference rate)."""
    rng = np.random.default_rng(seed)
    amps = rng.standard_normal(4)
    phases = rng.uniform(0.0, 2.0 * np.pi, 4)
    t = np.linspace(0.0, t_final, m + 1)
    h = t_final / m
    v = sum(a * np.sin((k + 1) * np.pi * t / t_final + p)
            for k, (a, p) in enumerate(zip(amps, phases)))
    K = np.exp(-t)
    Kdot = -np.exp(-t)

    # p(r) = int_0^r K(r-s) v(s) ds, trapezoid per row
    p = np.zeros(m + 1)
    for i in range(1, m + 1):
        integrand = K[i::-1] * v[:i + 1]
        p[i] = h * (integrand.sum() - 0.5 * (integrand[0] + integrand[-1]))
    dp = np.gradient(p, h, edge_order=2)

    lhs = np.trapezoid(dp * v, dx=h)
    rhs = 0.5 * np.trapezoid(K[::-1] * v**2, dx=h) + 0.5 * np.trapezoid(K * v**2, dx=h)
    double = 0.0
    for i in range(m + 1):
        inner = Kdot[i::-1] * (v[i] - v[:i + 1]) ** 2
        row = h * (inner.sum() - 0.5 * (inner[0] + inner[-1])) if i else 0.0
        w = 0.5 if i in (0, m) else 1.0
        double += w * h * row
    rhs -= 0.5 * double
    return abs(lhs - rhs)


@dataclass
class UniquenessReport:
    max_rel_diff: float
    solution_scale: float
    variant: str
    step_diffs: np.ndarray = field(default_factory=lambda: np.zeros(0))


def uniqueness_check(problem: ProblemSetup, n: int,
                     variant: str = "permuted", linear_tol: float | str = None,
                     seed: int = 1) -> UniquenessReport:
    """Solve the same fixed-crack problem twice under a perturbed-but-
    convergent numerical path and report the trajectory discrepancy.

    Variants: ``identical`` (determinism probe: bitwise repeat),
    ``permuted`` (permuted assembly order plus one iterative-refinement
    pass after the direct solve), ``cg`` (iterative solve at
    ``linear_tol``).  Refuses moving-crack schedules: the uniqueness
    statement assumes the crack family is constant.
    """
    if not problem.schedule.is_fixed(problem.t_final):
        raise MovingCrackError(
            "uniqueness requires a fixed crack; the schedule releases inside "
            f"(0, {problem.t_final}]")
    base = problem.solve(n)
    if variant == "identical":
        other = problem.solve(n)
    elif variant == "permuted":
        other = problem.solve(n, element_order="permuted", permute_seed=seed,
                              solve_variant="refine")
    elif variant == "cg":
        if linear_tol is None:
            raise ValueError("variant 'cg' needs a linear_tol")
        other = problem.solve(n, linear_tol=float(linear_tol))
    else:
        raise ValueError(f"unknown variant {variant!r}")
    M = base.ctx.M
    scale = max(math.sqrt(max(u @ (M @ u), 0.0)) for u in base.u[1:]) + 1e-300
    step_diffs = np.array([math.sqrt(max(d @ (M @ d), 0.0))
                           for d in base.u[1:] - other.u[1:]])
    return UniquenessReport(max_rel_diff=float(step_diffs.max()) / scale,
                            solution_scale=scale, variant=variant,
                            step_diffs=step_diffs)


@dataclass
class ConvergenceReport:
    case: str
    grid_sizes: np.ndarray
    errors: np.ndarray
    rates: np.ndarray

    @property
    def observed_order(self) -> float:
        return float(self.rates.min()) if len(self.rates) else math.inf


CONVERGENCE_CASES = ("static", "translation", "wave")


def manufactured_convergence(case: str, n_ladder=(100, 200, 400)) -> ConvergenceReport:
    """Error ladder of the scheme against a closed-form oracle solution."""
    if case not in CONVERGENCE_CASES:
        raise ValueError(f"unknown oracle case {case!r}; choose from {CONVERGENCE_CASES}")
    errors = []
    for n in n_ladder:
        errors.append(_oracle_error(case, int(n)))
    errors = np.array(errors)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.log2(errors[:-1] / errors[1:])
    return ConvergenceReport(case=case, grid_sizes=np.array(n_ladder, dtype=int),
                             errors=errors, rates=rates)


def _oracle_error(case: str, n: int) -> float:
    T = 1.0
    if case == "wave":
        mesh = build_interval_mesh(1.0, 256)
        material = Material(elastic=scalar_tensor(1.0), viscous=np.zeros((1, 1)))
        data = ProblemData(initial_displacement=make_field(
            {"preset": "separable", "spatial": "sin_pi_x"}, 1))
        ks = zero_kernel_samples(n, T, 1)
        traj = run(init(data, mesh, CrackSchedule(), material, ks, SolverConfig(n=n)))
        exact = math.cos(math.pi * T) * np.sin(math.pi * mesh.nodes[:, 0])
        err = traj.u_at(n) - exact
        return traj.norm_H(err)

    mesh = build_interval_mesh(1.0, 32)
    material = Material(elastic=scalar_tensor(2.0), viscous=scalar_tensor(0.7))
    kernel = RegularizedKernel(FractionalKernel(0.5, material.viscous), 1e-2)
    ks = sample_grid(kernel, n, T)
    if case == "translation":
        data = ProblemData(
            dirichlet=make_field({"preset": "separable", "spatial": "one",
                                  "temporal": {"poly": [0.0, 1.0]}}, 1),
            initial_velocity=make_field({"preset": "constant", "value": 1.0}, 1))
        traj = run(init(data, mesh, CrackSchedule(), material, ks, SolverConfig(n=n)))
        errs = [np.abs(traj.u_at(j) - j * traj.tau).max() for j in range(n + 1)]
        return float(max(errs))

    # static equilibrium: u0 solves the elastostatic problem, loads constant
    data = ProblemData(body_force=make_field({"preset": "constant", "value": 1.0}, 1))
    ctx = init(data, mesh, CrackSchedule(), material, ks, SolverConfig(n=n))
    space = ctx.space_for_step(0)
    K = (space.prolongation.T @ ctx.K_C @ space.prolongation).tocsc()
    w = spla.spsolve(K, space.restrict(ctx.F[1]))
    u_static = space.extend(w)
    ctx.u0 = u_static
    ctx.state = ctx.initial_state()
    traj = run(ctx)
    scale = float(np.abs(u_static).max())
    return float(max(np.abs(traj.u_at(j) - u_static).max() for j in range(n + 1)) / scale)
