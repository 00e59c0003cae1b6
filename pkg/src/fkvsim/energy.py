"""Energy bookkeeping for the implicit scheme.

``discrete_energy_audit`` recomputes, independently of the stepper, every
term of the per-step energy identity obtained by testing the scheme with
tau * (du_j - dz_j) and summing: kinetic + elastic + memory + three
sign-definite history sums + four tau^2-weighted nonnegative sums equals
the initial energy plus the accumulated discrete work.  The identity is
algebraic, so its residual measures only linear-solve error; dropping the
nonnegative terms yields the inequality whose margin is reported.

The continuous-level quantities (energy, dissipation, total work in both
forms) are grid quadratures aligned with the piecewise-constant
interpolants; the kernel enters through closed-form derivatives of the
regularized scalar profile rather than grid differences, which makes them
an independent route against the discrete ledger.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError
from .kernel import KernelSamples, RegularizedKernel
from .stepper import DiscreteTrajectory

_FLOOR = 1e-14


@dataclass
class EnergyLedger:
    """Per-step energy terms (index i = 0..n), all in consistent units.

    ``hist_*`` are stored with the sign that makes them nonnegative (the
    first-difference kernel sums enter the identity negated).  ``work`` is
    the cumulative discrete work sum; ``eq_residual`` the identity defect;
    ``margin`` the inequality slack (work + initial energy minus kinetic
    minus elastic).
    """

    t: np.ndarray
    kinetic: np.ndarray
    elastic: np.ndarray
    memory: np.ndarray
    hist_tail: np.ndarray
    hist_decay: np.ndarray
    hist_convex: np.ndarray
    tau2_kinetic: np.ndarray
    tau2_elastic: np.ndarray
    tau2_viscous: np.ndarray
    tau2_history: np.ndarray
    work: np.ndarray
    eq_residual: np.ndarray
    margin: np.ndarray
    scale: float

    NONNEGATIVE_TERMS = ("kinetic", "elastic", "memory", "hist_tail", "hist_decay",
                         "hist_convex", "tau2_kinetic", "tau2_elastic",
                         "tau2_viscous", "tau2_history")

    @property
    def initial_energy(self) -> float:
        return float(self.kinetic[0] + self.elastic[0])

    def max_relative_residual(self) -> float:
        return float(np.abs(self.eq_residual).max() / self.scale)

    def min_margin(self) -> float:
        return float(self.margin.min())

    def sign_violations(self) -> dict[str, float]:
        """Most negative value of each nonnegative-tagged term (0 when clean)."""
        out = {}
        for name in self.NONNEGATIVE_TERMS:
            out[name] = min(0.0, float(getattr(self, name).min()))
        return out

    def columns(self) -> dict[str, np.ndarray]:
        dissipation = self.hist_decay + self.hist_convex
        return {
            "step": np.arange(len(self.t), dtype=float),
            "t": self.t,
            "kinetic": self.kinetic,
            "elastic": self.elastic,
            "memory": self.memory,
            "dissipation": dissipation,
            "work": self.work,
            "margin": self.margin,
            "eq_residual": self.eq_residual,
        }


def _check_grid(traj: DiscreteTrajectory, ks: KernelSamples) -> None:
    ref = traj.ctx.ks
    if ks.n != ref.n or abs(ks.tau - ref.tau) > 1e-15 * max(1.0, ref.tau):
        raise GridMismatchError(
            f"kernel grid (n={ks.n}, tau={ks.tau}) does not match the "
            f"trajectory (n={ref.n}, tau={ref.tau})")
    if not np.array_equal(ks.g, ref.g):
        raise GridMismatchError("kernel samples differ from the ones the run used")


def _viscous_gram(traj: DiscreteTrajectory) -> np.ndarray:
    """Gram matrix G[a, b] = u_a^T K_B u_b over the stored states."""
    V = traj.u[1:].T
    return V.T @ (traj.ctx.K_B @ V)


def _qform(G: np.ndarray, a: int, b) -> np.ndarray:
    """(u_a - u_b)^T K_B (u_a - u_b) from the Gram matrix; b may be a slice."""
    diag = np.diagonal(G)
    return diag[a] - 2.0 * G[a, b] + diag[b]


def discrete_energy_audit(traj: DiscreteTrajectory, kernel_samples: KernelSamples,
                          data=None) -> EnergyLedger:
    """Recompute the per-step energy identity from the stored trajectory."""
    _check_grid(traj, kernel_samples)
    ctx = traj.ctx
    n, tau = traj.n, traj.tau
    g, dg, d2g = kernel_samples.g, kernel_samples.dg, kernel_samples.d2g
    M, K_C, K_B = ctx.M, ctx.K_C, ctx.K_B
    GB = _viscous_gram(traj)
    diagB = np.diagonal(GB)

    du, d2u = traj.du, traj.d2u
    kin = 0.5 * np.einsum("jd,jd->j", du, (M @ du.T).T)
    U = traj.u[1:]
    el = 0.5 * np.einsum("jd,jd->j", U, (K_C @ U.T).T)
    qd_M = np.einsum("jd,jd->j", d2u, (M @ d2u.T).T)
    qd_C = np.einsum("jd,jd->j", du, (K_C @ du.T).T)
    qd_B = np.einsum("jd,jd->j", du, (K_B @ du.T).T)

    memory = 0.5 * g * _qform(GB, slice(None), 0)
    hist_decay = -0.5 * np.concatenate([[0.0], np.cumsum(tau * dg[1:] * _qform(GB, slice(1, None), 0))])

    hist_tail = np.zeros(n + 1)
    convex_row = np.zeros(n + 1)
    for i in range(1, n + 1):
        q_i = _qform(GB, i, slice(1, i + 1))
        hist_tail[i] = -0.5 * tau * float(dg[i:0:-1] @ q_i)
        convex_row[i] = 0.5 * tau**2 * float(d2g[i:0:-1] @ q_i)
    hist_convex = np.cumsum(convex_row)

    tau2_kin = 0.5 * tau**2 * np.concatenate([[0.0], np.cumsum(qd_M[1:])])
    tau2_el = 0.5 * tau**2 * np.concatenate([[0.0], np.cumsum(qd_C[1:])])
    tau2_visc = 0.5 * tau**2 * np.concatenate([[0.0], np.cumsum(g[:-1] * qd_B[1:])])
    dg_cum = tau * np.cumsum(dg)  # sum_{k=1}^{j} tau dg_{j-k} = tau * sum_{m<j} dg_m
    tau2_hist = -0.5 * tau**2 * np.concatenate(
        [[0.0], np.cumsum(dg_cum[:-1] * qd_B[1:])])

    L = _discrete_work_rows(traj, kernel_samples, GB)
    work = np.concatenate([[0.0], np.cumsum(tau * L[1:])])

    e0 = kin[0] + el[0]
    lhs = (kin + el + memory + hist_tail + hist_decay + hist_convex
           + tau2_kin + tau2_el + tau2_visc + tau2_hist)
    rhs = e0 + work
    scale = float(e0 + np.abs(work).max() + _FLOOR)
    t = tau * np.arange(n + 1)
    return EnergyLedger(t=t, kinetic=kin, elastic=el, memory=memory,
                        hist_tail=hist_tail, hist_decay=hist_decay,
                        hist_convex=hist_convex, tau2_kinetic=tau2_kin,
                        tau2_elastic=tau2_el, tau2_viscous=tau2_visc,
                        tau2_history=tau2_hist, work=work,
                        eq_residual=lhs - rhs, margin=rhs - kin - el, scale=scale)


def _discrete_work_rows(traj: DiscreteTrajectory, ks: KernelSamples,
                        GB: np.ndarray) -> np.ndarray:
    """Per-step work rate L_j of the identity (row 0 unused)."""
    ctx = traj.ctx
    n, tau = traj.n, traj.tau
    g, dg = ks.g, ks.dg
    zs = ctx.zs
    L = np.zeros(n + 1)
    U = traj.u[1:]
    z_active = not ctx.data.dirichlet.is_zero
    if z_active:
        # Y[k, j] = u_k^T K_B dz_j
        Y = U @ (ctx.K_B @ zs.dz.T)
    for j in range(1, n + 1):
        eff = traj.du[j] - zs.dz[j]
        L[j] = float((ctx.F[j] + ctx.Nvec[j]) @ eff)
        if z_active:
            L[j] += float(traj.d2u[j] @ (ctx.M @ zs.dz[j]))
            L[j] += float(U[j] @ (ctx.K_C @ zs.dz[j]))
            L[j] += g[j - 1] * float((U[j] - U[0]) @ (ctx.K_B @ zs.dz[j]))
            w = tau * dg[j - 1::-1]  # weights dg_{j-k}, k = 1..j
            L[j] += float(w @ Y[1:j + 1, j]) - w.sum() * Y[j, j]
    return L


def total_work(traj: DiscreteTrajectory, data, t_index: int) -> float:
    """Total work at step i in the boundary-integrated form (ten terms)."""
    ctx = traj.ctx
    i = _check_index(traj, t_index)
    tau = traj.tau
    ks = ctx.ks
    zs = ctx.zs
    U = traj.u[1:]
    du = traj.du
    dN = np.diff(ctx.Nvec, axis=0) / tau

    w = 0.0
    for j in range(1, i + 1):
        w += tau * float(ctx.F[j] @ (du[j] - zs.dz[j]))                     # load
        w -= tau * float(dN[j - 1] @ (U[j - 1] - zs.z[j - 1]))              # -dN.(u-z)
        w -= tau * float(du[j - 1] @ (ctx.M @ zs.d2z[j]))                   # -du.ddz
        w += tau * float(U[j] @ (ctx.K_C @ zs.dz[j]))                       # elastic z
        w += tau * ks.g[j - 1] * float((U[j] - U[0]) @ (ctx.K_B @ zs.dz[j]))
        kbz = ctx.K_B @ zs.dz[j]
        conv = tau * sum(ks.dg[j - k] * float((U[k] - U[j]) @ kbz)
                         for k in range(1, j))
        w += tau * conv
    w += float(ctx.Nvec[i] @ (U[i] - zs.z[i]))
    w -= float(ctx.Nvec[0] @ (U[0] - zs.z[0]))
    w += float(du[i] @ (ctx.M @ zs.dz[i]))
    w -= float(ctx.u1 @ (ctx.M @ zs.dz[0]))
    return w


def total_work_convolution_form(traj: DiscreteTrajectory, data, t_index: int) -> float:
    """Total work in the alternative form: the Dirichlet-rate kernel terms
    are rewritten through the undifferentiated convolution (valid when the
    datum has two integrable derivatives)."""
    ctx = traj.ctx
    i = _check_index(traj, t_index)
    tau = traj.tau
    ks = ctx.ks
    zs = ctx.zs
    U = traj.u[1:]
    du = traj.du
    dN = np.diff(ctx.Nvec, axis=0) / tau

    w = 0.0
    for j in range(1, i + 1):
        w += tau * float(ctx.F[j] @ (du[j] - zs.dz[j]))
        w -= tau * float(dN[j - 1] @ (U[j - 1] - zs.z[j - 1]))
        w -= tau * float(du[j - 1] @ (ctx.M @ zs.d2z[j]))
        w += tau * float(U[j] @ (ctx.K_C @ zs.dz[j]))
    w += float(ctx.Nvec[i] @ (U[i] - zs.z[i]))
    w -= float(ctx.Nvec[0] @ (U[0] - zs.z[0]))
    w += float(du[i] @ (ctx.M @ zs.dz[i]))
    w -= float(ctx.u1 @ (ctx.M @ zs.dz[0]))
    # + int_0^t (G(t-r)(eu(r)-eu0), e dz(t)) dr
    kbz_i = ctx.K_B @ zs.dz[i]
    w += tau * sum(ks.g[i - j] * float((U[j] - U[0]) @ kbz_i)
                   for j in range(1, i + 1))
    # - int_0^t int_0^r (G(r-s)(eu(s)-eu0), e ddz(r)) ds dr
    for j in range(1, i + 1):
        kbz = ctx.K_B @ zs.d2z[j]
        w -= tau**2 * sum(ks.g[j - k] * float((U[k] - U[0]) @ kbz)
                          for k in range(1, j + 1))
    return w


def continuous_energy(traj: DiscreteTrajectory, kernel: RegularizedKernel,
                      t_index: int) -> tuple[float, float]:
    """Quadrature of the continuous energy and dissipation at step i.

    Uses the closed-form first and second derivatives of the regularized
    scalar profile (shifted power law or smooth preset) on the scheme's own
    grid, left-endpoint rule for the memory integrals.  Requires the same
    kernel the run was produced with.
    """
    i = _check_index(traj, t_index)
    _check_kernel(traj, kernel)
    ctx = traj.ctx
    tau = traj.tau
    GB = _viscous_gram(traj)
    U = traj.u[1:]

    kin = 0.5 * float(traj.du[i] @ (ctx.M @ traj.du[i]))
    el = 0.5 * float(U[i] @ (ctx.K_C @ U[i]))
    mem = 0.5 * kernel.scalar(i * tau) * float(_qform(GB, i, 0))
    tail = 0.0
    for j in range(i):
        tail -= 0.5 * tau * kernel.scalar_d1((i - j) * tau) * float(_qform(GB, i, j))
    energy = kin + el + mem + tail

    decay = 0.0
    convex = 0.0
    for j in range(i):
        decay -= 0.5 * tau * kernel.scalar_d1(j * tau) * float(_qform(GB, j, 0))
        for k in range(j):
            convex += 0.5 * tau**2 * kernel.scalar_d2((j - k) * tau) * float(_qform(GB, j, k))
    return energy, decay + convex


def continuous_total_work(traj: DiscreteTrajectory, kernel: RegularizedKernel,
                          data, t_index: int) -> float:
    """Continuous-level total work (convolution form) with the closed-form
    kernel, aligned to the same grid quadrature as :func:`continuous_energy`."""
    i = _check_index(traj, t_index)
    _check_kernel(traj, kernel)
    ctx = traj.ctx
    tau = traj.tau
    zs = ctx.zs
    U = traj.u[1:]
    du = traj.du
    dN = np.diff(ctx.Nvec, axis=0) / tau

    w = 0.0
    for j in range(1, i + 1):
        w += tau * float(ctx.F[j] @ (du[j] - zs.dz[j]))
        w -= tau * float(dN[j - 1] @ (U[j - 1] - zs.z[j - 1]))
        w -= tau * float(du[j - 1] @ (ctx.M @ zs.d2z[j]))
        w += tau * float(U[j] @ (ctx.K_C @ zs.dz[j]))
    w += float(ctx.Nvec[i] @ (U[i] - zs.z[i]))
    w -= float(ctx.Nvec[0] @ (U[0] - zs.z[0]))
    w += float(du[i] @ (ctx.M @ zs.dz[i]))
    w -= float(ctx.u1 @ (ctx.M @ zs.dz[0]))
    kbz_i = ctx.K_B @ zs.dz[i]
    for j in range(i):
        w += tau * kernel.scalar((i - j) * tau) * float((U[j] - U[0]) @ kbz_i)
    for j in range(1, i + 1):
        kbz = ctx.K_B @ zs.d2z[j]
        for k in range(j):
            w -= tau**2 * kernel.scalar((j - k) * tau) * float((U[k] - U[0]) @ kbz)
    return w


def continuous_margin(traj: DiscreteTrajectory, kernel: RegularizedKernel,
                      data, t_index: int) -> float:
    """Slack of the continuous energy-dissipation inequality at step i."""
    e, d = continuous_energy(traj, kernel, t_index)
    w = continuous_total_work(traj, kernel, data, t_index)
    ctx = traj.ctx
    e0 = 0.5 * float(ctx.u1 @ (ctx.M @ ctx.u1)) + 0.5 * float(ctx.u0 @ (ctx.K_C @ ctx.u0))
    return e0 + w - e - d


def initial_continuity_check(traj: DiscreteTrajectory,
                             window: int = 10) -> tuple[float, float]:
    """Sup over t in [0, window*tau] of the interpolants' distance to the
    initial data: (|u_n(t) - u0|_H, |du_n(t) - u1|_H).  Both interpolants
    are piecewise affine, so the sup is attained at grid nodes."""
    ctx = traj.ctx
    top = min(window, traj.n)
    du_gap = max(traj.norm_H(traj.u_at(j) - ctx.u0) for j in range(top + 1))
    dv_gap = max(traj.norm_H(traj.du[j] - ctx.u1) for j in range(top + 1))
    return du_gap, dv_gap


def _check_index(traj: DiscreteTrajectory, t_index: int) -> int:
    i = int(t_index)
    if not 0 <= i <= traj.n:
        raise ValueError(f"step index {i} outside 0..{traj.n}")
    return i


def _check_kernel(traj: DiscreteTrajectory, kernel: RegularizedKernel) -> None:
    if not isinstance(kernel, RegularizedKernel):
        raise ValueError("continuous energy needs the regularized kernel "
                         "(closed-form derivatives of the shifted profile)")
    ks = traj.ctx.ks
    probe = [0, ks.n // 2, ks.n]
    for j in probe:
        if abs(kernel.scalar(j * ks.tau) - ks.g[j]) > 1e-10 * max(1.0, abs(ks.g[j])):
            raise GridMismatchError("kernel does not match the samples the run used")
