"""Discrete bilinear forms and time-sampled data vectors.

P1 simplices throughout: consistent mass, one-point (exact) stiffness
quadrature, per-element constant strains in Mandel coordinates.  Element
contributions are accumulated in a caller-controlled order (sorted by
element index unless told otherwise) so assembly is bit-reproducible and
the order sensitivity of roundoff can be probed deliberately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .domain import CrackedMesh
from .kernel import check_symmetric_nonnegative
from .presets import FieldSpec

_SQ2 = math.sqrt(2.0)

# 3-point Gauss-Legendre rule on [-1, 1]
_GAUSS3_X = (-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0))
_GAUSS3_W = (5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0)


def voigt_dim(dim: int) -> int:
    return 1 if dim == 1 else 3


def isotropic_tensor(lam: float, mu: float) -> np.ndarray:
    """2D isotropic tensor in Mandel coordinates (xx, yy, sqrt2*xy)."""
    return np.array([[2.0 * mu + lam, lam, 0.0],
                     [lam, 2.0 * mu + lam, 0.0],
                     [0.0, 0.0, 2.0 * mu]])


def scalar_tensor(value: float) -> np.ndarray:
    return np.array([[float(value)]])


@dataclass(frozen=True)
class Material:
    """Elasticity tensor (coercive) and viscosity tensor (nonnegative)."""

    elastic: np.ndarray
    viscous: np.ndarray
    gamma: float = field(init=False)

    def __post_init__(self):
        elastic = np.asarray(self.elastic, dtype=float)
        if not np.allclose(elastic, elastic.T):
            raise ValueError("elasticity tensor must be symmetric")
        gamma = float(np.linalg.eigvalsh(0.5 * (elastic + elastic.T)).min())
        if gamma <= 0.0:
            raise ValueError(f"elasticity tensor must be coercive; min eig {gamma:g}")
        object.__setattr__(self, "elastic", 0.5 * (elastic + elastic.T))
        object.__setattr__(self, "viscous",
                           check_symmetric_nonnegative(self.viscous, "viscous tensor"))
        object.__setattr__(self, "gamma", gamma)
        if self.elastic.shape != self.viscous.shape:
            raise ValueError("elastic and viscous tensors must act on the same space")

    @property
    def vdim(self) -> int:
        return self.elastic.shape[0]


def strain_operator(mesh: CrackedMesh) -> tuple[sp.csr_matrix, np.ndarray]:
    """Global strain map S: nodal dofs -> stacked per-element Mandel strains.

    Returns (S, volumes).  For any tensor C, the stiffness is
    S^T diag(vol_e C) S; strains themselves feed the energy audits.
    """
    vd = voigt_dim(mesh.dim)
    vols = mesh.element_volumes()
    n_el = len(mesh.elements)
    rows, cols, vals = [], [], []
    if mesh.dim == 1:
        for e, (a, b) in enumerate(mesh.elements):
            h = vols[e]
            rows += [e, e]
            cols += [int(a), int(b)]
            vals += [-1.0 / h, 1.0 / h]
    else:
        pts = mesh.nodes[mesh.elements]
        for e in range(n_el):
            p = pts[e]
            b = np.array([p[1, 1] - p[2, 1], p[2, 1] - p[0, 1], p[0, 1] - p[1, 1]])
            c = np.array([p[2, 0] - p[1, 0], p[0, 0] - p[2, 0], p[1, 0] - p[0, 0]])
            two_a = ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
                     - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))  # signed
            inv2a = 1.0 / two_a
            for i in range(3):
                nx = int(mesh.elements[e, i]) * 2
                # row e*3 + 0: eps_xx; +1: eps_yy; +2: sqrt2 * eps_xy
                rows += [3 * e, 3 * e + 1, 3 * e + 2, 3 * e + 2]
                cols += [nx, nx + 1, nx, nx + 1]
                vals += [b[i] * inv2a, c[i] * inv2a,
                         c[i] * inv2a / _SQ2, b[i] * inv2a / _SQ2]
    S = sp.csr_matrix((vals, (rows, cols)), shape=(n_el * vd, mesh.n_dofs))
    return S, vols


def mass_matrix(mesh: CrackedMesh, space=None, element_order=None) -> sp.csr_matrix:
    """Consistent P1 mass matrix (block diagonal over components)."""
    m = mesh.ncomp
    vols = mesh.element_volumes()
    order = np.arange(len(mesh.elements)) if element_order is None else element_order
    nv = mesh.dim + 1
    local = (np.ones((nv, nv)) + np.eye(nv)) / (6.0 if mesh.dim == 1 else 12.0)
    rows, cols, vals = [], [], []
    for e in order:
        conn = mesh.elements[e]
        w = vols[e] * local
        for i in range(nv):
            for j in range(nv):
                for c in range(m):
                    rows.append(int(conn[i]) * m + c)
                    cols.append(int(conn[j]) * m + c)
                    vals.append(w[i, j])
    M = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    M = _symmetrize(M)
    if space is not None:
        M = space.prolongation.T @ M @ space.prolongation
    return M


def stiffness_matrix(mesh: CrackedMesh, tensor: np.ndarray, space=None,
                     element_order=None) -> sp.csr_matrix:
    """Stiffness for a constant Mandel-coordinate tensor: S^T (vol C) S."""
    tensor = np.asarray(tensor, dtype=float)
    vd = voigt_dim(mesh.dim)
    if tensor.shape != (vd, vd):
        raise ValueError(f"tensor must be {vd}x{vd} for dim {mesh.dim}, got {tensor.shape}")
    m = mesh.ncomp
    vols = mesh.element_volumes()
    order = np.arange(len(mesh.elements)) if element_order is None else element_order
    nv = mesh.dim + 1
    ndl = nv * m
    S, _ = strain_operator(mesh)
    rows, cols, vals = [], [], []
    for e in order:
        conn = mesh.elements[e]
        dofs = np.array([int(conn[i]) * m + c for i in range(nv) for c in range(m)])
        Be = np.asarray(S[e * vd:(e + 1) * vd, dofs].todense())
        Ke = vols[e] * Be.T @ tensor @ Be
        for a in range(ndl):
            for b in range(ndl):
                rows.append(dofs[a])
                cols.append(dofs[b])
                vals.append(Ke[a, b])
    K = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    K = _symmetrize(K)
    if space is not None:
        K = space.prolongation.T @ K @ space.prolongation
    return K


def _symmetrize(A: sp.csr_matrix) -> sp.csr_matrix:
    # assembly is symmetric up to roundoff; make it exact
    return (A + A.T) * 0.5


def load_vector(mesh: CrackedMesh, body_force: FieldSpec, j: int, tau: float,
                mass: sp.csr_matrix | None = None, space=None) -> np.ndarray:
    """Nodal load of the body force time-averaged over ((j-1) tau, j tau).

    The average uses 3-point Gauss quadrature (exact through t^5), tested
    against P1 basis functions via the consistent mass matrix.
    """
    if j < 1:
        raise ValueError(f"load average needs a step index j >= 1, got {j}")
    if body_force.is_zero:
        out = np.zeros(mesh.n_dofs)
    else:
        mid = (j - 0.5) * tau
        favg = np.zeros(mesh.n_dofs)
        for x, w in zip(_GAUSS3_X, _GAUSS3_W):
            favg += 0.5 * w * body_force.eval(mesh.nodes, mesh.ncomp, mid + 0.5 * tau * x)
        M = mass_matrix(mesh) if mass is None else mass
        out = M @ favg
    return space.restrict(out) if space is not None else out


def neumann_vector(mesh: CrackedMesh, traction: FieldSpec, t: float,
                   space=None) -> np.ndarray:
    """Boundary load of the traction at time t on Neumann facets.

    2D facets get the consistent edge rule for nodally interpolated data;
    the 1D 'boundary integral' degenerates to point evaluation.
    """
    out = np.zeros(mesh.n_dofs)
    facets = mesh.neumann_facets()
    if len(facets) == 0 or traction.is_zero:
        return space.restrict(out) if space is not None else out
    values = traction.eval(mesh.nodes, mesh.ncomp, t).reshape(mesh.n_nodes, mesh.ncomp)
    m = mesh.ncomp
    if mesh.dim == 1:
        for (node,) in facets:
            out[node * m:(node + 1) * m] += values[node]
    else:
        for a, b in facets:
            L = float(np.linalg.norm(mesh.nodes[b] - mesh.nodes[a]))
            for c in range(m):
                out[a * m + c] += L / 6.0 * (2.0 * values[a, c] + values[b, c])
                out[b * m + c] += L / 6.0 * (values[a, c] + 2.0 * values[b, c])
    return space.restrict(out) if space is not None else out


@dataclass
class DirichletSamples:
    """Grid samples z_j with difference quotients; dz[0] is the exact
    initial velocity of the datum, d2z[0] is unused."""

    z: np.ndarray
    dz: np.ndarray
    d2z: np.ndarray


def dirichlet_samples(mesh: CrackedMesh, datum: FieldSpec, n: int,
                      t_final: float) -> DirichletSamples:
    tau = t_final / n
    z = np.stack([datum.eval(mesh.nodes, mesh.ncomp, j * tau) for j in range(n + 1)])
    dz = np.zeros_like(z)
    dz[0] = datum.eval(mesh.nodes, mesh.ncomp, 0.0, deriv=1)
    dz[1:] = np.diff(z, axis=0) / tau
    d2z = np.zeros_like(z)
    d2z[1:] = np.diff(dz, axis=0) / tau
    return DirichletSamples(z=z, dz=dz, d2z=d2z)


@dataclass
class ProblemData:
    """Loads, boundary data, and initial fields of one problem instance."""

    body_force: FieldSpec = FieldSpec()
    neumann: FieldSpec = FieldSpec()
    dirichlet: FieldSpec = FieldSpec()
    initial_displacement: FieldSpec = FieldSpec()
    initial_velocity: FieldSpec = FieldSpec()

    def initial_fields(self, mesh: CrackedMesh) -> tuple[np.ndarray, np.ndarray]:
        """Nodal (u0, u1); validates the u0 - z(0) Dirichlet compatibility."""
        u0 = self.initial_displacement.eval(mesh.nodes, mesh.ncomp, 0.0)
        u1 = self.initial_velocity.eval(mesh.nodes, mesh.ncomp, 0.0)
        z0 = self.dirichlet.eval(mesh.nodes, mesh.ncomp, 0.0)
        dd = mesh.dirichlet_dofs()
        if len(dd):
            gap = np.abs(u0[dd] - z0[dd]).max()
            scale = max(1.0, float(np.abs(u0).max()), float(np.abs(z0).max()))
            if gap > 1e-10 * scale:
                raise ValueError(
                    f"initial displacement differs from the Dirichlet datum at t=0 "
                    f"by {gap:g} on the Dirichlet boundary")
        return u0, u1
