"""Cracked finite-element meshes, release schedules, constrained spaces.

A crack is represented by duplicated node pairs along interior mesh facets.
The mesh stores both copies; which copies are tied together at a given time
is decided by the release schedule, producing a growing family of function
spaces without remeshing.  Supported geometries: an interval (scalar field,
no crack) and a structured rectangle of P1 triangles with an optional
straight, axis-aligned crack line split into named segments.

Conventions
-----------
* nodes are (N, dim) coordinates; fields carry ``ncomp`` components per
  node (1 in 1D, dim in 2D) in node-major dof order ``node * ncomp + c``,
* a node pair is tied while *any* crack segment adjacent to it is still
  unreleased; a segment whose release time equals j*tau is released AT
  step j,
* crack facets must be strictly interior: paths touching the outer
  boundary are rejected at build time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import MeshConformityError

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

NEVER = math.inf

_GRID_TOL = 1e-9


@dataclass(frozen=True)
class CrackPair:
    """A duplicated node: plus/minus copies and the crack segments at it."""

    plus: int
    minus: int
    segment: str
    adjacent: tuple[str, ...]


@dataclass
class CrackedMesh:
    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    boundary_tags: list[str]
    crack_pairs: list[CrackPair] = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.boundary_facets = np.asarray(self.boundary_facets, dtype=np.int64)
        if self.dim not in (1, 2):
            raise MeshConformityError(f"supported dimensions are 1 and 2, got {self.dim}")
        for pair in self.crack_pairs:
            if not np.allclose(self.nodes[pair.plus], self.nodes[pair.minus]):
                raise MeshConformityError(
                    f"duplicated pair ({pair.plus}, {pair.minus}) has mismatched coordinates")

    @property
    def ncomp(self) -> int:
        return 1 if self.dim == 1 else self.dim

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.ncomp

    @property
    def segment_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for p in self.crack_pairs:
            for s in p.adjacent:
                seen.setdefault(s, None)
        return tuple(seen)

    def dirichlet_nodes(self) -> np.ndarray:
        picked = [self.boundary_facets[i]
                  for i, tag in enumerate(self.boundary_tags) if tag == DIRICHLET]
        if not picked:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate([np.atleast_1d(f) for f in picked]))

    def dirichlet_dofs(self) -> np.ndarray:
        nodes = self.dirichlet_nodes()
        m = self.ncomp
        return np.sort(np.concatenate([nodes * m + c for c in range(m)])) if len(nodes) else nodes

    def neumann_facets(self) -> np.ndarray:
        picked = [self.boundary_facets[i]
                  for i, tag in enumerate(self.boundary_tags) if tag == NEUMANN]
        if not picked:
            return np.empty((0, self.dim), dtype=np.int64)
        return np.vstack([np.atleast_1d(f) for f in picked])

    def element_volumes(self) -> np.ndarray:
        if self.dim == 1:
            return np.abs(self.nodes[self.elements[:, 1], 0] - self.nodes[self.elements[:, 0], 0])
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_interval_mesh(length: float, n_elements: int,
                        dirichlet: tuple[str, ...] = ("left", "right")) -> CrackedMesh:
    """Uniform mesh of [0, length]; endpoints tagged per ``dirichlet``."""
    if not length > 0.0 or n_elements < 1:
        raise MeshConformityError("interval needs positive length and at least one element")
    nodes = np.linspace(0.0, length, n_elements + 1)[:, None]
    elements = np.column_stack([np.arange(n_elements), np.arange(1, n_elements + 1)])
    facets = np.array([[0], [n_elements]], dtype=np.int64)
    tags = [DIRICHLET if "left" in dirichlet else NEUMANN,
            DIRICHLET if "right" in dirichlet else NEUMANN]
    return CrackedMesh(1, nodes, elements, facets, tags)


@dataclass(frozen=True)
class CrackLine:
    """Straight crack on the mesh line {axis = value}, spanning [start, end].

    ``segments`` lists (id, end-coordinate) pairs splitting the span into
    atomically-releasing pieces; the last entry must end at ``end``.
    """

    axis: str
    value: float
    start: float
    end: float
    segments: tuple[tuple[str, float], ...] = ()

    def segment_table(self) -> tuple[tuple[str, float, float], ...]:
        segs = self.segments if self.segments else (("crack", self.end),)
        lo = self.start
        out = []
        for name, hi in segs:
            if hi <= lo:
                raise MeshConformityError(f"crack segment '{name}' has empty span")
            out.append((name, lo, hi))
            lo = hi
        if abs(lo - self.end) > _GRID_TOL:
            raise MeshConformityError("crack segments must cover the span exactly")
        return tuple(out)


def _grid_index(coord: float, h: float, count: int, what: str) -> int:
    idx = coord / h
    if abs(idx - round(idx)) > _GRID_TOL * max(1.0, count):
        raise MeshConformityError(f"{what} = {coord} does not lie on a mesh line")
    return int(round(idx))


def build_rectangle_mesh(size: tuple[float, float], cells: tuple[int, int],
                         dirichlet_sides: tuple[str, ...] = ("left", "right"),
                         crack: CrackLine | None = None) -> CrackedMesh:
    """Structured triangulation of [0, Lx] x [0, Ly] with optional crack.

    Each cell splits into two triangles along the lower-left/upper-right
    diagonal.  Node ordering is row-major on the grid with crack duplicates
    appended in path order, so the construction is deterministic.
    """
    lx, ly = float(size[0]), float(size[1])
    nx, ny = int(cells[0]), int(cells[1])
    if lx <= 0 or ly <= 0 or nx < 1 or ny < 1:
        raise MeshConformityError("rectangle needs positive size and cell counts")
    hx, hy = lx / nx, ly / ny

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(ix, iy):
        return iy * (nx + 1) + ix

    elements = []
    for iy in range(ny):
        for ix in range(nx):
            v00, v10 = vid(ix, iy), vid(ix + 1, iy)
            v01, v11 = vid(ix, iy + 1), vid(ix + 1, iy + 1)
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))
    elements = np.array(elements, dtype=np.int64)

    facets, tags = [], []
    sides = {
        "bottom": [(vid(ix, 0), vid(ix + 1, 0)) for ix in range(nx)],
        "top": [(vid(ix, ny), vid(ix + 1, ny)) for ix in range(nx)],
        "left": [(vid(0, iy), vid(0, iy + 1)) for iy in range(ny)],
        "right": [(vid(nx, iy), vid(nx, iy + 1)) for iy in range(ny)],
    }
    for side, fs in sides.items():
        tag = DIRICHLET if side in dirichlet_sides else NEUMANN
        facets.extend(fs)
        tags.extend([tag] * len(fs))
    facets = np.array(facets, dtype=np.int64)

    crack_pairs: list[CrackPair] = []
    if crack is not None:
        nodes, elements, crack_pairs = _insert_crack(
            nodes, elements, crack, lx, ly, hx, hy, nx, ny, vid)

    return CrackedMesh(2, nodes, elements, facets, tags, crack_pairs)


def _insert_crack(nodes, elements, crack: CrackLine, lx, ly, hx, hy, nx, ny, vid):
    if crack.axis not in ("x", "y"):
        raise MeshConformityError(f"crack axis must be 'x' or 'y', got {crack.axis!r}")
    # work in (along, across) coordinates: the crack runs along one axis at
    # a fixed grid line of the other
    if crack.axis == "y":
        h_along, h_across, n_along, l_across = hx, hy, nx, ly
    else:
        h_along, h_across, n_along, l_across = hy, hx, ny, lx

    if not (_GRID_TOL < crack.value < l_across - _GRID_TOL):
        raise MeshConformityError("crack line must be interior to the domain")
    line = _grid_index(crack.value, h_across, ny if crack.axis == "y" else nx, "crack line")
    i0 = _grid_index(crack.start, h_along, n_along, "crack start")
    i1 = _grid_index(crack.end, h_along, n_along, "crack end")
    if i1 <= i0:
        raise MeshConformityError("crack span must have positive length")
    if i0 <= 0 or i1 >= n_along:
        raise MeshConformityError("crack must not touch the domain boundary")

    table = crack.segment_table()

    def segment_of(mid_coord):
        for name, lo, hi in table:
            if lo - _GRID_TOL <= mid_coord <= hi + _GRID_TOL:
                return name
        raise MeshConformityError(f"crack facet at {mid_coord} outside every segment")

    def path_vid(i):
        return vid(i, line) if crack.axis == "y" else vid(line, i)

    # facet i joins path vertices i and i+1; the segment owning its midpoint
    facet_segment = {i: segment_of((i + 0.5) * h_along) for i in range(i0, i1)}

    node_list = [nodes]
    elements = elements.copy()
    crack_pairs = []
    next_id = nodes.shape[0]
    axis_across = 1 if crack.axis == "y" else 0
    centroids = nodes[elements].mean(axis=1)

    for i in range(i0 + 1, i1):  # strictly interior path vertices
        v = path_vid(i)
        adjacent = tuple(dict.fromkeys((facet_segment[i - 1], facet_segment[i])))
        plus = next_id
        next_id += 1
        node_list.append(nodes[v][None, :])
        touching = np.nonzero((elements == v).any(axis=1))[0]
        for e in touching:
            if centroids[e, axis_across] > crack.value:
                elements[e][elements[e] == v] = plus
        crack_pairs.append(CrackPair(plus=plus, minus=v,
                                     segment=adjacent[0], adjacent=adjacent))
    return np.vstack(node_list), elements, crack_pairs


def build_mesh(spec: dict) -> CrackedMesh:
    """Build a mesh from a geometry description (the CLI config block)."""
    kind = spec.get("kind")
    if kind == "interval":
        return build_interval_mesh(spec["length"], spec["elements"],
                                   tuple(spec.get("dirichlet", ("left", "right"))))
    if kind == "rectangle":
        crack = None
        if spec.get("crack") is not None:
            c = spec["crack"]
            segments = tuple((s["id"], float(s["to"])) for s in c.get("segments", []))
            crack = CrackLine(axis=c["axis"], value=float(c["value"]),
                              start=float(c["from"]), end=float(c["to"]),
                              segments=segments)
        return build_rectangle_mesh(tuple(spec["size"]), tuple(spec["cells"]),
                                    tuple(spec.get("dirichlet", ("left", "right"))),
                                    crack)
    if kind == "file":
        return read_mesh_text(spec["path"])
    raise MeshConformityError(f"unknown geometry kind {kind!r}")


@dataclass(frozen=True)
class CrackSchedule:
    """Release times per crack segment; ``NEVER`` keeps a segment glued.

    ``timeline``, when present, is an explicit list of (time, active-set)
    events used instead of the thresholds; it exists so that monotonicity
    (the H3 check) has something it can actually falsify.
    """

    release_time: dict[str, float] = field(default_factory=dict)
    timeline: tuple[tuple[float, frozenset], ...] | None = None

    @classmethod
    def fixed(cls, segment_ids=(), released: bool = False) -> "CrackSchedule":
        t = 0.0 if released else NEVER
        return cls({s: t for s in segment_ids})

    def active_segments(self, t: float) -> frozenset:
        if self.timeline is not None:
            active: frozenset = frozenset()
            for when, segs in self.timeline:
                if when <= t:
                    active = segs
            return active
        return frozenset(s for s, rt in self.release_time.items() if rt <= t)

    def release_events(self, t_final: float) -> tuple[float, ...]:
        """Strictly positive release times within (0, t_final]."""
        if self.timeline is not None:
            return tuple(sorted({w for w, _ in self.timeline if 0.0 < w <= t_final}))
        return tuple(sorted({rt for rt in self.release_time.values()
                             if 0.0 < rt <= t_final}))

    def is_fixed(self, t_final: float) -> bool:
        return len(self.release_events(t_final)) == 0


def check_h3(schedule: CrackSchedule) -> bool:
    """Monotonicity of the induced crack family (always true for thresholds)."""
    if schedule.timeline is None:
        return True
    prev: frozenset = frozenset()
    for when, segs in sorted(schedule.timeline, key=lambda e: e[0]):
        if not prev <= segs:
            return False
        prev = segs
    return True


@dataclass(frozen=True)
class ConstrainedSpace:
    """Constraint data of the trial/test space at one time step.

    ``prolongation`` maps free-dof vectors into full nodal vectors: tied
    minus-copies follow their plus partner, Dirichlet dofs are zero.
    """

    time_index: int
    tie_constraints: tuple[tuple[int, int], ...]
    dirichlet_dofs: np.ndarray
    free_dofs: np.ndarray
    prolongation: sp.csr_matrix

    @property
    def n_free(self) -> int:
        return len(self.free_dofs)

    def restrict(self, v: np.ndarray) -> np.ndarray:
        return self.prolongation.T @ v

    def extend(self, w: np.ndarray, lift: np.ndarray | None = None) -> np.ndarray:
        u = self.prolongation @ w
        if lift is not None:
            u = u + lift
        return u

    def contains(self, v: np.ndarray, tol: float = 1e-12) -> bool:
        """Whether a full nodal vector satisfies the space's constraints."""
        scale = max(1.0, float(np.abs(v).max()))
        if len(self.dirichlet_dofs) and np.abs(v[self.dirichlet_dofs]).max() > tol * scale:
            return False
        for plus, minus in self.tie_constraints:
            if abs(v[plus] - v[minus]) > tol * scale:
                return False
        return True


def space_at(mesh: CrackedMesh, schedule: CrackSchedule, j: int, tau: float) -> ConstrainedSpace:
    """Constrained space at step j (time j*tau).

    A pair stays tied while any of its adjacent segments is unreleased, so
    the family of spaces grows exactly when segments release.
    """
    t = j * tau
    active = schedule.active_segments(t)
    m = mesh.ncomp
    glued_nodes = [(p.plus, p.minus) for p in mesh.crack_pairs
                   if any(s not in active for s in p.adjacent)]

    dirichlet = mesh.dirichlet_dofs()
    is_dirichlet = np.zeros(mesh.n_dofs, dtype=bool)
    is_dirichlet[dirichlet] = True

    slave_of = {}
    tie_dofs = []
    for plus, minus in glued_nodes:
        if is_dirichlet[plus * m] or is_dirichlet[minus * m]:
            raise MeshConformityError("crack pairs may not carry Dirichlet dofs")
        dofs_p = tuple(plus * m + c for c in range(m))
        dofs_m = tuple(minus * m + c for c in range(m))
        tie_dofs.append((dofs_p, dofs_m))
        for dp, dm in zip(dofs_p, dofs_m):
            slave_of[dm] = dp

    free = np.array([d for d in range(mesh.n_dofs)
                     if not is_dirichlet[d] and d not in slave_of], dtype=np.int64)
    col = {int(d): i for i, d in enumerate(free)}

    rows = list(free)
    cols = [col[int(d)] for d in free]
    for dm, dp in slave_of.items():
        rows.append(dm)
        cols.append(col[dp])
    data = np.ones(len(rows))
    P = sp.csr_matrix((data, (rows, cols)), shape=(mesh.n_dofs, len(free)))

    ties = tuple((dp, dm) for dofs_p, dofs_m in tie_dofs
                 for dp, dm in zip(dofs_p, dofs_m))
    return ConstrainedSpace(time_index=j, tie_constraints=ties,
                            dirichlet_dofs=dirichlet, free_dofs=free, prolongation=P)


def constraint_signature(mesh: CrackedMesh, schedule: CrackSchedule,
                         j: int, tau: float) -> frozenset:
    """Hashable identity of the constraint set at step j (for factor reuse)."""
    active = schedule.active_segments(j * tau)
    return frozenset((p.plus, p.minus) for p in mesh.crack_pairs
                     if any(s not in active for s in p.adjacent))


def write_mesh_text(mesh: CrackedMesh, path) -> None:
    """Plain-text mesh container: nodes, elements, tagged boundary facets,
    crack pairs with their segment annotations."""
    with open(path, "w") as fh:
        fh.write(f"fkvsim-mesh dim {mesh.dim}\n")
        fh.write(f"nodes {mesh.n_nodes}\n")
        for x in mesh.nodes:
            fh.write(" ".join(f"{v:.17g}" for v in x) + "\n")
        fh.write(f"elements {len(mesh.elements)}\n")
        for e in mesh.elements:
            fh.write(" ".join(str(int(v)) for v in e) + "\n")
        fh.write(f"boundary {len(mesh.boundary_facets)}\n")
        for f, tag in zip(mesh.boundary_facets, mesh.boundary_tags):
            fh.write(" ".join(str(int(v)) for v in np.atleast_1d(f)) + f" {tag}\n")
        fh.write(f"crack_pairs {len(mesh.crack_pairs)}\n")
        for p in mesh.crack_pairs:
            fh.write(f"{p.plus} {p.minus} {p.segment} {','.join(p.adjacent)}\n")


def read_mesh_text(path) -> CrackedMesh:
    with open(path) as fh:
        tokens = fh.read().split("\n")
    it = iter(t for t in tokens if t.strip())
    head = next(it).split()
    if head[0] != "fkvsim-mesh":
        raise MeshConformityError(f"{path} is not a mesh file")
    dim = int(head[2])
    n = int(next(it).split()[1])
    nodes = np.array([[float(v) for v in next(it).split()] for _ in range(n)])
    ne = int(next(it).split()[1])
    elements = np.array([[int(v) for v in next(it).split()] for _ in range(ne)], dtype=np.int64)
    nf = int(next(it).split()[1])
    facets, tags = [], []
    for _ in range(nf):
        parts = next(it).split()
        facets.append([int(v) for v in parts[:-1]])
        tags.append(parts[-1])
    npairs = int(next(it).split()[1])
    pairs = []
    for _ in range(npairs):
        parts = next(it).split()
        pairs.append(CrackPair(plus=int(parts[0]), minus=int(parts[1]),
                               segment=parts[2], adjacent=tuple(parts[3].split(","))))
    return CrackedMesh(dim, nodes, np.array(elements), np.array(facets, dtype=np.int64),
                       tags, pairs)
