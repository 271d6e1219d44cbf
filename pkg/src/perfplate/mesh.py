"""Structured triangular meshes for the truncated cell and the macro domain.

Meshes are built from a tensor-product template: every geometric breakpoint
(slit corners, wall faces, the breakpoints of J, the mid-line) is a grid
line, each rectangle of the grid is either dropped (inside the wall) or split
into two right triangles.  Diagonals are mirrored across Y = 0 (cell) and
across the mid-line (macro) so the meshes are reflection symmetric.

Periodicity is not built into the coordinates; it is recorded as a
slave -> master vertex map and resolved by :class:`DofMap`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import CellGeometry, MacroDomain

__all__ = [
    "Tag",
    "TriMesh",
    "DofMap",
    "MeshSizeError",
    "DegenerateGeometry",
    "mesh_cell",
    "mesh_macro",
    "mesh_tensor",
    "refine",
    "build_dofmap",
    "subdivide",
    "vertex_correspondence",
]

AREA_FLOOR = 1e-14
GRADING_RATIO = 0.5


class MeshSizeError(ValueError):
    pass


class DegenerateGeometry(ValueError):
    pass


class Tag(enum.IntEnum):
    WALL = 0
    TRUNCATION_TOP = 1
    TRUNCATION_BOTTOM = 2
    PERIODIC_MASTER = 3
    PERIODIC_SLAVE = 4
    OUTER_NEUMANN = 5
    GAMMA_PLUS = 6
    GAMMA_MINUS = 7


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    periodic_map: np.ndarray  # rows (slave, master)
    period: float
    gamma_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    kind: str = "generic"
    # mesh lines of the tensor template (None after non-structured operations)
    x_lines: np.ndarray | None = None
    y_lines: np.ndarray | None = None

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges", "edge_tags", "periodic_map", "gamma_pairs"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(self.signed_areas().sum())

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def max_edge_length(self) -> float:
        e = self.edges()
        d = self.vertices[e[:, 0]] - self.vertices[e[:, 1]]
        return float(np.sqrt((d**2).sum(axis=1)).max())

    def edges_with_tag(self, tag: Tag) -> np.ndarray:
        return self.boundary_edges[self.edge_tags == int(tag)]

    def vertices_with_tag(self, tag: Tag) -> np.ndarray:
        return np.unique(self.edges_with_tag(tag).ravel())

    def check(self, area_floor: float = AREA_FLOOR):
        """Assert orientation, conformity and tagging invariants."""
        if np.any(self.signed_areas() < area_floor):
            raise AssertionError("triangle with non-positive or tiny area")
        t = self.triangles
        e = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise AssertionError("edge shared by more than two triangles")
        boundary = uniq[counts == 1]
        tagged = np.unique(np.sort(self.boundary_edges, axis=1), axis=0)
        if len(tagged) != len(self.boundary_edges):
            raise AssertionError("boundary edge tagged twice")
        if not np.array_equal(boundary, tagged):
            raise AssertionError("boundary edges and tagged edges differ")
        if len(self.periodic_map):
            s, m = self.periodic_map.T
            vs, vm = self.vertices[s], self.vertices[m]
            if not np.allclose(vs[:, 1], vm[:, 1], atol=0, rtol=0):
                raise AssertionError("periodic pair with different heights")
            if not np.allclose(vs[:, 0] - vm[:, 0], self.period, atol=1e-12):
                raise AssertionError("periodic pair not separated by the period")
            if len(np.unique(s)) != len(s):
                raise AssertionError("periodic map not injective")
        if len(self.gamma_pairs):
            p, q = self.gamma_pairs.T
            if not np.array_equal(self.vertices[p], self.vertices[q]) or np.any(p == q):
                raise AssertionError("mid-line copies must coincide with distinct indices")
        return self

    def n_components(self) -> int:
        """Connected components after periodic identification."""
        rep = np.arange(self.n_vertices)
        if len(self.periodic_map):
            rep[self.periodic_map[:, 0]] = self.periodic_map[:, 1]
        t = rep[self.triangles]
        rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
        cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
        g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices,) * 2)
        used = np.unique(t)
        _, labels = connected_components(g, directed=False)
        return len(np.unique(labels[used]))

    def triangle_side(self) -> np.ndarray:
        """+1 for triangles above the mid-line, -1 below (macro meshes only)."""
        if self.kind != "macro":
            raise ValueError("triangle_side is defined for macro meshes")
        cy = self.vertices[self.triangles, 1].mean(axis=1)
        return np.where(cy > self.gamma_y, 1, -1)

    @property
    def gamma_y(self) -> float:
        if not len(self.gamma_pairs):
            raise ValueError("mesh has no mid-line")
        return float(self.vertices[self.gamma_pairs[0, 0], 1])


# ---------------------------------------------------------------------------
# tensor template


def subdivide(c0: float, c1: float, h: float, grade_lo=False, grade_hi=False, depth=0) -> np.ndarray:
    """Points of [c0, c1] with spacing <= h, optionally graded toward either end.

    Grading replaces the end element by a geometric sequence with ratio 1/2
    of length ``depth``.  When (c1 - c0)/h is an integer the spacing is
    exactly h, so subdivisions of nested intervals are nested.
    """
    n = max(1, math.ceil((c1 - c0) / h - 1e-9))
    pts = list(np.linspace(c0, c1, n + 1))
    d = (c1 - c0) / n
    if depth > 0:
        if grade_lo:
            pts += [c0 + d * GRADING_RATIO**k for k in range(1, depth + 1)]
        if grade_hi:
            pts += [c1 - d * GRADING_RATIO**k for k in range(1, depth + 1)]
    return _unique_sorted(pts)


def _unique_sorted(values, tol=1e-12):
    v = np.sort(np.asarray(values, dtype=float))
    keep = np.concatenate([[True], np.diff(v) > tol])
    return v[keep]


def _lines(breaks, h, corners=(), depth=0):
    breaks = _unique_sorted(breaks)
    corners = np.asarray(list(corners), dtype=float)

    def is_corner(c):
        return corners.size > 0 and np.any(np.abs(corners - c) < 1e-12)

    pieces = [
        subdivide(c0, c1, h, is_corner(c0), is_corner(c1), depth)
        for c0, c1 in zip(breaks[:-1], breaks[1:])
    ]
    return _unique_sorted(np.concatenate(pieces))


def mesh_tensor(xs, ys, solid=None, mirror_y=0.0, period=None, kind="generic", classify=None):
    """Triangulate the tensor grid xs x ys, dropping rectangles where solid(xc, yc).

    Rectangles centred above ``mirror_y`` are split along the (lower-left,
    upper-right) diagonal, those below along the other one.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx = len(xs)
    XC = 0.5 * (xs[:-1] + xs[1:])
    YC = 0.5 * (ys[:-1] + ys[1:])
    xc, yc = np.meshgrid(XC, YC, indexing="xy")  # shape (ny-1, nx-1)
    keep = np.ones_like(xc, dtype=bool)
    if solid is not None:
        keep &= ~solid(xc, yc)
    jj, ii = np.nonzero(keep)  # jj: y index, ii: x index
    node = lambda i, j: j * nx + i
    v00, v10 = node(ii, jj), node(ii + 1, jj)
    v01, v11 = node(ii, jj + 1), node(ii + 1, jj + 1)
    up = YC[jj] > mirror_y
    # "/" diagonal above, "\" diagonal below
    t1 = np.where(up[:, None], np.column_stack([v00, v10, v11]), np.column_stack([v00, v10, v01]))
    t2 = np.where(up[:, None], np.column_stack([v00, v11, v01]), np.column_stack([v10, v11, v01]))
    tris = np.empty((2 * len(ii), 3), dtype=np.int64)
    tris[0::2] = t1
    tris[1::2] = t2
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    used = np.unique(tris)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return verts[used], remap[tris]


def coarsen_indices(n: int, level: int) -> np.ndarray:
    """Indices of every 2**level-th point of n points, always keeping both ends."""
    idx = np.arange(n)
    for _ in range(level):
        keep = idx[::2]
        if keep[-1] != idx[-1]:
            keep = np.append(keep, idx[-1])
        idx = keep
    return idx


def mesh_graded_rows(xs, ys, levels, mirror_y=0.0):
    """Triangulate the rectangle xs x ys with a per-line x resolution.

    Line j carries the points ``xs[coarsen_indices(len(xs), levels[j])]``.
    Neighbouring lines may differ by one level; such rows are closed with
    three triangles per coarse interval so the mesh stays conforming.
    Same-level rows use the diagonal convention of mesh_tensor.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    levels = np.asarray(levels, dtype=np.int64)
    if np.any(np.abs(np.diff(levels)) > 1):
        raise ValueError("neighbouring lines may differ by at most one level")
    sets = {lv: coarsen_indices(len(xs), lv) for lv in np.unique(levels)}
    offsets = np.concatenate([[0], np.cumsum([len(sets[lv]) for lv in levels])])
    verts = np.vstack([np.column_stack([xs[sets[lv]], np.full(len(sets[lv]), y)]) for lv, y in zip(levels, ys)])
    tris = []
    for j in range(len(ys) - 1):
        lo, hi = levels[j], levels[j + 1]
        up = 0.5 * (ys[j] + ys[j + 1]) > mirror_y
        if lo == hi:
            n = len(sets[lo]) - 1
            i = np.arange(n)
            v00, v10 = offsets[j] + i, offsets[j] + i + 1
            v01, v11 = offsets[j + 1] + i, offsets[j + 1] + i + 1
            if up:
                tris += [np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])]
            else:
                tris += [np.column_stack([v00, v10, v01]), np.column_stack([v10, v11, v01])]
            continue
        fine_j, coarse_j = (j, j + 1) if lo < hi else (j + 1, j)
        fine, coarse = sets[levels[fine_j]], sets[levels[coarse_j]]
        pos = np.searchsorted(fine, coarse)  # coarse point k sits at fine position pos[k]
        for k in range(len(coarse) - 1):
            fa, fb = offsets[fine_j] + pos[k], offsets[fine_j] + pos[k + 1]
            ca, cb = offsets[coarse_j] + k, offsets[coarse_j] + k + 1
            if pos[k + 1] - pos[k] == 1:
                tris.append(np.array([[fa, fb, cb], [fa, cb, ca]]))
            else:
                m = fa + 1
                tris.append(np.array([[fa, m, ca], [m, fb, cb], [m, cb, ca]]))
    tris = np.vstack(tris).astype(np.int64)
    # orient counter-clockwise
    p = verts[tris]
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return verts, tris


def _boundary_edges(triangles):
    t = triangles
    e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    once = counts[inv] == 1
    # keep the orientation inherited from the triangle (domain on the left)
    return e[once]


def _periodic_pairs(vertices, period, side_key=None, tol=1e-12):
    x = vertices[:, 0]
    lo = np.nonzero(np.abs(x - x.min()) < tol)[0]
    hi = np.nonzero(np.abs(x - x.min() - period) < tol)[0]
    key = lambda v: (vertices[v, 1], 0 if side_key is None else side_key[v])
    masters = {key(v): v for v in lo}
    pairs = []
    for s in hi:
        m = masters.get(key(s))
        if m is None:
            raise DegenerateGeometry(f"no periodic partner for vertex at {vertices[s]}")
        pairs.append((s, m))
    pairs.sort()
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


# ---------------------------------------------------------------------------
# cell mesh


def cell_lines(cell: CellGeometry, h: float, grading: int = 0):
    """Grid lines of the cell template (shared by all truncation radii)."""
    p = cell.pattern
    a = p.half_thickness
    xb = p.x_breaks
    x_corners = [] if p.is_full_wall else list(p.slit_bounds)
    xs = _lines(xb, h, x_corners, grading)
    yb = [-cell.R, -cell.R1, -cell.R0, -a, a, cell.R0, cell.R1, cell.R]
    y_corners = [] if p.is_full_wall else [-a, a]
    ys = _lines(yb, h, y_corners, grading)
    return xs, ys


def mesh_cell(cell: CellGeometry, h: float, grading: int = 0) -> TriMesh:
    """Triangulate the truncated cell ((0,1) x (-R,R)) minus the wall."""
    p = cell.pattern
    if not p.is_full_wall and p.slit_width <= 0:
        raise DegenerateGeometry("slit of zero width closes the cell")
    sizes = [p.half_thickness, cell.R - cell.R0]
    if not p.is_full_wall:
        sizes.append(p.slit_width)
    if not h < min(sizes) / 2:
        raise MeshSizeError(f"h={h} cannot resolve the cell; need h < {min(sizes) / 2:.4g}")
    xs, ys = cell_lines(cell, h, grading)
    verts, tris = mesh_tensor(xs, ys, solid=p.contains, mirror_y=0.0)
    R = cell.R

    def classify(mid):
        X, Y = mid[:, 0], mid[:, 1]
        tag = np.full(len(mid), int(Tag.WALL))
        tag[np.abs(Y - R) < 1e-12] = Tag.TRUNCATION_TOP
        tag[np.abs(Y + R) < 1e-12] = Tag.TRUNCATION_BOTTOM
        tag[np.abs(X) < 1e-12] = Tag.PERIODIC_MASTER
        tag[np.abs(X - 1.0) < 1e-12] = Tag.PERIODIC_SLAVE
        return tag

    be = _boundary_edges(tris)
    tags = classify(0.5 * (verts[be[:, 0]] + verts[be[:, 1]]))
    pm = _periodic_pairs(verts, 1.0)
    return TriMesh(verts, tris, be, tags, pm, 1.0, kind="cell", x_lines=xs, y_lines=ys)


# ---------------------------------------------------------------------------
# macro mesh


def mesh_macro(macro: MacroDomain, h: float | None = None, extra_y=(), xs=None, ys=None) -> TriMesh:
    """Structured mesh of the rectangle with the mid-line vertices doubled.

    Triangles above the mid-line reference the GammaPlus copies, triangles
    below the GammaMinus copies, so P1 fields may jump across the mid-line.
    Explicit grid lines ``xs``/``ys`` override the uniform spacing h.
    """
    if xs is None:
        xs = _lines([0.0, macro.Lx], h)
    if ys is None:
        ys = _lines([0.0, macro.gamma_y, macro.Ly, *extra_y], h)
    else:
        ys = _unique_sorted([*ys, macro.gamma_y])
    xs = np.asarray(xs, dtype=float)
    verts, tris = mesh_tensor(xs, ys, mirror_y=macro.gamma_y)
    return _split_along_line(verts, tris, macro.gamma_y, macro.Lx, xs, ys)


def _split_along_line(verts, tris, gy, period, xs, ys):
    on_line = np.nonzero(np.abs(verts[:, 1] - gy) < 1e-12)[0]
    n = len(verts)
    plus = n + np.arange(len(on_line))
    copy_of = -np.ones(n, dtype=np.int64)
    copy_of[on_line] = plus
    cy = verts[tris, 1].mean(axis=1)
    upper = cy > gy
    tris = tris.copy()
    sub = tris[upper]
    hit = copy_of[sub] >= 0
    sub[hit] = copy_of[sub[hit]]
    tris[upper] = sub
    verts = np.vstack([verts, verts[on_line]])
    gamma_pairs = np.column_stack([plus, on_line])
    side = np.zeros(len(verts), dtype=np.int64)
    side[plus] = 1
    side[on_line] = -1

    be = _boundary_edges(tris)
    mid = 0.5 * (verts[be[:, 0]] + verts[be[:, 1]])
    tags = np.full(len(be), int(Tag.OUTER_NEUMANN))
    tags[np.abs(mid[:, 0]) < 1e-12] = Tag.PERIODIC_MASTER
    tags[np.abs(mid[:, 0] - period) < 1e-12] = Tag.PERIODIC_SLAVE
    on_g = np.abs(mid[:, 1] - gy) < 1e-12
    is_plus = side[be[:, 0]] == 1
    tags[on_g & is_plus] = Tag.GAMMA_PLUS
    tags[on_g & ~is_plus] = Tag.GAMMA_MINUS
    pm = _periodic_pairs(verts, period, side_key=side)
    return TriMesh(
        verts, tris, be, tags, pm, period, gamma_pairs=gamma_pairs, kind="macro", x_lines=xs, y_lines=ys
    )


# ---------------------------------------------------------------------------
# refinement


def red_refine(vertices, triangles):
    """Split every triangle into four; returns (vertices, triangles, unique edges).

    New vertex ``nv + k`` is the midpoint of unique edge k.
    """
    t = triangles
    nv = len(vertices)
    e_all = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    uniq, inv = np.unique(np.sort(e_all, axis=1), axis=0, return_inverse=True)
    inv = inv.ravel()
    nt = len(t)
    m01, m12, m20 = (nv + inv[k * nt:(k + 1) * nt] for k in range(3))
    a, b, c = t.T
    tris = np.empty((4 * nt, 3), dtype=np.int64)
    tris[0::4] = np.column_stack([a, m01, m20])
    tris[1::4] = np.column_stack([m01, b, m12])
    tris[2::4] = np.column_stack([m20, m12, c])
    tris[3::4] = np.column_stack([m01, m12, m20])
    verts = np.vstack([vertices, 0.5 * (vertices[uniq[:, 0]] + vertices[uniq[:, 1]])])
    return verts, tris, uniq


def halve_lines(lines):
    if lines is None:
        return None
    lines = np.asarray(lines, dtype=float)
    return _unique_sorted(np.concatenate([lines, 0.5 * (lines[:-1] + lines[1:])]))


def refine(mesh: TriMesh) -> TriMesh:
    """Uniform red refinement; tags, periodic pairs and mid-line copies inherited."""
    nv = mesh.n_vertices
    verts, tris, uniq = red_refine(mesh.vertices, mesh.triangles)

    edge_id = {tuple(e): i for i, e in enumerate(uniq)}

    def mid(p, q):
        return nv + edge_id[(min(p, q), max(p, q))]

    be, tags = [], []
    for (p, q), tag in zip(mesh.boundary_edges, mesh.edge_tags):
        m = mid(p, q)
        be += [(p, m), (m, q)]
        tags += [tag, tag]
    be = np.array(be, dtype=np.int64).reshape(-1, 2)
    tags = np.array(tags, dtype=np.int64)

    master = dict(map(tuple, mesh.periodic_map))
    pm = list(map(tuple, mesh.periodic_map))
    for p, q in mesh.edges_with_tag(Tag.PERIODIC_SLAVE):
        if p in master and q in master:
            pm.append((mid(p, q), mid(master[p], master[q])))
    pm = np.array(sorted(pm), dtype=np.int64).reshape(-1, 2)

    partner = dict(map(tuple, mesh.gamma_pairs))
    gp = list(map(tuple, mesh.gamma_pairs))
    for p, q in mesh.edges_with_tag(Tag.GAMMA_PLUS):
        gp.append((mid(p, q), mid(partner[p], partner[q])))
    gp = np.array(sorted(gp), dtype=np.int64).reshape(-1, 2)

    return TriMesh(
        verts, tris, be, tags, pm, mesh.period, gamma_pairs=gp, kind=mesh.kind,
        x_lines=halve_lines(mesh.x_lines), y_lines=halve_lines(mesh.y_lines),
    )


# ---------------------------------------------------------------------------
# degrees of freedom


@dataclass(frozen=True, eq=False)
class DofMap:
    vertex_dof: np.ndarray
    n_free: int

    def expand(self, values) -> np.ndarray:
        """Nodal values from free-dof values (eliminated vertices get 0)."""
        values = np.asarray(values, dtype=float)
        out = np.zeros(len(self.vertex_dof))
        on = self.vertex_dof >= 0
        out[on] = values[self.vertex_dof[on]]
        return out

    def restrict(self, nodal) -> np.ndarray:
        nodal = np.asarray(nodal, dtype=float)
        out = np.zeros(self.n_free)
        on = self.vertex_dof >= 0
        out[self.vertex_dof[on]] = nodal[on]
        return out


def build_dofmap(mesh: TriMesh, dirichlet_tags=()) -> DofMap:
    """Number the free vertices; slaves share their master's dof."""
    nv = mesh.n_vertices
    dirichlet = np.zeros(nv, dtype=bool)
    for tag in dirichlet_tags:
        dirichlet[mesh.vertices_with_tag(tag)] = True
    master = np.arange(nv)
    if len(mesh.periodic_map):
        master[mesh.periodic_map[:, 0]] = mesh.periodic_map[:, 1]
    dirichlet |= dirichlet[master]
    dof = -np.ones(nv, dtype=np.int64)
    owners = (master == np.arange(nv)) & ~dirichlet
    dof[owners] = np.arange(owners.sum())
    dof = np.where(dirichlet, -1, dof[master])
    return DofMap(dof, int(owners.sum()))


def vertex_correspondence(src: TriMesh, dst: TriMesh, digits: int = 9) -> np.ndarray:
    """Index in dst of every src vertex with the same coordinates (-1 if absent)."""
    key = {(round(x, digits), round(y, digits)): i for i, (x, y) in enumerate(dst.vertices)}
    return np.array([key.get((round(x, digits), round(y, digits)), -1) for x, y in src.vertices], dtype=np.int64)
