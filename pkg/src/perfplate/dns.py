"""Direct P1 solve on the perforated domain and comparison with the coupled model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .fem import (
    Factorization,
    assemble_load,
    assemble_stiffness,
    finalize,
    p1_gradients,
)
from .geometry import (
    CellGeometry,
    MacroDomain,
    PerforatedDomainSpec,
    build_perforated_domain,
)
from .mesh import (
    DofMap,
    Tag,
    TriMesh,
    _boundary_edges,
    _periodic_pairs,
    _split_along_line,
    _unique_sorted,
    build_dofmap,
    coarsen_indices,
    halve_lines,
    mesh_graded_rows,
    red_refine,
    subdivide,
)

__all__ = [
    "MeshBudgetExceeded",
    "ZoneEmpty",
    "DnsSolution",
    "ErrorReport",
    "PointLocator",
    "mesh_dns",
    "solve_dns",
    "refine_dns",
    "DnsGrid",
    "cut_flux",
    "energy_identity",
    "model_error",
    "reconstruct_near_field",
    "default_dns_h",
    "wall_spacing",
    "matched_coupled",
]

log = logging.getLogger(__name__)

NODE_CAP = 2_000_000


class MeshBudgetExceeded(RuntimeError):
    pass


class ZoneEmpty(ValueError):
    pass


def default_dns_h(macro: MacroDomain, cell: CellGeometry) -> float:
    """Largest h that puts at least four elements across the slit and the wall."""
    p = cell.pattern
    sizes = [p.half_thickness] if p.is_full_wall else [p.slit_width, p.half_thickness]
    return macro.epsilon * min(sizes) / 4.0


def graded_lines(y0: float, y1: float, h0: float, h_far: float, growth: float) -> np.ndarray:
    """Lines from y0 to y1 with spacing growing geometrically from h0 up to h_far."""
    length = y1 - y0
    steps = []
    s = h0
    while sum(steps) < length:
        steps.append(min(s, h_far))
        s *= growth
    steps = np.array(steps) * (length / sum(steps))
    return y0 + np.concatenate([[0.0], np.cumsum(steps)])


def dns_lines(macro: MacroDomain, domain: PerforatedDomainSpec, h: float, h_far: float, near: float,
              growth: float = 1.15, extra_y=()):
    eps = macro.epsilon
    xb = [0.0, macro.Lx]
    for ob in domain.obstacles:
        for p in ob.parts:
            xb += [p[0, 0], p[1, 0]]
        xb += [eps * (ob.index - 1), eps * ob.index]
    xb = _unique_sorted(xb)
    xs = _unique_sorted(np.concatenate([subdivide(a, b, h) for a, b in zip(xb[:-1], xb[1:])]))
    gy = macro.gamma_y
    a = max(p.half_thickness for p in (ob.pattern for ob in domain.obstacles))
    lo, hi = gy - max(near, eps * a), gy + max(near, eps * a)
    lo, hi = max(lo, 0.0), min(hi, macro.Ly)
    core = _unique_sorted(np.concatenate([
        subdivide(lo, gy - eps * a, h), subdivide(gy - eps * a, gy + eps * a, h), subdivide(gy + eps * a, hi, h),
        [gy],
    ]))
    below = lo - graded_lines(0.0, lo, h, h_far, growth)
    above = hi + graded_lines(0.0, macro.Ly - hi, h, h_far, growth)
    ys = _unique_sorted(np.concatenate([below, core, above, [y for y in extra_y if 0 < y < macro.Ly]]))
    ys[0], ys[-1] = 0.0, macro.Ly
    return xs, ys


def line_levels(xs, ys, gamma_y: float, near: float, h_far: float, aspect: float = 2.0) -> np.ndarray:
    """Coarsening level of every y line.

    Lines within ``near`` of the mid-line keep the full x resolution.  Further
    out the x spacing is doubled while it stays below ``aspect`` times the
    local y spacing and below h_far, at most one level per line.
    """
    h = float(np.max(np.diff(xs)))
    gaps = np.diff(ys)
    local = np.minimum(np.concatenate([[gaps[0]], gaps]), np.concatenate([gaps, [gaps[-1]]]))
    target = np.minimum(aspect * local, max(h_far, h))
    lv = np.floor(np.log2(target / h + 1e-12)).astype(np.int64).clip(min=0)
    dist = np.abs(ys - gamma_y)
    lv[dist <= near + 1e-12] = 0
    out = np.zeros_like(lv)
    j0 = int(np.argmin(dist))
    out[j0] = lv[j0]
    for step in (1, -1):
        prev = out[j0]
        j = j0 + step
        while 0 <= j < len(ys):
            prev = out[j] = min(max(lv[j], prev), prev + 1)
            j += step
    return out


@dataclass(frozen=True, eq=False)
class DnsGrid:
    """Background triangulation of the whole rectangle for a DNS.

    Obstacles are unions of background triangles, so the same triangulation
    yields the perforated DNS mesh and, split along the mid-line, a macro
    mesh for the coupled model with identical far-field elements.
    """

    macro: MacroDomain
    domain: PerforatedDomainSpec
    vertices: np.ndarray
    triangles: np.ndarray
    x_lines: np.ndarray
    y_lines: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def solid_triangles(self) -> np.ndarray:
        c = self.vertices[self.triangles].mean(axis=1)
        return np.asarray(self.domain.in_obstacle(c[:, 0], c[:, 1]), dtype=bool)

    def perforated(self) -> TriMesh:
        tris = self.triangles[~self.solid_triangles()]
        used = np.unique(tris)
        remap = -np.ones(self.n_vertices, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return _tag_dns(self.vertices[used], remap[tris], self.macro, self.x_lines, self.y_lines)

    def macro_mesh(self) -> TriMesh:
        gy = self.macro.gamma_y
        return _split_along_line(self.vertices, self.triangles, gy, self.macro.Lx, self.x_lines, self.y_lines)

    def refined(self) -> "DnsGrid":
        verts, tris, _ = red_refine(self.vertices, self.triangles)
        return DnsGrid(self.macro, self.domain, verts, tris, halve_lines(self.x_lines), halve_lines(self.y_lines))


def mesh_dns(macro: MacroDomain, cell: CellGeometry, h: float | None = None, layout=None, h_far: float | None = None,
             near: float | None = None, node_cap: int = NODE_CAP, extra_y=()) -> DnsGrid:
    """Graded mesh of the perforated domain with exactly resolved obstacles.

    Grid lines pass through every obstacle face and slit corner; the spacing
    is h across the plate band (|y - gamma| <= near) and grows geometrically
    to h_far away from it, with the x resolution coarsened row by row.
    """
    domain = build_perforated_domain(macro, cell, layout)
    h_max = default_dns_h(macro, cell)
    h = h_max if h is None else h
    if h > h_max * (1 + 1e-12):
        raise ValueError(f"h = {h:.4g} does not resolve the slit; need h <= {h_max:.4g}")
    h_far = max(h, 0.02 if h_far is None else h_far)
    near = 3.0 * macro.epsilon if near is None else near
    xs, ys = dns_lines(macro, domain, h, h_far, near, extra_y=extra_y)
    levels = line_levels(xs, ys, macro.gamma_y, near, h_far)
    n_nodes = sum(len(coarsen_indices(len(xs), lv)) for lv in levels)
    if n_nodes > node_cap:
        raise MeshBudgetExceeded(f"{n_nodes} nodes exceed the cap {node_cap}")
    verts, tris = mesh_graded_rows(xs, ys, levels, mirror_y=macro.gamma_y)
    return DnsGrid(macro, domain, verts, tris, xs, ys)


def _tag_dns(verts, tris, macro, xs, ys):
    be = _boundary_edges(tris)
    mid = 0.5 * (verts[be[:, 0]] + verts[be[:, 1]])
    tags = np.full(len(be), int(Tag.WALL))
    tags[(np.abs(mid[:, 1]) < 1e-12) | (np.abs(mid[:, 1] - macro.Ly) < 1e-12)] = Tag.OUTER_NEUMANN
    tags[np.abs(mid[:, 0]) < 1e-12] = Tag.PERIODIC_MASTER
    tags[np.abs(mid[:, 0] - macro.Lx) < 1e-12] = Tag.PERIODIC_SLAVE
    pm = _periodic_pairs(verts, macro.Lx)
    return TriMesh(verts, tris, be, tags, pm, macro.Lx, kind="dns", x_lines=xs, y_lines=ys)


def refine_dns(grid: DnsGrid) -> DnsGrid:
    """Halve every spacing by red refinement; obstacle faces stay resolved."""
    return grid.refined()


def wall_spacing(mesh: TriMesh, gamma_y: float) -> float:
    """Grid spacing across the plate (the y gap just above the mid-line)."""
    ys = mesh.y_lines
    k = int(np.searchsorted(ys, gamma_y + 1e-12))
    return float(ys[k] - ys[k - 1])


def matched_coupled(dns, layout=None, pattern=None, R: float = 6.0, R0: float = 0.25, grading: int = 0,
                    threads: int | None = None):
    """Coupled solve discretized consistently with a DNS mesh.

    The macro mesh is the DNS background triangulation split along the
    mid-line (obstacles filled in) and the cell mesh uses the DNS
    spacing across the plate rescaled by 1/eps, so both solves carry the
    same far-field and slit-conductance discretization errors and their
    difference isolates the modelling error.
    """
    from .coupled import build_system, coupled_load, setup_coupled, solve_coupled_schur

    macro = dns.macro
    mesh = dns.grid.macro_mesh()
    h_cell = wall_spacing(dns.mesh, macro.gamma_y) / macro.epsilon
    setup = setup_coupled(macro, None, layout, pattern, R0=R0, h_cell=h_cell, grading=grading, mesh=mesh)
    system = build_system(setup, R)
    return solve_coupled_schur(system, coupled_load(system, macro.f))


@dataclass(frozen=True, eq=False)
class DnsSolution:
    macro: MacroDomain
    mesh: TriMesh
    dofmap: DofMap
    K: sp.csr_matrix
    C: sp.csr_matrix
    F: np.ndarray
    u: np.ndarray  # free dofs
    gauge: np.ndarray
    residual: float
    grid: DnsGrid | None = field(default=None, repr=False)

    @property
    def u_nodal(self) -> np.ndarray:
        return self.dofmap.expand(self.u)


def _components(mesh: TriMesh, dofmap: DofMap):
    """Label of the connected component of every free dof."""
    from scipy.sparse.csgraph import connected_components

    d = dofmap.vertex_dof[mesh.triangles]
    rows = np.concatenate([d[:, 0], d[:, 1], d[:, 2]])
    cols = np.concatenate([d[:, 1], d[:, 2], d[:, 0]])
    g = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(dofmap.n_free,) * 2)
    _, labels = connected_components(g, directed=False)
    return labels


def dns_gauge(mesh: TriMesh, dofmap: DofMap, omega_f=None) -> sp.csr_matrix:
    """Mean-value functionals, one per connected component of the perforated domain."""
    full = assemble_load(mesh, dofmap, lambda x, y: np.ones_like(x))
    restricted = full if omega_f is None else assemble_load(mesh, dofmap, lambda x, y: omega_f(x, y).astype(float))
    labels = _components(mesh, dofmap)
    rows = []
    for c in np.unique(labels):
        comp = labels == c
        r = np.where(comp, restricted, 0.0)
        if not r.sum() > 0:
            r = np.where(comp, full, 0.0)
        rows.append(r)
    return finalize(sp.csr_matrix(np.array(rows)))


def compatible_load(F, C):
    """Remove the per-component total of F along the gauge rows."""
    F = F.copy()
    for row in C.toarray():
        comp = row != 0
        F[comp] -= row[comp] * (F[comp].sum() / row[comp].sum())
    return F


def solve_dns(macro: MacroDomain, cell: CellGeometry, h: float | None = None, layout=None, h_far: float | None = None,
              near: float | None = None, node_cap: int = NODE_CAP, grid: DnsGrid | None = None, f=None,
              tol: float = 1e-9, extra_y=()) -> DnsSolution:
    if grid is None:
        grid = mesh_dns(macro, cell, h, layout, h_far, near, node_cap, extra_y)
    mesh = grid.perforated()
    if mesh.n_vertices > node_cap:
        raise MeshBudgetExceeded(f"{mesh.n_vertices} nodes exceed the cap {node_cap}")
    dofmap = build_dofmap(mesh)
    K = assemble_stiffness(mesh, dofmap)
    C = dns_gauge(mesh, dofmap, macro.support_indicator)
    F = compatible_load(assemble_load(mesh, dofmap, macro.f if f is None else f, order=6), C)
    M = finalize(sp.bmat([[K, C.T], [C, None]]))
    b = np.concatenate([F, np.zeros(C.shape[0])])
    x = Factorization(M).solve(b, tol)
    bn = np.linalg.norm(b)
    res = float(np.linalg.norm(M @ x - b) / bn) if bn else float(np.linalg.norm(M @ x))
    n = dofmap.n_free
    return DnsSolution(macro, mesh, dofmap, K, C, F, x[:n], x[n:], res, grid)


def _line_mean(mesh, nodal, y):
    on = np.nonzero(np.abs(mesh.vertices[:, 1] - y) < 1e-12)[0]
    X = mesh.vertices[on, 0]
    order = np.argsort(X)
    return float(np.trapezoid(np.asarray(nodal)[on][order], X[order]))


def cut_flux(sol: DnsSolution, y: float):
    """Upward flux of -grad u through the grid row containing y, and the source below it.

    The row must be free of obstacles and of the source.  For tensor-product
    P1 meshes the layer-averaged flux equals the sum of the load over every
    dof below the row, which is the discrete divergence theorem.
    """
    ys = sol.mesh.y_lines
    k = int(np.searchsorted(ys, y, side="right")) - 1
    k = min(max(k, 0), len(ys) - 2)
    lo, hi = ys[k], ys[k + 1]
    u = sol.u_nodal
    flux = -(_line_mean(sol.mesh, u, hi) - _line_mean(sol.mesh, u, lo)) / (hi - lo)
    below = sol.mesh.vertices[:, 1] <= lo + 1e-12
    d = sol.dofmap.vertex_dof
    dofs = np.unique(d[below & (d >= 0)])
    return flux, float(sol.F[dofs].sum())


def energy_identity(sol: DnsSolution):
    """(integral |grad u|^2, integral f u) for the discrete solution."""
    return float(sol.u @ (sol.K @ sol.u)), float(sol.F @ sol.u)


# ---------------------------------------------------------------------------
# evaluation of P1 fields at arbitrary points


class PointLocator:
    """Evaluate P1 fields of a mesh at scattered points (nearest centroids + barycentrics)."""

    def __init__(self, mesh: TriMesh, triangle_mask=None, k: int = 12):
        self.mesh = mesh
        idx = np.arange(mesh.n_triangles) if triangle_mask is None else np.nonzero(triangle_mask)[0]
        self.tri = idx
        p = mesh.vertices[mesh.triangles[idx]]
        self.tree = cKDTree(p.mean(axis=1))
        self.k = min(k, len(idx))
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.p0 = p[:, 0]
        self.inv = np.stack([np.column_stack([d2[:, 1], -d2[:, 0]]), np.column_stack([-d1[:, 1], d1[:, 0]])],
                            axis=1) / det[:, None, None]

    def locate(self, pts):
        pts = np.asarray(pts, dtype=float)
        _, cand = self.tree.query(pts, k=self.k)
        cand = cand.reshape(len(pts), -1)
        rel = pts[:, None, :] - self.p0[cand]
        lam12 = np.einsum("nkij,nkj->nki", self.inv[cand], rel)
        lam = np.concatenate([1.0 - lam12.sum(axis=2, keepdims=True), lam12], axis=2)
        score = lam.min(axis=2)
        best = np.argmax(score, axis=1)
        rows = np.arange(len(pts))
        return self.tri[cand[rows, best]], lam[rows, best], score[rows, best]

    def evaluate(self, nodal, pts):
        t, lam, _ = self.locate(pts)
        return np.einsum("ni,ni->n", np.asarray(nodal)[self.mesh.triangles[t]], lam)


# ---------------------------------------------------------------------------
# model error


@dataclass
class ErrorReport:
    epsilon: float
    zone_margin: float
    l2: float
    h1: float
    l2_rel: float
    near_l2_reconstructed: float = math.nan
    near_l2_far_field_only: float = math.nan
    extra: dict = field(default_factory=dict)


def _far_field_at_nodes(dns: DnsSolution, coupled, mask_nodes):
    """Coupled far field evaluated at DNS nodes, each side from its own triangles."""
    cmesh = coupled.system.mesh
    u_ext = coupled.u_ext
    side = cmesh.triangle_side()
    gy = cmesh.gamma_y
    V = dns.mesh.vertices
    out = np.zeros(len(V))
    for s in (1, -1):
        loc = PointLocator(cmesh, side == s)
        sel = mask_nodes & ((V[:, 1] > gy) if s == 1 else (V[:, 1] <= gy))
        if np.any(sel):
            out[sel] = loc.evaluate(u_ext, V[sel])
    return out


def _regauge(dns: DnsSolution, nodal):
    """Shift nodal values per component so the DNS mean-value functionals vanish."""
    v = dns.dofmap.restrict(nodal)
    rows = dns.C.toarray()
    labels = _components(dns.mesh, dns.dofmap)
    for row in rows:
        comp = labels == labels[np.argmax(row != 0)]
        v[comp] -= (row @ v) / row[comp].sum()
    return v


def model_error(dns: DnsSolution, coupled, zone_margin: float | None = None, near_zone: bool = False,
                near_width: float | None = None) -> ErrorReport:
    """Far-zone L2 and H1-seminorm distance between the coupled far field and the DNS.

    With ``near_zone`` the near field m_inf + u_inf J + alpha Y + Ub is also
    compared with the DNS on the band dist < near_width (default eps, the
    cell layer holding the wall), together with the error of using the far
    field alone on that band.  Further out the near field's linear growth
    cannot follow the curvature of the far field, so wide bands favour the
    far field.
    """
    macro = dns.macro
    eps = macro.epsilon
    margin = 2.0 * math.sqrt(eps) if zone_margin is None else zone_margin
    mesh = dns.mesh
    V = mesh.vertices
    gy = macro.gamma_y
    cy = V[mesh.triangles, 1].mean(axis=1)
    far_tri = np.abs(cy - gy) > margin
    if not np.any(far_tri):
        raise ZoneEmpty(f"no element farther than {margin:.4g} from the mid-line")
    nodes = np.zeros(len(V), dtype=bool)
    nodes[mesh.triangles[far_tri].ravel()] = True
    model = _far_field_at_nodes(dns, coupled, np.ones(len(V), dtype=bool))
    model_free = _regauge(dns, model)
    diff = dns.dofmap.expand(dns.u - model_free)
    l2, h1, ref = _zone_norms(mesh, diff, dns.u_nodal, far_tri)
    rep = ErrorReport(eps, margin, l2, h1, l2 / ref if ref else math.nan)
    if near_zone:
        width = eps if near_width is None else near_width
        near_tri = np.abs(cy - gy) < width
        recon = reconstruct_near_field(coupled, V) + (dns.dofmap.expand(model_free) - model)
        e_rec = _zone_norms(mesh, dns.u_nodal - recon, dns.u_nodal, near_tri)[0]
        e_far = _zone_norms(mesh, diff, dns.u_nodal, near_tri)[0]
        rep.near_l2_reconstructed = e_rec
        rep.near_l2_far_field_only = e_far
    return rep


def _zone_norms(mesh, diff, ref_field, tri_mask):
    grads, area = p1_gradients(mesh.vertices, mesh.triangles)
    t = mesh.triangles[tri_mask]
    a = area[tri_mask]
    # exact P1 mass on each triangle: (a/12) (sum v_i^2 + (sum v_i)^2)
    def l2sq(v):
        vt = np.asarray(v)[t]
        return float(np.sum(a / 12.0 * ((vt**2).sum(axis=1) + vt.sum(axis=1) ** 2)))

    g = np.einsum("ti,tid->td", np.asarray(diff)[t], grads[tri_mask])
    h1 = math.sqrt(float(np.sum(a * (g**2).sum(axis=1))))
    return math.sqrt(l2sq(diff)), h1, math.sqrt(l2sq(ref_field))


def reconstruct_near_field(coupled, pts) -> np.ndarray:
    """m_inf + u_inf J(Y) + alpha Y + Ub(X, Y) at physical points.

    Interface fields are interpolated linearly (periodically) between the
    collocation points; the cell field of the nearest-left point is used,
    which is exact for piecewise-constant pattern layouts away from zone
    borders.  Ub vanishes beyond the truncation radius.
    """
    system = coupled.system
    itf = system.interface
    eps = system.epsilon
    gy = system.mesh.gamma_y
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    period = system.mesh.period
    xp = np.concatenate([itf.x, [itf.x[0] + period]])

    def interp(v):
        return np.interp(np.mod(x - itf.x[0], period) + itf.x[0], xp, np.concatenate([v, [v[0]]]))

    m_inf, u_inf, alpha = interp(coupled.m_inf), interp(coupled.u_inf), interp(coupled.alpha)
    X = x / eps - np.floor(x / eps)
    Y = (y - gy) / eps
    jf = itf.cells[0].jf
    out = m_inf + u_inf * jf.J(Y) + alpha * Y
    j_near = np.searchsorted(itf.x, np.mod(x, period), side="right") - 1
    j_near = np.clip(j_near, 0, itf.n - 1)
    uniq, idx = itf.distinct
    for k, cs in enumerate(uniq):
        # Ub at the point is u_inf times the unit cell field (linearity)
        unit = itf.unit_solutions[k]
        sel = (idx[j_near] == k) & (np.abs(Y) < cs.R)
        if not np.any(sel):
            continue
        loc = PointLocator(cs.mesh)
        out[sel] += u_inf[sel] * loc.evaluate(unit.u_breve, np.column_stack([X[sel], Y[sel]]))
    return out
