"""P1 finite elements: quadrature, assembly and linear solvers."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import AREA_FLOOR, DofMap, TriMesh

__all__ = [
    "QuadratureRule",
    "triangle_rule",
    "gauss_1d",
    "SingularElement",
    "SolverError",
    "p1_gradients",
    "local_stiffness",
    "assemble_stiffness",
    "assemble_dY_vector",
    "assemble_Jpp_load",
    "assemble_load",
    "assemble_mass",
    "finalize",
    "solve_spd",
    "solve_indefinite",
    "write_matrix_market",
    "integrate",
    "h1_seminorm_sq",
    "Factorization",
    "matvec_extended",
    "solve_refined",
]

log = logging.getLogger(__name__)

DEFAULT_ORDER = 4


class SingularElement(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, msg, residual=float("nan")):
        super().__init__(f"{msg} (relative residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (m, 2) on the reference triangle (0,0),(1,0),(0,1)
    weights: np.ndarray  # sums to 1/2
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points.T
        return np.column_stack([1.0 - x - y, x, y])


def gauss_1d(n: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def triangle_rule(n: int = DEFAULT_ORDER) -> QuadratureRule:
    """Collapsed (Duffy) tensor Gauss rule with n^2 points, exact to degree 2n-2."""
    u, wu = gauss_1d(n)
    v, wv = gauss_1d(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv) * (1.0 - U)
    pts = np.column_stack([U.ravel(), ((1.0 - U) * V).ravel()])
    return QuadratureRule(pts, W.ravel(), 2 * n - 2)


# ---------------------------------------------------------------------------
# element kernels


def p1_gradients(vertices: np.ndarray, triangles: np.ndarray, area_floor: float = AREA_FLOOR):
    """Gradients of the three barycentric functions and triangle areas."""
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * det
    bad = np.nonzero(area < area_floor)[0]
    if len(bad):
        raise SingularElement(f"{len(bad)} degenerate triangle(s), first index {bad[0]} area {area[bad[0]]:.3e}")
    # inverse transpose of the Jacobian applied to reference gradients
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    return grads, area


def local_stiffness(coords) -> np.ndarray:
    grads, area = p1_gradients(np.asarray(coords, dtype=float), np.array([[0, 1, 2]]))
    return area[0] * grads[0] @ grads[0].T


def finalize(M) -> sp.csr_matrix:
    """CSR with summed duplicates, sorted columns and no explicit zeros."""
    M = sp.csr_matrix(M)
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    return M


def _scatter_matrix(dofs, local, n):
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    vals = local.ravel()
    keep = (rows >= 0) & (cols >= 0)
    return finalize(sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)))


def _scatter_vector(dofs, local, n):
    d = dofs.ravel()
    keep = d >= 0
    return np.bincount(d[keep], weights=local.ravel()[keep], minlength=n).astype(float)


def assemble_stiffness(mesh: TriMesh, dofmap: DofMap) -> sp.csr_matrix:
    grads, area = p1_gradients(mesh.vertices, mesh.triangles)
    local = area[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
    return _scatter_matrix(dofmap.vertex_dof[mesh.triangles], local, dofmap.n_free)


def assemble_dY_vector(mesh: TriMesh, dofmap: DofMap) -> np.ndarray:
    """g_i = integral of d(phi_i)/dY; exact for P1."""
    grads, area = p1_gradients(mesh.vertices, mesh.triangles)
    return _scatter_vector(dofmap.vertex_dof[mesh.triangles], area[:, None] * grads[:, :, 1], dofmap.n_free)


def _physical_points(vertices, triangles, rule):
    lam = rule.barycentric
    p = vertices[triangles]  # (m, 3, 2)
    return np.einsum("qi,tid->tqd", lam, p)


def assemble_load(mesh: TriMesh, dofmap: DofMap, f, order: int = DEFAULT_ORDER) -> np.ndarray:
    """b_i = integral of f phi_i with f(x, y) vectorised."""
    rule = triangle_rule(order)
    _, area = p1_gradients(mesh.vertices, mesh.triangles)
    xq = _physical_points(mesh.vertices, mesh.triangles, rule)
    fq = np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float) * np.ones(xq.shape[:2])
    local = 2.0 * area[:, None] * np.einsum("tq,q,qi->ti", fq, rule.weights, rule.barycentric)
    return _scatter_vector(dofmap.vertex_dof[mesh.triangles], local, dofmap.n_free)


def assemble_mass(mesh: TriMesh, dofmap: DofMap, weight=None, order: int = DEFAULT_ORDER) -> sp.csr_matrix:
    """Mass matrix, optionally with a weight w(x, y) inside the integral."""
    rule = triangle_rule(order)
    _, area = p1_gradients(mesh.vertices, mesh.triangles)
    lam = rule.barycentric
    if weight is None:
        wq = np.ones((mesh.n_triangles, len(rule.weights)))
    else:
        xq = _physical_points(mesh.vertices, mesh.triangles, rule)
        wq = np.asarray(weight(xq[..., 0], xq[..., 1]), dtype=float) * np.ones(xq.shape[:2])
    local = 2.0 * area[:, None, None] * np.einsum("tq,q,qi,qj->tij", wq, rule.weights, lam, lam)
    return _scatter_matrix(dofmap.vertex_dof[mesh.triangles], local, dofmap.n_free)


# ---------------------------------------------------------------------------
# J'' load with clipping at the breakpoints


def _clip_below(poly, y):
    """Part of a convex polygon with Y <= y (Sutherland-Hodgman, one plane)."""
    out = []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        pin, qin = p[1] <= y, q[1] <= y
        if pin:
            out.append(p)
        if pin != qin:
            s = (y - p[1]) / (q[1] - p[1])
            out.append(p + s * (q - p))
    return out


def _slabs(tri, cuts):
    """Split a triangle into convex pieces between consecutive horizontal cuts."""
    pieces = []
    rest = [np.asarray(v, dtype=float) for v in tri]
    for y in cuts:
        lower = _clip_below(rest, y)
        upper = [np.array([p[0], -p[1]]) for p in _clip_below([np.array([p[0], -p[1]]) for p in rest], -y)]
        if len(lower) >= 3:
            pieces.append(lower)
        rest = upper
    if len(rest) >= 3:
        pieces.append(rest)
    return pieces


def assemble_Jpp_load(mesh: TriMesh, dofmap: DofMap, jf, order: int = DEFAULT_ORDER) -> np.ndarray:
    """b_i = integral of J''(Y) phi_i.

    Triangles crossing a breakpoint of J are cut into polynomial pieces, so a
    rule of degree >= 4 integrates each piece exactly (J'' is cubic, phi_i
    linear).
    """
    rule = triangle_rule(order)
    V, T = mesh.vertices, mesh.triangles
    grads, area = p1_gradients(V, T)
    bps = np.array(jf.breakpoints)
    ymin = V[T, 1].min(axis=1)
    ymax = V[T, 1].max(axis=1)
    cross = np.any((ymin[:, None] < bps - 1e-14) & (ymax[:, None] > bps + 1e-14), axis=1)
    lam = rule.barycentric

    local = np.zeros((len(T), 3))
    smooth = ~cross
    xq = _physical_points(V, T[smooth], rule)
    jq = jf.Jpp(xq[..., 1])
    local[smooth] = 2.0 * area[smooth, None] * np.einsum("tq,q,qi->ti", jq, rule.weights, lam)

    for t in np.nonzero(cross)[0]:
        p = V[T[t]]
        cuts = [b for b in bps if ymin[t] < b < ymax[t]]
        acc = np.zeros(3)
        for piece in _slabs(p, cuts):
            for k in range(1, len(piece) - 1):
                sub = np.array([piece[0], piece[k], piece[k + 1]])
                d1, d2 = sub[1] - sub[0], sub[2] - sub[0]
                a = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
                if a <= 0:
                    continue
                q = lam @ sub
                # barycentric coordinates of the points in the parent triangle
                phi = (q - p[0]) @ grads[t, 1:].T
                phi = np.column_stack([1.0 - phi.sum(axis=1), phi])
                acc += 2.0 * a * (rule.weights * jf.Jpp(q[:, 1])) @ phi
        local[t] = acc
    return _scatter_vector(dofmap.vertex_dof[T], local, dofmap.n_free)


# ---------------------------------------------------------------------------
# post-processing helpers


def integrate(mesh: TriMesh, nodal, triangles_mask=None) -> float:
    """Integral of a P1 field given by nodal values."""
    _, area = p1_gradients(mesh.vertices, mesh.triangles)
    vals = np.asarray(nodal)[mesh.triangles].mean(axis=1) * area
    if triangles_mask is not None:
        vals = vals[triangles_mask]
    return float(vals.sum())


def h1_seminorm_sq(mesh: TriMesh, nodal, triangles_mask=None) -> float:
    grads, area = p1_gradients(mesh.vertices, mesh.triangles)
    gu = np.einsum("ti,tid->td", np.asarray(nodal)[mesh.triangles], grads)
    vals = area * (gu**2).sum(axis=1)
    if triangles_mask is not None:
        vals = vals[triangles_mask]
    return float(vals.sum())


# ---------------------------------------------------------------------------
# solvers


def solve_spd(K, rhs, tol: float = 1e-10, maxiter: int | None = None, x0=None) -> np.ndarray:
    """Conjugate gradients with Jacobi preconditioning."""
    K = sp.csr_matrix(K)
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n)
    d = K.diagonal()
    if np.any(d <= 0):
        raise SolverError("non-positive diagonal, matrix is not SPD")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - K @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    maxiter = maxiter or 10 * n
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm:
            return x
        Kp = K @ p
        pKp = p @ Kp
        if pKp <= 0:
            raise SolverError("indefinite direction in CG", np.linalg.norm(r) / bnorm)
        step = rz / pKp
        x += step * p
        r -= step * Kp
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - K @ x) / bnorm
    if res <= tol:
        return x
    raise SolverError("CG did not converge", res)


class Factorization:
    """Sparse LU with pivot and residual checks; reusable for many right-hand sides.

    The default minimum-degree ordering on A + A^T suits the structurally
    symmetric FEM and saddle-point matrices here and fills in about half as
    much as COLAMD; diagonal pivots are preferred but partial pivoting stays on.
    """

    def __init__(self, M, pivot_tol: float = 1e-13, ordering: str = "MMD_AT_PLUS_A"):
        self.M = sp.csc_matrix(M)
        n = self.M.shape[0]
        if self.M.shape != (n, n):
            raise ValueError("matrix must be square")
        opts = {"SymmetricMode": True} if ordering == "MMD_AT_PLUS_A" else {}
        try:
            self.lu = spla.splu(self.M, permc_spec=ordering, options=opts)
        except RuntimeError as exc:
            raise SolverError(f"singular matrix: {exc}") from exc
        u = np.abs(self.lu.U.diagonal())
        ratio = u.min() / u.max() if n else 1.0
        self.pivot_ratio = float(ratio)
        if ratio < pivot_tol:
            raise SolverError(f"singular pivot, smallest/largest pivot = {ratio:.3e}")

    def solve(self, rhs, tol: float = 1e-10) -> np.ndarray:
        b = np.asarray(rhs, dtype=float)
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return np.zeros_like(b)
        x = self.lu.solve(b)
        r = b - self.M @ x
        if np.linalg.norm(r) > tol * bnorm:
            x += self.lu.solve(r)  # one step of iterative refinement
            r = b - self.M @ x
        res = np.linalg.norm(r) / bnorm
        if not res <= tol:
            raise SolverError("direct solve missed the residual target", res)
        return x


def solve_indefinite(M, rhs, tol: float = 1e-10, pivot_tol: float = 1e-13) -> np.ndarray:
    """Sparse LU (partial pivoting) solve for saddle-point systems."""
    return Factorization(M, pivot_tol).solve(rhs, tol)


def write_matrix_market(path, M, comment: str | None = None):
    M = sp.coo_matrix(M)
    order = np.lexsort((M.col, M.row))
    with open(path, "w", newline="\n") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{M.shape[0]} {M.shape[1]} {M.nnz}\n")
        for i, j, v in zip(M.row[order], M.col[order], M.data[order]):
            fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")


def matvec_extended(M, x) -> np.ndarray:
    """Sparse product accumulated in extended precision (np.longdouble)."""
    M = sp.csr_matrix(M)
    x = np.asarray(x, dtype=np.longdouble)
    prod = M.data.astype(np.longdouble) * x[M.indices]
    out = np.zeros(M.shape[0], dtype=np.longdouble)
    nz = np.diff(M.indptr) > 0
    out[nz] = np.add.reduceat(prod, M.indptr[:-1][nz])
    return out


def solve_refined(fact: Factorization, rhs, steps: int = 6) -> np.ndarray:
    """Mixed-precision iterative refinement: double LU, extended residuals.

    The solution is kept in np.longdouble.  Because residuals are local
    products, components that are exponentially small come out with a small
    relative error instead of an absolute error of order machine epsilon.
    """
    b = np.asarray(rhs, dtype=np.longdouble)
    x = np.zeros(len(b), dtype=np.longdouble)
    r = b.copy()
    for _ in range(steps):
        d = fact.lu.solve(np.asarray(r, dtype=float))
        if not np.any(d):
            break
        x += d.astype(np.longdouble)
        r = b - matvec_extended(fact.M, x)
    return x
