"""Independent reference computations used by the tests.

None of these share code with the package beyond numpy/scipy.
"""

import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def fv_slit_conductance(a, slit_width, n, L, slit_center=0.5):
    """Effective coefficient k of a slit wall by cell-centred finite volumes.

    Square cells of side 1/n on (0,1) x (-L, L), periodic in X, Neumann on
    the wall faces, U = -1/2 at Y = -L and U = +1/2 at Y = +L.  With q the
    flux per unit length, the far field is q Y + const on either side, so
    the asymptotic jump is u_inf = 1 - 2 q L and k = q / u_inf.
    """
    h = 1.0 / n
    ny = int(round(2 * L / h))
    assert abs(ny * h - 2 * L) < 1e-12
    xc = (np.arange(n) + 0.5) * h
    yc = -L + (np.arange(ny) + 0.5) * h
    X, Y = np.meshgrid(xc, yc, indexing="ij")
    s0, s1 = slit_center - 0.5 * slit_width, slit_center + 0.5 * slit_width
    solid = (np.abs(Y) < a) & ~((X > s0) & (X < s1))
    fluid = ~solid
    idx = -np.ones((n, ny), dtype=int)
    idx[fluid] = np.arange(fluid.sum())
    N = int(fluid.sum())
    rows, cols, vals = [], [], []
    rhs = np.zeros(N)

    def couple(i0, j0, i1, j1):
        p, q = idx[i0, j0], idx[i1, j1]
        if p < 0 or q < 0:
            return
        rows.extend([p, q, p, q])
        cols.extend([p, q, q, p])
        vals.extend([1.0, 1.0, -1.0, -1.0])

    for i in range(n):
        for j in range(ny):
            couple(i, j, (i + 1) % n, j)
            if j + 1 < ny:
                couple(i, j, i, j + 1)
    # Dirichlet faces: half-cell distance, conductance 2
    for i in range(n):
        for j, val in ((0, -0.5), (ny - 1, 0.5)):
            p = idx[i, j]
            rows.append(p)
            cols.append(p)
            vals.append(2.0)
            rhs[p] += 2.0 * val
    A = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    U = spla.spsolve(A.tocsc(), rhs)
    top = idx[:, ny - 1]
    # face conductance h / (h/2) on each top cell; the period has unit length
    q = float(np.sum(2.0 * (0.5 - U[top])))
    u_inf = 1.0 - 2.0 * q * L
    return q / u_inf


def richardson(values, ratio=2.0):
    """Extrapolate a sequence at h, h/ratio, h/ratio^2 with the observed rate."""
    v0, v1, v2 = values[-3:]
    d0, d1 = v1 - v0, v2 - v1
    p = math.log(abs(d0 / d1)) / math.log(ratio)
    return v2 + d1 / (ratio**p - 1.0), p


def wall_face_g(mesh, dofmap, a):
    """g_i = int d(phi_i)/dY computed as the boundary integral of phi_i n_Y.

    Only the horizontal wall faces Y = +-a carry n_Y != 0; the fluid lies
    above Y = a (outward normal -1) and below Y = -a (outward normal +1).
    """
    V = mesh.vertices
    T = mesh.triangles
    edges = np.sort(np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    g = np.zeros(dofmap.n_free)
    for p, q in bnd:
        y0, y1 = V[p, 1], V[q, 1]
        if abs(y0 - y1) > 1e-12 or abs(abs(y0) - a) > 1e-12:
            continue
        n_y = -1.0 if y0 > 0 else 1.0
        length = abs(V[p, 0] - V[q, 0])
        for v in (p, q):
            d = dofmap.vertex_dof[v]
            if d >= 0:
                g[d] += 0.5 * length * n_y
    return g


def dense_solve(M, rhs):
    return np.linalg.solve(np.asarray(M.todense()), rhs)
