import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfplate.geometry import CellGeometry, MacroDomain, WallPattern, balanced_bumps
from perfplate.mesh import (
    MeshSizeError,
    Tag,
    build_dofmap,
    coarsen_indices,
    halve_lines,
    mesh_cell,
    mesh_graded_rows,
    mesh_macro,
    red_refine,
    refine,
    vertex_correspondence,
)

SLIT = WallPattern.slit(0.25, 0.5)
WALL = WallPattern.full_wall(0.25)


@pytest.mark.parametrize("pattern", [SLIT, WALL])
@pytest.mark.parametrize("grading", [0, 3])
def test_cell_mesh_invariants(pattern, grading):
    cell = CellGeometry(pattern, 0.25, 3.0)
    mesh = mesh_cell(cell, 0.1, grading).check()
    assert mesh.area == pytest.approx(cell.fluid_area, rel=1e-13)
    # a full wall cuts the cell into an upper and a lower half
    assert mesh.n_components() == (2 if pattern.is_full_wall else 1)
    # wall faces and slit corners are grid lines
    for y in (-0.25, 0.25, -2.25, 2.25, -3.0, 3.0):
        assert np.any(np.isclose(mesh.y_lines, y, atol=1e-14))
    if not pattern.is_full_wall:
        assert np.any(np.isclose(mesh.x_lines, 0.25)) and np.any(np.isclose(mesh.x_lines, 0.75))


def test_cell_dofmap():
    mesh = mesh_cell(CellGeometry(SLIT, 0.25, 3.0), 0.1)
    dm = build_dofmap(mesh, (Tag.TRUNCATION_TOP, Tag.TRUNCATION_BOTTOM))
    top = mesh.vertices_with_tag(Tag.TRUNCATION_TOP)
    assert np.all(dm.vertex_dof[top] == -1)
    s, m = mesh.periodic_map.T
    assert np.array_equal(dm.vertex_dof[s], dm.vertex_dof[m])
    v = np.arange(dm.n_free, dtype=float)
    assert np.array_equal(dm.restrict(dm.expand(v)), v)


def test_mesh_size_checked():
    with pytest.raises(MeshSizeError):
        mesh_cell(CellGeometry(SLIT, 0.25, 3.0), 0.2)


def test_macro_mesh_doubles_midline():
    m = MacroDomain(1.0, 1.0, 0.5, 0.125, balanced_bumps([(0.5, 0.15), (0.5, 0.85)], 0.1))
    mesh = mesh_macro(m, 0.125).check()
    assert mesh.area == pytest.approx(1.0)
    assert mesh.gamma_y == 0.5
    assert len(mesh.gamma_pairs) == 9
    # no triangle uses vertices from both copies
    side = mesh.triangle_side()
    up, down = mesh.gamma_pairs.T
    assert not np.any(np.isin(mesh.triangles[side == -1], up))
    assert not np.any(np.isin(mesh.triangles[side == 1], down))


def test_coarsen_indices():
    assert list(coarsen_indices(9, 0)) == list(range(9))
    assert list(coarsen_indices(9, 2)) == [0, 4, 8]
    assert list(coarsen_indices(10, 2)) == [0, 4, 8, 9]


def _conforming(verts, tris):
    e = np.sort(np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts.max() <= 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=8), st.integers(8, 20))
def test_graded_rows_conform(raw_levels, nx):
    # adjacent rows may differ by one level at most
    levels = [raw_levels[0]]
    for lv in raw_levels[1:]:
        levels.append(int(np.clip(lv, levels[-1] - 1, levels[-1] + 1)))
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, len(levels))
    verts, tris = mesh_graded_rows(xs, ys, np.array(levels), mirror_y=0.5)
    p = verts[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(1.0)
    assert _conforming(verts, tris)
    # every boundary edge lies on the outer square: no hanging nodes
    e = np.sort(np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    mid = 0.5 * (verts[uniq[counts == 1, 0]] + verts[uniq[counts == 1, 1]])
    on_box = np.isclose(mid, 0.0) | np.isclose(mid, 1.0)
    assert np.all(on_box.any(axis=1))


def test_red_refine_preserves_area_and_nests():
    mesh = mesh_cell(CellGeometry(SLIT, 0.25, 3.0), 0.1)
    fine = refine(mesh).check()
    assert fine.n_triangles == 4 * mesh.n_triangles
    assert fine.area == pytest.approx(mesh.area)
    assert np.all(vertex_correspondence(mesh, fine) >= 0)
    verts, tris, edges = red_refine(mesh.vertices, mesh.triangles)
    assert len(verts) == mesh.n_vertices + len(edges)


def test_halve_lines():
    assert list(halve_lines([0.0, 1.0, 3.0])) == [0.0, 0.5, 1.0, 2.0, 3.0]
