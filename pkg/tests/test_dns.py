import numpy as np
import pytest

from perfplate.dns import (
    MeshBudgetExceeded,
    ZoneEmpty,
    cut_flux,
    default_dns_h,
    energy_identity,
    matched_coupled,
    mesh_dns,
    model_error,
    refine_dns,
    solve_dns,
    wall_spacing,
)
from perfplate.geometry import (
    CellGeometry,
    MacroDomain,
    WallPattern,
    balanced_bumps,
    uniform_layout,
)

SLIT = WallPattern.slit(0.25, 0.5)
WALL = WallPattern.full_wall(0.25)
CELL = CellGeometry(SLIT, 0.25, 6.0)


def small_macro(eps=0.125, centers=((0.3, 0.2), (0.7, 0.8))):
    return MacroDomain(1.0, 1.0, 0.5, eps, balanced_bumps(list(centers), 0.1))


@pytest.fixture(scope="module")
def slit_dns():
    return solve_dns(small_macro(), CELL, h_far=0.04)


def test_mesh_resolves_obstacles():
    grid = mesh_dns(small_macro(), CELL, h_far=0.04)
    mesh = grid.perforated().check()
    hole_area = 8 * 0.125**2 * 0.25
    assert mesh.area == pytest.approx(1.0 - hole_area, rel=1e-12)
    assert mesh.n_components() == 1
    # the background triangulation with obstacles filled in covers the box
    macro_mesh = grid.macro_mesh().check()
    assert macro_mesh.area == pytest.approx(1.0, rel=1e-12)


def test_refinement_quadruples_elements():
    grid = mesh_dns(small_macro(), CELL, h_far=0.04)
    fine = refine_dns(grid)
    assert len(fine.triangles) == 4 * len(grid.triangles)
    assert fine.perforated().area == pytest.approx(grid.perforated().area, rel=1e-12)


def test_mesh_budget():
    with pytest.raises(MeshBudgetExceeded):
        mesh_dns(small_macro(), CELL, h_far=0.04, node_cap=1000)


def test_slit_must_be_resolved():
    with pytest.raises(ValueError, match="resolve"):
        mesh_dns(small_macro(), CELL, h=2 * default_dns_h(small_macro(), CELL))


def test_residual_and_energy_identity(slit_dns):
    assert slit_dns.residual <= 1e-9
    grad, fu = energy_identity(slit_dns)
    assert grad == pytest.approx(fu, rel=1e-8)


def test_discrete_flux_through_cuts(slit_dns):
    lower = small_macro().bumps[0].integral
    for y in (0.35, 0.6):
        flux, source = cut_flux(slit_dns, y)
        assert flux == pytest.approx(source, rel=1e-8)
        assert source == pytest.approx(lower, rel=1e-3)


def test_zero_source_gives_zero_solution():
    sol = solve_dns(small_macro(), CELL, h_far=0.04, f=lambda x, y: 0.0 * x)
    assert np.max(np.abs(sol.u)) == 0.0


def test_full_wall_leaves_source_free_side_at_zero():
    # both bumps above the plate: the lower component sees no load
    m = small_macro(centers=((0.3, 0.8), (0.7, 0.8)))
    sol = solve_dns(m, CellGeometry(WALL, 0.25, 6.0), h_far=0.04, layout=uniform_layout(WALL, 1.0))
    assert sol.mesh.n_components() == 2
    u = sol.u_nodal
    below = sol.mesh.vertices[:, 1] < 0.5
    assert np.max(np.abs(u[below])) <= 1e-12
    assert np.max(np.abs(u[~below])) > 1e-4


def test_matched_model_error(slit_dns):
    coupled = matched_coupled(slit_dns, layout=uniform_layout(SLIT, 1.0))
    assert wall_spacing(slit_dns.mesh, 0.5) == pytest.approx(default_dns_h(small_macro(), CELL))
    assert coupled.identity_gap() <= 1e-9
    rep = model_error(slit_dns, coupled, zone_margin=0.3, near_zone=True)
    assert rep.l2_rel < 1e-2
    assert rep.near_l2_reconstructed < rep.near_l2_far_field_only


def test_zone_empty(slit_dns):
    coupled = matched_coupled(slit_dns, layout=uniform_layout(SLIT, 1.0))
    with pytest.raises(ZoneEmpty):
        model_error(slit_dns, coupled, zone_margin=0.6)
