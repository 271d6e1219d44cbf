import numpy as np
import pytest
from oracles import dense_solve, fv_slit_conductance, richardson

from perfplate.cell import (
    TruncationHypothesisError,
    build_cell_system,
    ellipticity_ratio,
    fit_decay,
    flux_balance,
    reconstruct,
    solve_cell,
    stability_metric,
    truncation_study,
)
from perfplate.fem import solve_refined
from perfplate.geometry import CellGeometry, WallPattern

SLIT = WallPattern.slit(0.25, 0.5)
WALL = WallPattern.full_wall(0.25)


@pytest.fixture(scope="module")
def slit_solution():
    system = build_cell_system(CellGeometry(SLIT, 0.25, 4.0), 0.05)
    return solve_cell(system, 1.0, 0.05)


def test_matches_dense_solve():
    system = build_cell_system(CellGeometry(SLIT, 0.25, 3.0), 0.1)
    sol = solve_cell(system, 0.7, 0.1)
    x = dense_solve(system.M, system.rhs(0.7))
    assert sol.alpha == pytest.approx(x[-1], rel=1e-12)
    assert np.allclose(sol.free, x[:-1], atol=1e-13)
    assert sol.residual < 1e-12


def test_linear_in_jump(slit_solution):
    sol2 = solve_cell(slit_solution.system, -2.5)
    assert sol2.alpha == pytest.approx(-2.5 * slit_solution.alpha, rel=1e-12)
    assert sol2.k_eff == pytest.approx(slit_solution.k_eff, rel=1e-12)


def test_conductance_matches_finite_volume_oracle():
    # both discretisations converge at roughly h^(4/3) because of the slit corners;
    # compare their Richardson limits
    cell = CellGeometry(SLIT, 0.25, 4.0)
    fem = [solve_cell(build_cell_system(cell, h, 3), 1.0).k_eff for h in (1 / 32, 1 / 64, 1 / 128)]
    fv = [fv_slit_conductance(0.25, 0.5, n, 4.0) for n in (32, 64, 128)]
    k_fem, p_fem = richardson(fem)
    k_fv, p_fv = richardson(fv)
    assert 1.0 < p_fem < 1.7 and 1.0 < p_fv < 1.7
    assert k_fem == pytest.approx(k_fv, rel=3e-4)


def test_full_wall_blocks_flux():
    sol = solve_cell(build_cell_system(CellGeometry(WALL, 0.25, 4.0), 0.05), 1.0)
    assert abs(sol.alpha) <= 1e-10
    # the near field is +-1/2 on either side of the wall
    U = reconstruct(sol)
    Y = sol.system.mesh.vertices[:, 1]
    assert np.allclose(U[Y > 0.3], 0.5, atol=1e-10)
    assert np.allclose(U[Y < -0.3], -0.5, atol=1e-10)


@pytest.mark.parametrize("pattern", [SLIT, WALL])
def test_ellipticity_bound(pattern):
    system = build_cell_system(CellGeometry(pattern, 0.25, 3.0), 0.1)
    assert ellipticity_ratio(system, 100, seed=3) >= min(1.0, system.wall_area) * (1 - 1e-12)


def test_reconstruction_boundary_values(slit_solution):
    sol = slit_solution
    U = reconstruct(sol)
    V = sol.system.mesh.vertices
    top = np.isclose(V[:, 1], sol.R)
    # Ub vanishes at Y = +-R, so U = +-u_inf/2 + alpha Y there
    assert np.allclose(U[top], 0.5 + sol.alpha * sol.R, atol=1e-14)


def test_flux_balance(slit_solution):
    top, bottom = flux_balance(slit_solution)
    assert top == pytest.approx(slit_solution.alpha, rel=1e-8)
    assert bottom == pytest.approx(slit_solution.alpha, rel=1e-8)


def test_stability_metric_uniform_in_R():
    metric = []
    for R in (3.0, 4.0, 6.0, 8.0):
        sol = solve_cell(build_cell_system(CellGeometry(SLIT, 0.25, R), 0.1), 1.0)
        metric.append(stability_metric(sol))
    assert (max(metric) - min(metric)) / min(metric) < 0.05


def test_fit_decay_recovers_rate():
    R = [3.0, 4.0, 5.0, 6.0]
    window, rate, floor_hit = fit_decay(R, [np.exp(-2 * np.pi * r) for r in R])
    assert rate == pytest.approx(-2 * np.pi, rel=1e-10)
    assert not floor_hit


def test_truncation_study_small():
    base = CellGeometry(SLIT, 0.25, 5.0)
    rep = truncation_study(base, [5.0, 6.0], 0.05, R_ref=8.0, grading=1)
    assert rep.strictly_decreasing
    assert rep.fitted_rate < -np.pi + 0.3


def test_defect_method_matches_direct_difference():
    # radii just above R1 keep the error far above round-off, where subtracting
    # the two computed slopes is still accurate
    base = CellGeometry(SLIT, 0.25, 5.0)
    rep = truncation_study(base, [2.3, 2.35, 2.5], 0.05, R_ref=5.0, grading=1, enforce_hypothesis=False)
    direct = np.array(rep.extra["direct_errors"])
    assert np.all(direct > 1e-13)
    assert np.allclose(rep.errors, direct, rtol=0.02, atol=0)


def test_truncation_hypothesis_enforced():
    base = CellGeometry(SLIT, 0.25, 5.0)
    with pytest.raises(TruncationHypothesisError, match=r"R > 2\*R1"):
        truncation_study(base, [3.0, 5.0], 0.1, R_ref=7.0)


def test_refined_solve_agrees():
    system = build_cell_system(CellGeometry(SLIT, 0.25, 3.0), 0.1)
    rhs = system.rhs(1.0)
    x = solve_refined(system.factorization, rhs)
    assert np.allclose(np.asarray(x, dtype=float), system.factorization.solve(rhs), atol=1e-13)
