import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from perfplate.geometry import (
    CellGeometry,
    GeometryError,
    MacroDomain,
    NonIntegerPeriodCount,
    ObstacleOverlap,
    WallPattern,
    balanced_bumps,
    build_perforated_domain,
    check_period_count,
    pattern_at,
    polygon_area,
    two_zone_layout,
    wall_area,
)

SLIT = WallPattern.slit(0.25, 0.5)
WALL = WallPattern.full_wall(0.25)


def test_wall_area():
    assert wall_area(SLIT) == pytest.approx(0.25)
    assert wall_area(WALL) == pytest.approx(0.5)
    assert CellGeometry(SLIT, 0.25, 4.0).fluid_area == pytest.approx(7.75)


def test_contains_is_open():
    assert SLIT.contains(0.1, 0.0)
    assert not SLIT.contains(0.5, 0.0)  # inside the slit
    assert not SLIT.contains(0.1, 0.25)  # on the face
    assert WALL.contains(0.5, 0.0)


@pytest.mark.parametrize("width, center", [(1.0, 0.5), (0.5, 0.2), (-0.1, 0.5)])
def test_slit_must_fit(width, center):
    with pytest.raises(GeometryError):
        WallPattern.slit(0.25, width, center)


def test_truncation_radius_must_clear_transition():
    with pytest.raises(GeometryError):
        CellGeometry(SLIT, 0.25, 2.0)
    with pytest.raises(GeometryError):
        CellGeometry(WallPattern.slit(0.5, 0.5), 0.25, 4.0)


@given(st.integers(1, 64), st.integers(1, 5))
def test_period_count(n, lx):
    assert check_period_count(1.0 / n, float(lx)) == n * lx


@pytest.mark.parametrize("eps", [0.3, 0.0, -0.125])
def test_period_count_rejects(eps):
    with pytest.raises(NonIntegerPeriodCount):
        check_period_count(eps, 1.0)


def test_balanced_bumps_integrate_to_zero():
    bumps = balanced_bumps([(1, 0.5), (2, 2.5)], 0.25)
    assert sum(b.integral for b in bumps) == 0.0
    bumps = balanced_bumps([(1, 0.5), (2, 2.5), (1.5, 2.5)], 0.2)
    assert abs(sum(b.integral for b in bumps)) < 1e-15
    # numerical quadrature of one bump
    b = bumps[0]
    x = np.linspace(b.x - b.radius, b.x + b.radius, 801)
    X, Y = np.meshgrid(x, x + (b.y - b.x))
    q = np.trapezoid(np.trapezoid(b(X, Y), x, axis=1), x)
    assert q == pytest.approx(b.integral, rel=1e-4)


def macro(eps=0.125, **kw):
    return MacroDomain(3.0, 3.0, 1.5, eps, balanced_bumps([(1, 0.5), (2, 2.5)], 0.25), **kw)


def test_validate_accepts_default_setup():
    for eps in (1 / 8, 1 / 16, 1 / 32):
        macro(eps).validate()


def test_validate_rejects_source_near_plate():
    m = MacroDomain(1.0, 1.0, 0.5, 0.125, balanced_bumps([(0.5, 0.25), (0.5, 0.8)], 0.1))
    with pytest.raises(GeometryError, match="mid-line"):
        m.validate()


def test_validate_rejects_unbalanced_source():
    m = macro().with_bumps(balanced_bumps([(1, 0.5), (2, 2.5)], 0.25)[:1])
    with pytest.raises(GeometryError, match="integral"):
        m.validate()


def test_perforated_domain_tiles_obstacles():
    domain = build_perforated_domain(macro(), CellGeometry(SLIT, 0.25, 4.0))
    assert len(domain.obstacles) == 24
    total = sum(ob.area for ob in domain.obstacles)
    assert total == pytest.approx(24 * 0.125**2 * wall_area(SLIT))
    ob = domain.obstacles[0]
    assert ob.center_x == pytest.approx(0.0625)
    assert domain.in_obstacle(0.01, 1.5) and not domain.in_obstacle(0.0625, 1.5)


def test_two_zone_layout():
    layout = two_zone_layout(SLIT, WALL, 1.0)
    assert pattern_at(layout, 0.2) is SLIT
    assert pattern_at(layout, 0.7) is WALL
    assert pattern_at(layout, 1.0) is SLIT


def test_obstacle_overlap_detected():
    m = MacroDomain(1.0, 1.0, 0.5, 0.25, balanced_bumps([(0.5, 0.5), (0.5, 0.9)], 0.05))
    with pytest.raises(ObstacleOverlap):
        build_perforated_domain(m, CellGeometry(SLIT, 0.25, 4.0))


def test_polygon_area():
    assert polygon_area([(0, 0), (2, 0), (2, 1), (0, 1)]) == 2.0
    assert math.isclose(abs(polygon_area([(0, 0), (1, 0), (0, 1)])), 0.5)
