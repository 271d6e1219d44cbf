"""Perforated-plate geometry: wall patterns, periodicity cells, macro domain.

All lengths are dimensionless.  Cell coordinates (X, Y) live in the strip
(0, 1) x R; the macro domain is the rectangle [0, Lx] x [0, Ly], periodic in x,
with the plate's mid-line at y = gamma_y.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .jumpfn import TRANSITION_WIDTH

__all__ = [
    "GeometryError",
    "NonIntegerPeriodCount",
    "ObstacleOverlap",
    "PatternKind",
    "WallPattern",
    "CellGeometry",
    "Bump",
    "MacroDomain",
    "PatternZone",
    "Obstacle",
    "PerforatedDomainSpec",
    "wall_area",
    "uniform_layout",
    "two_zone_layout",
    "pattern_at",
    "build_perforated_domain",
    "balanced_bumps",
    "polygon_area",
]

_TOL = 1e-12


class GeometryError(ValueError):
    pass


class NonIntegerPeriodCount(GeometryError):
    pass


class ObstacleOverlap(GeometryError):
    pass


class PatternKind(str, enum.Enum):
    CENTERED_SLIT = "centered_slit"
    FULL_WALL = "full_wall"


@dataclass(frozen=True)
class WallPattern:
    """Axis-aligned wall |Y| < a with (optionally) one slit through it."""

    half_thickness: float
    slit_width: float = 0.0
    slit_center: float = 0.5
    kind: PatternKind = PatternKind.CENTERED_SLIT

    def __post_init__(self):
        object.__setattr__(self, "kind", PatternKind(self.kind))
        if not self.half_thickness > 0:
            raise GeometryError("wall half thickness must be positive")
        if self.kind is PatternKind.CENTERED_SLIT:
            if not 0 <= self.slit_width < 1:
                raise GeometryError(f"slit width must lie in [0, 1), got {self.slit_width}")
            lo, hi = self.slit_bounds
            if not (lo > 0 and hi < 1):
                raise GeometryError(
                    f"slit ({lo}, {hi}) must lie strictly inside (0, 1) so that the "
                    "wall traces at X=0 and X=1 match"
                )

    @classmethod
    def full_wall(cls, half_thickness: float) -> "WallPattern":
        return cls(half_thickness, 0.0, 0.5, PatternKind.FULL_WALL)

    @classmethod
    def slit(cls, half_thickness: float, slit_width: float, slit_center: float = 0.5):
        return cls(half_thickness, slit_width, slit_center, PatternKind.CENTERED_SLIT)

    @property
    def is_full_wall(self) -> bool:
        return self.kind is PatternKind.FULL_WALL

    @property
    def slit_bounds(self) -> tuple[float, float]:
        if self.is_full_wall:
            return (self.slit_center, self.slit_center)
        return (self.slit_center - 0.5 * self.slit_width, self.slit_center + 0.5 * self.slit_width)

    @property
    def x_breaks(self) -> list[float]:
        if self.is_full_wall:
            return [0.0, 1.0]
        lo, hi = self.slit_bounds
        return [0.0, lo, hi, 1.0]

    def rectangles(self) -> list[tuple[float, float, float, float]]:
        """Wall as a list of (x0, x1, y0, y1) rectangles in cell coordinates."""
        a = self.half_thickness
        if self.is_full_wall:
            return [(0.0, 1.0, -a, a)]
        lo, hi = self.slit_bounds
        return [(0.0, lo, -a, a), (hi, 1.0, -a, a)]

    def contains(self, X, Y):
        """Open-set membership test of the wall, vectorised."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        inside = np.zeros(np.broadcast(X, Y).shape, dtype=bool)
        for x0, x1, y0, y1 in self.rectangles():
            inside |= (X > x0) & (X < x1) & (Y > y0) & (Y < y1)
        return inside


def wall_area(pattern: WallPattern) -> float:
    if pattern.is_full_wall:
        return 2.0 * pattern.half_thickness
    return 2.0 * pattern.half_thickness * (1.0 - pattern.slit_width)


@dataclass(frozen=True)
class CellGeometry:
    """Truncated periodicity cell ((0,1) x (-R, R)) minus the wall."""

    pattern: WallPattern
    R0: float
    R: float

    def __post_init__(self):
        if self.pattern.half_thickness > self.R0 + _TOL:
            raise GeometryError("wall must lie inside |Y| <= R0")
        if not self.R > self.R1:
            raise GeometryError(
                f"truncation radius R={self.R} must exceed R1=R0+2={self.R1}"
            )

    @property
    def R1(self) -> float:
        return self.R0 + TRANSITION_WIDTH

    def with_R(self, R: float) -> "CellGeometry":
        return CellGeometry(self.pattern, self.R0, R)

    def with_pattern(self, pattern: WallPattern) -> "CellGeometry":
        return CellGeometry(pattern, self.R0, self.R)

    @property
    def fluid_area(self) -> float:
        return 2.0 * self.R - wall_area(self.pattern)


@dataclass(frozen=True)
class Bump:
    """Radial C^0 bump  amplitude * (1 - r^2/radius^2)_+ ."""

    x: float
    y: float
    radius: float
    amplitude: float

    @property
    def integral(self) -> float:
        return self.amplitude * math.pi * self.radius**2 / 2.0

    def __call__(self, x, y):
        r2 = (np.asarray(x) - self.x) ** 2 + (np.asarray(y) - self.y) ** 2
        return self.amplitude * np.clip(1.0 - r2 / self.radius**2, 0.0, None)

    def indicator(self, x, y):
        r2 = (np.asarray(x) - self.x) ** 2 + (np.asarray(y) - self.y) ** 2
        return (r2 < self.radius**2).astype(float)


def balanced_bumps(centers: Sequence[tuple[float, float]], radius: float, amplitude: float = 1.0):
    """Two (or more) bumps of alternating sign with exactly zero total integral."""
    bumps = [Bump(cx, cy, radius, amplitude * (-1) ** i) for i, (cx, cy) in enumerate(centers)]
    total = sum(b.integral for b in bumps)
    if abs(total) > _TOL:
        # odd number of bumps: rescale the last one to balance
        last = bumps[-1]
        fix = last.amplitude - total / (math.pi * radius**2 / 2.0)
        bumps[-1] = Bump(last.x, last.y, radius, fix)
    return tuple(bumps)


@dataclass(frozen=True)
class MacroDomain:
    Lx: float
    Ly: float
    gamma_y: float
    epsilon: float
    bumps: tuple[Bump, ...] = ()
    eps0: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))
        if not (0 < self.gamma_y < self.Ly):
            raise GeometryError("mid-line must lie strictly inside the domain")

    @property
    def period_count(self) -> int:
        return check_period_count(self.epsilon, self.Lx)

    def f(self, x, y):
        out = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        for b in self.bumps:
            out = out + b(x, y)
        return out

    def support_indicator(self, x, y):
        out = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        for b in self.bumps:
            out = np.maximum(out, b.indicator(x, y))
        return out

    @property
    def source_integral(self) -> float:
        return sum(b.integral for b in self.bumps)

    @property
    def support_clearance(self) -> float:
        if not self.bumps:
            return math.inf
        return min(abs(b.y - self.gamma_y) - b.radius for b in self.bumps)

    def with_epsilon(self, epsilon: float) -> "MacroDomain":
        return MacroDomain(self.Lx, self.Ly, self.gamma_y, epsilon, self.bumps, self.eps0)

    def with_bumps(self, bumps) -> "MacroDomain":
        return MacroDomain(self.Lx, self.Ly, self.gamma_y, self.epsilon, tuple(bumps), self.eps0)

    def validate(self):
        """Check the source hypotheses; raises GeometryError on violation."""
        _ = self.period_count  # raises unless Lx/eps is an integer
        scale = max([abs(b.integral) for b in self.bumps] + [1.0])
        if abs(self.source_integral) > 1e-12 * scale:
            raise GeometryError(f"source has nonzero total integral {self.source_integral:.3e}")
        eps0 = self.eps0 if self.eps0 is not None else self.epsilon
        if self.support_clearance <= 2.0 * math.sqrt(eps0):
            raise GeometryError(
                f"source support is {self.support_clearance:.4g} from the mid-line; "
                f"needs more than 2*sqrt(eps0) = {2 * math.sqrt(eps0):.4g}"
            )
        for b in self.bumps:
            if b.x - b.radius < 0 or b.x + b.radius > self.Lx or b.y - b.radius < 0 or b.y + b.radius > self.Ly:
                raise GeometryError(f"bump at ({b.x}, {b.y}) leaves the domain")
        return self


def check_period_count(epsilon: float, Lx: float = 1.0) -> int:
    if not epsilon > 0:
        raise NonIntegerPeriodCount(f"period must be positive, got {epsilon}")
    inv = 1.0 / epsilon
    n = round(inv)
    if n < 1 or abs(inv - n) > 1e-9 * max(1.0, inv):
        raise NonIntegerPeriodCount(f"1/epsilon = {inv:.12g} is not a positive integer")
    count = Lx / epsilon
    m = round(count)
    if m < 1 or abs(count - m) > 1e-9 * max(1.0, count):
        raise NonIntegerPeriodCount(f"Lx/epsilon = {count:.12g} is not a positive integer")
    return m


@dataclass(frozen=True)
class PatternZone:
    x_start: float
    x_end: float
    pattern: WallPattern


def uniform_layout(pattern: WallPattern, Lx: float) -> tuple[PatternZone, ...]:
    return (PatternZone(0.0, Lx, pattern),)


def two_zone_layout(left: WallPattern, right: WallPattern, Lx: float) -> tuple[PatternZone, ...]:
    return (PatternZone(0.0, 0.5 * Lx, left), PatternZone(0.5 * Lx, Lx, right))


def pattern_at(layout: Sequence[PatternZone], x: float) -> WallPattern:
    """Pattern of the zone containing x; zones are half-open [start, end)."""
    for zone in layout:
        if zone.x_start - _TOL <= x < zone.x_end - _TOL:
            return zone.pattern
    # x at the right end of the periodic line wraps to the first zone
    return layout[0].pattern


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _rect_polygon(x0, x1, y0, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


@dataclass(frozen=True)
class Obstacle:
    index: int
    center_x: float
    pattern: WallPattern
    parts: tuple[np.ndarray, ...]

    @property
    def area(self) -> float:
        return sum(polygon_area(p) for p in self.parts)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        pts = np.vstack(self.parts)
        return (pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max())


@dataclass(frozen=True)
class PerforatedDomainSpec:
    outer: np.ndarray
    obstacles: tuple[Obstacle, ...]
    macro: MacroDomain = field(repr=False)

    def rectangles(self):
        for ob in self.obstacles:
            for p in ob.parts:
                yield p[0, 0], p[1, 0], p[0, 1], p[2, 1]

    def in_obstacle(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for x0, x1, y0, y1 in self.rectangles():
            inside |= (x > x0) & (x < x1) & (y > y0) & (y < y1)
        return inside


def _rect_disk_distance(rect, bump: Bump) -> float:
    x0, x1, y0, y1 = rect
    dx = max(x0 - bump.x, 0.0, bump.x - x1)
    dy = max(y0 - bump.y, 0.0, bump.y - y1)
    return math.hypot(dx, dy) - bump.radius


def build_perforated_domain(
    macro: MacroDomain,
    cell: CellGeometry,
    layout: Sequence[PatternZone] | None = None,
) -> PerforatedDomainSpec:
    """Tile the scaled wall pattern along the mid-line.

    Obstacle n (1-based) occupies x in eps*(n-1 + [0, 1]), i.e. it is centred
    at eps*(n - 1/2), with the wall scaled by eps about y = gamma_y.
    """
    n_cells = check_period_count(macro.epsilon, macro.Lx)
    eps = macro.epsilon
    if layout is None:
        layout = uniform_layout(cell.pattern, macro.Lx)
    room = min(macro.gamma_y, macro.Ly - macro.gamma_y)
    if not eps * cell.R0 < room:
        raise GeometryError(
            f"scaled wall band eps*R0 = {eps * cell.R0:.4g} does not fit between the mid-line "
            f"and the outer boundary ({room:.4g})"
        )
    obstacles = []
    for n in range(1, n_cells + 1):
        xc = eps * (n - 0.5)
        pattern = pattern_at(layout, xc)
        parts = []
        for X0, X1, Y0, Y1 in pattern.rectangles():
            parts.append(
                _rect_polygon(
                    eps * (n - 1 + X0),
                    eps * (n - 1 + X1),
                    macro.gamma_y + eps * Y0,
                    macro.gamma_y + eps * Y1,
                )
            )
        ob = Obstacle(n, xc, pattern, tuple(parts))
        for p in ob.parts:
            rect = (p[0, 0], p[1, 0], p[0, 1], p[2, 1])
            for b in macro.bumps:
                if _rect_disk_distance(rect, b) <= 0:
                    raise ObstacleOverlap(f"obstacle {n} intersects the support of the source")
        obstacles.append(ob)
    outer = _rect_polygon(0.0, macro.Lx, 0.0, macro.Ly)
    return PerforatedDomainSpec(outer, tuple(obstacles), macro)
