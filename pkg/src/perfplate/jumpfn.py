"""Canonical jump function J and its derivatives.

J is odd, vanishes on [-R0, R0], saturates at +-1/2 for |Y| >= R0 + 2 and is
a C^2 piecewise polynomial in between.  With t = |Y| - R0 in [0, 2]:

    J   = sgn(Y) t^3 (3 t^2 - 15 t + 20) / 32
    J'  = 15/32 t^2 (t - 2)^2
    J'' = sgn(Y) 15/8 t (t - 1) (t - 2)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["JumpFunction", "SupportExceedsCell", "breakpoint_mismatch", "identity_YJpp", "jp_sup"]

TRANSITION_WIDTH = 2.0


class SupportExceedsCell(ValueError):
    """The transition zone of J does not fit inside the truncated cell."""


@dataclass(frozen=True)
class JumpFunction:
    R0: float

    def __post_init__(self):
        if not self.R0 > 0:
            raise ValueError(f"R0 must be positive, got {self.R0}")

    @property
    def R1(self) -> float:
        return self.R0 + TRANSITION_WIDTH

    @property
    def breakpoints(self) -> tuple[float, float, float, float]:
        return (-self.R1, -self.R0, self.R0, self.R1)

    def _split(self, Y):
        Y = np.asarray(Y, dtype=float)
        s = np.sign(Y)
        t = np.abs(Y) - self.R0
        inside = (t > 0) & (t < TRANSITION_WIDTH)
        return Y, s, t, inside

    def J(self, Y):
        Y, s, t, inside = self._split(Y)
        out = np.where(t >= TRANSITION_WIDTH, 0.5 * s, 0.0)
        ti = np.where(inside, t, 0.0)
        out = np.where(inside, s * _transition(ti)[0], out)
        return out if out.ndim else float(out)

    def Jp(self, Y):
        Y, s, t, inside = self._split(Y)
        ti = np.where(inside, t, 0.0)
        out = np.where(inside, _transition(ti)[1], 0.0)
        return out if out.ndim else float(out)

    def Jpp(self, Y):
        Y, s, t, inside = self._split(Y)
        ti = np.where(inside, t, 0.0)
        out = np.where(inside, s * _transition(ti)[2], 0.0)
        return out if out.ndim else float(out)

    # spelled-out aliases used by the CLI and tests
    eval_J = J
    eval_Jp = Jp
    eval_Jpp = Jpp

    def sample(self, Y):
        """Rows of (Y, J, J', J'') for the given abscissae."""
        Y = np.atleast_1d(np.asarray(Y, dtype=float))
        return np.column_stack([Y, self.J(Y), self.Jp(Y), self.Jpp(Y)])


def _transition(t):
    """Transition polynomial and its first two derivatives at t = |Y| - R0."""
    return (
        t**3 * (3.0 * t**2 - 15.0 * t + 20.0) / 32.0,
        15.0 / 32.0 * t**2 * (t - 2.0) ** 2,
        15.0 / 8.0 * t * (t - 1.0) * (t - 2.0),
    )


def breakpoint_mismatch(jf: JumpFunction) -> float:
    """Largest jump of J, J' or J'' across the breakpoints (exact one-sided limits)."""
    # J is odd, so the breakpoints at -R0, -R1 mirror those at R0, R1
    inner = np.array([_transition(0.0), _transition(TRANSITION_WIDTH)])
    plateau = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]])
    return float(np.max(np.abs(inner - plateau)))


def jp_sup(jf: JumpFunction) -> float:
    """Exact maximum of |J'|, attained at |Y| = R0 + 1."""
    return float(jf.Jp(jf.R0 + 1.0))


def _gauss_on_intervals(edges, order):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1, None], edges[1:, None]
    pts = 0.5 * (b - a) * x + 0.5 * (b + a)
    wts = 0.5 * (b - a) * w
    return pts.ravel(), wts.ravel()


def identity_YJpp(jf: JumpFunction, R: float, order: int = 8) -> float:
    """Integrate Y J''(Y) over the truncated cell (0,1) x (-R, R).

    The integrand does not depend on X, so the cell integral reduces to a 1D
    Gauss rule on the pieces between J's breakpoints.  The exact value is -1.
    """
    if R <= jf.R1:
        raise SupportExceedsCell(
            f"transition zone |Y| < {jf.R1} does not fit into the cell of half-height {R}"
        )
    edges = [-R, *jf.breakpoints, R]
    Y, w = _gauss_on_intervals(edges, order)
    return float(np.sum(w * Y * jf.Jpp(Y)))
