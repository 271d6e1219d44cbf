"""Multiscale P1 solver for Poisson problems with a thin perforated plate."""

from .geometry import CellGeometry, MacroDomain, WallPattern, wall_area
from .jumpfn import JumpFunction

__version__ = "0.1.0"

__all__ = ["CellGeometry", "MacroDomain", "WallPattern", "wall_area", "JumpFunction", "__version__"]
