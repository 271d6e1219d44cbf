"""Study configuration read from a TOML file (strict: unknown keys are errors).

Every table and key is optional; missing entries take the defaults below.
Example::

    seed = 0

    [macro]
    Lx = 3.0
    Ly = 3.0
    gamma_y = 1.5
    epsilon = 0.125

    [source]
    centers = [[1.0, 0.5], [2.0, 2.5]]
    radius = 0.25

    [patterns.slit]
    kind = "slit"
    half_thickness = 0.25
    slit_width = 0.5

    [cell]
    pattern = "slit"
    R = 4.0
    h = 0.05
"""

from __future__ import annotations

import dataclasses
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import (
    Bump,
    CellGeometry,
    MacroDomain,
    PatternZone,
    WallPattern,
    balanced_bumps,
    uniform_layout,
)

__all__ = ["ConfigError", "StudyConfig", "load_config", "parse_config"]

SLOPE_THRESHOLD = -math.pi + 0.3


class ConfigError(ValueError):
    """Invalid configuration; ``line``/``column`` point into the file when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None, path=None):
        self.message, self.line, self.column, self.path = message, line, column, path
        where = ""
        if line is not None:
            where = f"line {line}, column {column or 1}: "
        if path is not None:
            where = f"{path}: {where}"
        super().__init__(where + message)


@dataclass
class MacroSection:
    Lx: float = 3.0
    Ly: float = 3.0
    gamma_y: float = 1.5
    epsilon: float = 0.125
    eps0: float | None = None


@dataclass
class SourceSection:
    centers: list = field(default_factory=lambda: [[1.0, 0.5], [2.0, 2.5]])
    radius: float = 0.25
    amplitude: float = 1.0


@dataclass
class PatternSection:
    kind: str = "slit"
    half_thickness: float = 0.25
    slit_width: float = 0.5
    slit_center: float = 0.5


@dataclass
class ZoneSection:
    pattern: str = "slit"
    x_start: float = 0.0
    x_end: float = 1.0


@dataclass
class CellSection:
    pattern: str = "slit"
    R0: float = 0.25
    R: float = 4.0
    h: float = 0.05
    grading: int = 0
    u_inf: float = 1.0
    vtk: bool = False


@dataclass
class TruncationSection:
    R_list: list = field(default_factory=lambda: [3.0, 4.0, 5.0, 6.0])
    R_ref: float = 8.0
    h: float = 0.025
    grading: int = 3
    enforce_hypothesis: bool = True
    stability_R_list: list = field(default_factory=lambda: [3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
    stability_h: float = 0.05


@dataclass
class CoupledSection:
    h_macro: float = 0.0625
    h_cell: float = 0.05
    grading: int = 0
    R: float = 6.0
    R_list: list = field(default_factory=lambda: [3.0, 4.0, 5.0])
    R_ref: float = 7.0
    method: str = "schur"
    scale_jump_eq_by_inv_eps: bool = False
    infsup_samples: int = 200
    infsup_epsilons: list = field(default_factory=lambda: [0.125, 0.0625, 0.03125])
    vtk: bool = False


@dataclass
class DnsSection:
    epsilons: list = field(default_factory=lambda: [0.125, 0.0625, 0.03125])
    h: float | None = None
    h_far: float = 0.02
    near_factor: float = 3.0  # plate band of finest spacing, in multiples of epsilon
    zone_margin: float | None = None
    refinement_check: bool = True
    vtk: bool = False


@dataclass
class OutputSection:
    dir: str = "out"


@dataclass
class AcceptanceSection:
    """Thresholds of the acceptance checks (defaults are the documented gates)."""

    truncation_slope: float = SLOPE_THRESHOLD
    stability_spread: float = 0.05
    full_wall_alpha: float = 1e-10
    full_wall_flux: float = 1e-8
    ellipticity_samples: int = 100
    infsup_spread: float = 0.20
    schur_agreement: float = 1e-8
    coupled_slope: float = SLOPE_THRESHOLD
    identity_gap: float = 1e-9
    dns_refinement_change: float = 0.05


_SECTIONS = {
    "macro": MacroSection,
    "source": SourceSection,
    "cell": CellSection,
    "truncation": TruncationSection,
    "coupled": CoupledSection,
    "dns": DnsSection,
    "output": OutputSection,
    "acceptance": AcceptanceSection,
}


@dataclass
class StudyConfig:
    seed: int = 0
    threads: int | None = None
    macro: MacroSection = field(default_factory=MacroSection)
    source: SourceSection = field(default_factory=SourceSection)
    patterns: dict = field(default_factory=lambda: {"slit": PatternSection()})
    layout: list = field(default_factory=list)
    cell: CellSection = field(default_factory=CellSection)
    truncation: TruncationSection = field(default_factory=TruncationSection)
    coupled: CoupledSection = field(default_factory=CoupledSection)
    dns: DnsSection = field(default_factory=DnsSection)
    output: OutputSection = field(default_factory=OutputSection)
    acceptance: AcceptanceSection = field(default_factory=AcceptanceSection)

    # --- derived objects -------------------------------------------------

    def wall_pattern(self, name: str) -> WallPattern:
        p = self.patterns[name]
        if p.kind == "full_wall":
            return WallPattern.full_wall(p.half_thickness)
        return WallPattern.slit(p.half_thickness, p.slit_width, p.slit_center)

    def bumps(self) -> tuple[Bump, ...]:
        s = self.source
        return balanced_bumps([tuple(c) for c in s.centers], s.radius, s.amplitude)

    def macro_domain(self, epsilon: float | None = None) -> MacroDomain:
        m = self.macro
        eps = m.epsilon if epsilon is None else epsilon
        return MacroDomain(m.Lx, m.Ly, m.gamma_y, eps, self.bumps(), m.eps0)

    def cell_geometry(self, R: float | None = None) -> CellGeometry:
        c = self.cell
        return CellGeometry(self.wall_pattern(c.pattern), c.R0, c.R if R is None else R)

    def pattern_layout(self) -> tuple[PatternZone, ...]:
        if not self.layout:
            return uniform_layout(self.wall_pattern(self.cell.pattern), self.macro.Lx)
        return tuple(PatternZone(z.x_start, z.x_end, self.wall_pattern(z.pattern)) for z in self.layout)


# ---------------------------------------------------------------------------
# parsing


def _locate(text: str | None, path: list[str]):
    """Best-effort (line, column) of a dotted key in the TOML source."""
    if not text:
        return None, None
    key = path[-1]
    tables = path[:-1]
    lines = text.splitlines()
    header = re.compile(r"^\s*\[+\s*([^\]]+?)\s*\]+")
    current: list[str] = []
    for i, raw in enumerate(lines, start=1):
        m = header.match(raw)
        if m:
            current = [p.strip() for p in m.group(1).split(".")]
            if current == path:
                return i, raw.index(m.group(1)) + 1
            continue
        km = re.match(r"^(\s*)([A-Za-z0-9_\-\"']+)\s*=", raw)
        if km and km.group(2).strip("\"'") == key and current == tables:
            return i, len(km.group(1)) + 1
    return None, None


def _coerce(value, default, where: str):
    """Check a TOML value against the type of the default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"{where} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"{where} must be an integer")
        return value
    if isinstance(default, float) or default is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError(f"{where} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise TypeError(f"{where} must be an array")
        return value
    return value


def _build(cls, data, path: list[str], text):
    if not isinstance(data, dict):
        line, col = _locate(text, path)
        raise ConfigError(f"[{'.'.join(path)}] must be a table", line, col)
    obj = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            line, col = _locate(text, path + [key])
            raise ConfigError(f"unknown key '{'.'.join(path + [key])}'", line, col)
        try:
            setattr(obj, key, _coerce(value, getattr(obj, key), ".".join(path + [key])))
        except TypeError as exc:
            line, col = _locate(text, path + [key])
            raise ConfigError(str(exc), line, col) from None
    return obj


def parse_config(data: dict, text: str | None = None) -> StudyConfig:
    cfg = StudyConfig()
    for key, value in data.items():
        if key in _SECTIONS:
            setattr(cfg, key, _build(_SECTIONS[key], value, [key], text))
        elif key == "patterns":
            if not isinstance(value, dict):
                raise ConfigError("[patterns] must be a table of named patterns", *_locate(text, [key]))
            cfg.patterns = {name: _build(PatternSection, p, ["patterns", name], text) for name, p in value.items()}
        elif key == "layout":
            if not isinstance(value, list):
                raise ConfigError("layout must be an array of tables", *_locate(text, [key]))
            cfg.layout = [_build(ZoneSection, z, ["layout"], text) for z in value]
        elif key == "seed":
            cfg.seed = _checked(_coerce, value, 0, "seed", text)
        elif key == "threads":
            cfg.threads = _checked(_coerce, value, 0, "threads", text)
        else:
            raise ConfigError(f"unknown key '{key}'", *_locate(text, [key]))
    _validate(cfg, text)
    return cfg


def _checked(fn, value, default, name, text):
    try:
        return fn(value, default, name)
    except TypeError as exc:
        raise ConfigError(str(exc), *_locate(text, [name])) from None


def _validate(cfg: StudyConfig, text):
    for name, p in cfg.patterns.items():
        if p.kind not in ("slit", "full_wall"):
            raise ConfigError(f"pattern '{name}': kind must be 'slit' or 'full_wall'", *_locate(text, ["patterns", name, "kind"]))
    refs = [("cell", "pattern", cfg.cell.pattern)] + [("layout", "pattern", z.pattern) for z in cfg.layout]
    for table, key, name in refs:
        if name not in cfg.patterns:
            raise ConfigError(f"{table}.{key} refers to undefined pattern '{name}'", *_locate(text, [table, key]))
    if cfg.coupled.method not in ("schur", "monolithic"):
        raise ConfigError("coupled.method must be 'schur' or 'monolithic'", *_locate(text, ["coupled", "method"]))
    for c in cfg.source.centers:
        if not (isinstance(c, list) and len(c) == 2 and all(isinstance(v, (int, float)) for v in c)):
            raise ConfigError("source.centers must be [[x, y], ...]", *_locate(text, ["source", "centers"]))
    if cfg.threads is not None and cfg.threads < 1:
        cfg.threads = None


def load_config(path) -> StudyConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=path) from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line, col = getattr(exc, "lineno", None), getattr(exc, "colno", None)
        msg = getattr(exc, "msg", str(exc))
        if line is None:
            m = re.search(r"line (\d+), column (\d+)", str(exc))
            if m:
                line, col = int(m.group(1)), int(m.group(2))
            msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", str(exc))
        raise ConfigError(msg, line, col, path) from None
    try:
        return parse_config(data, text)
    except ConfigError as exc:
        raise ConfigError(exc.message, exc.line, exc.column, path) from None
