import math
import re
from pathlib import Path

import pytest

from perfplate import config as config_module
from perfplate.config import ConfigError, StudyConfig, load_config, parse_config


def write(tmp_path, text):
    p = tmp_path / "study.toml"
    p.write_text(text)
    return p


def test_defaults_are_the_documented_gates():
    acc = StudyConfig().acceptance
    assert acc.truncation_slope == pytest.approx(-math.pi + 0.3)
    assert acc.stability_spread == 0.05
    assert acc.full_wall_alpha == 1e-10 and acc.full_wall_flux == 1e-8
    assert acc.infsup_spread == 0.2 and acc.schur_agreement == 1e-8
    assert acc.identity_gap == 1e-9 and acc.dns_refinement_change == 0.05


def test_module_example_parses(tmp_path):
    example = config_module.__doc__.split("Example::", 1)[1]
    cfg = load_config(write(tmp_path, "\n".join(line[4:] for line in example.splitlines())))
    assert cfg.cell.R == 4.0
    assert cfg.wall_pattern("slit").slit_width == 0.5


def test_shipped_acceptance_config():
    cfg = load_config(Path(__file__).parent.parent / "configs" / "acceptance.toml")
    assert cfg.truncation.enforce_hypothesis is False
    assert set(cfg.patterns) == {"slit", "wall"}
    cfg.macro_domain(0.03125).validate()


def test_unknown_key_reports_position(tmp_path):
    p = write(tmp_path, "seed = 1\n\n[cell]\nR = 5.0\nbogus = 2\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.line == 5 and exc.value.column == 1
    assert "cell.bogus" in str(exc.value)


def test_syntax_error_reports_position(tmp_path):
    p = write(tmp_path, "[cell]\nR = = 4\n")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.line == 2
    assert re.search(r"line 2, column \d+", str(exc.value))


def test_type_error(tmp_path):
    with pytest.raises(ConfigError, match="must be a number"):
        load_config(write(tmp_path, '[coupled]\nR = "six"\n'))
    with pytest.raises(ConfigError, match="must be true or false"):
        load_config(write(tmp_path, "[truncation]\nenforce_hypothesis = 1\n"))


def test_reference_checks():
    with pytest.raises(ConfigError, match="undefined pattern"):
        parse_config({"cell": {"pattern": "missing"}})
    with pytest.raises(ConfigError, match="kind"):
        parse_config({"patterns": {"x": {"kind": "round"}}})
    with pytest.raises(ConfigError, match="method"):
        parse_config({"coupled": {"method": "gmres"}})


def test_layout_zones():
    cfg = parse_config({
        "macro": {"Lx": 1.0},
        "patterns": {"slit": {}, "wall": {"kind": "full_wall"}},
        "layout": [{"pattern": "slit", "x_start": 0.0, "x_end": 0.5},
                   {"pattern": "wall", "x_start": 0.5, "x_end": 1.0}],
    })
    zones = cfg.pattern_layout()
    assert zones[1].pattern.is_full_wall and not zones[0].pattern.is_full_wall


def test_integers_accepted_for_floats():
    cfg = parse_config({"macro": {"Lx": 2}})
    assert cfg.macro.Lx == 2.0 and isinstance(cfg.macro.Lx, float)
