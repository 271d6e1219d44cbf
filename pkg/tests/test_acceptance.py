"""End-to-end acceptance checks run through the CLI.

Every study runs once in its own process (the DNS sweep needs several GB)
with configs/acceptance.toml; each test reads the acceptance.json it wrote,
checks the runtime budget and prints one PASS/FAIL line.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

pytestmark = pytest.mark.slow

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "acceptance.toml"


class Study:
    def __init__(self, code, seconds, checks, out, stderr):
        self.code, self.seconds, self.checks, self.out, self.stderr = code, seconds, checks, out, stderr

    def select(self, prefix):
        return [c for c in self.checks if c["check_name"].startswith(prefix)]


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def wall_config(workdir):
    text = CONFIG.read_text().replace('pattern = "slit"', 'pattern = "wall"')
    p = workdir / "wall.toml"
    p.write_text(text)
    return p


_cache = {}


def run_study(workdir, command, config=CONFIG, tag=None, extra=()):
    key = (command, str(config), tag, tuple(extra))
    if key not in _cache:
        out = workdir / f"{tag or command}"
        argv = [sys.executable, "-m", "perfplate.cli", command, "--config", str(config), "--out-dir", str(out),
                *extra]
        t0 = time.perf_counter()
        proc = subprocess.run(argv, capture_output=True, text=True)
        seconds = time.perf_counter() - t0
        report = out / "acceptance.json"
        checks = json.loads(report.read_text()) if report.exists() else []
        _cache[key] = Study(proc.returncode, seconds, checks, out, proc.stderr)
    return _cache[key]


def verdict(capsys, number, title, ok, detail):
    line = f"[{number:2d}] {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    with capsys.disabled():
        print("\n" + line, flush=True)
    return line


def all_pass(checks):
    return bool(checks) and all(c["pass"] for c in checks)


def test_jump_function_suite(workdir, capsys):
    s = run_study(workdir, "jump-dump")
    ok = s.code == 0 and all_pass(s.checks) and s.seconds < 1.0
    detail = ", ".join(f"{c['check_name']}={c['value']:.3g}" for c in s.checks) + f", {s.seconds:.2f} s"
    line = verdict(capsys, 1, "jump function odd, C2, sup|J'| = 15/32, first moment of J'' = -1", ok, detail)
    assert ok, line + s.stderr


def test_cell_truncation_decay(workdir, capsys):
    s = run_study(workdir, "truncation-study")
    slope = s.select("cell_truncation_slope")
    mono = s.select("cell_truncation_strictly_decreasing")
    ok = s.code == 0 and all_pass(slope + mono) and s.seconds < 120
    line = verdict(capsys, 2, "cell truncation error decays exponentially in R", ok,
                   f"fitted slope {slope[0]['value']:.3f} <= {slope[0]['threshold']:.3f}, strictly decreasing "
                   f"{bool(mono[0]['pass'])}, {s.seconds:.1f} s" if slope else s.stderr.strip())
    assert ok, line


def test_cell_stability_uniform_in_R(workdir, capsys):
    s = run_study(workdir, "truncation-study")
    spread = s.select("cell_stability_spread")
    ok = all_pass(spread) and s.seconds < 120
    line = verdict(capsys, 3, "cell stability metric uniform in R", ok,
                   f"spread {spread[0]['value']:.2e} < {spread[0]['threshold']}" if spread else s.stderr.strip())
    assert ok, line


def test_full_wall_blocks_transmission(workdir, wall_config, capsys):
    cell = run_study(workdir, "cell")
    coupled = run_study(workdir, "coupled", wall_config, tag="coupled_wall")
    alpha = cell.select("cell_full_wall_alpha")
    flux = coupled.select("coupled_full_wall_flux")
    ok = all_pass(alpha) and all_pass(flux) and coupled.code == 0 and coupled.seconds < 30
    line = verdict(capsys, 4, "full wall gives zero slope and zero coupled flux", ok,
                   f"|alpha| {alpha[0]['value']:.1e}, flux {flux[0]['value']:.1e}, {coupled.seconds:.1f} s"
                   if alpha and flux else coupled.stderr.strip())
    assert ok, line


def test_ellipticity_and_infsup(workdir, capsys):
    cell = run_study(workdir, "cell")
    ctrunc = run_study(workdir, "coupled-truncation-study")
    ell = cell.select("cell_ellipticity")
    inf = ctrunc.select("coupled_infsup")
    ok = all_pass(ell) and all_pass(inf) and cell.seconds + ctrunc.seconds < 120
    detail = ", ".join(f"{c['check_name']} {c['value']:.3g}" for c in ell + inf)
    line = verdict(capsys, 5, "cell ellipticity bound and coupled inf-sup probe", ok,
                   f"{detail}, {cell.seconds + ctrunc.seconds:.1f} s")
    assert ok, line


def test_schur_matches_monolithic(workdir, wall_config, capsys):
    runs = [run_study(workdir, "coupled"), run_study(workdir, "coupled", wall_config, tag="coupled_wall")]
    checks = [c for s in runs for c in s.select("coupled_schur_vs_monolithic")]
    worst = max(c["value"] for c in checks) if checks else float("nan")
    ok = all_pass(checks) and all(s.code == 0 for s in runs)
    line = verdict(capsys, 6, "Schur reduction agrees with the monolithic solve in every block", ok,
                   f"worst relative block difference {worst:.1e} over {len(checks)} blocks")
    assert ok, line


def test_coupled_truncation_decay(workdir, capsys):
    s = run_study(workdir, "coupled-truncation-study")
    slope = s.select("coupled_truncation_slope")
    ok = s.code == 0 and all_pass(slope) and s.seconds < 300
    line = verdict(capsys, 7, "coupled truncation error decays exponentially in R", ok,
                   f"fitted slope {slope[0]['value']:.3f} <= {slope[0]['threshold']:.3f}, {s.seconds:.1f} s"
                   if slope else s.stderr.strip())
    assert ok, line


def test_jump_identity_on_every_coupled_solve(workdir, wall_config, capsys):
    runs = [run_study(workdir, "coupled"), run_study(workdir, "coupled", wall_config, tag="coupled_wall"),
            run_study(workdir, "coupled-truncation-study"), run_study(workdir, "compare")]
    gaps = [c for s in runs for c in s.select("coupled_identity_gap")]
    # DNS-matched solves are too large for the monolithic system; their
    # Schur back-substitution is checked against every row of it instead
    residuals = runs[-1].select("coupled_system_residual")
    ok = all_pass(gaps) and len(gaps) >= 6 and all_pass(residuals) and len(residuals) >= 3
    worst_gap = max((c["value"] for c in gaps), default=float("nan"))
    worst_res = max((c["value"] for c in residuals), default=float("nan"))
    line = verdict(capsys, 8, "u_inf equals the far-field jump after every coupled solve", ok,
                   f"worst gap {worst_gap:.1e} over {len(gaps)} runs, DNS-matched full-system residual "
                   f"{worst_res:.1e} over {len(residuals)} solves")
    assert ok, line


def test_model_error_decreases_with_eps(workdir, capsys):
    s = run_study(workdir, "compare")
    refine = s.select("dns_refinement_change")
    mono = s.select("model_error_strictly_decreasing")
    errors = []
    path = s.out / "model_error.csv"
    if path.exists():
        rows = [r.split(",") for r in path.read_text().splitlines()[1:]]
        errors = [f"{float(r[0]):g}: {float(r[3]):.3e}" for r in rows]
    ok = s.code == 0 and all_pass(refine) and all_pass(mono) and s.seconds < 900
    worst = max((c["value"] for c in refine), default=float("nan"))
    line = verdict(capsys, 9, "far-zone model error strictly decreasing in eps, DNS converged", ok,
                   f"errors {{{', '.join(errors)}}}, worst refinement change {worst:.1%}, {s.seconds:.0f} s")
    assert ok, line + s.stderr


def test_outputs_deterministic(workdir, capsys):
    differences = []
    compared = 0
    for command in ("cell", "truncation-study", "coupled", "coupled-truncation-study"):
        base = run_study(workdir, command)
        for threads in ("1", "4"):
            other = run_study(workdir, command, tag=f"{command}_t{threads}", extra=("--threads", threads))
            for f in sorted(base.out.glob("*.csv")):
                compared += 1
                if f.read_bytes() != (other.out / f.name).read_bytes():
                    differences.append(f"{command}/{f.name} threads={threads}")
    ok = compared > 0 and not differences
    line = verdict(capsys, 10, "byte-identical CSVs across repeated runs and thread counts", ok,
                   f"{compared} file comparisons, {len(differences)} differ")
    assert ok, line + "; ".join(differences)
