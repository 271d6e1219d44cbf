"""Command-line driver: one config file, several studies, CSV/VTK/JSON outputs.

Exit codes: 0 when every acceptance check passes, 2 when one fails, 1 on
any error (bad config, violated hypothesis, solver failure).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, StudyConfig, load_config
from .io import write_csv, write_json, write_vtk

log = logging.getLogger("perfplate")

EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2


class Checks:
    """Acceptance checks collected during a run."""

    def __init__(self):
        self.items: list[dict] = []

    def add(self, name: str, value: float, threshold: float, passed: bool):
        value = float(value)
        self.items.append({
            "check_name": name,
            "value": value if math.isfinite(value) else str(value),
            "threshold": float(threshold),
            "pass": bool(passed),
        })

    def at_most(self, name, value, threshold):
        self.add(name, value, threshold, value <= threshold)

    def at_least(self, name, value, threshold):
        self.add(name, value, threshold, value >= threshold)

    @property
    def ok(self) -> bool:
        return all(c["pass"] for c in self.items)


# ---------------------------------------------------------------------------
# subcommands


def cmd_jump_dump(cfg: StudyConfig, out: Path, checks: Checks, args):
    from .jumpfn import JumpFunction, breakpoint_mismatch, identity_YJpp, jp_sup

    jf = JumpFunction(cfg.cell.R0)
    R = max(cfg.cell.R, jf.R1 + 0.5)
    Y = np.linspace(-R, R, 801)
    write_csv(out / "jump.csv", ["Y", "J", "Jp", "Jpp"], jf.sample(Y))
    checks.at_most("jump_odd", float(np.max(np.abs(jf.J(Y) + jf.J(-Y)))), 1e-15)
    checks.at_most("jump_c2_mismatch", breakpoint_mismatch(jf), 1e-12)
    checks.at_most("jump_sup_Jp_error", abs(jp_sup(jf) - 15.0 / 32.0), 1e-10)
    checks.at_most("jump_Y_Jpp_identity_error", abs(identity_YJpp(jf, R) + 1.0), 1e-10)


def _cell_row(name, sol):
    return [name, sol.R, sol.h, sol.alpha, sol.k_eff, sol.h1_seminorm, sol.residual]


CELL_HEADER = ["pattern_id", "R", "h", "alpha", "k_eff", "H1_seminorm", "residual"]


def cmd_cell(cfg: StudyConfig, out: Path, checks: Checks, args):
    from .cell import build_cell_system, ellipticity_ratio, reconstruct, solve_cell
    from .geometry import CellGeometry
    from .parallel import parallel_map

    c = cfg.cell
    names = sorted(cfg.patterns)

    def run(name):
        geom = CellGeometry(cfg.wall_pattern(name), c.R0, c.R)
        system = build_cell_system(geom, c.h, c.grading)
        return solve_cell(system, c.u_inf, c.h)

    sols = parallel_map(run, names, cfg.threads)
    write_csv(out / "cell_results.csv", CELL_HEADER, [_cell_row(n, s) for n, s in zip(names, sols)])
    acc = cfg.acceptance
    for i, (name, sol) in enumerate(zip(names, sols)):
        system = sol.system
        bound = min(1.0, system.wall_area)
        ratio = ellipticity_ratio(system, acc.ellipticity_samples, seed=cfg.seed + i)
        checks.at_least(f"cell_ellipticity[{name}]", ratio, bound * (1 - 1e-12))
        if cfg.wall_pattern(name).is_full_wall:
            checks.at_most(f"cell_full_wall_alpha[{name}]", abs(sol.alpha), acc.full_wall_alpha)
        else:
            checks.add(f"cell_alpha_positive[{name}]", sol.alpha, 0.0, sol.alpha * np.sign(c.u_inf) > 0)
        if c.vtk:
            write_vtk(out / f"cell_{name}.vtk", system.mesh,
                      {"u_breve": sol.u_breve, "U": reconstruct(sol)}, title=f"cell {name}")


def cmd_truncation_study(cfg: StudyConfig, out: Path, checks: Checks, args):
    from .cell import build_cell_system, solve_cell, stability_metric, truncation_study
    from .parallel import parallel_map

    t = cfg.truncation
    name = cfg.cell.pattern
    base = cfg.cell_geometry()
    rep = truncation_study(base, t.R_list, t.h, t.R_ref, t.grading, cfg.cell.u_inf, t.enforce_hypothesis,
                           threads=cfg.threads)
    rows = []
    for R, alpha, err, h1, res in zip(rep.R_list, rep.values, rep.errors, rep.extra["h1"], rep.extra["residual"]):
        rows.append([name, R, t.h, alpha, alpha / cfg.cell.u_inf, h1, res, err])
    write_csv(out / "truncation.csv", CELL_HEADER + ["alpha_error"], rows)
    acc = cfg.acceptance
    checks.at_most("cell_truncation_slope", rep.fitted_rate, acc.truncation_slope)
    checks.add("cell_truncation_strictly_decreasing", float(rep.strictly_decreasing), 1.0, rep.strictly_decreasing)

    def run(R):
        system = build_cell_system(base.with_R(R), t.stability_h, cfg.cell.grading)
        return solve_cell(system, cfg.cell.u_inf, t.stability_h)

    sols = parallel_map(run, t.stability_R_list, cfg.threads)
    metric = [stability_metric(s) for s in sols]
    write_csv(out / "cell_stability.csv", CELL_HEADER + ["stability_metric"],
              [_cell_row(name, s) + [m] for s, m in zip(sols, metric)])
    spread = (max(metric) - min(metric)) / min(metric)
    checks.at_most("cell_stability_spread", spread, acc.stability_spread)


def _coupled_setup(cfg: StudyConfig, epsilon: float):
    from .coupled import setup_coupled

    cc = cfg.coupled
    macro = cfg.macro_domain(epsilon).validate()
    return setup_coupled(macro, cc.h_macro, cfg.pattern_layout(), R0=cfg.cell.R0, h_cell=cc.h_cell,
                         grading=cc.grading)


def cmd_coupled(cfg: StudyConfig, out: Path, checks: Checks, args):
    from .coupled import (
        block_agreement,
        build_system,
        coupled_load,
        layer_fluxes,
        solve_coupled_monolithic,
        solve_coupled_schur,
        stability_report,
    )

    cc = cfg.coupled
    acc = cfg.acceptance
    setup = _coupled_setup(cfg, cfg.macro.epsilon)
    system = build_system(setup, cc.R, cc.scale_jump_eq_by_inv_eps)
    F = coupled_load(system, setup.macro.f)
    primary, other = (solve_coupled_schur, solve_coupled_monolithic)
    if cc.method == "monolithic":
        primary, other = other, primary
    sol = primary(system, F)
    alt = other(system, F)
    write_csv(out / "interface.csv", ["x_j", "alpha_j", "u_inf_j", "m_inf_j", "k_j"], sol.interface_rows())
    report = stability_report(sol, setup.macro.f)
    write_csv(out / "stability.csv", ["quantity", "value"], sorted(report.items()))
    below, above, total = layer_fluxes(sol)
    write_csv(out / "coupled_summary.csv",
              ["epsilon", "R", "method", "residual", "identity_gap", "flux_below", "flux_above", "flux_interface"],
              [[system.epsilon, cc.R, sol.method, sol.residual, sol.identity_gap(), below, above, total]])
    for block, rel in block_agreement(sol, alt).items():
        checks.at_most(f"coupled_schur_vs_monolithic[{block}]", rel, acc.schur_agreement)
    checks.at_most("coupled_identity_gap", max(sol.identity_gap(), alt.identity_gap()), acc.identity_gap)
    if system.interface.all_full_wall:
        checks.at_most("coupled_full_wall_flux", max(abs(below), abs(above)), acc.full_wall_flux)
    if cc.vtk:
        write_vtk(out / "coupled_u_ext.vtk", system.mesh, {"u_ext": sol.u_ext}, title="coupled far field")


def cmd_coupled_truncation_study(cfg: StudyConfig, out: Path, checks: Checks, args):
    from .coupled import build_system, coupled_truncation_study, infsup_probe

    cc = cfg.coupled
    acc = cfg.acceptance
    setup = _coupled_setup(cfg, cfg.macro.epsilon)
    rep = coupled_truncation_study(setup, cc.R_list, cc.R_ref, threads=cfg.threads)
    keys = ["h1_u_ext", "l2_alpha", "norm_u_breve", "l2_u_inf", "combined"]
    rows = [[R] + [p[k] for k in keys] + [gap] for R, p, gap in
            zip(rep.R_list, rep.extra["parts"], rep.extra["identity_gap"])]
    write_csv(out / "coupled_truncation.csv", ["R"] + keys + ["identity_gap"], rows)
    checks.at_most("coupled_truncation_slope", rep.fitted_rate, acc.coupled_slope)
    checks.at_most("coupled_identity_gap", max(rep.extra["identity_gap"]), acc.identity_gap)
    rows = []
    for eps in cc.infsup_epsilons:
        for R in cc.R_list:
            probe = infsup_probe(build_system(setup, R, epsilon=eps), cc.infsup_samples, seed=cfg.seed)
            rows.append([eps, R, probe.gamma_est])
    write_csv(out / "infsup.csv", ["epsilon", "R", "gamma_est"], rows)
    gammas = [r[2] for r in rows]
    checks.add("coupled_infsup_positive", min(gammas), 0.0, min(gammas) > 0)
    checks.at_most("coupled_infsup_spread", (max(gammas) - min(gammas)) / max(gammas), acc.infsup_spread)


def _dns_epsilons(cfg: StudyConfig, args):
    return [args.epsilon] if args.epsilon is not None else list(cfg.dns.epsilons)


def _solve_dns(cfg: StudyConfig, epsilon: float, grid=None):
    from .dns import solve_dns

    d = cfg.dns
    macro = cfg.macro_domain(epsilon).validate()
    return solve_dns(macro, cfg.cell_geometry(), d.h, cfg.pattern_layout(), d.h_far, d.near_factor * epsilon,
                     grid=grid)


def cmd_dns(cfg: StudyConfig, out: Path, checks: Checks, args):
    from .dns import cut_flux, energy_identity

    rows = []
    gy = cfg.macro.gamma_y
    # a grid row between the plate band and the nearest source above it
    above = [b.y - b.radius for b in cfg.bumps() if b.y > gy]
    y_cut = 0.5 * (gy + min(above)) if above else math.nan
    for eps in _dns_epsilons(cfg, args):
        sol = _solve_dns(cfg, eps)
        grad, fu = energy_identity(sol)
        flux, source = cut_flux(sol, y_cut) if above else (math.nan, math.nan)
        rows.append([eps, sol.mesh.n_vertices, sol.residual, grad, fu, y_cut, flux, source])
        checks.at_most(f"dns_energy_identity[eps={eps:g}]", abs(grad - fu) / max(abs(grad), 1e-300), 1e-8)
        if above:
            checks.at_most(f"dns_flux_balance[eps={eps:g}]", abs(flux - source) / max(abs(source), 1e-300), 1e-8)
        if cfg.dns.vtk:
            write_vtk(out / f"dns_eps_{eps:g}.vtk", sol.mesh, {"u": sol.u_nodal}, title=f"dns eps={eps:g}")
        del sol
    write_csv(out / "dns_summary.csv",
              ["epsilon", "n_vertices", "residual", "grad_energy", "source_work", "y_cut", "cut_flux",
               "source_below"], rows)


def cmd_compare(cfg: StudyConfig, out: Path, checks: Checks, args):
    """DNS and matched coupled solve per epsilon, far-zone error, refinement check."""
    from .dns import matched_coupled, model_error, refine_dns

    d = cfg.dns
    acc = cfg.acceptance
    layout = cfg.pattern_layout()
    epsilons = _dns_epsilons(cfg, args)
    rows = []
    for eps in epsilons:
        sol = _solve_dns(cfg, eps)
        coupled = matched_coupled(sol, layout=layout, R=cfg.coupled.R, R0=cfg.cell.R0)
        rep = model_error(sol, coupled, d.zone_margin, near_zone=True)
        checks.at_most(f"coupled_identity_gap[eps={eps:g}]", coupled.identity_gap(), acc.identity_gap)
        # the Schur path sets u_inf = [u_ext] exactly, so also check that the
        # back-substituted vector solves every row of the full system
        checks.at_most(f"coupled_system_residual[eps={eps:g}]", coupled.residual, acc.schur_agreement)
        grid = sol.grid
        n_nodes = sol.mesh.n_vertices
        del sol, coupled
        checks.add(f"near_zone_reconstruction_better[eps={eps:g}]", rep.near_l2_reconstructed,
                   rep.near_l2_far_field_only, rep.near_l2_reconstructed < rep.near_l2_far_field_only)
        refined, change = math.nan, math.nan
        if d.refinement_check:
            sol2 = _solve_dns(cfg, eps, grid=refine_dns(grid))
            coupled2 = matched_coupled(sol2, layout=layout, R=cfg.coupled.R, R0=cfg.cell.R0)
            refined = model_error(sol2, coupled2, d.zone_margin).l2
            change = abs(refined - rep.l2) / rep.l2
            del sol2, coupled2
            checks.at_most(f"dns_refinement_change[eps={eps:g}]", change, acc.dns_refinement_change)
        rows.append([eps, n_nodes, rep.zone_margin, rep.l2, rep.h1, rep.l2_rel, rep.near_l2_reconstructed,
                     rep.near_l2_far_field_only, refined, change])
    ordered = [r[3] for r in sorted(rows, key=lambda r: -r[0])]
    monotone = all(b < a for a, b in zip(ordered, ordered[1:]))
    header = ["epsilon", "n_vertices", "zone_margin", "far_l2", "far_h1", "far_l2_rel", "near_l2_reconstructed",
              "near_l2_far_field_only", "far_l2_refined", "refinement_change"]
    write_csv(out / "model_error.csv", header, rows)
    if len(ordered) > 1:
        checks.add("model_error_strictly_decreasing", float(monotone), 1.0, monotone)


COMMANDS = {
    "cell": cmd_cell,
    "truncation-study": cmd_truncation_study,
    "coupled": cmd_coupled,
    "coupled-truncation-study": cmd_coupled_truncation_study,
    "dns": cmd_dns,
    "compare": cmd_compare,
    "jump-dump": cmd_jump_dump,
}


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfplate", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="TOML study configuration")
    p.add_argument("--epsilon", type=float, help="period of the plate (overrides macro.epsilon)")
    p.add_argument("--R", type=float, help="cell truncation radius (overrides cell.R and coupled.R)")
    p.add_argument("--h-macro", type=float, help="macro mesh size")
    p.add_argument("--h-cell", type=float, help="cell mesh size")
    p.add_argument("--h-dns", type=float, help="DNS spacing across the plate")
    p.add_argument("--zone-margin", type=float, help="distance from the mid-line where the far zone starts")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--schur", dest="method", action="store_const", const="schur")
    g.add_argument("--monolithic", dest="method", action="store_const", const="monolithic")
    p.add_argument("--out-dir", type=Path, help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, help="worker threads (default: logical cores)")
    p.add_argument("--seed", type=int, help="seed of the randomized probes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def apply_overrides(cfg: StudyConfig, args) -> StudyConfig:
    cfg = dataclasses.replace(cfg)
    if args.epsilon is not None:
        cfg.macro = dataclasses.replace(cfg.macro, epsilon=args.epsilon)
    if args.R is not None:
        cfg.cell = dataclasses.replace(cfg.cell, R=args.R)
        cfg.coupled = dataclasses.replace(cfg.coupled, R=args.R)
    if args.h_cell is not None:
        cfg.cell = dataclasses.replace(cfg.cell, h=args.h_cell)
        cfg.coupled = dataclasses.replace(cfg.coupled, h_cell=args.h_cell)
    if args.h_macro is not None:
        cfg.coupled = dataclasses.replace(cfg.coupled, h_macro=args.h_macro)
    if args.method is not None:
        cfg.coupled = dataclasses.replace(cfg.coupled, method=args.method)
    if args.h_dns is not None:
        cfg.dns = dataclasses.replace(cfg.dns, h=args.h_dns)
    if args.zone_margin is not None:
        cfg.dns = dataclasses.replace(cfg.dns, zone_margin=args.zone_margin)
    if args.out_dir is not None:
        cfg.output = dataclasses.replace(cfg.output, dir=str(args.out_dir))
    if args.threads is not None:
        cfg.threads = args.threads if args.threads > 0 else None
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else StudyConfig()
        cfg = apply_overrides(cfg, args)
        out = Path(cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        checks = Checks()
        COMMANDS[args.command](cfg, out, checks, args)
        write_json(out / "acceptance.json", checks.items)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # every failure maps to exit code 1
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for c in checks.items:
        status = "PASS" if c["pass"] else "FAIL"
        print(f"{status} {c['check_name']}: {c['value']} (threshold {c['threshold']})")
    return EXIT_OK if checks.ok else EXIT_CHECK_FAILED


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
