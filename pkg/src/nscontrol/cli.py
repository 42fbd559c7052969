"""Experiment runner CLI.

    nscontrol <subcommand> --config FILE [--seed N] [--out DIR]

Subcommands: validate, solve-hjb, fk-check, simulate, dp-verify, converge-m,
lq-oracle.  Every run resolves the config (strict; misspelled keys are
errors), fingerprints it, writes a manifest before doing any work, and puts
artifacts under a fixed layout (manifest.json, valuegrid/, paths/,
reports/).  Exit codes: 0 all assertions passed, 2 inconclusive statistics,
1 failure.
"""

from __future__ import annotations

import argparse
import sys as _sys

import numpy as np

from . import __version__
from .config import ConfigError, build_cost, build_grid, build_integrator, \
    build_system, fingerprint, hypothesis_gate, load_config, mild_grid, \
    sde_steps
from .cost import dp_verify, estimate_cost, running_integrand
from .fk import feynman_kac_value
from .galerkin import ensure_field
from .hjb import assert_value_bounds, gradient, refinement_deltas, \
    solve_hjb_grid, value_at
from .io import ArtifactWriter
from .lq import LQProblem, solve_riccati
from .mild import solve_hjb_mild
from .policies import constant_policy, feedback_policy, perturbed_policy, \
    random_ball_policy, zero_policy
from .sde import energy_estimate, simulate_closed_loop, simulate_controlled, \
    theta_delta_diagnostic

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INCONCLUSIVE = 2


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=_sys.stderr)
    return EXIT_FAIL


def _probes(cfg, sys):
    probes = cfg["experiment"]["probes"]
    if probes is None:
        probes = [cfg["simulation"]["x0"]]
    return [ensure_field(sys, p) for p in probes]


def _gate(cfg, sys) -> list:
    """Violations that block this run (empty when fine or not enforced)."""
    report, enforced = hypothesis_gate(cfg, sys)
    if enforced and not report.passed:
        return report.violations()
    return []


def _solve_mild(cfg, sys, cost, saturation, T):
    return solve_hjb_mild(
        sys, cost, saturation, T, mild_grid(cfg, sys),
        n_steps=cfg["solver"]["mild_steps"],
        quad_order=int(cfg["solver"]["quad_order"]),
        tol=float(cfg["solver"]["picard_tol"]),
        max_iter=int(cfg["solver"]["picard_max_iter"]))


def _solve_methods(cfg, sys, cost, saturation):
    grid = build_grid(cfg, sys)
    T = float(cfg["solver"]["horizon"])
    solved = {}
    for method in cfg["solver"]["methods"]:
        if method == "grid":
            solved["grid"] = solve_hjb_grid(sys, cost, saturation, T, grid)
        else:
            solved["mild"] = _solve_mild(cfg, sys, cost, saturation, T)
    return grid, T, solved


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_validate(cfg, writer) -> int:
    sys_ = build_system(cfg)
    report, enforced = hypothesis_gate(cfg, sys_)
    problems = []
    try:
        build_cost(cfg, sys_)
    except ValueError as exc:
        problems.append(f"cost: {exc}")
    try:
        build_grid(cfg, sys_)
    except ValueError as exc:
        problems.append(f"grid: {exc}")
    if sys_.m > 3 and ("grid" in cfg["solver"]["methods"]
                       or "mild" in cfg["solver"]["methods"]):
        problems.append(f"solver: value solves need m <= 3 (m={sys_.m})")

    writer.open_manifest()
    doc = report.to_dict()
    doc["enforced"] = enforced
    doc["construction_problems"] = problems
    writer.write_report("hypotheses", doc)
    writer.close_manifest()

    for chk in doc["checks"]:
        print(f"{'PASS' if chk['ok'] else 'FAIL'}  {chk['name']}: "
              f"{chk['detail']}")
    for p in problems:
        print(f"FAIL  {p}")
    ok = report.passed and not problems
    print(f"hypothesis gate: {'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_solve_hjb(cfg, writer) -> int:
    sys_ = build_system(cfg)
    if not cfg["solver"]["methods"]:
        return _fail("solver.methods is empty; nothing to solve")
    violations = _gate(cfg, sys_)
    if violations:
        return _fail("hypothesis gate failed: " + "; ".join(violations))
    cost = build_cost(cfg, sys_)
    saturation = float(cfg["control"]["saturation"])
    writer.open_manifest()
    grid, T, solved = _solve_methods(cfg, sys_, cost, saturation)
    probes = _probes(cfg, sys_)

    report = {"horizon": T, "probes": [list(map(float, p)) for p in probes],
              "methods": {}}
    ok = True
    for method, value in solved.items():
        writer.write_value_grid(method, value)
        bounds = assert_value_bounds(value, cost)
        # the zero-tolerance barrier is a property of the monotone march;
        # for the mild route it is reported but the gate is cross-agreement
        if method == "grid":
            ok = ok and (bounds.ok or not bounds.applicable)
        entry = {
            "values_at_probes": [value_at(value, T, p) for p in probes],
            "bounds": bounds.to_dict(),
            "dt": value.meta["dt"],
            "n_steps": value.meta["n_steps"],
        }
        if method == "grid":
            entry["dt_max"] = value.meta["dt_max"]
            entry["monotone"] = value.meta["monotone"]
        else:
            entry["residuals"] = value.meta["residuals"]
            entry["iterations"] = value.meta["iterations"]
        report["methods"][method] = entry
    if len(solved) == 2:
        pairs = zip(report["methods"]["grid"]["values_at_probes"],
                    report["methods"]["mild"]["values_at_probes"])
        rel = max(abs(a - b) / max(abs(a), 1e-12) for a, b in pairs)
        report["cross_method_max_rel"] = rel
        report["cross_method_tol"] = 0.03
        ok = ok and rel <= 0.03
    writer.write_report("solve_hjb", report)
    writer.close_manifest()
    for method, entry in report["methods"].items():
        vals = ", ".join(f"{v:.6g}" for v in entry["values_at_probes"])
        print(f"{method}: u(T, probes) = [{vals}]")
        print(f"{method}: bounds ok = {entry['bounds']['ok']} "
              f"(applicable = {entry['bounds']['applicable']})")
    if "cross_method_max_rel" in report:
        print(f"grid vs mild at probes: max rel diff = "
              f"{report['cross_method_max_rel']:.3g} (tol 0.03)")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_fk_check(cfg, writer) -> int:
    sys_ = build_system(cfg)
    violations = _gate(cfg, sys_)
    if violations:
        return _fail("hypothesis gate failed: " + "; ".join(violations))
    cost = build_cost(cfg, sys_)
    saturation = float(cfg["control"]["saturation"])
    grid = build_grid(cfg, sys_)
    T = float(cfg["solver"]["horizon"])
    writer.open_manifest()
    value = solve_hjb_grid(sys_, cost, saturation, T, grid)
    probes = _probes(cfg, sys_)
    rng = np.random.default_rng(int(cfg["simulation"]["seed"]))
    n_paths = int(cfg["experiment"]["fk_paths"])
    n_steps = cfg["experiment"]["fk_steps"]
    n_steps = int(n_steps) if n_steps is not None else sde_steps(cfg)

    rows = []
    ok = True
    for probe, child in zip(probes, rng.spawn(len(probes))):
        fk = feynman_kac_value(sys_, value, cost, saturation, probe,
                               n_paths, child, n_steps=n_steps,
                               killing_rate=cfg["solver"]["killing_rate"])
        ref = value_at(value, T, probe)
        gap = abs(fk.estimate - ref)
        tol = max(4.0 * fk.se, 0.03 * abs(ref))
        ok = ok and gap <= tol
        rows.append({
            "probe": [float(v) for v in probe], "grid_value": ref,
            "fk": fk.to_dict(), "gap": gap, "tolerance": tol,
            "ok": bool(gap <= tol),
        })
        print(f"probe {np.array2string(probe, precision=3)}: grid {ref:.6g} "
              f"vs fk {fk.estimate:.6g} +- {fk.se:.2g} "
              f"({'ok' if gap <= tol else 'FAIL'})")
    writer.write_report("fk_check", {"horizon": T, "n_paths": n_paths,
                                     "n_steps": n_steps, "rows": rows})
    writer.close_manifest()
    return EXIT_OK if ok else EXIT_FAIL


def _ensemble_report(sys_, ens, cost) -> dict:
    doc = {
        "energy": energy_estimate(sys_, ens),
        "cost": estimate_cost(ens, cost).to_dict(),
        "n_clipped": ens.n_clipped,
        "n_excluded": ens.n_blowup,
        "n_excursions": ens.meta.get("n_excursions", 0),
        "scheme": ens.meta["scheme"],
    }
    try:
        doc["theta_delta"] = theta_delta_diagnostic(sys_, ens, 1.0)
    except ValueError as exc:
        doc["theta_delta"] = {"error": str(exc)}
    return doc


def cmd_simulate(cfg, writer) -> int:
    sys_ = build_system(cfg)
    violations = _gate(cfg, sys_)
    if violations:
        return _fail("hypothesis gate failed: " + "; ".join(violations))
    cost = build_cost(cfg, sys_)
    saturation = float(cfg["control"]["saturation"])
    T = float(cfg["solver"]["horizon"])
    x0 = ensure_field(sys_, cfg["simulation"]["x0"])
    integ = build_integrator(cfg)
    n_paths = int(cfg["simulation"]["n_paths"])
    rng = np.random.default_rng(int(cfg["simulation"]["seed"]))
    writer.open_manifest()

    open_ens = simulate_controlled(sys_, zero_policy(), x0, T, integ,
                                   rng.spawn(1)[0], n_paths,
                                   saturation=saturation)
    writer.write_paths("open_loop", open_ens,
                       running_integrand(open_ens, cost))
    writer.write_report("ensemble_open", _ensemble_report(sys_, open_ens, cost))
    blowups = open_ens.n_blowup

    if sys_.m <= 3:
        value = solve_hjb_grid(sys_, cost, saturation, T,
                               build_grid(cfg, sys_))
        closed = simulate_closed_loop(sys_, value, saturation, x0, T, integ,
                                      rng.spawn(1)[0], n_paths)
        writer.write_paths("closed_loop", closed,
                           running_integrand(closed, cost))
        writer.write_report("ensemble_closed",
                            _ensemble_report(sys_, closed, cost))
        blowups += closed.n_blowup
        print(f"closed loop: J = {estimate_cost(closed, cost).mean:.6g}, "
              f"clipped = {closed.n_clipped}, "
              f"excursions = {closed.meta['n_excursions']}, "
              f"excluded = {closed.n_blowup}")
    else:
        print(f"m = {sys_.m} > 3: open loop only (no grid value function)")
    writer.close_manifest()
    e = energy_estimate(sys_, open_ens)
    print(f"open loop: E sup|X|^2 = {e['E_sup_sq']:.6g}, "
          f"E int ||X||^2 = {e['E_int_V']:.6g}, "
          f"c_emp = {e['c_empirical']:.6g}, excluded = {open_ens.n_blowup}")
    return EXIT_OK if blowups == 0 else EXIT_INCONCLUSIVE


def cmd_dp_verify(cfg, writer) -> int:
    sys_ = build_system(cfg)
    violations = _gate(cfg, sys_)
    if violations:
        return _fail("hypothesis gate failed: " + "; ".join(violations))
    cost = build_cost(cfg, sys_)
    saturation = float(cfg["control"]["saturation"])
    grid = build_grid(cfg, sys_)
    T = float(cfg["solver"]["horizon"])
    x0 = ensure_field(sys_, cfg["simulation"]["x0"])
    writer.open_manifest()
    value = solve_hjb_grid(sys_, cost, saturation, T, grid)
    d_h, d_t = refinement_deltas(sys_, cost, saturation, T, grid, x0,
                                 base=value)
    eps_disc = d_h + d_t

    rng = np.random.default_rng(int(cfg["simulation"]["seed"]))
    alternatives = []
    for alt in cfg["experiment"]["alternatives"]:
        kind = alt["kind"]
        if kind == "zero":
            alternatives.append(("zero", zero_policy()))
        elif kind == "random":
            alternatives.append(
                ("random", random_ball_policy(saturation, rng.spawn(1)[0])))
        elif kind == "constant":
            z = ensure_field(sys_, alt["z"])
            alternatives.append((f"constant({np.array2string(z)})",
                                 constant_policy(z)))
        else:
            delta = float(alt["delta"])
            base = feedback_policy(sys_, value, saturation)
            alternatives.append(
                (f"perturbed_feedback({delta})",
                 perturbed_policy(base, delta, rng.spawn(1)[0])))

    report = dp_verify(sys_, cost, value, saturation, x0,
                       build_integrator(cfg),
                       int(cfg["simulation"]["n_paths"]), alternatives,
                       rng, eps_disc)
    doc = report.to_dict()
    doc["refinement"] = {"delta_h": d_h, "delta_t": d_t}
    writer.write_report("dp_report", doc)
    writer.close_manifest()
    print(report.table())
    if report.verdict == "pass":
        return EXIT_OK
    return EXIT_INCONCLUSIVE if report.verdict == "inconclusive" else EXIT_FAIL


def cmd_converge_m(cfg, writer) -> int:
    m_list = cfg["experiment"]["m_list"]
    if m_list is None:
        return _fail("converge-m needs experiment.m_list")
    if any(m > 3 for m in m_list):
        return _fail("converge-m grid solves need every m <= 3")
    if cfg["solver"]["halfwidths"] is not None:
        return _fail("converge-m sizes its own boxes; set solver.halfwidths "
                     "to null")
    saturation = float(cfg["control"]["saturation"])
    T = float(cfg["solver"]["horizon"])
    x0_full = list(cfg["simulation"]["x0"])
    seed = int(cfg["simulation"]["seed"])
    writer.open_manifest()
    rows = []
    for m in m_list:
        sys_m = build_system(cfg, m=m)
        violations = _gate(cfg, sys_m)
        if violations:
            return _fail(f"hypothesis gate failed at m={m}: "
                         + "; ".join(violations))
        cost = build_cost(cfg, sys_m)
        x0 = np.zeros(m)
        take = min(m, len(x0_full))
        x0[:take] = x0_full[:take]
        grid = build_grid(cfg, sys_m)
        value = solve_hjb_grid(sys_m, cost, saturation, T, grid)
        rng = np.random.default_rng(seed)
        ens = simulate_closed_loop(sys_m, value, saturation, x0, T,
                                   build_integrator(cfg), rng,
                                   int(cfg["simulation"]["n_paths"]))
        rep = estimate_cost(ens, cost)
        rows.append({
            "m": m, "x0": [float(v) for v in x0],
            "u_at_x0": value_at(value, T, x0),
            "j_star": rep.to_dict(),
            "n_excursions": ens.meta["n_excursions"],
        })
        print(f"m={m}: u(T, x0) = {rows[-1]['u_at_x0']:.8g}, "
              f"J(z*) = {rep.mean:.6g} +- {rep.se:.2g}")
    writer.write_report("converge_m", {"horizon": T, "rows": rows})
    writer.close_manifest()
    return EXIT_OK


def cmd_lq_oracle(cfg, writer) -> int:
    sys_ = build_system(cfg)
    blk = cfg["cost"]
    if blk["running"].get("kind") != "quadratic" or \
            blk["terminal"].get("kind") != "quadratic":
        return _fail("lq-oracle needs quadratic running and terminal costs")
    if cfg["system"]["bilinear"]:
        return _fail("lq-oracle needs system.bilinear = false")
    if float(cfg["system"]["gamma"]) != 0.0:
        return _fail("lq-oracle needs gamma = 0 (flat control weights)")
    cost = build_cost(cfg, sys_)
    saturation = float(cfg["control"]["saturation"])
    grid = build_grid(cfg, sys_)
    T = float(cfg["solver"]["horizon"])
    writer.open_manifest()

    prob = LQProblem(lambdas=sys_.lambdas, q_spectrum=sys_.q_spectrum,
                     running_weights=np.asarray(blk["running"]["weights"]),
                     terminal_weights=np.asarray(blk["terminal"]["weights"]),
                     horizon=T)
    oracle = solve_riccati(prob)
    value = solve_hjb_grid(sys_, cost, saturation, T, grid)
    mld = _solve_mild(cfg, sys_, cost, saturation, T)

    probes = _probes(cfg, sys_)
    interior = [p for p in probes
                if np.all(np.abs(p) <= grid.halfwidths / 2.0 + 1e-12)]
    if not interior:
        return _fail("no interior probes (need |x_k| <= L_k / 2)")
    rows = []
    max_rel_grid = max_rel_mild = 0.0
    for p in interior:
        exact = oracle.value(T, p)
        ug = value_at(value, T, p)
        um = value_at(mld, T, p)
        rel_g = abs(ug - exact) / max(abs(exact), 1e-12)
        rel_m = abs(um - ug) / max(abs(ug), 1e-12)
        max_rel_grid = max(max_rel_grid, rel_g)
        max_rel_mild = max(max_rel_mild, rel_m)
        rows.append({"probe": [float(v) for v in p], "oracle": exact,
                     "grid": ug, "mild": um, "rel_err_grid": rel_g,
                     "rel_mild_vs_grid": rel_m})

    x0 = ensure_field(sys_, cfg["simulation"]["x0"])
    rng = np.random.default_rng(int(cfg["simulation"]["seed"]))
    ens = simulate_controlled(sys_, oracle.policy(), x0, T,
                              build_integrator(cfg), rng.spawn(1)[0],
                              int(cfg["simulation"]["n_paths"]),
                              saturation=saturation)
    rep = estimate_cost(ens, cost)
    j_oracle = oracle.value(T, x0)
    j_gap = abs(rep.mean - j_oracle)
    j_ok = j_gap <= 4.0 * rep.se

    # grid-synthesized feedback against the linear oracle law at probe times
    grad = gradient(value)
    fb = feedback_policy(sys_, grad, saturation)
    ctrl_rows = []
    max_ctrl_rel = 0.0
    for frac in (0.25, 0.5, 0.75):
        t = frac * T
        states = np.stack(interior)
        z_grid = fb(t, states)
        z_lq = np.stack([-2.0 * oracle.p(T - t) * s for s in states])
        denom = max(float(np.max(np.abs(z_lq))), 1e-12)
        rel = float(np.max(np.abs(z_grid - z_lq)) / denom)
        max_ctrl_rel = max(max_ctrl_rel, rel)
        ctrl_rows.append({"t": t, "max_rel_err": rel})

    ok = max_rel_grid <= 1e-2 and max_rel_mild <= 2e-2 and j_ok
    writer.write_report("lq_oracle", {
        "horizon": T, "rows": rows,
        "max_rel_err_grid": max_rel_grid,
        "max_rel_mild_vs_grid": max_rel_mild,
        "closed_loop": {"j_mc": rep.to_dict(), "j_oracle": j_oracle,
                        "gap": j_gap, "ok": j_ok},
        "feedback_law": {"rows": ctrl_rows, "max_rel_err": max_ctrl_rel},
        "ok": ok,
    })
    writer.close_manifest()
    print(f"grid vs Riccati: max interior rel err = {max_rel_grid:.3g} "
          f"(tol 1e-2)")
    print(f"mild vs grid:    max interior rel err = {max_rel_mild:.3g} "
          f"(tol 2e-2)")
    print(f"J(z*) MC {rep.mean:.6g} +- {rep.se:.2g} vs oracle "
          f"{j_oracle:.6g} ({'ok' if j_ok else 'FAIL'})")
    print(f"feedback law: max rel err at probe times = {max_ctrl_rel:.3g}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "validate": cmd_validate,
    "solve-hjb": cmd_solve_hjb,
    "fk-check": cmd_fk_check,
    "simulate": cmd_simulate,
    "dp-verify": cmd_dp_verify,
    "converge-m": cmd_converge_m,
    "lq-oracle": cmd_lq_oracle,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nscontrol",
        description="Spectral stochastic control experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None,
                       help="override simulation.seed")
        p.add_argument("--out", default=None,
                       help="artifact directory (default runs/<cmd>-<fp>)")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(str(exc))
    except OSError as exc:
        return _fail(f"cannot read config: {exc}")
    if args.seed is not None:
        cfg["simulation"]["seed"] = int(args.seed)
    fp = fingerprint(cfg)
    out_dir = args.out or f"runs/{args.subcommand}-{fp[:12]}"
    writer = ArtifactWriter(out_dir, args.subcommand, fp,
                            int(cfg["simulation"]["seed"]))
    try:
        code = _COMMANDS[args.subcommand](cfg, writer)
    except (ValueError, RuntimeError) as exc:
        return _fail(str(exc))
    print(f"artifacts: {out_dir} (fingerprint {fp[:12]})")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
