"""Command-line surface: solve, construct-ne, audit, simulate, report.

Every command loads a scenario file, prints a human-readable report with
numbers at 12 significant digits, and optionally writes the same report as
JSON (full float precision, so profiles round-trip bit-exactly). Exit codes:
0 when every check passes, 2 when any check fails, 1 on errors. Set
NASH_UNICAST_LOG=debug|info|warning for logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .dynamics import DynamicsConfig, run_dynamics
from .equilibrium import audit, check_optimality, construct_ne
from .mechanism import assign_subsidies, outcome
from .scenario import (
    Scenario,
    ScenarioError,
    load_scenario,
    parse_profile,
    profile_to_labels,
)
from .solver import NonConcaveUtility, solve_centralized

log = logging.getLogger("nash_unicast")

AUDIT_CHECKS = (
    # (name, kind) where kind describes the comparison in _evaluate_checks
    ("feasibility", "true"),
    ("price_uniformity", "max 1e-9"),
    ("complementary_slackness", "max 1e-6"),
    ("tax_derivative_gap", "max 1e-5"),
    ("best_response_gap", "max 1e-4"),
    ("ir_min_payoff", "min -1e-9"),
    ("budget_gap", "relative 1e-9"),
    ("corollary_tax_gap", "max 1e-9"),
)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _evaluate_checks(report, tax_scale: float):
    checks = []
    for name, kind in AUDIT_CHECKS:
        val = getattr(report, name)
        if kind == "true":
            ok, bound = bool(val), "true"
        elif kind.startswith("max"):
            tol = float(kind.split()[1])
            ok, bound = val <= tol, f"<= {tol:g}"
        elif kind.startswith("min"):
            tol = float(kind.split()[1])
            ok, bound = val >= tol, f">= {tol:g}"
        else:  # relative budget tolerance
            tol = float(kind.split()[1]) * (1.0 + tax_scale)
            ok, bound = val <= tol, f"<= {tol:.3g}"
        checks.append({"name": name, "value": val, "bound": bound, "pass": bool(ok)})
    return checks


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    if getattr(args, "seed", None) is not None:
        scenario.mechanism["rng_seed"] = args.seed
    if getattr(args, "tolerance", None) is not None:
        scenario.solver["tolerance"] = args.tolerance
    return scenario


def _emit(report: dict, out_path, lines) -> None:
    for line in lines:
        print(line)
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        print(f"report written to {out_path}")


def _solve_block(net, res) -> dict:
    return {
        "rates": {net.user_labels[u]: v for u, v in sorted(res.rates.items())},
        "multipliers": {net.link_labels[l]: v for l, v in sorted(res.lambdas.items())},
        "nonnegativity_multipliers": {net.user_labels[u]: v for u, v in sorted(res.nus.items())},
        "objective": res.objective,
        "kkt_residual": res.kkt_residual,
        "iterations": res.iterations,
    }


def cmd_solve(args) -> int:
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    net, utilities, params, solver_config = scenario.build()
    res = solve_centralized(net, utilities, solver_config)
    report = {
        "schema": "nash-unicast/report-v1",
        "command": "solve",
        "scenario": {"name": scenario.name, "digest": scenario.digest()},
        "solve": _solve_block(net, res),
    }
    lines = [f"scenario {scenario.name} (digest {scenario.digest()})"]
    for u, v in sorted(res.rates.items()):
        lines.append(f"  rate  {net.user_labels[u]:>8}: {_fmt(v)}")
    for l, v in sorted(res.lambdas.items()):
        lines.append(f"  price {net.link_labels[l]:>8}: {_fmt(v)}")
    lines.append(f"  objective: {_fmt(res.objective)}")
    lines.append(f"  kkt residual: {_fmt(res.kkt_residual)} ({res.iterations} iterations)")
    _emit(report, args.out, lines)
    return 0


def _audit_and_checks(net, utilities, profile, params, subsidies, grid):
    rep = audit(net, utilities, profile, params, subsidies, br_grid=grid)
    alloc = outcome(net, profile, params, subsidies)
    tax_scale = sum(abs(t) for t in alloc.taxes.values())
    checks = _evaluate_checks(rep, tax_scale)
    return rep, alloc, checks


def _breakdown_block(net, alloc) -> dict:
    """Per-(user, link) tax components plus per-user subsidy transfers."""
    rows = {}
    for (u, l), lt in sorted(alloc.breakdown.link_taxes.items()):
        rows.setdefault(net.user_labels[u], {})[net.link_labels[l]] = {
            "price_part": lt.price_part,
            "incentive_part": lt.incentive_part,
            "balance_part": lt.balance_part,
            "penalty": lt.penalty,
            "total": lt.total,
        }
    return {
        "link_taxes": rows,
        "subsidies_received": {
            net.user_labels[u]: v for u, v in sorted(alloc.breakdown.subsidies.items())
        },
        "totals": {net.user_labels[u]: v for u, v in sorted(alloc.taxes.items())},
    }


def _report_lines(scenario, net, alloc, checks, extra=()):
    lines = [f"scenario {scenario.name} (digest {scenario.digest()})"]
    lines.extend(extra)
    lines.append("  taxes (price + incentive + balance = total per link):")
    for (u, l), lt in sorted(alloc.breakdown.link_taxes.items()):
        lines.append(
            f"    {net.user_labels[u]:>8} @{net.link_labels[l]:<8}"
            f" {_fmt(lt.price_part):>18} {_fmt(lt.incentive_part):>18}"
            f" {_fmt(lt.balance_part):>18} = {_fmt(lt.total)}"
        )
    for u in net.users():
        lines.append(
            f"    {net.user_labels[u]:>8}: t={_fmt(alloc.taxes[u])}"
            f"  (subsidy received {_fmt(alloc.breakdown.subsidies[u])})"
        )
    for c in checks:
        status = "PASS" if c["pass"] else "FAIL"
        lines.append(f"  [{status}] {c['name']}: {_fmt(c['value'])} ({c['bound']})")
    return lines


def cmd_construct_ne(args) -> int:
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    net, utilities, params, solver_config = scenario.build()
    res = solve_centralized(net, utilities, solver_config)
    profile = construct_ne(net, utilities, params, solve_result=res)
    subsidies = assign_subsidies(net, params.rng_seed)
    rep, alloc, checks = _audit_and_checks(net, utilities, profile, params, subsidies, args.grid)
    opt_ok, opt_gap = check_optimality(net, utilities, profile, res, params, subsidies)
    checks.append({"name": "optimality_gap", "value": opt_gap, "bound": "<= 1e-06", "pass": opt_ok})
    report = {
        "schema": "nash-unicast/report-v1",
        "command": "construct-ne",
        "scenario": {"name": scenario.name, "digest": scenario.digest()},
        "solve": _solve_block(net, res),
        "profile": profile_to_labels(profile, net),
        "subsidies": {net.link_labels[l]: net.user_labels[u] for l, u in sorted(subsidies.items())},
        "audit": {k: getattr(rep, k) for k, _ in AUDIT_CHECKS},
        "tax_breakdown": _breakdown_block(net, alloc),
        "checks": checks,
    }
    extra = [
        "  equilibrium profile:",
        *(
            f"    {net.user_labels[u]:>8}: rate={_fmt(m.rate)} prices="
            + " ".join(f"{net.link_labels[l]}:{_fmt(p)}" for l, p in sorted(m.prices.items()))
            for u, m in sorted(profile.items())
        ),
    ]
    _emit(report, args.out, _report_lines(scenario, net, alloc, checks, extra))
    return 0 if all(c["pass"] for c in checks) else 2


def _load_profile_arg(path, net):
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict) and "profile" in data:
        data = data["profile"]
    return parse_profile(data, net)


def cmd_audit(args) -> int:
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    net, utilities, params, solver_config = scenario.build()
    if args.profile:
        profile = _load_profile_arg(args.profile, net)
    else:
        profile = scenario.profile_messages(net)
        if profile is None:
            print("audit needs a profile: pass --profile or embed one in the scenario", file=sys.stderr)
            return 1
    subsidies = assign_subsidies(net, params.rng_seed)
    rep, alloc, checks = _audit_and_checks(net, utilities, profile, params, subsidies, args.grid)
    try:
        res = solve_centralized(net, utilities, solver_config)
        opt_ok, opt_gap = check_optimality(net, utilities, profile, res, params, subsidies)
        checks.append({"name": "optimality_gap", "value": opt_gap, "bound": "<= 1e-06", "pass": opt_ok})
    except NonConcaveUtility:
        log.info("optimality check skipped: non-concave utilities")
    report = {
        "schema": "nash-unicast/report-v1",
        "command": "audit",
        "scenario": {"name": scenario.name, "digest": scenario.digest()},
        "profile": profile_to_labels(profile, net),
        "audit": {k: getattr(rep, k) for k, _ in AUDIT_CHECKS},
        "tax_breakdown": _breakdown_block(net, alloc),
        "checks": checks,
    }
    _emit(report, args.out, _report_lines(scenario, net, alloc, checks))
    if not all(c["pass"] for c in checks):
        failing = ", ".join(c["name"] for c in checks if not c["pass"])
        print(f"failed checks: {failing}", file=sys.stderr)
        return 2
    return 0


def cmd_simulate(args) -> int:
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    net, utilities, params, _ = scenario.build()
    if args.profile:
        start = _load_profile_arg(args.profile, net)
    else:
        start = scenario.profile_messages(net)
    if start is None:
        print("simulate needs a start profile: pass --profile or embed one", file=sys.stderr)
        return 1
    config = DynamicsConfig(
        schedule=args.schedule,
        seed=args.seed if args.seed is not None else int(scenario.mechanism.get("rng_seed", 0)),
        max_rounds=args.rounds,
        br_grid=args.grid,
        stop_tolerance=args.stop_tolerance,
    )
    traj = run_dynamics(net, utilities, start, config, params)
    report = {
        "schema": "nash-unicast/report-v1",
        "command": "simulate",
        "scenario": {"name": scenario.name, "digest": scenario.digest()},
        "verdict": traj.verdict,
        "rounds": traj.rounds,
        "moves": [
            {
                "round": s.round,
                "user": net.user_labels[s.user],
                "rate": s.new.rate,
                "payoff_delta": s.payoff_delta,
            }
            for s in traj.steps
        ],
        "final_profile": profile_to_labels(traj.final_profile, net),
    }
    lines = [
        f"scenario {scenario.name} (digest {scenario.digest()})",
        f"  verdict: {traj.verdict} after {traj.rounds} rounds, {len(traj.steps)} moves",
    ]
    for s in traj.steps[:20]:
        lines.append(
            f"    round {s.round}: {net.user_labels[s.user]} -> rate {_fmt(s.new.rate)}"
            f" (payoff +{_fmt(s.payoff_delta)})"
        )
    if len(traj.steps) > 20:
        lines.append(f"    ... {len(traj.steps) - 20} more moves")
    _emit(report, args.out, lines)
    return 0


def cmd_report(args) -> int:
    directory = Path(args.scenario)
    if not directory.is_dir():
        print(f"{directory} is not a directory of scenarios", file=sys.stderr)
        return 1
    rows = []
    worst = 0
    for path in sorted(directory.glob("*.json")):
        try:
            scenario = _apply_overrides(load_scenario(path), args)
            net, utilities, params, solver_config = scenario.build()
            subsidies = assign_subsidies(net, params.rng_seed)
            row = {"file": path.name, "name": scenario.name, "digest": scenario.digest()}
            if all(u.is_concave for u in utilities.values()):
                res = solve_centralized(net, utilities, solver_config)
                profile = construct_ne(net, utilities, params, solve_result=res)
                row["objective"] = res.objective
            else:
                profile = scenario.profile_messages(net)
                if profile is None:
                    row["verdict"] = "skipped"
                    row["error"] = "non-concave utilities and no embedded profile"
                    rows.append(row)
                    continue
            _, _, checks = _audit_and_checks(net, utilities, profile, params, subsidies, args.grid)
            ok = all(c["pass"] for c in checks)
            worst = max(worst, 0 if ok else 2)
            row["verdict"] = "pass" if ok else "fail"
            row["failing"] = [c["name"] for c in checks if not c["pass"]]
            rows.append(row)
        except (ScenarioError, NonConcaveUtility) as exc:
            rows.append({"file": path.name, "verdict": "error", "error": str(exc)})
            worst = max(worst, 2)
    report = {"schema": "nash-unicast/report-v1", "command": "report", "scenarios": rows}
    lines = [f"{'file':<32} {'verdict':<8} {'objective':>16}  notes"]
    for r in rows:
        obj = _fmt(r.get("objective", "")) if "objective" in r else ""
        notes = ", ".join(r.get("failing", [])) or r.get("error", "")
        lines.append(f"{r['file']:<32} {r['verdict']:<8} {obj:>16}  {notes}")
    _emit(report, args.out, lines)
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nash-unicast",
        description="Decentralized unicast rate allocation: solve, build and audit equilibria.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, profile=False):
        p.add_argument("--scenario", required=True, help="scenario file (or directory for report)")
        p.add_argument("--out", default=None, help="write the JSON report here")
        p.add_argument("--grid", type=int, default=200, help="deviation-search points per axis")
        p.add_argument("--seed", type=int, default=None, help="override the scenario rng seed")
        p.add_argument("--tolerance", type=float, default=None, help="override the solver tolerance")
        if profile:
            p.add_argument("--profile", default=None, help="message profile JSON (bare or prior report)")

    common(sub.add_parser("solve", help="solve the centralized allocation"))
    common(sub.add_parser("construct-ne", help="build and audit the equilibrium profile"))
    common(sub.add_parser("audit", help="audit a given message profile"), profile=True)
    sim = sub.add_parser("simulate", help="run best-response dynamics")
    common(sim, profile=True)
    sim.add_argument("--rounds", type=int, default=50)
    sim.add_argument("--schedule", choices=("round_robin", "random"), default="round_robin")
    sim.add_argument("--stop-tolerance", type=float, default=1e-9, dest="stop_tolerance")
    common(sub.add_parser("report", help="summarize a directory of scenarios"))
    return parser


HANDLERS = {
    "solve": cmd_solve,
    "construct-ne": cmd_construct_ne,
    "audit": cmd_audit,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    level = os.environ.get("NASH_UNICAST_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
