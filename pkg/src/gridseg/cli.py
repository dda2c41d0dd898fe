"""Command-line front end.

Subcommands mirror the nesting of the interdiction game so each level is
independently invocable: `solve` (full trilevel), `attack` (worst attack
on a given plan), `dcopf` (operator recourse for a fixed enclave set),
`sweep` (trilevel over a budget list) and `render` (DOT drawing of a
segmented forest with an optional attack highlighted).

Exit codes: 0 success, 1 validation problems (bad flags, unreadable or
inconsistent instances, infeasible budgets), 2 internal or numeric errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .attacker import (
    AttackBudget, AttackEvaluator, AttackerDualBounds, NotAncestorClosedError,
    PlanInfeasibleError, SegmentedForest, apply_segmentation, derive_effects,
    worst_attack_enumerate, worst_attack_milp,
)
from .dcopf import Attack, check_strong_duality, solve_operator
from .defender import SolveRecord, budget_sweep, solve_trilevel
from .ingest import IngestError, instance_digest, parse_comm_topology, \
    parse_grid_case, write_results
from .lp import LpNumericError
from .model import DefenderBudget, total_demand, validate_instance
from .plans import SegmentationPlan, identity_plan

WORKERS_ENV = "GRIDSEG_WORKERS"


class _CliError(Exception):
    pass


def render_dot(forest: SegmentedForest, attack: Attack | None = None) -> str:
    """Deterministic DOT text: enclaves and relay leaves, tier-ranked.

    Attacked enclaves and compromised relays are drawn filled with a
    distinct style; everything else is byte-identical with or without an
    attack.
    """
    attacked = set(attack.attacked) if attack is not None else set()
    relays_down = set(attack.relays_down) if attack is not None else set()
    out = ["digraph commnet {", "  rankdir=TB;", "  node [shape=box];"]
    tiers = {"ba": [], "cc": [], "ss": []}
    for n in forest.nodes:
        tiers[forest.tier[n]].append(n)
    for tier in ("ba", "cc", "ss"):
        names = "; ".join(f'"{n}"' for n in sorted(tiers[tier]))
        out.append(f"  {{ rank=same; {names} }}")
    relay_ids = sorted(r for rs in forest.relays_of.values() for r in rs)
    if relay_ids:
        names = "; ".join(f'"{r}"' for r in relay_ids)
        out.append(f"  {{ rank=same; {names} }}")
    for n in forest.nodes:
        style = ' [style=filled, fillcolor=tomato, label="%s (attacked)"]' % n \
            if n in attacked else ""
        out.append(f'  "{n}"{style};')
    for r in relay_ids:
        style = ' [shape=ellipse, style=filled, fillcolor=tomato]' \
            if r in relays_down else " [shape=ellipse]"
        out.append(f'  "{r}"{style};')
    for child in sorted(forest.parent):
        out.append(f'  "{forest.parent[child]}" -> "{child}";')
    for e in sorted(forest.relays_of):
        for r in forest.relays_of[e]:
            out.append(f'  "{e}" -> "{r}";')
    out.append("}")
    return "\n".join(out) + "\n"


def _read(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise _CliError(f"cannot read {path}: {exc}") from exc


def _load_instance(args):
    grid = parse_grid_case(_read(args.grid))
    comm = parse_comm_topology(_read(args.comm), grid=grid)
    report = validate_instance(grid, comm)
    if not report.ok:
        lines = "\n".join(f"  {v.code}: {v.message}" for v in report.violations)
        raise _CliError(f"instance is inconsistent:\n{lines}")
    return grid, comm


def _load_plan(args, comm) -> SegmentationPlan:
    if getattr(args, "plan", None):
        with open(args.plan, "r", encoding="utf-8") as fh:
            return SegmentationPlan.from_json_dict(json.load(fh))
    return identity_plan(comm)


def _emit(args, text: str) -> None:
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _maybe_dot(args, forest, attack) -> None:
    if getattr(args, "dot", None):
        with open(args.dot, "w", encoding="utf-8") as fh:
            fh.write(render_dot(forest, attack))


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


def _cmd_solve(args) -> int:
    grid, comm = _load_instance(args)
    rec = solve_trilevel(grid, comm,
                         DefenderBudget(args.new_ss, args.new_cc, args.new_ba),
                         AttackBudget(args.attack_budget),
                         oracle=args.oracle, workers=_workers(args),
                         allow_childless_new=not args.forbid_childless)
    _emit(args, write_results(rec))
    if args.verbose:
        print(f"load shed: {rec.load_shed_mw:.6f} MW "
              f"({rec.wall_time_s:.1f}s)", file=sys.stderr)
    _maybe_dot(args, apply_segmentation(comm, rec.plan), rec.attack)
    return 0


def _cmd_sweep(args) -> int:
    grid, comm = _load_instance(args)
    budgets = []
    for token in args.budgets.split(";"):
        parts = [p.strip() for p in token.split(",")]
        if len(parts) != 3:
            raise _CliError(f"bad budget triple {token!r}; want ss,cc,ba")
        budgets.append(DefenderBudget(*(int(p) for p in parts)))
    recs = budget_sweep(grid, comm, budgets, AttackBudget(args.attack_budget),
                        oracle=args.oracle, workers=_workers(args),
                        allow_childless_new=not args.forbid_childless)
    _emit(args, write_results(recs))
    if args.verbose:
        for rec in recs:
            print(f"{rec.defender_budget}: {rec.load_shed_mw:.6f} MW",
                  file=sys.stderr)
    return 0


def _cmd_attack(args) -> int:
    grid, comm = _load_instance(args)
    plan = _load_plan(args, comm)
    forest = apply_segmentation(comm, plan)
    budget = AttackBudget(args.attack_budget)
    ev = AttackEvaluator(grid)
    if args.oracle == "milp":
        attack, shed = worst_attack_milp(forest, grid, budget, evaluator=ev)
    else:
        attack, shed = worst_attack_enumerate(forest, grid, budget, evaluator=ev)
    rec = SolveRecord(
        digest=instance_digest(grid, comm), grid_name=grid.name,
        defender_budget=(len(plan.new_enclaves.get("ss", ())),
                         len(plan.new_enclaves.get("cc", ())),
                         len(plan.new_enclaves.get("ba", ()))),
        attack_budget=budget.enclaves, oracle=args.oracle,
        load_shed_mw=shed, plan=plan, attack=attack,
        operator_solves=ev.lp_solves,
        dual_bound_constants=(AttackerDualBounds().record_dict()
                              if args.oracle == "milp" else {}))
    _emit(args, write_results(rec))
    _maybe_dot(args, forest, attack)
    return 0


def _cmd_dcopf(args) -> int:
    grid, comm = _load_instance(args)
    plan = _load_plan(args, comm)
    forest = apply_segmentation(comm, plan)
    enclaves = [e.strip() for e in args.attacked.split(",") if e.strip()] \
        if args.attacked else []
    attack = derive_effects(forest, grid, enclaves)
    dispatch, dual = solve_operator(grid, attack)
    residual = check_strong_duality(grid, attack, dispatch, dual)
    payload = {
        "digest": instance_digest(grid, comm),
        "attacked": list(attack.attacked),
        "relays_down": sorted(attack.relays_down),
        "load_shed_mw": dispatch.total_shed,
        "total_demand_mw": total_demand(grid),
        "strong_duality_residual_mw": residual,
        "shed": {d: dispatch.shed[d] for d in sorted(dispatch.shed)},
        "generation": {g: dispatch.generation[g]
                       for g in sorted(dispatch.generation)},
        "dual_flags": list(dual.flags),
    }
    _emit(args, write_results(payload))
    _maybe_dot(args, forest, attack)
    return 0


def _cmd_render(args) -> int:
    grid, comm = _load_instance(args)
    plan = _load_plan(args, comm)
    forest = apply_segmentation(comm, plan)
    attack = None
    if args.attacked:
        enclaves = [e.strip() for e in args.attacked.split(",") if e.strip()]
        attack = derive_effects(forest, grid, enclaves)
    _emit(args, render_dot(forest, attack))
    return 0


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridseg",
        description="Exact trilevel segmentation planning for grid "
                    "communication networks.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, budgets=False, plan=False, dot=True):
        p.add_argument("--grid", required=True, help="grid case file")
        p.add_argument("--comm", required=True, help="communication topology file")
        p.add_argument("--out", help="write the result file here (default stdout)")
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker processes (default ${WORKERS_ENV} or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
        if dot:
            p.add_argument("--dot", help="also write a DOT rendering here")
        if budgets:
            p.add_argument("--attack-budget", type=int, required=True,
                           help="max enclaves the attacker can penetrate")
            p.add_argument("--oracle", choices=("enumerate", "milp"),
                           default="enumerate")
            p.add_argument("--forbid-childless", action="store_true",
                           help="reject plans whose new parent-tier enclaves "
                                "have no children")
        if plan:
            p.add_argument("--plan", help="segmentation plan JSON "
                                          "(default: identity plan)")

    p = sub.add_parser("solve", help="full trilevel solve")
    common(p, budgets=True)
    p.add_argument("--new-ss", type=int, default=0)
    p.add_argument("--new-cc", type=int, default=0)
    p.add_argument("--new-ba", type=int, default=0)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("sweep", help="trilevel solves over a budget list")
    common(p, budgets=True, dot=False)
    p.add_argument("--budgets", required=True,
                   help="semicolon-separated ss,cc,ba triples, "
                        "e.g. '0,1,0;1,0,0;0,0,2'")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("attack", help="worst attack against one plan")
    common(p, budgets=True, plan=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("dcopf", help="operator recourse for a fixed attack")
    common(p, plan=True)
    p.add_argument("--attacked", default="",
                   help="comma-separated attacked enclave ids (ancestor-closed)")
    p.set_defaults(func=_cmd_dcopf)

    p = sub.add_parser("render", help="DOT rendering of a segmented forest")
    common(p, plan=True, dot=False)
    p.add_argument("--attacked", default="",
                   help="comma-separated attacked enclave ids to highlight")
    p.set_defaults(func=_cmd_render)
    return ap


def run(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (_CliError, IngestError, PlanInfeasibleError, NotAncestorClosedError,
            ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LpNumericError, RuntimeError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
