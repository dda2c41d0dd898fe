"""Grid operator recourse: minimum load shed DCOPF under a fixed attack.

The operational model activates Ohm's law per line through big-M rows so
the same LP shape covers every attack (relatively complete recourse: the
operator can always shed everything, so the problem is never
infeasible).  The big-M constant is B_k * (2*pi + shift_k), which is
exactly tight for the +/- pi angle box; nonnegative shift angles are
assumed.

`solve_operator_reduced` is an independent oracle for the same physics:
it deletes dead components and uses plain Ohm equalities, so agreement
between the two routes checks the big-M construction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .lp import EQ, GE, LE, LinearProgram, LpSolution, solve_lp
from .model import GridCase

log = logging.getLogger(__name__)

ANGLE_BOUND = math.pi


@dataclass(frozen=True)
class Attack:
    """An attacker decision plus its derived physical effects.

    `attacked` is the compromised enclave set (ancestor-closed in the
    segmented forest), `relays_down` the relays those enclaves control,
    and the three component sets are what those relays switch off.
    """

    attacked: tuple[str, ...] = ()
    relays_down: frozenset[str] = frozenset()
    lines_down: frozenset[str] = frozenset()
    gens_down: frozenset[str] = frozenset()
    loads_off: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "attacked", tuple(sorted(self.attacked)))

    def effects_key(self) -> tuple:
        """Hashable key identifying the physical outage pattern only."""
        return (tuple(sorted(self.lines_down)), tuple(sorted(self.gens_down)),
                tuple(sorted(self.loads_off)))

    def line_up(self, line_id: str) -> int:
        return 0 if line_id in self.lines_down else 1

    def gen_up(self, gen_id: str) -> int:
        return 0 if gen_id in self.gens_down else 1

    def load_on(self, load_id: str) -> int:
        return 0 if load_id in self.loads_off else 1


EMPTY_ATTACK = Attack()


@dataclass
class Dispatch:
    angles: dict[str, float]
    flows: dict[str, float]
    generation: dict[str, float]
    shed: dict[str, float]
    total_shed: float


@dataclass
class DualSolution:
    """Duals of the operator LP, reported as nonnegative magnitudes.

    `mu` is free (balance rows).  `xi_minus`/`xi_plus` belong to the
    upper/lower big-M Ohm rows, `lam_minus`/`lam_plus` to the upper/lower
    flow bounds, `gamma` to generation caps, `alpha_plus`/`alpha_minus`
    to the forced-shed lower bound and the demand cap, and
    `angle_dual_hi`/`angle_dual_lo` to the angle box (named to avoid any
    clash with the segmentation model's product binaries).
    """

    mu: dict[str, float]
    xi_plus: dict[str, float]
    xi_minus: dict[str, float]
    lam_plus: dict[str, float]
    lam_minus: dict[str, float]
    gamma: dict[str, float]
    alpha_plus: dict[str, float]
    alpha_minus: dict[str, float]
    angle_dual_hi: dict[str, float]
    angle_dual_lo: dict[str, float]
    flags: list[str] = field(default_factory=list)


def big_m(susceptance: float, shift: float) -> float:
    return susceptance * (2.0 * ANGLE_BOUND + shift)


def build_operator_lp(grid: GridCase, attack: Attack) -> LinearProgram:
    """The operator's load-shed LP for one outage pattern.

    Rows: nodal balance equalities; big-M Ohm rows pairwise per line;
    flow bounds scaled by line status; generation caps scaled by
    generator status; shed bounds with forced shedding of offline loads;
    the +/- pi angle box.  Objective: minimise total shed.  No reference
    bus is pinned: the angle box alone keeps the LP bounded, and pinning
    would change the duals.
    """
    lp = LinearProgram(f"dcopf[{grid.name}]")
    # variable lower bounds sit strictly outside the named bound rows so the
    # duals always land on the rows (the bounds only anchor the simplex)
    for s in grid.substations:
        lp.add_var(f"theta[{s}]", lb=-2.0 * ANGLE_BOUND, ub=None)
    for k in grid.lines:
        lp.add_var(f"f[{k.id}]", lb=-2.0 * k.limit, ub=None)
    for g in grid.generators:
        lp.add_var(f"p[{g.id}]", lb=0.0)
    for d in grid.loads:
        lp.add_var(f"l[{d.id}]", lb=0.0)

    for s in grid.substations:
        coeffs: dict[str, float] = {}
        for k in grid.lines:
            if k.dest == s:
                coeffs[f"f[{k.id}]"] = coeffs.get(f"f[{k.id}]", 0.0) + 1.0
            if k.origin == s:
                coeffs[f"f[{k.id}]"] = coeffs.get(f"f[{k.id}]", 0.0) - 1.0
        for g in grid.gens_at(s):
            coeffs[f"p[{g.id}]"] = 1.0
        rhs = 0.0
        for d in grid.loads_at(s):
            coeffs[f"l[{d.id}]"] = 1.0
            rhs += d.demand
        lp.add_constr(f"bal[{s}]", coeffs, EQ, rhs)

    for k in grid.lines:
        v = attack.line_up(k.id)
        slack = big_m(k.susceptance, k.shift) * (1 - v)
        base = {f"f[{k.id}]": 1.0,
                f"theta[{k.origin}]": -k.susceptance,
                f"theta[{k.dest}]": k.susceptance}
        lp.add_constr(f"ohm_hi[{k.id}]", base, LE, -k.susceptance * k.shift + slack)
        lp.add_constr(f"ohm_lo[{k.id}]", base, GE, -k.susceptance * k.shift - slack)
        lp.add_constr(f"flow_hi[{k.id}]", {f"f[{k.id}]": 1.0}, LE, k.limit * v)
        lp.add_constr(f"flow_lo[{k.id}]", {f"f[{k.id}]": 1.0}, GE, -k.limit * v)

    for g in grid.generators:
        lp.add_constr(f"gen_hi[{g.id}]", {f"p[{g.id}]": 1.0}, LE,
                      g.capacity * attack.gen_up(g.id))
    for d in grid.loads:
        u = attack.load_on(d.id)
        lp.add_constr(f"shed_lo[{d.id}]", {f"l[{d.id}]": 1.0}, GE, (1 - u) * d.demand)
        lp.add_constr(f"shed_hi[{d.id}]", {f"l[{d.id}]": 1.0}, LE, d.demand)
    for s in grid.substations:
        lp.add_constr(f"ang_hi[{s}]", {f"theta[{s}]": 1.0}, LE, ANGLE_BOUND)
        lp.add_constr(f"ang_lo[{s}]", {f"theta[{s}]": 1.0}, GE, -ANGLE_BOUND)

    lp.set_objective({f"l[{d.id}]": 1.0 for d in grid.loads}, sense="min")
    return lp


def _extract(grid: GridCase, attack: Attack, sol: LpSolution) -> tuple[Dispatch, DualSolution]:
    disp = Dispatch(
        angles={s: sol.values[f"theta[{s}]"] for s in grid.substations},
        flows={k.id: sol.values[f"f[{k.id}]"] for k in grid.lines},
        generation={g.id: sol.values[f"p[{g.id}]"] for g in grid.generators},
        shed={d.id: sol.values[f"l[{d.id}]"] for d in grid.loads},
        total_shed=float(sol.objective),
    )
    y = sol.duals
    dual = DualSolution(
        mu={s: y[f"bal[{s}]"] for s in grid.substations},
        xi_minus={k.id: -y[f"ohm_hi[{k.id}]"] for k in grid.lines},
        xi_plus={k.id: y[f"ohm_lo[{k.id}]"] for k in grid.lines},
        lam_minus={k.id: -y[f"flow_hi[{k.id}]"] for k in grid.lines},
        lam_plus={k.id: y[f"flow_lo[{k.id}]"] for k in grid.lines},
        gamma={g.id: -y[f"gen_hi[{g.id}]"] for g in grid.generators},
        alpha_plus={d.id: y[f"shed_lo[{d.id}]"] for d in grid.loads},
        alpha_minus={d.id: -y[f"shed_hi[{d.id}]"] for d in grid.loads},
        angle_dual_hi={s: -y[f"ang_hi[{s}]"] for s in grid.substations},
        angle_dual_lo={s: y[f"ang_lo[{s}]"] for s in grid.substations},
    )
    # heuristic capacity bounds on duals: violations are surfaced, not fatal
    tol = 1e-6
    for d in grid.loads:
        if dual.alpha_plus[d.id] > d.demand + tol or dual.alpha_minus[d.id] > d.demand + tol:
            dual.flags.append(f"alpha[{d.id}] exceeds demand bound")
    for g in grid.generators:
        if dual.gamma[g.id] > max(g.capacity, 1.0) + tol:
            dual.flags.append(f"gamma[{g.id}] exceeds capacity bound")
    for k in grid.lines:
        if dual.lam_plus[k.id] > k.limit + tol or dual.lam_minus[k.id] > k.limit + tol:
            dual.flags.append(f"lambda[{k.id}] exceeds limit bound")
    for msg in dual.flags:
        log.warning("dual bound heuristic violated: %s", msg)
    return disp, dual


def solve_operator(grid: GridCase, attack: Attack) -> tuple[Dispatch, DualSolution]:
    """Solve the operator LP.  Always optimal: shedding everything is feasible."""
    sol = solve_lp(build_operator_lp(grid, attack))
    if not sol.optimal:
        raise RuntimeError(
            f"operator LP returned {sol.status}; recourse guarantees optimality")
    return _extract(grid, attack, sol)


def dual_objective(grid: GridCase, attack: Attack, dual: DualSolution) -> float:
    """Value of the dual objective for the operator LP at this attack.

    This is the exact dual of the rows built above (the shift-angle term
    enters with opposite signs on the two Ohm duals).
    """
    total = 0.0
    for s in grid.substations:
        dsum = sum(d.demand for d in grid.loads_at(s))
        total += dual.mu[s] * dsum
        total -= ANGLE_BOUND * (dual.angle_dual_hi[s] + dual.angle_dual_lo[s])
    for d in grid.loads:
        u = attack.load_on(d.id)
        total += d.demand * (dual.alpha_plus[d.id] * (1 - u) - dual.alpha_minus[d.id])
    for k in grid.lines:
        v = attack.line_up(k.id)
        m = big_m(k.susceptance, k.shift)
        total += k.susceptance * k.shift * (dual.xi_minus[k.id] - dual.xi_plus[k.id])
        total -= m * (1 - v) * (dual.xi_plus[k.id] + dual.xi_minus[k.id])
        total -= k.limit * v * (dual.lam_plus[k.id] + dual.lam_minus[k.id])
    for g in grid.generators:
        total -= g.capacity * attack.gen_up(g.id) * dual.gamma[g.id]
    return total


def check_strong_duality(grid: GridCase, attack: Attack,
                         primal: Dispatch, dual: DualSolution) -> float:
    """|dual objective - total shed| in MW; ~0 at any true optimum."""
    return abs(dual_objective(grid, attack, dual) - primal.total_shed)


def solve_operator_reduced(grid: GridCase, attack: Attack) -> Dispatch:
    """Independent oracle: delete dead components, then solve a plain DCOPF.

    Dead lines are removed outright (no big-M rows), dead generators are
    removed, and offline loads have their shed variable pinned to full
    demand.  The optimal total shed must match `solve_operator`.
    """
    lp = LinearProgram(f"dcopf-reduced[{grid.name}]")
    for s in grid.substations:
        lp.add_var(f"theta[{s}]", lb=-ANGLE_BOUND, ub=ANGLE_BOUND)
    alive_lines = [k for k in grid.lines if attack.line_up(k.id)]
    alive_gens = [g for g in grid.generators if attack.gen_up(g.id)]
    for k in alive_lines:
        lp.add_var(f"f[{k.id}]", lb=-k.limit, ub=k.limit)
    for g in alive_gens:
        lp.add_var(f"p[{g.id}]", lb=0.0, ub=g.capacity)
    for d in grid.loads:
        if attack.load_on(d.id):
            lp.add_var(f"l[{d.id}]", lb=0.0, ub=d.demand)
        else:
            lp.add_var(f"l[{d.id}]", lb=d.demand, ub=d.demand)

    alive_line_ids = {k.id for k in alive_lines}
    alive_gen_ids = {g.id for g in alive_gens}
    for s in grid.substations:
        coeffs: dict[str, float] = {}
        for k in alive_lines:
            if k.dest == s:
                coeffs[f"f[{k.id}]"] = coeffs.get(f"f[{k.id}]", 0.0) + 1.0
            if k.origin == s:
                coeffs[f"f[{k.id}]"] = coeffs.get(f"f[{k.id}]", 0.0) - 1.0
        for g in grid.gens_at(s):
            if g.id in alive_gen_ids:
                coeffs[f"p[{g.id}]"] = 1.0
        rhs = 0.0
        for d in grid.loads_at(s):
            coeffs[f"l[{d.id}]"] = 1.0
            rhs += d.demand
        lp.add_constr(f"bal[{s}]", coeffs, EQ, rhs)
    for k in alive_lines:
        lp.add_constr(f"ohm[{k.id}]",
                      {f"f[{k.id}]": 1.0,
                       f"theta[{k.origin}]": -k.susceptance,
                       f"theta[{k.dest}]": k.susceptance},
                      EQ, -k.susceptance * k.shift)
    lp.set_objective({f"l[{d.id}]": 1.0 for d in grid.loads}, sense="min")

    sol = solve_lp(lp)
    if not sol.optimal:
        raise RuntimeError(
            f"reduced operator LP returned {sol.status}; recourse guarantees optimality")
    flows = {k.id: (sol.values[f"f[{k.id}]"] if k.id in alive_line_ids else 0.0)
             for k in grid.lines}
    gen = {g.id: (sol.values[f"p[{g.id}]"] if g.id in alive_gen_ids else 0.0)
           for g in grid.generators}
    return Dispatch(
        angles={s: sol.values[f"theta[{s}]"] for s in grid.substations},
        flows=flows,
        generation=gen,
        shed={d.id: sol.values[f"l[{d.id}]"] for d in grid.loads},
        total_shed=float(sol.objective),
    )
