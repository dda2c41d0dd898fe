"""Worst-case attacker over a segmented communication forest.

Two independent exact oracles compute the highest-load-shed attack under
a pivoting budget: explicit enumeration of ancestor-closed enclave sets,
and a single-level MILP obtained by dualising the operator LP and
linearising every dual-times-binary product with envelope rows.  The
oracles must agree; the regression suite checks that on random plans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dcopf import (Attack, Dispatch, DualSolution, big_m, solve_operator,
                    solve_operator_reduced)
from .lp import EQ, GE, LE, LinearProgram, MixedBinaryProgram, solve_milp
from .model import TIER_BA, TIER_CC, TIER_SS, CommNetwork, GridCase
from .plans import SegmentationPlan, identity_plan

TIER_RANK = {TIER_BA: 0, TIER_CC: 1, TIER_SS: 2}
ORACLE_AGREEMENT_TOL = 1e-4


class PlanInfeasibleError(Exception):
    """A plan violates a defender constraint family."""

    def __init__(self, family: str, message: str):
        self.family = family
        super().__init__(f"plan infeasible [{family}]: {message}")


class NotAncestorClosedError(Exception):
    """An attacked enclave's parent is not attacked."""


class DualBoundViolationError(Exception):
    """The attacker MILP claimed more shed than the primal re-solve allows,
    so a heuristic dual bound was too tight somewhere that mattered."""


@dataclass(frozen=True)
class AttackBudget:
    enclaves: int

    def __post_init__(self):
        if self.enclaves < 0:
            raise ValueError("attack budget must be nonnegative")


@dataclass(frozen=True)
class SegmentedForest:
    """Concrete enclave forest after applying a segmentation plan."""

    nodes: tuple[str, ...]
    tier: dict[str, str]
    entity: dict[str, str]
    parent: dict[str, str]                   # absent for balancing-authority roots
    children: dict[str, tuple[str, ...]]
    relays_of: dict[str, tuple[str, ...]]    # substation enclave -> relays
    owner_of_relay: dict[str, str]
    relay_lines: dict[str, tuple[str, ...]]
    relay_gens: dict[str, tuple[str, ...]]
    relay_loads: dict[str, tuple[str, ...]]

    @property
    def roots(self) -> tuple[str, ...]:
        return tuple(n for n in self.nodes if n not in self.parent)

    def chain(self, node: str) -> tuple[str, ...]:
        """The node and its ancestors up to the root."""
        out = [node]
        while out[-1] in self.parent:
            out.append(self.parent[out[-1]])
        return tuple(out)

    def topo_nodes(self) -> list[str]:
        return sorted(self.nodes, key=lambda n: (TIER_RANK[self.tier[n]], n))


def apply_segmentation(comm: CommNetwork, plan: SegmentationPlan) -> SegmentedForest:
    """Expand the forest for a plan, checking every defender constraint family.

    Raises PlanInfeasibleError naming the violated family:
    ``relay-ownership`` (each relay controlled by exactly one enclave of
    its own substation), ``relay-coverage`` (every substation enclave
    controls a relay), ``parent-cardinality`` (each non-root enclave has
    exactly one parent), ``entity-assignment`` (each new enclave sits in
    exactly one entity of its tier), ``control-structure`` (parent edges
    follow the original entity control edges).
    """
    existing = set(comm.enclaves)
    entity: dict[str, str] = dict(comm.enclave_entity)
    tier: dict[str, str] = {}
    for e in comm.enclaves:
        t = comm.tier_of_entity(comm.enclave_entity[e])
        if t is None:
            raise PlanInfeasibleError("entity-assignment",
                                      f"existing enclave {e} has unknown entity")
        tier[e] = t

    nodes = list(comm.enclaves)
    for t, ids in plan.new_enclaves.items():
        if t not in TIER_RANK:
            raise PlanInfeasibleError("entity-assignment", f"unknown tier {t!r}")
        for e in ids:
            if e in existing or e in tier:
                raise PlanInfeasibleError("entity-assignment",
                                          f"new enclave {e} collides with an existing id")
            ent = plan.entity_of_new.get(e)
            if ent is None or ent not in comm.entities[t]:
                raise PlanInfeasibleError(
                    "entity-assignment",
                    f"new enclave {e} is not assigned to exactly one {t} entity")
            tier[e] = t
            entity[e] = ent
            nodes.append(e)
    for e in plan.entity_of_new:
        if e not in tier:
            raise PlanInfeasibleError("entity-assignment",
                                      f"entity assignment for unknown enclave {e}")

    # relay assignment: exactly one owner, hosted at the relay's substation
    relays_of: dict[str, list[str]] = {e: [] for e in nodes if tier[e] == TIER_SS}
    seen: set[str] = set()
    for r in comm.relays:
        owner = plan.relay_owner.get(r.id)
        if owner is None:
            raise PlanInfeasibleError("relay-ownership",
                                      f"relay {r.id} has no controlling enclave")
        if owner not in relays_of:
            raise PlanInfeasibleError("relay-ownership",
                                      f"relay {r.id} assigned to non-substation enclave {owner}")
        if entity[owner] != r.substation:
            raise PlanInfeasibleError(
                "relay-ownership",
                f"relay {r.id} at {r.substation} assigned to enclave of {entity[owner]}")
        relays_of[owner].append(r.id)
        seen.add(r.id)
    for rid in plan.relay_owner:
        if rid not in seen:
            raise PlanInfeasibleError("relay-ownership",
                                      f"assignment for unknown relay {rid}")
    for e, rs in relays_of.items():
        if not rs:
            raise PlanInfeasibleError("relay-coverage",
                                      f"substation enclave {e} controls no relay")

    # parent edges
    children: dict[str, list[str]] = {e: [] for e in nodes}
    parent: dict[str, str] = {}
    for e in nodes:
        t = tier[e]
        if t == TIER_BA:
            if e in plan.parent:
                raise PlanInfeasibleError("parent-cardinality",
                                          f"root enclave {e} must not have a parent")
            continue
        p = plan.parent.get(e)
        if p is None:
            raise PlanInfeasibleError("parent-cardinality",
                                      f"enclave {e} has no parent")
        if p not in tier or TIER_RANK[tier[p]] != TIER_RANK[t] - 1:
            raise PlanInfeasibleError("parent-cardinality",
                                      f"enclave {e} parent {p} is not one tier above")
        if comm.parent_entity.get(entity[e]) != entity[p]:
            raise PlanInfeasibleError(
                "control-structure",
                f"enclave {e} of {entity[e]} cannot hang under {p} of {entity[p]}")
        parent[e] = p
        children[p].append(e)
    for e in plan.parent:
        if e not in tier:
            raise PlanInfeasibleError("parent-cardinality",
                                      f"parent edge for unknown enclave {e}")

    relay_map = comm.relay_map()
    return SegmentedForest(
        nodes=tuple(sorted(nodes)),
        tier=tier,
        entity=entity,
        parent=parent,
        children={e: tuple(sorted(c)) for e, c in children.items()},
        relays_of={e: tuple(sorted(r)) for e, r in relays_of.items()},
        owner_of_relay={r: e for e, rs in relays_of.items() for r in rs},
        relay_lines={r.id: r.lines for r in comm.relays},
        relay_gens={r.id: r.gens for r in comm.relays},
        relay_loads={r.id: r.loads for r in comm.relays},
    )


def identity_forest(comm: CommNetwork) -> SegmentedForest:
    return apply_segmentation(comm, identity_plan(comm))


def derive_effects(forest: SegmentedForest, grid: GridCase,
                   attacked_enclaves) -> Attack:
    """Relay compromise and component outages implied by an enclave set.

    A component goes down exactly when some relay controlling it is
    compromised; a relay is compromised exactly when its controlling
    enclave is attacked.
    """
    attacked = set(attacked_enclaves)
    for e in attacked:
        if e not in forest.tier:
            raise NotAncestorClosedError(f"unknown enclave {e}")
        p = forest.parent.get(e)
        if p is not None and p not in attacked:
            raise NotAncestorClosedError(f"enclave {e} attacked without parent {p}")
    relays = set()
    for e in attacked:
        relays.update(forest.relays_of.get(e, ()))
    lines, gens, loads = set(), set(), set()
    for r in relays:
        lines.update(forest.relay_lines[r])
        gens.update(forest.relay_gens[r])
        loads.update(forest.relay_loads[r])
    return Attack(attacked=tuple(sorted(attacked)),
                  relays_down=frozenset(relays),
                  lines_down=frozenset(lines),
                  gens_down=frozenset(gens),
                  loads_off=frozenset(loads))


class AttackEvaluator:
    """Memoised operator solves keyed by the physical outage pattern.

    The default engine is the reduced operator model (dead components
    deleted outright), which returns the same optimal shed as the big-M
    model in a fraction of the time; the regression suite checks that
    equivalence over hundreds of random attacks.  Pass ``engine="bigm"``
    to evaluate through the big-M LP instead.
    """

    def __init__(self, grid: GridCase, engine: str = "reduced"):
        if engine not in ("reduced", "bigm"):
            raise ValueError(f"unknown engine {engine!r}")
        self.grid = grid
        self.engine = engine
        self.cache: dict[tuple, float] = {}
        self.lp_solves = 0
        self.lookups = 0

    def shed(self, attack: Attack) -> float:
        key = attack.effects_key()
        self.lookups += 1
        val = self.cache.get(key)
        if val is None:
            if self.engine == "reduced":
                val = solve_operator_reduced(self.grid, attack).total_shed
            else:
                val = solve_operator(self.grid, attack)[0].total_shed
            self.cache[key] = val
            self.lp_solves += 1
        return val

    def full_solve(self, attack: Attack) -> tuple[Dispatch, DualSolution]:
        return solve_operator(self.grid, attack)


def count_ancestor_closed(forest: SegmentedForest, max_size: int) -> int:
    """Number of ancestor-closed enclave subsets of size <= max_size.

    Independent recursive oracle: the generating polynomial of a tree
    rooted at r is 1 + x * prod(children polynomials); a forest multiplies
    its root polynomials.
    """
    def poly(node: str) -> list[int]:
        p = [1]
        for c in forest.children.get(node, ()):
            q = poly(c)
            out = [0] * min(len(p) + len(q) - 1, max_size + 1)
            for i, a in enumerate(p):
                if i > max_size:
                    break
                for j, b in enumerate(q):
                    if i + j <= max_size:
                        out[i + j] += a * b
            p = out
        res = [0] * min(len(p) + 1, max_size + 1 + 1)
        res[0] = 1
        for i, a in enumerate(p):
            if i + 1 <= max_size:
                res[i + 1] += a
        return res

    total = [1]
    for r in sorted(forest.roots):
        q = poly(r)
        out = [0] * min(len(total) + len(q) - 1, max_size + 1)
        for i, a in enumerate(total):
            if i > max_size:
                break
            for j, b in enumerate(q):
                if i + j <= max_size:
                    out[i + j] += a * b
        total = out
    return sum(total[: max_size + 1])


def enumerate_ancestor_closed(forest: SegmentedForest, max_size: int):
    """Yield every ancestor-closed subset of size <= max_size as a sorted tuple.

    Deterministic order: nodes are processed tier-major then by id, each
    node included only after its parent.
    """
    order = forest.topo_nodes()
    pos = {n: i for i, n in enumerate(order)}
    n = len(order)

    def rec(i: int, chosen: list[str], budget: int):
        yield tuple(sorted(chosen))
        if budget == 0:
            return
        for j in range(i, n):
            node = order[j]
            p = forest.parent.get(node)
            if p is not None and p not in chosen:
                continue
            chosen.append(node)
            yield from rec(j + 1, chosen, budget - 1)
            chosen.pop()

    seen_empty = False
    for subset in rec(0, [], max_size):
        if subset == ():
            if seen_empty:
                continue
            seen_empty = True
        yield subset


def worst_attack_enumerate(forest: SegmentedForest, grid: GridCase,
                           budget: AttackBudget,
                           evaluator: AttackEvaluator | None = None,
                           incumbent_cutoff: float | None = None,
                           prune: bool = True,
                           collector: list | None = None) -> tuple[Attack, float]:
    """Exhaustive worst attack by ancestor-closed enumeration.

    Every subset within budget is a candidate; with `prune` enabled,
    subtrees whose optimistic value bound cannot beat the incumbent are
    skipped.  The bound adds, per still-reachable substation enclave, the
    demands, capacities and flow limits of the components its relays
    control, and caps at total demand.  `incumbent_cutoff` aborts the
    search once any attack reaches the cutoff (the caller only needs a
    witness, not the exact maximum).  `collector`, when given, receives
    every evaluated (attack, shed) pair with positive shed.

    Ties on shed value resolve to the lexicographically smallest attacked
    enclave id tuple among the candidates the search evaluates.
    """
    ev = evaluator or AttackEvaluator(grid)
    total_demand = sum(d.demand for d in grid.loads)
    order = forest.topo_nodes()
    n = len(order)

    gen_cap = {g.id: g.capacity for g in grid.generators}
    load_dem = {d.id: d.demand for d in grid.loads}
    line_lim = {k.id: k.limit for k in grid.lines}

    # per substation enclave: chain and controllable component value
    ss_nodes = [e for e in order if forest.tier[e] == TIER_SS]
    chain_of = {e: forest.chain(e) for e in ss_nodes}
    value_of: dict[str, float] = {}
    for e in ss_nodes:
        val = 0.0
        for r in forest.relays_of.get(e, ()):
            val += sum(load_dem.get(d, 0.0) for d in forest.relay_loads[r])
            val += sum(gen_cap.get(g, 0.0) for g in forest.relay_gens[r])
            val += sum(line_lim.get(k, 0.0) for k in forest.relay_lines[r])
        value_of[e] = val

    best_attack = derive_effects(forest, grid, ())
    best_l = ev.shed(best_attack)
    best_ids: tuple[str, ...] = ()

    def bound(chosen: set[str], rem: int, current_l: float) -> float:
        if rem == 0:
            return current_l
        gain = 0.0
        for e in ss_nodes:
            if e in chosen:
                continue
            cost = sum(1 for x in chain_of[e] if x not in chosen)
            if cost <= rem:
                gain += value_of[e]
        return min(current_l + gain, total_demand)

    def rec(i: int, chosen: list[str], chosen_set: set[str], rem: int) -> bool:
        nonlocal best_attack, best_l, best_ids
        attack = derive_effects(forest, grid, chosen)
        l = ev.shed(attack)
        if collector is not None and l > 0:
            collector.append((attack, l))
        ids = tuple(sorted(chosen))
        if l > best_l + 1e-9 or (abs(l - best_l) <= 1e-9 and ids < best_ids):
            best_attack, best_l, best_ids = attack, l, ids
        if incumbent_cutoff is not None and best_l >= incumbent_cutoff - 1e-9:
            return True
        if rem == 0:
            return False
        if prune and bound(chosen_set, rem, l) <= best_l + 1e-9:
            return False
        for j in range(i, n):
            node = order[j]
            p = forest.parent.get(node)
            if p is not None and p not in chosen_set:
                continue
            chosen.append(node)
            chosen_set.add(node)
            stop = rec(j + 1, chosen, chosen_set, rem - 1)
            chosen.pop()
            chosen_set.remove(node)
            if stop:
                return True
        return False

    rec(0, [], set(), budget.enclaves)
    return best_attack, best_l


# ---------------------------------------------------------------------------
# dualised single-level MILP


@dataclass(frozen=True)
class AttackerDualBounds:
    """Heuristic caps on operator duals used by the envelope rows.

    The balance and capacity duals are marginal shed per MW, so small
    constants dominate them comfortably; the forced-shed dual keeps the
    demand-sized cap that makes its envelope exact.  Loose caps only
    weaken the LP relaxation, never correctness, and the primal re-solve
    in `worst_attack_milp` guards against caps that are too tight.
    """

    mu: float = 4.0
    xi: float = 8.0
    lam: float = 8.0
    gamma: float = 4.0
    alpha_minus: float = 4.0

    def record_dict(self) -> dict:
        return {"mu": self.mu, "xi": self.xi, "lam": self.lam,
                "gamma": self.gamma, "alpha_minus": self.alpha_minus}


def _envelope(lp: LinearProgram, bar: str, dual: str, binv: str, cap: float) -> None:
    """bar = dual * binv for dual in [0, cap], binv in {0, 1}."""
    lp.add_constr(f"env_cap[{bar}]", {bar: 1.0, binv: -cap}, LE, 0.0)
    lp.add_constr(f"env_le[{bar}]", {bar: 1.0, dual: -1.0}, LE, 0.0)
    lp.add_constr(f"env_ge[{bar}]", {bar: 1.0, dual: -1.0, binv: -cap}, GE, -cap)


def build_attacker_milp(forest: SegmentedForest, grid: GridCase,
                        budget: AttackBudget,
                        bounds: AttackerDualBounds | None = None) -> MixedBinaryProgram:
    """Single-level worst-attack MILP over a fixed segmented forest.

    Relay compromise indicators collapse to the owning enclave's attack
    variable (the forest is fixed), so only z is binary; component status
    variables are forced integral by their linking rows.  The shed value
    is pinned to the operator's dual objective, with every
    dual-times-status product replaced through envelope rows.
    """
    bnd = bounds or AttackerDualBounds()
    lp = LinearProgram(f"attacker[{grid.name}]")
    nodes = forest.topo_nodes()
    total_demand = sum(d.demand for d in grid.loads)

    for e in nodes:
        lp.add_var(f"z[{e}]", 0.0, 1.0)
    for k in grid.lines:
        lp.add_var(f"v[{k.id}]", 0.0, 1.0)
    for g in grid.generators:
        lp.add_var(f"w[{g.id}]", 0.0, 1.0)
    for d in grid.loads:
        lp.add_var(f"u[{d.id}]", 0.0, 1.0)

    for s in grid.substations:
        lp.add_var(f"mu[{s}]", -bnd.mu, bnd.mu)
        bcap = bnd.xi * sum(k.susceptance for k in grid.lines_at(s)) + 1.0
        lp.add_var(f"bhi[{s}]", 0.0, bcap)
        lp.add_var(f"blo[{s}]", 0.0, bcap)
    for k in grid.lines:
        for nm in ("xip", "xim", "xipbar", "ximbar"):
            lp.add_var(f"{nm}[{k.id}]", 0.0, bnd.xi)
        for nm in ("lamp", "lamm", "lampbar", "lammbar"):
            lp.add_var(f"{nm}[{k.id}]", 0.0, bnd.lam)
    for g in grid.generators:
        lp.add_var(f"gam[{g.id}]", 0.0, bnd.gamma)
        lp.add_var(f"gambar[{g.id}]", 0.0, bnd.gamma)
    for d in grid.loads:
        lp.add_var(f"alp[{d.id}]", 0.0, d.demand)
        lp.add_var(f"albar[{d.id}]", 0.0, d.demand)
        lp.add_var(f"alm[{d.id}]", 0.0, bnd.alpha_minus)
    lp.add_var("L", -1.0, total_demand + 1.0)

    # attacker feasibility: budget and pivoting
    lp.add_constr("budget", {f"z[{e}]": 1.0 for e in nodes}, LE, float(budget.enclaves))
    for e in nodes:
        p = forest.parent.get(e)
        if p is not None:
            lp.add_constr(f"pivot[{e}]", {f"z[{e}]": 1.0, f"z[{p}]": -1.0}, LE, 0.0)

    # component status linked to the owning enclaves' attack variables
    def owners(rids) -> list[str]:
        return [forest.owner_of_relay[r] for r in rids]

    comp_relays: dict[str, list[str]] = {}
    for r, ks in forest.relay_lines.items():
        for k in ks:
            comp_relays.setdefault(k, []).append(r)
    for r, gs in forest.relay_gens.items():
        for g in gs:
            comp_relays.setdefault(g, []).append(r)
    for r, ds in forest.relay_loads.items():
        for d in ds:
            comp_relays.setdefault(d, []).append(r)

    def link(comp_id: str, var: str) -> None:
        rids = comp_relays.get(comp_id, [])
        for idx, e in enumerate(owners(rids)):
            lp.add_constr(f"off[{var}:{idx}]", {var: 1.0, f"z[{e}]": 1.0}, LE, 1.0)
        coeffs = {var: 1.0}
        for e in owners(rids):
            coeffs[f"z[{e}]"] = coeffs.get(f"z[{e}]", 0.0) + 1.0
        lp.add_constr(f"on[{var}]", coeffs, GE, 1.0)

    for k in grid.lines:
        link(k.id, f"v[{k.id}]")
    for g in grid.generators:
        link(g.id, f"w[{g.id}]")
    for d in grid.loads:
        link(d.id, f"u[{d.id}]")

    # operator dual feasibility
    for k in grid.lines:
        lp.add_constr(f"dual_f[{k.id}]",
                      {f"mu[{k.dest}]": 1.0, f"mu[{k.origin}]": -1.0,
                       f"xip[{k.id}]": 1.0, f"xim[{k.id}]": -1.0,
                       f"lamp[{k.id}]": 1.0, f"lamm[{k.id}]": -1.0}, EQ, 0.0)
    for g in grid.generators:
        lp.add_constr(f"dual_p[{g.id}]",
                      {f"mu[{g.substation}]": 1.0, f"gam[{g.id}]": -1.0}, LE, 0.0)
    for d in grid.loads:
        lp.add_constr(f"dual_l[{d.id}]",
                      {f"mu[{d.substation}]": 1.0, f"alp[{d.id}]": 1.0,
                       f"alm[{d.id}]": -1.0}, LE, 1.0)
    for s in grid.substations:
        coeffs = {f"blo[{s}]": 1.0, f"bhi[{s}]": -1.0}
        for k in grid.lines:
            if k.origin == s:
                coeffs[f"xim[{k.id}]"] = coeffs.get(f"xim[{k.id}]", 0.0) + k.susceptance
                coeffs[f"xip[{k.id}]"] = coeffs.get(f"xip[{k.id}]", 0.0) - k.susceptance
            if k.dest == s:
                coeffs[f"xip[{k.id}]"] = coeffs.get(f"xip[{k.id}]", 0.0) + k.susceptance
                coeffs[f"xim[{k.id}]"] = coeffs.get(f"xim[{k.id}]", 0.0) - k.susceptance
        lp.add_constr(f"dual_th[{s}]", coeffs, EQ, 0.0)

    # envelopes for every dual-times-status product
    for k in grid.lines:
        _envelope(lp, f"xipbar[{k.id}]", f"xip[{k.id}]", f"v[{k.id}]", bnd.xi)
        _envelope(lp, f"ximbar[{k.id}]", f"xim[{k.id}]", f"v[{k.id}]", bnd.xi)
        _envelope(lp, f"lampbar[{k.id}]", f"lamp[{k.id}]", f"v[{k.id}]", bnd.lam)
        _envelope(lp, f"lammbar[{k.id}]", f"lamm[{k.id}]", f"v[{k.id}]", bnd.lam)
    for g in grid.generators:
        _envelope(lp, f"gambar[{g.id}]", f"gam[{g.id}]", f"w[{g.id}]", bnd.gamma)
    for d in grid.loads:
        _envelope(lp, f"albar[{d.id}]", f"alp[{d.id}]", f"u[{d.id}]", d.demand)

    # shed equals the dual objective of the operator LP
    sd: dict[str, float] = {"L": -1.0}
    for s in grid.substations:
        dsum = sum(d.demand for d in grid.loads_at(s))
        if dsum:
            sd[f"mu[{s}]"] = dsum
        sd[f"bhi[{s}]"] = -math.pi
        sd[f"blo[{s}]"] = -math.pi
    for d in grid.loads:
        sd[f"alp[{d.id}]"] = sd.get(f"alp[{d.id}]", 0.0) + d.demand
        sd[f"albar[{d.id}]"] = sd.get(f"albar[{d.id}]", 0.0) - d.demand
        sd[f"alm[{d.id}]"] = sd.get(f"alm[{d.id}]", 0.0) - d.demand
    for k in grid.lines:
        m = big_m(k.susceptance, k.shift)
        bt = k.susceptance * k.shift
        sd[f"xim[{k.id}]"] = sd.get(f"xim[{k.id}]", 0.0) + bt - m
        sd[f"xip[{k.id}]"] = sd.get(f"xip[{k.id}]", 0.0) - bt - m
        sd[f"xipbar[{k.id}]"] = sd.get(f"xipbar[{k.id}]", 0.0) + m
        sd[f"ximbar[{k.id}]"] = sd.get(f"ximbar[{k.id}]", 0.0) + m
        sd[f"lampbar[{k.id}]"] = sd.get(f"lampbar[{k.id}]", 0.0) - k.limit
        sd[f"lammbar[{k.id}]"] = sd.get(f"lammbar[{k.id}]", 0.0) - k.limit
    for g in grid.generators:
        sd[f"gambar[{g.id}]"] = sd.get(f"gambar[{g.id}]", 0.0) - g.capacity
    lp.add_constr("strong_duality", sd, EQ, 0.0)

    lp.set_objective({"L": 1.0}, sense="max")
    return MixedBinaryProgram(lp, tuple(f"z[{e}]" for e in nodes))


def worst_attack_milp(forest: SegmentedForest, grid: GridCase,
                      budget: AttackBudget,
                      evaluator: AttackEvaluator | None = None,
                      incumbent_cutoff: float | None = None,
                      bounds: AttackerDualBounds | None = None) -> tuple[Attack, float]:
    """Worst attack via the dualised MILP, re-validated by a primal solve.

    The authoritative shed value is the primal re-solve of the MILP's
    attack; a MILP claim exceeding it by more than the agreement
    tolerance means a heuristic dual cap cut into the optimum.
    """
    ev = evaluator or AttackEvaluator(grid)
    mip = build_attacker_milp(forest, grid, budget, bounds)
    sol = solve_milp(mip, incumbent_cutoff=incumbent_cutoff)
    if not sol.optimal:
        raise RuntimeError(f"attacker MILP returned {sol.status}")
    attacked = [e for e in forest.nodes if sol.values[f"z[{e}]"] > 0.5]
    attack = derive_effects(forest, grid, attacked)
    resolved = ev.shed(attack)
    if sol.objective > resolved + ORACLE_AGREEMENT_TOL:
        raise DualBoundViolationError(
            f"MILP claimed {sol.objective:.6f} MW but the primal re-solve "
            f"gives {resolved:.6f} MW")
    return attack, resolved
