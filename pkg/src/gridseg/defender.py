"""Defender search: exact trilevel solve by plan enumeration.

`enumerate_plans` streams one canonical representative per symmetry
class of feasible segmentation plans (new enclaves within a tier are
interchangeable labels).  `solve_trilevel` minimises the worst-case
attack over that stream with two prunes that never change the optimum:
a probe library of known-strong attacks re-priced on each plan, and an
abort of a plan's attack search once it provably cannot beat the
incumbent.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

from .attacker import (
    AttackBudget, AttackEvaluator, AttackerDualBounds, PlanInfeasibleError,
    SegmentedForest, apply_segmentation, derive_effects,
    worst_attack_enumerate, worst_attack_milp,
)
from .dcopf import Attack
from .ingest import instance_digest
from .lp import EQ, GE, LE, LinearProgram, MixedBinaryProgram
from .model import TIER_BA, TIER_CC, TIER_SS, CommNetwork, DefenderBudget, GridCase
from .plans import SegmentationPlan, identity_plan

TIE_TOL = 1e-9
PROBE_LIBRARY_SIZE = 400


# ---------------------------------------------------------------------------
# canonical plan enumeration


def _compositions(total: int, nbins: int):
    """All ways to write `total` as an ordered sum of `nbins` nonnegatives."""
    if nbins == 0:
        if total == 0:
            yield ()
        return
    if nbins == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, nbins - 1):
            yield (first,) + rest


def _relay_partitions(items: list[str], labeled: list[str], n_new: int):
    """Partition `items` into |labeled| named nonempty parts plus `n_new`
    unlabeled nonempty parts.  Unlabeled parts open in first-item order,
    so each unordered split appears exactly once.
    Yields (dict label -> tuple, list of new-part tuples).
    """
    n_items = len(items)
    parts_l: dict[str, list[str]] = {lab: [] for lab in labeled}
    parts_n: list[list[str]] = []

    def rec(idx: int):
        empty_l = sum(1 for lab in labeled if not parts_l[lab])
        if n_items - idx < empty_l + (n_new - len(parts_n)):
            return
        if idx == n_items:
            yield ({lab: tuple(v) for lab, v in parts_l.items()},
                   [tuple(p) for p in parts_n])
            return
        item = items[idx]
        for lab in labeled:
            parts_l[lab].append(item)
            yield from rec(idx + 1)
            parts_l[lab].pop()
        for slot in range(len(parts_n)):
            parts_n[slot].append(item)
            yield from rec(idx + 1)
            parts_n[slot].pop()
        if len(parts_n) < n_new:
            parts_n.append([item])
            yield from rec(idx + 1)
            parts_n.pop()

    yield from rec(0)


def _child_assignments(n_children: int, n_labeled: int, n_new: int,
                       require_all_used: bool):
    """Assign each child to a named slot or an unlabeled new slot.

    New slots open in first-use order (restricted growth), so assignments
    differing only by a relabeling of new slots collapse to one.  Unused
    new slots form an identical empty tail.  Yields (slot descriptors,
    used_new) with descriptors ("ex", i) or ("new", j).
    """
    assign: list[tuple[str, int]] = []

    def rec(idx: int, used_new: int):
        if idx == n_children:
            if not require_all_used or used_new >= n_new:
                yield (tuple(assign), used_new)
            return
        for i in range(n_labeled):
            assign.append(("ex", i))
            yield from rec(idx + 1, used_new)
            assign.pop()
        for j in range(used_new):
            assign.append(("new", j))
            yield from rec(idx + 1, used_new)
            assign.pop()
        if used_new < n_new:
            assign.append(("new", used_new))
            yield from rec(idx + 1, used_new + 1)
            assign.pop()

    yield from rec(0, 0)


def enumerate_plans(comm: CommNetwork, budget: DefenderBudget,
                    allow_childless_new: bool = True):
    """Stream one canonical representative per class of feasible plans.

    New enclaves within a tier are interchangeable, so they get
    deterministic content-derived labels (``N-<entity>-<i>``) and label
    permutations never yield two emitted plans.  Stream order is
    deterministic.  With `allow_childless_new` off, plans whose new
    control-center or balancing-authority enclaves have no children are
    suppressed.
    """
    yield from _stream_plans(comm, budget, allow_childless_new)


def _stream_plans(comm: CommNetwork, budget: DefenderBudget,
                  allow_childless_new: bool = True,
                  ss_hook=None, cc_hook=None):
    """Plan stream with optional subtree-skip hooks.

    `ss_hook(relay_owner, entity_of, token)` runs once per relay
    assignment and `cc_hook(relay_owner, entity_of, parent, token)` once
    per parent choice one tier up; returning True skips every completion
    of that partial state.  `token` increments with each relay
    assignment, giving hooks a collision-free cache key for per-
    assignment work.  Hooks must only fire when no completion can improve
    the caller's incumbent, which they guarantee by pricing real attacks
    with worst-case ancestor counts.
    """
    ss_entities = list(comm.entities[TIER_SS])
    relays_by_sub = {s: sorted(r.id for r in comm.relays_at(s)) for s in ss_entities}
    enclaves_by_entity = {n: comm.enclaves_of_entity(n)
                          for t in (TIER_SS, TIER_CC, TIER_BA)
                          for n in comm.entities[t]}
    existing_entity = {e: comm.enclave_entity[e] for e in comm.enclaves}

    ss_token = 0
    for ss_alloc in _compositions(budget.new_ss, len(ss_entities)):
        per_sub: list[list[tuple[dict[str, str], list[str], list[str]]]] = []
        feasible = True
        for s, j in zip(ss_entities, ss_alloc):
            labeled = enclaves_by_entity[s]
            if len(relays_by_sub[s]) < len(labeled) + j:
                feasible = False
                break
            opts = []
            for parts_l, parts_n in _relay_partitions(relays_by_sub[s], labeled, j):
                owner: dict[str, str] = {}
                new_ids: list[str] = []
                for lab, rs in parts_l.items():
                    for r in rs:
                        owner[r] = lab
                for i, rs in enumerate(parts_n):
                    nid = f"N-{s}-{i + 1}"
                    new_ids.append(nid)
                    for r in rs:
                        owner[r] = nid
                opts.append((owner, labeled + new_ids, new_ids))
            per_sub.append(opts)
        if not feasible:
            continue
        for ss_choice in itertools.product(*per_sub):
            relay_owner: dict[str, str] = {}
            roster_by_sub: dict[str, list[str]] = {}
            new_ss: list[str] = []
            ss_entity_of_new: dict[str, str] = {}
            for s, (owner, roster, new_ids) in zip(ss_entities, ss_choice):
                relay_owner.update(owner)
                roster_by_sub[s] = roster
                new_ss.extend(new_ids)
                for nid in new_ids:
                    ss_entity_of_new[nid] = s
            ss_token += 1
            if ss_hook is not None:
                entity_of = dict(existing_entity)
                entity_of.update(ss_entity_of_new)
                if ss_hook(relay_owner, entity_of, ss_token):
                    continue
            yield from _expand_cc(comm, budget, allow_childless_new,
                                  enclaves_by_entity, roster_by_sub,
                                  relay_owner, new_ss, ss_entity_of_new,
                                  existing_entity, cc_hook, ss_token)


def _expand_cc(comm, budget, allow_childless_new, enclaves_by_entity,
               roster_by_sub, relay_owner, new_ss, ss_entity_of_new,
               existing_entity, cc_hook, ss_token=0):
    cc_entities = list(comm.entities[TIER_CC])
    cc_children = {c: sorted(e for s in comm.children_entities(c)
                             for e in roster_by_sub[s])
                   for c in cc_entities}

    for cc_alloc in _compositions(budget.new_cc, len(cc_entities)):
        per_cc = []
        dead = False
        for c, k in zip(cc_entities, cc_alloc):
            labeled = enclaves_by_entity[c]
            opts = list(_child_assignments(len(cc_children[c]), len(labeled), k,
                                           require_all_used=not allow_childless_new))
            if not opts:
                dead = True
                break
            per_cc.append(opts)
        if dead:
            continue
        for cc_choice in itertools.product(*per_cc):
            parent: dict[str, str] = {}
            entity_of_new: dict[str, str] = dict(ss_entity_of_new)
            new_cc: list[str] = []
            roster_by_cc: dict[str, list[str]] = {}
            empty_tail: set[str] = set()
            for c, k, (assign, used) in zip(cc_entities, cc_alloc, cc_choice):
                labeled = enclaves_by_entity[c]
                roster = list(labeled) + [f"N-{c}-{i + 1}" for i in range(k)]
                roster_by_cc[c] = roster
                for nid in roster[len(labeled):]:
                    entity_of_new[nid] = c
                    new_cc.append(nid)
                empty_tail.update(roster[len(labeled) + used:])
                for child, (kind, i) in zip(cc_children[c], assign):
                    parent[child] = labeled[i] if kind == "ex" else f"N-{c}-{i + 1}"
            if cc_hook is not None:
                entity_of = dict(existing_entity)
                entity_of.update(entity_of_new)
                if cc_hook(relay_owner, entity_of, parent, ss_token):
                    continue
            yield from _expand_ba(comm, budget, allow_childless_new,
                                  enclaves_by_entity, roster_by_cc, empty_tail,
                                  relay_owner, new_ss, new_cc,
                                  parent, entity_of_new)


def _expand_ba(comm, budget, allow_childless_new, enclaves_by_entity,
               roster_by_cc, empty_tail, relay_owner, new_ss, new_cc,
               parent, entity_of_new):
    ba_entities = list(comm.entities[TIER_BA])
    ba_children = {b: sorted(e for c in comm.children_entities(b)
                             for e in roster_by_cc[c])
                   for b in ba_entities}

    def tail_entity(enclave: str) -> str:
        return enclave.rsplit("-", 1)[0]

    for ba_alloc in _compositions(budget.new_ba, len(ba_entities)):
        per_ba = []
        dead = False
        for b, k in zip(ba_entities, ba_alloc):
            labeled = enclaves_by_entity[b]
            opts = []
            for assign, used in _child_assignments(
                    len(ba_children[b]), len(labeled), k,
                    require_all_used=not allow_childless_new):
                # childless new enclaves of one entity are interchangeable:
                # require their parents in nondecreasing slot order so each
                # multiset of (empty enclave, parent) pairs appears once
                ok = True
                last_rank: dict[str, tuple[int, int]] = {}
                for child, slot in zip(ba_children[b], assign):
                    if child in empty_tail:
                        ent = tail_entity(child)
                        rank = (0, slot[1]) if slot[0] == "ex" else (1, slot[1])
                        prev = last_rank.get(ent)
                        if prev is not None and rank < prev:
                            ok = False
                            break
                        last_rank[ent] = rank
                if ok:
                    opts.append((assign, used))
            if not opts:
                dead = True
                break
            per_ba.append(opts)
        if dead:
            continue
        for ba_choice in itertools.product(*per_ba):
            full_parent = dict(parent)
            full_entity = dict(entity_of_new)
            new_ba: list[str] = []
            for b, k, (assign, used) in zip(ba_entities, ba_alloc, ba_choice):
                labeled = enclaves_by_entity[b]
                for i in range(k):
                    nid = f"N-{b}-{i + 1}"
                    full_entity[nid] = b
                    new_ba.append(nid)
                for child, (kind, i) in zip(ba_children[b], assign):
                    full_parent[child] = labeled[i] if kind == "ex" else f"N-{b}-{i + 1}"
            yield SegmentationPlan(
                new_enclaves={TIER_SS: tuple(sorted(new_ss)),
                              TIER_CC: tuple(sorted(new_cc)),
                              TIER_BA: tuple(sorted(new_ba))},
                relay_owner=dict(relay_owner),
                parent=full_parent,
                entity_of_new=full_entity,
            )


# ---------------------------------------------------------------------------
# declarative model of the defender feasible region


@dataclass
class DefenderModel:
    """Linear-constraint encoding of the defender region.

    Variables: relay assignment x[e|r], parent edges y[e|f], entity
    membership q[n|e] of new enclaves, communication indicators t[e|n],
    and one auxiliary binary b[e|f|n] per (edge, new child, entity)
    product, bound by its three envelope rows.
    """

    mip: MixedBinaryProgram
    comm: CommNetwork
    new_by_tier: dict[str, tuple[str, ...]]

    def decision_vars(self) -> list[str]:
        """The x/y/q variables; t and b follow from them."""
        return [v for v in self.mip.lp.var_names()
                if v.startswith(("x[", "y[", "q["))]

    def assignment_for_plan(self, plan: SegmentationPlan,
                            rename: dict[str, str] | None = None) -> dict[str, float]:
        """Variable values representing `plan`; `rename` maps the plan's
        new-enclave ids onto the model's fixed slots."""
        rn = rename or {}
        new_ids = {i for ids in self.new_by_tier.values() for i in ids}

        def nm(e: str) -> str:
            return rn.get(e, e)

        values = {v: 0.0 for v in self.mip.lp.var_names()}
        for r, e in plan.relay_owner.items():
            values[f"x[{nm(e)}|{r}]"] = 1.0
        for child, par in plan.parent.items():
            values[f"y[{nm(par)}|{nm(child)}]"] = 1.0
        for e, n in plan.entity_of_new.items():
            values[f"q[{n}|{nm(e)}]"] = 1.0
        entity = plan.enclave_entity(self.comm)
        for child, par in plan.parent.items():
            values[f"t[{nm(par)}|{entity[child]}]"] = 1.0
            if nm(child) in new_ids:
                values[f"b[{nm(par)}|{nm(child)}|{entity[child]}]"] = 1.0
        return values

    def check_assignment(self, values: dict[str, float], tol: float = 1e-6) -> list[str]:
        """Names of violated rows (empty when the assignment is feasible)."""
        bad = []
        for con in self.mip.lp.constrs:
            lhs = sum(c * values[v] for v, c in con.coeffs.items())
            if ((con.sense == LE and lhs > con.rhs + tol)
                    or (con.sense == GE and lhs < con.rhs - tol)
                    or (con.sense == EQ and abs(lhs - con.rhs) > tol)):
                bad.append(con.name)
        return bad


def build_defender_model(comm: CommNetwork, budget: DefenderBudget) -> DefenderModel:
    """Full linear encoding of the defender region over binary variables."""
    lp = LinearProgram("defender-region")
    new_by_tier = {
        TIER_SS: tuple(f"NSS{i + 1}" for i in range(budget.new_ss)),
        TIER_CC: tuple(f"NCC{i + 1}" for i in range(budget.new_cc)),
        TIER_BA: tuple(f"NBA{i + 1}" for i in range(budget.new_ba)),
    }
    enclaves = {t: [] for t in (TIER_BA, TIER_CC, TIER_SS)}
    existing = {t: [] for t in (TIER_BA, TIER_CC, TIER_SS)}
    for e in comm.enclaves:
        t = comm.tier_of_entity(comm.enclave_entity[e])
        enclaves[t].append(e)
        existing[t].append(e)
    for t, ids in new_by_tier.items():
        enclaves[t].extend(ids)

    relays = [r.id for r in comm.relays]
    pairs = [(TIER_BA, TIER_CC, comm.entities[TIER_CC]),
             (TIER_CC, TIER_SS, comm.entities[TIER_SS])]

    for e in enclaves[TIER_SS]:
        for r in relays:
            lp.add_var(f"x[{e}|{r}]", 0.0, 1.0)
    for ta, tb, _ in pairs:
        for e in enclaves[ta]:
            for f in enclaves[tb]:
                lp.add_var(f"y[{e}|{f}]", 0.0, 1.0)
    for t, ids in new_by_tier.items():
        for e in ids:
            for n in comm.entities[t]:
                lp.add_var(f"q[{n}|{e}]", 0.0, 1.0)
    for ta, tb, ents_b in pairs:
        for e in enclaves[ta]:
            for n in ents_b:
                lp.add_var(f"t[{e}|{n}]", 0.0, 1.0)
            for f in new_by_tier[tb]:
                for n in ents_b:
                    lp.add_var(f"b[{e}|{f}|{n}]", 0.0, 1.0)

    # every substation enclave controls a relay; each relay has one owner
    for e in enclaves[TIER_SS]:
        lp.add_constr(f"covers[{e}]", {f"x[{e}|{r}]": 1.0 for r in relays}, GE, 1.0)
    for r in relays:
        lp.add_constr(f"owner[{r}]",
                      {f"x[{e}|{r}]": 1.0 for e in enclaves[TIER_SS]}, EQ, 1.0)

    # membership of substation enclaves follows relay ownership
    for s in comm.entities[TIER_SS]:
        rs = [r.id for r in comm.relays_at(s)]
        for e in new_by_tier[TIER_SS]:
            coeffs = {f"q[{s}|{e}]": 1.0}
            for r in rs:
                coeffs[f"x[{e}|{r}]"] = -1.0
            lp.add_constr(f"member_sum[{s}|{e}]", coeffs, LE, 0.0)
            for r in rs:
                lp.add_constr(f"member[{s}|{e}|{r}]",
                              {f"q[{s}|{e}]": 1.0, f"x[{e}|{r}]": -1.0}, GE, 0.0)
        for e in existing[TIER_SS]:
            if comm.enclave_entity[e] == s:
                lp.add_constr(f"member_sum[{s}|{e}]",
                              {f"x[{e}|{r}]": 1.0 for r in rs}, GE, 1.0)
            else:
                for r in rs:
                    lp.add_constr(f"member[{s}|{e}|{r}]",
                                  {f"x[{e}|{r}]": 1.0}, LE, 0.0)

    # one parent per enclave below the top tier
    for ta, tb, _ in pairs:
        for f in enclaves[tb]:
            lp.add_constr(f"parent[{f}]",
                          {f"y[{e}|{f}]": 1.0 for e in enclaves[ta]}, EQ, 1.0)

    # each new enclave sits in exactly one entity of its tier
    for t, ids in new_by_tier.items():
        for e in ids:
            lp.add_constr(f"entity[{e}]",
                          {f"q[{n}|{e}]": 1.0 for n in comm.entities[t]}, EQ, 1.0)

    # communication indicators: t[e|n] is the OR over n's enclaves below e
    for ta, tb, ents_b in pairs:
        for e in enclaves[ta]:
            for n in ents_b:
                coeffs = {f"t[{e}|{n}]": 1.0}
                for f in existing[tb]:
                    if comm.enclave_entity[f] == n:
                        coeffs[f"y[{e}|{f}]"] = -1.0
                        lp.add_constr(f"comm_ge[{e}|{n}|{f}]",
                                      {f"t[{e}|{n}]": 1.0, f"y[{e}|{f}]": -1.0},
                                      GE, 0.0)
                for f in new_by_tier[tb]:
                    coeffs[f"b[{e}|{f}|{n}]"] = -1.0
                    lp.add_constr(f"comm_ge[{e}|{n}|{f}]",
                                  {f"t[{e}|{n}]": 1.0, f"b[{e}|{f}|{n}]": -1.0},
                                  GE, 0.0)
                lp.add_constr(f"comm_le[{e}|{n}]", coeffs, LE, 0.0)

    # communicating downward requires belonging to the controlling entity
    for ta, tb, ents_b in pairs:
        for n in ents_b:
            m = comm.parent_entity[n]
            for e in existing[ta]:
                cap = 1.0 if comm.enclave_entity[e] == m else 0.0
                lp.add_constr(f"control[{e}|{n}]", {f"t[{e}|{n}]": 1.0}, LE, cap)
            for e in new_by_tier[ta]:
                lp.add_constr(f"control[{e}|{n}]",
                              {f"t[{e}|{n}]": 1.0, f"q[{m}|{e}]": -1.0}, LE, 0.0)

    # product rows: b[e|f|n] = y[e|f] * q[n|f] for new child enclaves f
    for ta, tb, ents_b in pairs:
        for e in enclaves[ta]:
            for f in new_by_tier[tb]:
                for n in ents_b:
                    b = f"b[{e}|{f}|{n}]"
                    lp.add_constr(f"prod_y[{e}|{f}|{n}]",
                                  {b: 1.0, f"y[{e}|{f}]": -1.0}, LE, 0.0)
                    lp.add_constr(f"prod_q[{e}|{f}|{n}]",
                                  {b: 1.0, f"q[{n}|{f}]": -1.0}, LE, 0.0)
                    lp.add_constr(f"prod_both[{e}|{f}|{n}]",
                                  {b: 1.0, f"y[{e}|{f}]": -1.0, f"q[{n}|{f}]": -1.0},
                                  GE, -1.0)

    lp.set_objective({}, sense="min")
    return DefenderModel(MixedBinaryProgram(lp, tuple(lp.var_names())),
                         comm, new_by_tier)


# ---------------------------------------------------------------------------
# trilevel solve


@dataclass
class SolveRecord:
    """Outcome of one trilevel solve (or one bilevel evaluation)."""

    digest: str
    grid_name: str
    defender_budget: tuple[int, int, int]
    attack_budget: int
    oracle: str
    load_shed_mw: float
    plan: SegmentationPlan
    attack: Attack
    plans_considered: int = 0
    plans_fully_evaluated: int = 0
    operator_solves: int = 0
    childless_new_enclaves: tuple[str, ...] = ()
    dual_bound_constants: dict[str, float] = field(default_factory=dict)
    wall_time_s: float = 0.0

    def record_dict(self) -> dict:
        return {
            "digest": self.digest,
            "grid": self.grid_name,
            "defender_budget": {"new_ss": self.defender_budget[0],
                                "new_cc": self.defender_budget[1],
                                "new_ba": self.defender_budget[2]},
            "attack_budget": self.attack_budget,
            "oracle": self.oracle,
            "load_shed_mw": self.load_shed_mw,
            "plan": self.plan.to_json_dict(),
            "attack": {
                "enclaves": list(self.attack.attacked),
                "relays_down": sorted(self.attack.relays_down),
                "lines_down": sorted(self.attack.lines_down),
                "gens_down": sorted(self.attack.gens_down),
                "loads_off": sorted(self.attack.loads_off),
            },
            "plans_considered": self.plans_considered,
            "plans_fully_evaluated": self.plans_fully_evaluated,
            "operator_solves": self.operator_solves,
            "childless_new_enclaves": list(self.childless_new_enclaves),
            "dual_bound_constants": dict(sorted(self.dual_bound_constants.items())),
            "wall_time_s": self.wall_time_s,
        }


def _round_robin_plan(comm: CommNetwork, grid: GridCase,
                      budget: DefenderBudget) -> SegmentationPlan:
    """Heuristic seed: spread high-value children across enclave slots.

    New enclaves go to the entities with the most attached value; each
    entity's children are dealt round-robin in descending value order.
    Only used to warm the incumbent, never returned as the optimum.
    """
    def allocate(entities, values, count) -> dict[str, int]:
        alloc = {n: 0 for n in entities}
        order = sorted(entities, key=lambda n: (-values.get(n, 0.0), n))
        for i in range(count):
            alloc[order[i % len(order)]] += 1
        return alloc

    relay_value: dict[str, float] = {}
    for r in comm.relays:
        val = sum(d.demand for d in grid.loads if d.id in r.loads)
        val += sum(g.capacity for g in grid.generators if g.id in r.gens) * 0.5
        val += sum(k.limit for k in grid.lines if k.id in r.lines) * 0.01
        relay_value[r.id] = val

    sub_value = {s: sum(relay_value[r.id] for r in comm.relays_at(s))
                 for s in comm.entities[TIER_SS]}
    cc_value = {c: sum(sub_value.get(s, 0.0) for s in comm.children_entities(c))
                for c in comm.entities[TIER_CC]}
    ba_value = {b: sum(cc_value.get(c, 0.0) for c in comm.children_entities(b))
                for b in comm.entities[TIER_BA]}

    relay_owner: dict[str, str] = {}
    entity_of_new: dict[str, str] = {}
    new_by_tier: dict[str, list[str]] = {TIER_SS: [], TIER_CC: [], TIER_BA: []}

    ss_alloc = allocate(comm.entities[TIER_SS],
                        {s: len(comm.relays_at(s)) + sub_value.get(s, 0.0)
                         for s in comm.entities[TIER_SS]}, budget.new_ss)
    roster_by_sub: dict[str, list[str]] = {}
    for s in comm.entities[TIER_SS]:
        slots = list(comm.enclaves_of_entity(s))
        for i in range(ss_alloc[s]):
            nid = f"N-{s}-{i + 1}"
            slots.append(nid)
            entity_of_new[nid] = s
            new_by_tier[TIER_SS].append(nid)
        roster_by_sub[s] = slots
        rs = sorted((r.id for r in comm.relays_at(s)),
                    key=lambda rid: (-relay_value[rid], rid))
        usable = slots[: max(1, min(len(slots), len(rs)))]
        for i, rid in enumerate(rs):
            relay_owner[rid] = usable[i % len(usable)]

    parent: dict[str, str] = {}
    cc_alloc = allocate(comm.entities[TIER_CC], cc_value, budget.new_cc)
    roster_by_cc: dict[str, list[str]] = {}
    enclave_value: dict[str, float] = {}
    for e in relay_owner.values():
        enclave_value[e] = enclave_value.get(e, 0.0)
    for rid, e in relay_owner.items():
        enclave_value[e] += relay_value[rid]
    for c in comm.entities[TIER_CC]:
        slots = list(comm.enclaves_of_entity(c))
        for i in range(cc_alloc[c]):
            nid = f"N-{c}-{i + 1}"
            slots.append(nid)
            entity_of_new[nid] = c
            new_by_tier[TIER_CC].append(nid)
        roster_by_cc[c] = slots
        kids = [e for s in comm.children_entities(c) for e in roster_by_sub[s]]
        kids.sort(key=lambda e: (-enclave_value.get(e, 0.0), e))
        for i, e in enumerate(kids):
            parent[e] = slots[i % len(slots)]
    for c in comm.entities[TIER_CC]:
        for e in roster_by_cc[c]:
            enclave_value[e] = sum(enclave_value.get(kid, 0.0)
                                   for kid, par in parent.items() if par == e)

    ba_alloc = allocate(comm.entities[TIER_BA], ba_value, budget.new_ba)
    for b in comm.entities[TIER_BA]:
        slots = list(comm.enclaves_of_entity(b))
        for i in range(ba_alloc[b]):
            nid = f"N-{b}-{i + 1}"
            slots.append(nid)
            entity_of_new[nid] = b
            new_by_tier[TIER_BA].append(nid)
        kids = [e for c in comm.children_entities(b) for e in roster_by_cc[c]]
        kids.sort(key=lambda e: (-enclave_value.get(e, 0.0), e))
        for i, e in enumerate(kids):
            parent[e] = slots[i % len(slots)]

    return SegmentationPlan(
        new_enclaves={t: tuple(sorted(v)) for t, v in new_by_tier.items()},
        relay_owner=relay_owner, parent=parent, entity_of_new=entity_of_new)


@dataclass
class _ProbeEntry:
    relays: frozenset[str]
    shed: float


class _ProbeLibrary:
    """Known-strong attacks, re-priced exactly against candidate plans.

    Each entry is the relay set of an attack seen earlier with its shed.
    On a new plan, attacking the enclaves that own those relays (plus
    ancestors) is a real attack whose exact value comes from the memoised
    evaluator, so any hit is a sound lower bound on that plan's worst
    case.  Because only substation enclaves own relays, the value of such
    an attack is already determined by the relay assignment, which lets
    `partial_bound` price probes on partial plans: it charges worst-case
    ancestor counts (every useful enclave split as far as the budget
    allows), so a hit rules out every completion at once.
    """

    def __init__(self, grid: GridCase, comm: CommNetwork,
                 evaluator: AttackEvaluator,
                 dbudget: DefenderBudget, attack_budget: int):
        self.grid = grid
        self.comm = comm
        self.ev = evaluator
        self.budget = attack_budget
        self._raw: list[_ProbeEntry] = []
        self.entries: list[_ProbeEntry] = []
        self.cc_of_sub = {s: comm.parent_entity[s] for s in comm.entities[TIER_SS]}
        self.ba_of_cc = {c: comm.parent_entity[c] for c in comm.entities[TIER_CC]}
        self.cc_cap = {c: len(comm.enclaves_of_entity(c)) + dbudget.new_cc
                       for c in comm.entities[TIER_CC]}
        self.ba_cap = {b: len(comm.enclaves_of_entity(b)) + dbudget.new_ba
                       for b in comm.entities[TIER_BA]}
        self.relay_comp = {r.id: (r.lines, r.gens, r.loads) for r in comm.relays}
        self._inv_key: int | None = None
        self._inv: dict[str, list[str]] = {}
        self._val_cache: dict[frozenset, float] = {}

    def offer(self, attack: Attack, shed: float) -> None:
        if shed > 0 and attack.relays_down:
            self._raw.append(_ProbeEntry(attack.relays_down, shed))

    def compact(self) -> None:
        best: dict[frozenset, float] = {}
        for e in self._raw + self.entries:
            if e.shed > best.get(e.relays, -1.0):
                best[e.relays] = e.shed
        ordered = sorted(best.items(), key=lambda kv: (-kv[1], sorted(kv[0])))
        self.entries = [_ProbeEntry(r, s) for r, s in ordered[:PROBE_LIBRARY_SIZE]]
        self._raw = []

    def shed_of_relays(self, relays) -> float:
        lines, gens, loads = set(), set(), set()
        for r in relays:
            ks, gs, ds = self.relay_comp[r]
            lines.update(ks)
            gens.update(gs)
            loads.update(ds)
        return self.ev.shed(Attack(relays_down=frozenset(relays),
                                   lines_down=frozenset(lines),
                                   gens_down=frozenset(gens),
                                   loads_off=frozenset(loads)))

    def _sync(self, relay_owner: dict[str, str], token) -> None:
        if self._inv_key != token:
            inv: dict[str, list[str]] = {}
            for r, e in relay_owner.items():
                inv.setdefault(e, []).append(r)
            self._inv = inv
            self._inv_key = token
            self._val_cache = {}

    def _owner_value(self, owners: frozenset) -> float:
        val = self._val_cache.get(owners)
        if val is None:
            relays: set[str] = set()
            for o in owners:
                relays.update(self._inv[o])
            val = self.shed_of_relays(relays)
            self._val_cache[owners] = val
        return val

    def partial_bound(self, relay_owner: dict[str, str],
                      entity_of: dict[str, str], cutoff: float,
                      parent: dict[str, str] | None = None,
                      cache_token=None) -> bool:
        """True when some probe proves every completion has worst >= cutoff.

        `cache_token` identifies the relay assignment; per-assignment
        inverse maps and attack values are reused while it is unchanged.
        """
        self._sync(relay_owner, cache_token if cache_token is not None
                   else object())
        for entry in self.entries:
            if entry.shed < cutoff:
                break
            owners = frozenset(relay_owner[r] for r in entry.relays)
            if len(owners) > self.budget:
                continue
            if parent is None:
                cc_cnt: dict[str, int] = {}
                for o in owners:
                    c = self.cc_of_sub[entity_of[o]]
                    cc_cnt[c] = cc_cnt.get(c, 0) + 1
                ba_cnt: dict[str, int] = {}
                cost = len(owners)
                for c, n in cc_cnt.items():
                    need = min(n, self.cc_cap[c])
                    cost += need
                    b = self.ba_of_cc[c]
                    ba_cnt[b] = ba_cnt.get(b, 0) + need
            else:
                parents = {parent[o] for o in owners}
                ba_cnt = {}
                cost = len(owners) + len(parents)
                for p in parents:
                    b = self.ba_of_cc[entity_of[p]]
                    ba_cnt[b] = ba_cnt.get(b, 0) + 1
            for b, n in ba_cnt.items():
                cost += min(n, self.ba_cap[b])
            if cost > self.budget:
                continue
            if self._owner_value(owners) >= cutoff:
                return True
        return False

    def lower_bound(self, forest: SegmentedForest, budget: int,
                    cutoff: float) -> float:
        best = 0.0
        for entry in self.entries:
            if entry.shed < cutoff:
                break
            enclaves: set[str] = set()
            for r in entry.relays:
                e = forest.owner_of_relay[r]
                if e not in enclaves:
                    enclaves.update(forest.chain(e))
                    if len(enclaves) > budget:
                        break
            if len(enclaves) > budget:
                continue
            val = self.ev.shed(derive_effects(forest, self.grid, enclaves))
            if val > best:
                best = val
            if best >= cutoff:
                return best
        return best


def _worst_for_plan(forest, grid, abudget, oracle, evaluator, cutoff,
                    collector=None):
    if oracle == "milp":
        return worst_attack_milp(forest, grid, abudget, evaluator=evaluator,
                                 incumbent_cutoff=cutoff)
    return worst_attack_enumerate(forest, grid, abudget, evaluator=evaluator,
                                  incumbent_cutoff=cutoff, collector=collector)


def _synth_probes(grid: GridCase, comm: CommNetwork,
                  max_size: int = 3, cap: int = 800) -> list[_ProbeEntry]:
    """Component-combination probes with sound shed floors.

    Switching a load set offline forces at least its summed demand to be
    shed; killing a generator set forces at least the capacity deficit
    (total demand minus surviving capacity).  Both floors hold whatever
    else an attack reaches, so they are safe stand-ins for exact values
    when ordering probes.
    """
    relay_of: dict[str, str] = {}
    for r in sorted(comm.relays, key=lambda r: r.id):
        for comp in r.loads + r.gens:
            relay_of.setdefault(comp, r.id)
    demand = {d.id: d.demand for d in grid.loads}
    cap_of = {g.id: g.capacity for g in grid.generators}
    total_demand = sum(demand.values())
    total_cap = sum(cap_of.values())

    entries: list[_ProbeEntry] = []
    loads = sorted((d for d in demand if d in relay_of),
                   key=lambda d: (-demand[d], d))
    for size in range(1, min(max_size, len(loads)) + 1):
        for combo in itertools.combinations(loads, size):
            entries.append(_ProbeEntry(
                frozenset(relay_of[d] for d in combo),
                sum(demand[d] for d in combo)))
    gens = sorted((g for g in cap_of if g in relay_of),
                  key=lambda g: (-cap_of[g], g))
    for size in range(1, min(max_size, len(gens)) + 1):
        for combo in itertools.combinations(gens, size):
            floor = total_demand - (total_cap - sum(cap_of[g] for g in combo))
            if floor > 0:
                entries.append(_ProbeEntry(
                    frozenset(relay_of[g] for g in combo), floor))
    entries.sort(key=lambda e: (-e.shed, sorted(e.relays)))
    return entries[:cap]


def solve_trilevel(grid: GridCase, comm: CommNetwork,
                   dbudget: DefenderBudget, abudget: AttackBudget,
                   oracle: str = "enumerate",
                   allow_childless_new: bool = True,
                   workers: int = 1) -> SolveRecord:
    """Exact minimum worst-case load shed over all canonical plans.

    A heuristic seed plan provides the starting incumbent, the probe
    library prices known-strong attacks on every streamed plan, and
    surviving plans get a full attacker solve that aborts once it cannot
    strictly beat the incumbent.  The reported plan is the seed when
    nothing improves on it, else the first stream plan attaining the
    optimum.  `workers` > 1 splits the stream round-robin across
    processes with a deterministic reduction.
    """
    if oracle not in ("enumerate", "milp"):
        raise ValueError(f"unknown oracle {oracle!r}")
    t0 = time.time()
    ev = AttackEvaluator(grid)
    probes = _ProbeLibrary(grid, comm, ev, dbudget, abudget.enclaves)
    probes.entries = _synth_probes(grid, comm)

    # the identity-forest search stocks the probe library with strong attacks
    collected: list[tuple[Attack, float]] = []
    identity = apply_segmentation(comm, identity_plan(comm))
    worst_attack_enumerate(identity, grid, abudget, evaluator=ev,
                           collector=collected)
    for atk, shed in collected:
        probes.offer(atk, shed)
    probes.compact()

    # heuristic seed: a feasible plan whose worst case bounds the optimum
    best_plan: SegmentationPlan | None = None
    best_attack: Attack | None = None
    best_shed = float("inf")
    if dbudget.as_tuple() != (0, 0, 0):
        try:
            seed = _round_robin_plan(comm, grid, dbudget)
            seed_forest = apply_segmentation(comm, seed)
            if allow_childless_new or not seed.childless_new_parents(comm):
                collected = []
                seed_attack, seed_shed = _worst_for_plan(
                    seed_forest, grid, abudget, oracle, ev,
                    cutoff=None, collector=collected)
                best_plan, best_attack, best_shed = seed, seed_attack, seed_shed
                for atk, sh in collected:
                    probes.offer(atk, sh)
                probes.compact()
        except PlanInfeasibleError:
            pass  # seeding is best-effort; enumeration is authoritative

    considered = 0
    evaluated = 0
    if workers > 1:
        considered, evaluated, found = _parallel_scan(
            grid, comm, dbudget, abudget, oracle, allow_childless_new,
            workers, probes.entries, best_shed)
        if found is not None:
            best_shed, _idx, best_plan, best_attack = found
    else:
        def current_cutoff() -> float:
            return best_shed if best_plan is not None else float("inf")

        def ss_hook(relay_owner, entity_of, token):
            cut = current_cutoff()
            return cut < float("inf") and \
                probes.partial_bound(relay_owner, entity_of, cut - TIE_TOL,
                                     cache_token=token)

        def cc_hook(relay_owner, entity_of, parent, token):
            cut = current_cutoff()
            return cut < float("inf") and \
                probes.partial_bound(relay_owner, entity_of, cut - TIE_TOL,
                                     parent=parent, cache_token=token)

        for plan in _stream_plans(comm, dbudget, allow_childless_new,
                                  ss_hook=ss_hook, cc_hook=cc_hook):
            considered += 1
            cutoff = current_cutoff()
            forest = apply_segmentation(comm, plan)
            if cutoff < float("inf") and \
                    probes.lower_bound(forest, abudget.enclaves, cutoff) >= cutoff - TIE_TOL:
                continue
            evaluated += 1
            collected = []
            attack, shed = _worst_for_plan(forest, grid, abudget, oracle, ev,
                                           cutoff=cutoff, collector=collected)
            if shed < cutoff - TIE_TOL:
                best_plan, best_attack, best_shed = plan, attack, shed
                for atk, sh in collected:
                    probes.offer(atk, sh)
                probes.compact()

    if best_plan is None:
        raise ValueError("defender budget admits no feasible plan")

    return SolveRecord(
        digest=instance_digest(grid, comm),
        grid_name=grid.name,
        defender_budget=dbudget.as_tuple(),
        attack_budget=abudget.enclaves,
        oracle=oracle,
        load_shed_mw=best_shed,
        plan=best_plan,
        attack=best_attack,
        plans_considered=considered,
        plans_fully_evaluated=evaluated,
        operator_solves=ev.lp_solves,
        childless_new_enclaves=best_plan.childless_new_parents(comm),
        dual_bound_constants=(AttackerDualBounds().record_dict()
                              if oracle == "milp" else {}),
        wall_time_s=time.time() - t0,
    )


def _scan_chunk(args):
    (grid, comm, dbudget, abudget_n, oracle, allow_childless, wid, workers,
     probe_entries, incumbent0) = args
    ev = AttackEvaluator(grid)
    abudget = AttackBudget(abudget_n)
    probes = _ProbeLibrary(grid, comm, ev, dbudget, abudget_n)
    probes.entries = [_ProbeEntry(r, s) for r, s in probe_entries]
    best = None
    considered = evaluated = 0

    # hooks price against the fixed starting incumbent so every worker skips
    # identical subtrees and the round-robin split stays aligned
    def ss_hook(relay_owner, entity_of, token):
        return incumbent0 < float("inf") and \
            probes.partial_bound(relay_owner, entity_of, incumbent0 - TIE_TOL,
                                 cache_token=token)

    def cc_hook(relay_owner, entity_of, parent, token):
        return incumbent0 < float("inf") and \
            probes.partial_bound(relay_owner, entity_of, incumbent0 - TIE_TOL,
                                 parent=parent, cache_token=token)

    for idx, plan in enumerate(_stream_plans(comm, dbudget, allow_childless,
                                             ss_hook=ss_hook, cc_hook=cc_hook)):
        if idx % workers != wid:
            continue
        considered += 1
        cutoff = best[0] if best is not None else incumbent0
        forest = apply_segmentation(comm, plan)
        if cutoff < float("inf") and \
                probes.lower_bound(forest, abudget.enclaves, cutoff) >= cutoff - TIE_TOL:
            continue
        evaluated += 1
        attack, shed = _worst_for_plan(forest, grid, abudget, oracle, ev,
                                       cutoff=cutoff)
        if shed < cutoff - TIE_TOL:
            best = (shed, idx, plan, attack)
    return considered, evaluated, best


def _parallel_scan(grid, comm, dbudget, abudget, oracle, allow_childless,
                   workers, probe_entries, incumbent0):
    import multiprocessing as mp

    entries = [(e.relays, e.shed) for e in probe_entries]
    args = [(grid, comm, dbudget, abudget.enclaves, oracle, allow_childless,
             wid, workers, entries, incumbent0) for wid in range(workers)]
    ctx = mp.get_context("fork")
    with ctx.Pool(workers) as pool:
        outs = pool.map(_scan_chunk, args)
    considered = sum(o[0] for o in outs)
    evaluated = sum(o[1] for o in outs)
    found = None
    for o in outs:
        if o[2] is not None and (found is None or (o[2][0], o[2][1]) < (found[0], found[1])):
            found = o[2]
    return considered, evaluated, found


def budget_sweep(grid: GridCase, comm: CommNetwork,
                 budgets: list[DefenderBudget], abudget: AttackBudget,
                 oracle: str = "enumerate", workers: int = 1,
                 allow_childless_new: bool = True) -> list[SolveRecord]:
    """One trilevel solve per budget, in input order."""
    return [solve_trilevel(grid, comm, b, abudget, oracle=oracle,
                           workers=workers,
                           allow_childless_new=allow_childless_new)
            for b in budgets]
