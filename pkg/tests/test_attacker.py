"""Attacker oracle tests: segmentation expansion, effects, both oracles."""


import random

import pytest

from gridseg.attacker import (
    AttackBudget, AttackEvaluator, NotAncestorClosedError, PlanInfeasibleError,
    apply_segmentation, count_ancestor_closed, derive_effects,
    enumerate_ancestor_closed, identity_forest, worst_attack_enumerate,
    worst_attack_milp,
)
from gridseg.model import TIER_BA, TIER_CC, TIER_SS
from gridseg.plans import SegmentationPlan, identity_plan


def _split_cc_plan(comm):
    """Both control centers split in two; the load and junction substations
    spread between the CC2 halves (a known optimal two-enclave design)."""
    plan = identity_plan(comm)
    parent = dict(plan.parent)
    parent["E-S3"] = "N-CC1-1"
    for e in ("E-S7", "E-S8", "E-S9"):
        parent[e] = "N-CC2-1"
    parent["N-CC1-1"] = "E-BA1"
    parent["N-CC2-1"] = "E-BA1"
    return SegmentationPlan(
        new_enclaves={TIER_CC: ("N-CC1-1", "N-CC2-1")},
        relay_owner=dict(plan.relay_owner),
        parent=parent,
        entity_of_new={"N-CC1-1": "CC1", "N-CC2-1": "CC2"},
    )


def test_identity_forest_matches_comm(grid9, comm9):
    forest = identity_forest(comm9)
    assert set(forest.nodes) == set(comm9.enclaves)
    assert forest.roots == ("E-BA1",)
    assert forest.parent["E-S5"] == "E-CC2"
    assert forest.parent["E-CC2"] == "E-BA1"
    assert len(forest.relays_of["E-S5"]) == 3


def test_apply_segmentation_split_plan(grid9, comm9):
    forest = apply_segmentation(comm9, _split_cc_plan(comm9))
    assert "N-CC1-1" in forest.nodes and "N-CC2-1" in forest.nodes
    assert forest.parent["E-S7"] == "N-CC2-1"
    assert forest.entity["N-CC2-1"] == "CC2"


def test_apply_segmentation_combined_plan(grid9, comm9):
    """Full expansion shape: a split balancing authority with one control
    center branch per half, both control centers split, and substation 4's
    relays divided between two enclaves."""
    plan = identity_plan(comm9)
    owner = dict(plan.relay_owner)
    owner["S4:K4-5"] = "N-S4-1"
    owner["S4:K4-6"] = "N-S4-1"
    parent = dict(plan.parent)
    parent.update({
        "E-CC2": "N-BA1-1",
        "N-CC1-1": "E-BA1", "N-CC2-1": "N-BA1-1",
        "E-S3": "N-CC1-1",
        "E-S7": "N-CC2-1", "E-S9": "N-CC2-1",
        "N-S4-1": "N-CC2-1",
    })
    combined = SegmentationPlan(
        new_enclaves={TIER_SS: ("N-S4-1",), TIER_CC: ("N-CC1-1", "N-CC2-1"),
                      TIER_BA: ("N-BA1-1",)},
        relay_owner=owner, parent=parent,
        entity_of_new={"N-S4-1": "S4", "N-CC1-1": "CC1", "N-CC2-1": "CC2",
                       "N-BA1-1": "BA1"})
    forest = apply_segmentation(comm9, combined)
    assert set(forest.roots) == {"E-BA1", "N-BA1-1"}
    assert forest.relays_of["N-S4-1"] == ("S4:K4-5", "S4:K4-6")
    assert forest.relays_of["E-S4"] == ("S4:K1-4",)
    assert forest.chain("N-S4-1") == ("N-S4-1", "N-CC2-1", "N-BA1-1")
    # reaching both halves of substation 4 now costs five enclaves
    attack = derive_effects(forest, grid9,
                            ["N-BA1-1", "E-CC2", "N-CC2-1", "E-S4", "N-S4-1"])
    assert attack.lines_down == {"K1-4", "K4-5", "K4-6"}


def test_substation_split_reassigns_relays(comm9):
    plan = identity_plan(comm9)
    owner = dict(plan.relay_owner)
    owner["S5:D5"] = "N-S5-1"
    parent = dict(plan.parent)
    parent["N-S5-1"] = "E-CC2"
    split = SegmentationPlan(new_enclaves={TIER_SS: ("N-S5-1",)},
                             relay_owner=owner, parent=parent,
                             entity_of_new={"N-S5-1": "S5"})
    forest = apply_segmentation(comm9, split)
    assert forest.relays_of["N-S5-1"] == ("S5:D5",)
    assert "S5:D5" not in forest.relays_of["E-S5"]


@pytest.mark.parametrize("mutate,family", [
    (lambda p: p.relay_owner.pop("S5:D5"), "relay-ownership"),
    (lambda p: p.relay_owner.update({"S5:D5": "E-S6"}), "relay-ownership"),
    (lambda p: p.relay_owner.update(
        {"S5:D5": "E-S6", "S5:K4-5": "E-S6", "S5:K5-7": "E-S6"}), "relay-ownership"),
    (lambda p: p.parent.pop("E-S5"), "parent-cardinality"),
    (lambda p: p.parent.update({"E-S5": "E-BA1"}), "parent-cardinality"),
    (lambda p: p.parent.update({"E-CC1": "E-CC2"}), "parent-cardinality"),
])
def test_plan_infeasible_families(comm9, mutate, family):
    plan = identity_plan(comm9)
    plan = SegmentationPlan(new_enclaves={}, relay_owner=dict(plan.relay_owner),
                            parent=dict(plan.parent), entity_of_new={})
    mutate(plan)
    with pytest.raises(PlanInfeasibleError) as exc:
        apply_segmentation(comm9, plan)
    assert exc.value.family == family


def test_relay_coverage_violation(comm9):
    plan = identity_plan(comm9)
    owner = dict(plan.relay_owner)
    # strip every relay from E-S5 and pile them onto a new enclave
    parent = dict(plan.parent)
    parent["N-S5-1"] = "E-CC2"
    for rid, e in list(owner.items()):
        if e == "E-S5":
            owner[rid] = "N-S5-1"
    bad = SegmentationPlan(new_enclaves={TIER_SS: ("N-S5-1",)},
                           relay_owner=owner, parent=parent,
                           entity_of_new={"N-S5-1": "S5"})
    with pytest.raises(PlanInfeasibleError) as exc:
        apply_segmentation(comm9, bad)
    assert exc.value.family == "relay-coverage"


def test_control_structure_violation(comm9):
    plan = identity_plan(comm9)
    parent = dict(plan.parent)
    parent["E-S5"] = "E-CC1"  # S5's entity is controlled by CC2, not CC1
    bad = SegmentationPlan(new_enclaves={}, relay_owner=dict(plan.relay_owner),
                           parent=parent, entity_of_new={})
    with pytest.raises(PlanInfeasibleError) as exc:
        apply_segmentation(comm9, bad)
    assert exc.value.family == "control-structure"


def test_derive_effects_empty_and_full(grid9, comm9):
    forest = identity_forest(comm9)
    empty = derive_effects(forest, grid9, ())
    assert not empty.lines_down and not empty.gens_down and not empty.loads_off
    loads = derive_effects(forest, grid9,
                           ["E-BA1", "E-CC2", "E-S5", "E-S6", "E-S8"])
    assert loads.loads_off == {"D5", "D6", "D8"}
    assert loads.gens_down == set()


def test_derive_effects_requires_closure(grid9, comm9):
    forest = identity_forest(comm9)
    with pytest.raises(NotAncestorClosedError):
        derive_effects(forest, grid9, ["E-S5"])
    with pytest.raises(NotAncestorClosedError):
        derive_effects(forest, grid9, ["E-BA1", "E-S5"])


def test_worst_attack_unsegmented(grid9, comm9):
    forest = identity_forest(comm9)
    attack, shed = worst_attack_enumerate(forest, grid9, AttackBudget(5))
    assert shed == pytest.approx(315.0, abs=1e-6)
    # deterministic representative: the all-generator attack sorts first
    assert attack.attacked == ("E-BA1", "E-CC1", "E-S1", "E-S2", "E-S3")


def test_worst_attack_zero_budget(grid9, comm9):
    forest = identity_forest(comm9)
    attack, shed = worst_attack_enumerate(forest, grid9, AttackBudget(0))
    assert shed == pytest.approx(0.0, abs=1e-9)
    assert attack.attacked == ()


def test_budget_monotonicity(grid9, comm9):
    forest = identity_forest(comm9)
    ev = AttackEvaluator(grid9)
    values = [worst_attack_enumerate(forest, grid9, AttackBudget(u),
                                     evaluator=ev)[1]
              for u in range(0, 9)]
    assert values == sorted(values)
    assert values[5] == pytest.approx(315.0, abs=1e-6)


def test_split_cc_plan_caps_attack(grid9, comm9):
    forest = apply_segmentation(comm9, _split_cc_plan(comm9))
    attack, shed = worst_attack_enumerate(forest, grid9, AttackBudget(5))
    assert shed == pytest.approx(225.0, abs=1e-6)
    for e in attack.attacked:
        p = forest.parent.get(e)
        assert p is None or p in attack.attacked  # ancestor-closed


def test_counting_oracle_matches_enumeration(grid9, comm9):
    for plan in (identity_plan(comm9), _split_cc_plan(comm9)):
        forest = apply_segmentation(comm9, plan)
        for u in (0, 1, 3, 5):
            explicit = sum(1 for _ in enumerate_ancestor_closed(forest, u))
            assert count_ancestor_closed(forest, u) == explicit


def test_enumerate_prune_equals_exhaustive(grid9, comm9):
    rng = random.Random(9)
    plans = [identity_plan(comm9), _split_cc_plan(comm9)]
    ev = AttackEvaluator(grid9)
    for plan in plans:
        forest = apply_segmentation(comm9, plan)
        for u in (3, 5):
            _, pruned = worst_attack_enumerate(forest, grid9, AttackBudget(u),
                                               evaluator=ev, prune=True)
            _, exact = worst_attack_enumerate(forest, grid9, AttackBudget(u),
                                              evaluator=ev, prune=False)
            assert pruned == pytest.approx(exact, abs=1e-9)


def test_milp_matches_enumeration_identity(grid9, comm9):
    forest = identity_forest(comm9)
    ev = AttackEvaluator(grid9)
    for u in (0, 2, 4, 5):
        _, enum_shed = worst_attack_enumerate(forest, grid9, AttackBudget(u),
                                              evaluator=ev)
        _, milp_shed = worst_attack_milp(forest, grid9, AttackBudget(u),
                                         evaluator=ev)
        assert milp_shed == pytest.approx(enum_shed, abs=1e-4)


def test_milp_matches_enumeration_split_plan(grid9, comm9):
    forest = apply_segmentation(comm9, _split_cc_plan(comm9))
    ev = AttackEvaluator(grid9)
    _, enum_shed = worst_attack_enumerate(forest, grid9, AttackBudget(5),
                                          evaluator=ev)
    _, milp_shed = worst_attack_milp(forest, grid9, AttackBudget(5),
                                     evaluator=ev)
    assert milp_shed == pytest.approx(enum_shed, abs=1e-4)
    assert enum_shed == pytest.approx(225.0, abs=1e-6)


def test_evaluator_engines_agree(grid9, comm9):
    forest = identity_forest(comm9)
    rng = random.Random(4)
    reduced = AttackEvaluator(grid9, engine="reduced")
    bigm = AttackEvaluator(grid9, engine="bigm")
    subsets = list(enumerate_ancestor_closed(forest, 4))
    for subset in rng.sample(subsets, 40):
        attack = derive_effects(forest, grid9, subset)
        assert reduced.shed(attack) == pytest.approx(bigm.shed(attack), abs=1e-6)


def test_enumerate_prune_equals_exhaustive_30bus(grid30, comm30):
    """The optimistic value bound must not change the optimum on the
    tightly-rated 30-bus network either."""
    forest = identity_forest(comm30)
    ev = AttackEvaluator(grid30)
    for u in (2, 4):
        _, pruned = worst_attack_enumerate(forest, grid30, AttackBudget(u),
                                           evaluator=ev, prune=True)
        _, exact = worst_attack_enumerate(forest, grid30, AttackBudget(u),
                                          evaluator=ev, prune=False)
        assert pruned == pytest.approx(exact, abs=1e-9)


def test_monotone_outages_30bus(grid30, comm30):
    rng = random.Random(30)
    ev = AttackEvaluator(grid30)
    forest = identity_forest(comm30)
    subsets = list(enumerate_ancestor_closed(forest, 3))
    for subset in rng.sample(subsets, 25):
        small = derive_effects(forest, grid30, subset)
        grown = set(subset)
        for node in forest.topo_nodes():
            p = forest.parent.get(node)
            if (p is None or p in grown) and rng.random() < 0.3:
                grown.add(node)
        big = derive_effects(forest, grid30, grown)
        assert ev.shed(big) >= ev.shed(small) - 1e-6


def test_segmentation_safety_random_plans(grid9, comm9):
    """Any feasible segmentation weakly reduces the worst case at equal
    budget (each entity starts with one enclave)."""
    from gridseg.defender import enumerate_plans
    from gridseg.model import DefenderBudget

    rng = random.Random(123)
    forest0 = identity_forest(comm9)
    ev = AttackEvaluator(grid9)
    _, base = worst_attack_enumerate(forest0, grid9, AttackBudget(5),
                                     evaluator=ev)
    pool = list(enumerate_plans(comm9, DefenderBudget(0, 2, 0)))
    pool += list(enumerate_plans(comm9, DefenderBudget(1, 1, 0)))
    for plan in rng.sample(pool, 50):
        forest = apply_segmentation(comm9, plan)
        _, shed = worst_attack_enumerate(forest, grid9, AttackBudget(5),
                                         evaluator=ev,
                                         incumbent_cutoff=base + 1.0)
        assert shed <= base + 1e-6
