"""Operator DCOPF tests: base cases, forced sheds, duality, oracle agreement."""

import numpy as np
import pytest

from gridseg.dcopf import (
    Attack, EMPTY_ATTACK, build_operator_lp, check_strong_duality,
    dual_objective, solve_operator, solve_operator_reduced,
)
from gridseg.lp import solve_lp
from gridseg.model import total_demand


def _attack_from_effects(lines=(), gens=(), loads=()):
    return Attack(lines_down=frozenset(lines), gens_down=frozenset(gens),
                  loads_off=frozenset(loads))


def _random_attack(rng, grid, p=0.2):
    lines = [k.id for k in grid.lines if rng.random() < p]
    gens = [g.id for g in grid.generators if rng.random() < p]
    loads = [d.id for d in grid.loads if rng.random() < p]
    return _attack_from_effects(lines, gens, loads)


def test_base_case_no_shed(grid9):
    disp, dual = solve_operator(grid9, EMPTY_ATTACK)
    assert disp.total_shed == pytest.approx(0.0, abs=1e-7)
    assert not dual.flags


def test_all_generators_down_sheds_everything(grid9):
    attack = _attack_from_effects(gens=["G1", "G2", "G3"])
    disp, _ = solve_operator(grid9, attack)
    assert disp.total_shed == pytest.approx(total_demand(grid9), abs=1e-7)


def test_all_load_substation_relays_down(grid9):
    # components at the three load buses: loads off plus their lines cut
    attack = _attack_from_effects(
        lines=["K4-5", "K5-7", "K4-6", "K6-9", "K7-8", "K8-9"],
        loads=["D5", "D6", "D8"])
    disp, _ = solve_operator(grid9, attack)
    assert disp.total_shed == pytest.approx(315.0, abs=1e-7)


def test_forced_shed_lower_bound(grid9):
    attack = _attack_from_effects(loads=["D6"])  # 125 MW forced off
    disp, _ = solve_operator(grid9, attack)
    assert disp.shed["D6"] == pytest.approx(125.0, abs=1e-9)
    assert disp.total_shed >= 125.0 - 1e-9


def test_islanding_junctions_four_seven(grid9):
    # cutting every line at buses 4 and 7 strands the 90 MW load and the
    # two big generators; the 90 MW unit serves what it can of the
    # 225 MW island, so 225 MW total goes unserved
    attack = _attack_from_effects(lines=["K1-4", "K4-5", "K4-6",
                                         "K2-7", "K5-7", "K7-8"])
    disp, _ = solve_operator(grid9, attack)
    assert disp.total_shed == pytest.approx(225.0, abs=1e-6)


def test_power_balance_at_optimum(grid9):
    rng = np.random.default_rng(11)
    for _ in range(20):
        attack = _random_attack(rng, grid9)
        disp, _ = solve_operator(grid9, attack)
        served = total_demand(grid9) - disp.total_shed
        assert sum(disp.generation.values()) == pytest.approx(served, abs=1e-6)


def test_big_m_rows_inactive_or_binding(grid9):
    rng = np.random.default_rng(5)
    for _ in range(15):
        attack = _random_attack(rng, grid9)
        disp, _ = solve_operator(grid9, attack)
        for k in grid9.lines:
            f = disp.flows[k.id]
            if attack.line_up(k.id):
                ohm = k.susceptance * (disp.angles[k.origin] - disp.angles[k.dest]
                                       - k.shift)
                assert abs(f - ohm) < 1e-6
            else:
                assert abs(f) < 1e-9


def test_strong_duality_random_attacks(grid9):
    rng = np.random.default_rng(42)
    for _ in range(30):
        attack = _random_attack(rng, grid9)
        disp, dual = solve_operator(grid9, attack)
        assert check_strong_duality(grid9, attack, disp, dual) <= 1e-6


def test_perturbed_dual_fails_duality_check(grid9):
    disp, dual = solve_operator(grid9, EMPTY_ATTACK)
    dual.gamma["G1"] += 1.0
    assert check_strong_duality(grid9, EMPTY_ATTACK, disp, dual) > 1e-3


def test_reduced_oracle_matches_bigm_everywhere(grid9):
    rng = np.random.default_rng(2024)
    for _ in range(200):
        attack = _random_attack(rng, grid9, p=0.25)
        disp, _ = solve_operator(grid9, attack)
        red = solve_operator_reduced(grid9, attack)
        assert red.total_shed == pytest.approx(disp.total_shed, abs=1e-6)


def test_monotone_in_outage_set(grid9):
    rng = np.random.default_rng(77)
    for _ in range(30):
        a = _random_attack(rng, grid9, p=0.15)
        extra_lines = set(a.lines_down) | {k.id for k in grid9.lines if rng.random() < 0.15}
        extra_gens = set(a.gens_down) | {g.id for g in grid9.generators if rng.random() < 0.15}
        b = Attack(lines_down=frozenset(extra_lines), gens_down=frozenset(extra_gens),
                   loads_off=a.loads_off)
        la, _ = solve_operator(grid9, a)
        lb, _ = solve_operator(grid9, b)
        assert lb.total_shed >= la.total_shed - 1e-6


def test_operator_lp_solves_infeasible_free(grid9):
    # sanity: every single-line outage keeps the LP optimal (recourse)
    for k in grid9.lines:
        lp = build_operator_lp(grid9, _attack_from_effects(lines=[k.id]))
        assert solve_lp(lp).optimal


def test_dual_objective_equals_primal_for_solver_duals(grid9):
    disp, dual = solve_operator(grid9, _attack_from_effects(lines=["K1-4"]))
    assert dual_objective(grid9, _attack_from_effects(lines=["K1-4"]), dual) == \
        pytest.approx(disp.total_shed, abs=1e-6)
