"""Instance model validation and ingest round-trips."""

import pytest

from gridseg.ingest import (
    DanglingReferenceError, ParseError, UnsupportedFieldError,
    instance_digest, parse_comm_topology, parse_grid_case,
    write_comm_native, write_grid_native, write_results,
)
from gridseg.model import (
    CommNetwork, DefenderBudget, GridCase, Generator, Line, Load, Relay,
    total_demand, validate_instance,
)


def test_nine_bus_shape(grid9):
    assert len(grid9.substations) == 9
    assert len(grid9.generators) == 3
    assert len(grid9.lines) == 9
    assert total_demand(grid9) == pytest.approx(315.0)
    assert {d.substation for d in grid9.loads} == {"S5", "S6", "S8"}
    assert sorted(d.demand for d in grid9.loads) == [90.0, 100.0, 125.0]


def test_nine_bus_instance_validates(grid9, comm9):
    rep = validate_instance(grid9, comm9)
    assert rep.ok, rep.violations
    # validation is pure: identical reports on repeat
    assert validate_instance(grid9, comm9).violations == rep.violations


def test_thirty_bus_shape(grid30, comm30):
    assert len(grid30.substations) == 30
    assert len(grid30.generators) == 6
    assert total_demand(grid30) == pytest.approx(189.2)
    # low-voltage side demand, as served by the second balancing authority
    lv = {s for s in comm30.entities["ss"]
          if comm30.parent_entity[comm30.parent_entity[s]] == "BA2"}
    lv_demand = sum(d.demand for d in grid30.loads if d.substation in lv)
    assert lv_demand == pytest.approx(104.7)
    assert validate_instance(grid30, comm30).ok


def test_relay_inventory(comm9):
    # one relay per line end + one per generator + one per load
    assert len(comm9.relays) == 2 * 9 + 3 + 3
    for r in comm9.relays:
        assert r.components()


def test_empty_and_garbage_input():
    with pytest.raises(ParseError):
        parse_grid_case("")
    with pytest.raises(ParseError):
        parse_grid_case("hello world")
    with pytest.raises(ParseError):
        parse_comm_topology("")


def test_missing_matrix_is_unsupported_field():
    text = "function mpc = x\nmpc.baseMVA = 100;\nmpc.bus = [1 3 0;];\nmpc.gen = [1 0 0 0 0 0 0 1 10;];\n"
    with pytest.raises(UnsupportedFieldError):
        parse_grid_case(text)


def test_parse_error_carries_location():
    text = ("function mpc = x\nmpc.baseMVA = 100;\n"
            "mpc.bus = [\n1 3 0 0 0 0 1 1 0 345 1 1.1 0.9;\n2 1 oops 0;\n];\n"
            "mpc.gen = [1 0 0 0 0 0 0 1 10;];\nmpc.branch = [1 2 0 0.1 0 10;];\n")
    with pytest.raises(ParseError) as exc:
        parse_grid_case(text)
    assert exc.value.line == 5


def test_zero_rating_maps_to_documented_default():
    text = ("function mpc = x\nmpc.baseMVA = 100;\n"
            "mpc.bus = [\n1 3 10 0;\n2 1 0 0;\n];\n"
            "mpc.gen = [1 0 0 0 0 0 0 1 50;];\n"
            "mpc.branch = [1 2 0 0.1 0 0;];\n")
    grid = parse_grid_case(text)
    assert grid.lines[0].limit == pytest.approx(10.0 * 10.0)  # 10x total demand


def test_dangling_relay_reference(grid9):
    text = ("commnet v1\nba BA1\ncc CC1 parent=BA1\nss S1 parent=CC1\n"
            "enclave E-S1 entity=S1\nrelay S1:K99 sub=S1 lines=L99\n")
    with pytest.raises(DanglingReferenceError):
        parse_comm_topology(text, grid=grid9)
    # without a grid the file parses; validation then reports the problem
    comm = parse_comm_topology(text)
    assert "L99" in comm.relays[0].lines


def test_native_grid_roundtrip(grid9):
    text = write_grid_native(grid9)
    again = parse_grid_case(text)
    assert again == grid9
    assert write_grid_native(again) == text


def test_native_comm_roundtrip(comm9, grid9):
    text = write_comm_native(comm9)
    again = parse_comm_topology(text, grid=grid9)
    assert again == comm9
    assert instance_digest(grid9, again) == instance_digest(grid9, comm9)


def _toy_grid():
    return GridCase(
        name="toy", base_mva=100.0, substations=("S1", "S2"),
        lines=(Line("K1-2", "S1", "S2", susceptance=1000.0, shift=0.0, limit=100.0),),
        generators=(Generator("G1", "S1", 80.0),),
        loads=(Load("D2", "S2", 50.0),),
    )


def _toy_comm(relays):
    return CommNetwork(
        name="toy",
        entities={"ba": ("BA1",), "cc": ("CC1",), "ss": ("S1", "S2")},
        parent_entity={"CC1": "BA1", "S1": "CC1", "S2": "CC1"},
        enclaves=("E-BA1", "E-CC1", "E-S1", "E-S2"),
        enclave_entity={"E-BA1": "BA1", "E-CC1": "CC1", "E-S1": "S1", "E-S2": "S2"},
        relays=relays,
    )


def test_duplicate_relay_owner_violation():
    comm = _toy_comm((
        Relay("R1", "S1", gens=("G1",)),
        Relay("R1", "S2", loads=("D2",)),
    ))
    rep = validate_instance(_toy_grid(), comm)
    assert "DUPLICATE_RELAY_OWNER" in rep.codes()


def test_orphan_enclave_violation():
    comm = CommNetwork(
        name="toy",
        entities={"ba": ("BA1",), "cc": ("CC1",), "ss": ("S1", "S2")},
        parent_entity={"CC1": "BA1", "S1": "CC1", "S2": "CC1"},
        enclaves=("E-BA1", "E-CC1", "E-S1", "E-S2", "E-LOST"),
        enclave_entity={"E-BA1": "BA1", "E-CC1": "CC1", "E-S1": "S1", "E-S2": "S2"},
        relays=(Relay("R1", "S1", gens=("G1",)), Relay("R2", "S2", loads=("D2",))),
    )
    rep = validate_instance(_toy_grid(), comm)
    assert "ORPHAN_ENCLAVE" in rep.codes()


def test_relay_without_component_and_nonlocal_component():
    comm = _toy_comm((
        Relay("R1", "S1"),                     # controls nothing
        Relay("R2", "S1", loads=("D2",)),      # D2 lives at S2
    ))
    rep = validate_instance(_toy_grid(), comm)
    assert "RELAY_NO_COMPONENT" in rep.codes()
    assert "COMPONENT_NOT_LOCAL" in rep.codes()


def test_forest_violation_detected():
    comm = CommNetwork(
        name="bad",
        entities={"ba": ("BA1",), "cc": ("CC1",), "ss": ("S1", "S2")},
        parent_entity={"CC1": "BA1", "S1": "CC1"},  # S2 dangles
        enclaves=("E-BA1", "E-CC1", "E-S1", "E-S2"),
        enclave_entity={"E-BA1": "BA1", "E-CC1": "CC1", "E-S1": "S1", "E-S2": "S2"},
        relays=(Relay("R1", "S1", gens=("G1",)), Relay("R2", "S2", loads=("D2",))),
    )
    rep = validate_instance(_toy_grid(), comm)
    assert "FOREST_VIOLATION" in rep.codes()


def test_budget_validation():
    with pytest.raises(ValueError):
        DefenderBudget(new_ss=-1)
    assert DefenderBudget(1, 2, 3).as_tuple() == (1, 2, 3)


def test_total_demand_empty_load_set():
    grid = GridCase(name="bare", base_mva=100.0, substations=("S1",),
                    lines=(), generators=(), loads=())
    assert total_demand(grid) == 0.0


def test_write_results_deterministic_and_sorted():
    rec = {"load_shed_mw": 225.0, "attack_budget": 5,
           "plan": {"new_enclaves": ["N-CC1"]}, "wall_time_s": 1.23}
    a = write_results(rec)
    b = write_results(rec)
    assert a == b
    assert "wall_time_s" not in a          # timings excluded by default
    assert "225.000000" in a               # 6-decimal fixed formatting
    assert a.index('"attack_budget"') < a.index('"load_shed_mw"')  # key-sorted
    rows = write_results([rec, rec])
    assert rows.count("225.000000") == 2
