"""Domain types for the grid / communication-network instance pair.

All types are immutable after construction and identified by stable
string ids; anything order-dependent iterates in sorted-id order so
repeated runs are bit-for-bit reproducible.

Unit convention: demands, generation capacities and flow limits are MW;
line susceptances are stored as MW per radian (converted once at
ingestion); shift angles are radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

TIER_BA = "ba"
TIER_CC = "cc"
TIER_SS = "ss"
TIERS = (TIER_BA, TIER_CC, TIER_SS)


@dataclass(frozen=True)
class Line:
    id: str
    origin: str
    dest: str
    susceptance: float      # MW per radian
    shift: float            # radians
    limit: float            # MW


@dataclass(frozen=True)
class Generator:
    id: str
    substation: str
    capacity: float         # MW


@dataclass(frozen=True)
class Load:
    id: str
    substation: str
    demand: float           # MW


@dataclass(frozen=True)
class GridCase:
    """Buses, lines, generators and loads of one study case."""

    name: str
    base_mva: float
    substations: tuple[str, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]

    def __post_init__(self):
        object.__setattr__(self, "substations", tuple(sorted(self.substations)))
        object.__setattr__(self, "lines", tuple(sorted(self.lines, key=lambda x: x.id)))
        object.__setattr__(self, "generators", tuple(sorted(self.generators, key=lambda x: x.id)))
        object.__setattr__(self, "loads", tuple(sorted(self.loads, key=lambda x: x.id)))

    def line_map(self) -> dict[str, Line]:
        return {k.id: k for k in self.lines}

    def gen_map(self) -> dict[str, Generator]:
        return {g.id: g for g in self.generators}

    def load_map(self) -> dict[str, Load]:
        return {d.id: d for d in self.loads}

    def gens_at(self, sub: str) -> list[Generator]:
        return [g for g in self.generators if g.substation == sub]

    def loads_at(self, sub: str) -> list[Load]:
        return [d for d in self.loads if d.substation == sub]

    def lines_at(self, sub: str) -> list[Line]:
        return [k for k in self.lines if sub in (k.origin, k.dest)]


@dataclass(frozen=True)
class Relay:
    """Cyber-physical interface: trips the listed components when compromised."""

    id: str
    substation: str
    lines: tuple[str, ...] = ()
    gens: tuple[str, ...] = ()
    loads: tuple[str, ...] = ()

    def components(self) -> tuple[str, ...]:
        return self.lines + self.gens + self.loads


@dataclass(frozen=True)
class CommNetwork:
    """Three-tier entity forest plus existing enclaves and relay inventory.

    `parent_entity` encodes the fixed control structure: each substation
    entity maps to its control-center entity and each control center to
    its balancing authority.  `enclave_entity` is the existing-enclave
    membership (each existing enclave belongs to exactly one entity).
    """

    name: str
    entities: dict[str, tuple[str, ...]]          # tier -> entity ids
    parent_entity: dict[str, str]                 # child entity -> parent entity
    enclaves: tuple[str, ...]                     # existing enclave ids
    enclave_entity: dict[str, str]                # enclave -> entity
    relays: tuple[Relay, ...]

    def __post_init__(self):
        object.__setattr__(self, "entities",
                           {t: tuple(sorted(self.entities.get(t, ()))) for t in TIERS})
        object.__setattr__(self, "enclaves", tuple(sorted(self.enclaves)))
        object.__setattr__(self, "relays", tuple(sorted(self.relays, key=lambda r: r.id)))

    def tier_of_entity(self, entity: str) -> str | None:
        for t in TIERS:
            if entity in self.entities[t]:
                return t
        return None

    def children_entities(self, entity: str) -> list[str]:
        return sorted(c for c, p in self.parent_entity.items() if p == entity)

    def enclaves_of_entity(self, entity: str) -> list[str]:
        return sorted(e for e, n in self.enclave_entity.items() if n == entity)

    def relays_at(self, sub_entity: str) -> list[Relay]:
        return [r for r in self.relays if r.substation == sub_entity]

    def relay_map(self) -> dict[str, Relay]:
        return {r.id: r for r in self.relays}


@dataclass(frozen=True)
class DefenderBudget:
    """Number of new enclaves the administrator creates per tier."""

    new_ss: int = 0
    new_cc: int = 0
    new_ba: int = 0

    def __post_init__(self):
        if min(self.new_ss, self.new_cc, self.new_ba) < 0:
            raise ValueError("enclave budgets must be nonnegative")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.new_ss, self.new_cc, self.new_ba)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    subjects: tuple[str, ...] = ()


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code: str, message: str, *subjects: str) -> None:
        self.violations.append(Violation(code, message, tuple(subjects)))

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


def total_demand(grid: GridCase) -> float:
    """Sum of all load demands in MW."""
    return float(sum(d.demand for d in grid.loads))


def validate_instance(grid: GridCase, comm: CommNetwork) -> ValidationReport:
    """Check that a (grid, communication) pair is internally consistent.

    Violations are data, not failures: the report lists every problem
    found.  The function is pure; identical inputs give identical reports.
    """
    rep = ValidationReport()

    # --- grid side ---
    subs = set(grid.substations)
    for k in grid.lines:
        if k.origin == k.dest:
            rep.add("SELF_LOOP", f"line {k.id} connects {k.origin} to itself", k.id)
        for end in (k.origin, k.dest):
            if end not in subs:
                rep.add("BAD_ENDPOINT", f"line {k.id} endpoint {end} is not a substation",
                        k.id, end)
        if k.limit <= 0:
            rep.add("BAD_LIMIT", f"line {k.id} has nonpositive flow limit", k.id)
        if k.susceptance <= 0:
            rep.add("BAD_SUSCEPTANCE", f"line {k.id} has nonpositive susceptance", k.id)
    for g in grid.generators:
        if g.substation not in subs:
            rep.add("BAD_HOST", f"generator {g.id} hosted at unknown substation", g.id)
        if g.capacity < 0:
            rep.add("BAD_CAPACITY", f"generator {g.id} has negative capacity", g.id)
    for d in grid.loads:
        if d.substation not in subs:
            rep.add("BAD_HOST", f"load {d.id} hosted at unknown substation", d.id)
        if d.demand < 0:
            rep.add("BAD_DEMAND", f"load {d.id} has negative demand", d.id)

    # --- communication forest ---
    ba = set(comm.entities[TIER_BA])
    cc = set(comm.entities[TIER_CC])
    ss = set(comm.entities[TIER_SS])
    for c in sorted(cc):
        p = comm.parent_entity.get(c)
        if p is None or p not in ba:
            rep.add("FOREST_VIOLATION",
                    f"control center {c} lacks a unique balancing-authority parent", c)
    for s in sorted(ss):
        p = comm.parent_entity.get(s)
        if p is None or p not in cc:
            rep.add("FOREST_VIOLATION",
                    f"substation {s} lacks a unique control-center parent", s)
    for child in sorted(comm.parent_entity):
        if child not in cc | ss:
            rep.add("FOREST_VIOLATION",
                    f"control edge declared for unknown entity {child}", child)

    if ss != subs:
        missing = sorted(subs - ss) + sorted(ss - subs)
        rep.add("SUBSTATION_MISMATCH",
                "substation entities do not match grid substations", *missing)

    # --- enclave membership: each existing enclave in exactly one entity ---
    all_entities = ba | cc | ss
    for e in comm.enclaves:
        n = comm.enclave_entity.get(e)
        if n is None or n not in all_entities:
            rep.add("ORPHAN_ENCLAVE", f"enclave {e} is not assigned to any entity", e)
    for e in sorted(comm.enclave_entity):
        if e not in comm.enclaves:
            rep.add("UNKNOWN_ENCLAVE", f"membership declared for undeclared enclave {e}", e)

    # --- relays ---
    seen: dict[str, str] = {}
    line_ids = {k.id for k in grid.lines}
    gen_ids = {g.id for g in grid.generators}
    load_ids = {d.id for d in grid.loads}
    comp_sub: dict[str, str] = {}
    for k in grid.lines:
        comp_sub[k.id] = ""  # lines live at both endpoints; handled below
    for g in grid.generators:
        comp_sub[g.id] = g.substation
    for d in grid.loads:
        comp_sub[d.id] = d.substation
    line_by_id = grid.line_map()

    for r in comm.relays:
        if r.id in seen:
            rep.add("DUPLICATE_RELAY_OWNER",
                    f"relay {r.id} declared under {seen[r.id]} and {r.substation}",
                    r.id, seen[r.id], r.substation)
            continue
        seen[r.id] = r.substation
        if r.substation not in ss:
            rep.add("BAD_RELAY_HOST", f"relay {r.id} hosted at unknown substation", r.id)
            continue
        if not r.components():
            rep.add("RELAY_NO_COMPONENT", f"relay {r.id} controls no grid component", r.id)
        for kid in r.lines:
            if kid not in line_ids:
                rep.add("DANGLING_REFERENCE", f"relay {r.id} cites unknown line {kid}",
                        r.id, kid)
            elif r.substation not in (line_by_id[kid].origin, line_by_id[kid].dest):
                rep.add("COMPONENT_NOT_LOCAL",
                        f"relay {r.id} controls line {kid} not incident to {r.substation}",
                        r.id, kid)
        for cid, ids in (("generator", r.gens), ("load", r.loads)):
            for comp in ids:
                pool = gen_ids if cid == "generator" else load_ids
                if comp not in pool:
                    rep.add("DANGLING_REFERENCE",
                            f"relay {r.id} cites unknown {cid} {comp}", r.id, comp)
                elif comp_sub[comp] != r.substation:
                    rep.add("COMPONENT_NOT_LOCAL",
                            f"relay {r.id} controls {cid} {comp} at another substation",
                            r.id, comp)

    return rep
