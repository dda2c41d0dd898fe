"""Parsing of grid case files and communication topologies, plus canonical
serialization of solve results.

Two grid formats are accepted: a MATPOWER-style ``.m`` subset restricted
to ``mpc.baseMVA``, ``mpc.bus``, ``mpc.gen`` and ``mpc.branch``, and the
artifact's native line-oriented schema (``gridcase v1``).  Communication
topologies use the native ``commnet v1`` schema only.

Branch ratings of 0 in MATPOWER files mean "unlimited" and are replaced
by 10x total system demand so flow bounds stay well posed.  Reactance is
converted to a susceptance in MW/rad (baseMVA / x) once, here.
"""

from __future__ import annotations

import hashlib
import math
import re


from .model import CommNetwork, Generator, GridCase, Line, Load, Relay

UNLIMITED_RATING_FACTOR = 10.0


class IngestError(Exception):
    code = "PARSE_ERROR"

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f" at line {line}" + (f", col {col}" if col is not None else "")
        super().__init__(f"{self.code}{where}: {message}")


class ParseError(IngestError):
    code = "PARSE_ERROR"


class UnsupportedFieldError(IngestError):
    code = "UNSUPPORTED_FIELD"


class DanglingReferenceError(IngestError):
    code = "DANGLING_REFERENCE"


# ---------------------------------------------------------------------------
# MATPOWER subset


def _matpower_matrix(text: str, name: str) -> list[tuple[int, list[float]]]:
    """Extract matrix `mpc.<name> = [...]` as (line_no, row) pairs."""
    pat = re.compile(rf"mpc\.{name}\s*=\s*\[", re.MULTILINE)
    m = pat.search(text)
    if not m:
        raise UnsupportedFieldError(f"required matrix mpc.{name} is absent")
    start = m.end()
    end = text.find("]", start)
    if end < 0:
        raise ParseError(f"matrix mpc.{name} is not closed",
                         line=text.count("\n", 0, start) + 1)
    body = text[start:end]
    base_line = text.count("\n", 0, start) + 1
    rows: list[tuple[int, list[float]]] = []
    for i, raw in enumerate(body.split("\n")):
        line_no = base_line + i
        stmt = raw.split("%", 1)[0].strip()
        if not stmt:
            continue
        for chunk in stmt.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            vals = []
            for j, tok in enumerate(chunk.split()):
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise ParseError(f"bad numeric token {tok!r} in mpc.{name}",
                                     line=line_no, col=j + 1) from None
            rows.append((line_no, vals))
    if not rows:
        raise ParseError(f"matrix mpc.{name} is empty")
    return rows


def _parse_matpower(text: str) -> GridCase:
    m = re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;", text)
    if not m:
        raise UnsupportedFieldError("required scalar mpc.baseMVA is absent")
    base_mva = float(m.group(1))

    name_m = re.search(r"function\s+mpc\s*=\s*(\w+)", text)
    name = name_m.group(1) if name_m else "case"

    bus_rows = _matpower_matrix(text, "bus")
    gen_rows = _matpower_matrix(text, "gen")
    branch_rows = _matpower_matrix(text, "branch")

    substations: list[str] = []
    loads: list[Load] = []
    bus_ids: set[int] = set()
    for line_no, row in bus_rows:
        if len(row) < 3:
            raise ParseError("bus row needs at least [id type Pd]", line=line_no)
        bid = int(row[0])
        if bid in bus_ids:
            raise ParseError(f"duplicate bus id {bid}", line=line_no)
        bus_ids.add(bid)
        substations.append(f"S{bid}")
        pd = row[2]
        if pd != 0.0:
            loads.append(Load(id=f"D{bid}", substation=f"S{bid}", demand=pd))
    demand = sum(d.demand for d in loads)
    default_rating = UNLIMITED_RATING_FACTOR * demand if demand > 0 else 1e4

    gens: list[Generator] = []
    gen_count: dict[int, int] = {}
    for line_no, row in gen_rows:
        if len(row) < 9:
            raise ParseError("gen row needs at least 9 columns (through Pmax)",
                             line=line_no)
        bid = int(row[0])
        if bid not in bus_ids:
            raise ParseError(f"generator at unknown bus {bid}", line=line_no)
        status = row[7] if len(row) > 7 else 1.0
        if status <= 0:
            continue
        gen_count[bid] = gen_count.get(bid, 0) + 1
        suffix = "" if gen_count[bid] == 1 else f"#{gen_count[bid]}"
        gens.append(Generator(id=f"G{bid}{suffix}", substation=f"S{bid}",
                              capacity=row[8]))

    lines: list[Line] = []
    line_count: dict[tuple[int, int], int] = {}
    for line_no, row in branch_rows:
        if len(row) < 6:
            raise ParseError("branch row needs at least [f t r x b rateA]",
                             line=line_no)
        f, t = int(row[0]), int(row[1])
        if f not in bus_ids or t not in bus_ids:
            raise ParseError(f"branch endpoint {f}-{t} references unknown bus",
                             line=line_no)
        status = row[10] if len(row) > 10 else 1.0
        if status <= 0:
            continue
        x = row[3]
        if x == 0:
            raise ParseError(f"branch {f}-{t} has zero reactance", line=line_no)
        rate = row[5]
        limit = rate if rate > 0 else default_rating
        shift_deg = row[9] if len(row) > 9 else 0.0
        key = (f, t)
        line_count[key] = line_count.get(key, 0) + 1
        suffix = "" if line_count[key] == 1 else f"#{line_count[key]}"
        lines.append(Line(id=f"K{f}-{t}{suffix}", origin=f"S{f}", dest=f"S{t}",
                          susceptance=base_mva / x, shift=math.radians(shift_deg),
                          limit=limit))

    return GridCase(name=name, base_mva=base_mva, substations=tuple(substations),
                    lines=tuple(lines), generators=tuple(gens), loads=tuple(loads))


# ---------------------------------------------------------------------------
# native grid schema


def _split_attrs(tokens: list[str], line_no: int) -> dict[str, str]:
    attrs = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParseError(f"expected key=value, got {tok!r}", line=line_no)
        k, v = tok.split("=", 1)
        attrs[k] = v
    return attrs


def _parse_native_grid(text: str) -> GridCase:
    base_mva = 100.0
    name = "grid"
    substations: list[str] = []
    loads: list[Load] = []
    gens: list[Generator] = []
    lines: list[Line] = []
    header_seen = False
    for line_no, raw in enumerate(text.split("\n"), start=1):
        stmt = raw.split("#", 1)[0].strip()
        if not stmt:
            continue
        toks = stmt.split()
        kind = toks[0]
        if kind == "gridcase":
            if toks[1:] != ["v1"]:
                raise ParseError("unsupported gridcase schema version", line=line_no)
            header_seen = True
            continue
        if not header_seen:
            raise ParseError("missing 'gridcase v1' header", line=line_no)
        if kind == "name":
            name = toks[1]
        elif kind == "base":
            base_mva = float(toks[1])
        elif kind == "bus":
            sid = toks[1]
            substations.append(sid)
            attrs = _split_attrs(toks[2:], line_no)
            if "load" in attrs:
                loads.append(Load(id=f"D{sid[1:]}" if sid.startswith("S") else f"D-{sid}",
                                  substation=sid, demand=float(attrs["load"])))
        elif kind == "gen":
            attrs = _split_attrs(toks[2:], line_no)
            gens.append(Generator(id=toks[1], substation=attrs["bus"],
                                  capacity=float(attrs["capacity"])))
        elif kind == "line":
            attrs = _split_attrs(toks[2:], line_no)
            lines.append(Line(id=toks[1], origin=attrs["from"], dest=attrs["to"],
                              susceptance=float(attrs["susceptance"]),
                              shift=float(attrs.get("shift", "0")),
                              limit=float(attrs["limit"])))
        else:
            raise ParseError(f"unknown directive {kind!r}", line=line_no)
    if not substations:
        raise ParseError("native grid declares no buses")
    return GridCase(name=name, base_mva=base_mva, substations=tuple(substations),
                    lines=tuple(lines), generators=tuple(gens), loads=tuple(loads))


def parse_grid_case(text: str) -> GridCase:
    """Parse a grid case from MATPOWER-subset or native text."""
    if not text.strip():
        raise ParseError("empty grid case text", line=1, col=1)
    stripped = text.lstrip()
    if stripped.startswith("gridcase"):
        return _parse_native_grid(text)
    if "mpc." in text or stripped.startswith("function"):
        return _parse_matpower(text)
    raise ParseError("unrecognized grid case format", line=1, col=1)


def write_grid_native(grid: GridCase) -> str:
    """Serialize a GridCase to the native schema (round-trips exactly)."""
    out = ["gridcase v1", f"name {grid.name}", f"base {grid.base_mva:.17g}"]
    load_at = {d.substation: d for d in grid.loads}
    for s in grid.substations:
        if s in load_at:
            out.append(f"bus {s} load={load_at[s].demand:.17g}")
        else:
            out.append(f"bus {s}")
    for g in grid.generators:
        out.append(f"gen {g.id} bus={g.substation} capacity={g.capacity:.17g}")
    for k in grid.lines:
        out.append(f"line {k.id} from={k.origin} to={k.dest} "
                   f"susceptance={k.susceptance:.17g} shift={k.shift:.17g} "
                   f"limit={k.limit:.17g}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# communication topology


def parse_comm_topology(text: str, grid: GridCase | None = None) -> CommNetwork:
    """Parse the native comm-topology schema.

    When `grid` is given, relay component references are resolved against
    it and unknown components raise DanglingReferenceError.
    """
    if not text.strip():
        raise ParseError("empty comm topology text", line=1, col=1)
    name = "comm"
    entities: dict[str, list[str]] = {"ba": [], "cc": [], "ss": []}
    parent_entity: dict[str, str] = {}
    enclaves: list[str] = []
    enclave_entity: dict[str, str] = {}
    relays: list[Relay] = []
    header_seen = False
    for line_no, raw in enumerate(text.split("\n"), start=1):
        stmt = raw.split("#", 1)[0].strip()
        if not stmt:
            continue
        toks = stmt.split()
        kind = toks[0]
        if kind == "commnet":
            if toks[1:] != ["v1"]:
                raise ParseError("unsupported commnet schema version", line=line_no)
            header_seen = True
            continue
        if not header_seen:
            raise ParseError("missing 'commnet v1' header", line=line_no)
        if kind == "name":
            name = toks[1]
        elif kind in ("ba", "cc", "ss"):
            ent = toks[1]
            entities[kind].append(ent)
            attrs = _split_attrs(toks[2:], line_no)
            if kind != "ba":
                if "parent" not in attrs:
                    raise ParseError(f"{kind} entity {ent} needs parent=", line=line_no)
                parent_entity[ent] = attrs["parent"]
        elif kind == "enclave":
            attrs = _split_attrs(toks[2:], line_no)
            if "entity" not in attrs:
                raise ParseError(f"enclave {toks[1]} needs entity=", line=line_no)
            enclaves.append(toks[1])
            enclave_entity[toks[1]] = attrs["entity"]
        elif kind == "relay":
            attrs = _split_attrs(toks[2:], line_no)
            if "sub" not in attrs:
                raise ParseError(f"relay {toks[1]} needs sub=", line=line_no)
            relays.append(Relay(
                id=toks[1], substation=attrs["sub"],
                lines=tuple(attrs.get("lines", "").split(",")) if attrs.get("lines") else (),
                gens=tuple(attrs.get("gens", "").split(",")) if attrs.get("gens") else (),
                loads=tuple(attrs.get("loads", "").split(",")) if attrs.get("loads") else (),
            ))
        else:
            raise ParseError(f"unknown directive {kind!r}", line=line_no)

    comm = CommNetwork(name=name,
                       entities={t: tuple(v) for t, v in entities.items()},
                       parent_entity=parent_entity,
                       enclaves=tuple(enclaves),
                       enclave_entity=enclave_entity,
                       relays=tuple(relays))
    if grid is not None:
        known = ({k.id for k in grid.lines} | {g.id for g in grid.generators}
                 | {d.id for d in grid.loads})
        for r in comm.relays:
            for comp in r.components():
                if comp not in known:
                    raise DanglingReferenceError(
                        f"relay {r.id} cites unknown grid component {comp}")
    return comm


def write_comm_native(comm: CommNetwork) -> str:
    out = ["commnet v1", f"name {comm.name}"]
    for tier in ("ba", "cc", "ss"):
        for ent in comm.entities[tier]:
            if tier == "ba":
                out.append(f"{tier} {ent}")
            else:
                out.append(f"{tier} {ent} parent={comm.parent_entity[ent]}")
    for e in comm.enclaves:
        out.append(f"enclave {e} entity={comm.enclave_entity[e]}")
    for r in comm.relays:
        parts = [f"relay {r.id} sub={r.substation}"]
        if r.lines:
            parts.append("lines=" + ",".join(r.lines))
        if r.gens:
            parts.append("gens=" + ",".join(r.gens))
        if r.loads:
            parts.append("loads=" + ",".join(r.loads))
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def instance_digest(grid: GridCase, comm: CommNetwork) -> str:
    """Stable content hash of an instance pair."""
    blob = write_grid_native(grid) + "\x00" + write_comm_native(comm)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# canonical results


def _canonical_json(obj, indent: int = 0) -> str:
    """JSON text with sorted keys and all floats at fixed 6 decimals, so a
    given record always serializes to identical bytes."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k in sorted(obj):
            items.append(f'{pad}  "{k}": {_canonical_json(obj[k], indent + 1)}')
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}  {_canonical_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        return f"{obj:.6f}"
    if isinstance(obj, int):
        return str(obj)
    if obj is None:
        return "null"
    return '"' + str(obj).replace("\\", "\\\\").replace('"', '\\"') + '"'


def write_results(run, include_timing: bool = False) -> str:
    """Canonical machine-readable text for one solve record or a sweep.

    Accepts anything with a ``record_dict()`` method (SolveRecord) or a
    plain mapping, or a sequence of those (a sweep table).  Timings vary
    across runs, so they are excluded unless explicitly requested; the
    default output is byte-identical for identical runs.
    """
    def one(r):
        d = r.record_dict() if hasattr(r, "record_dict") else dict(r)
        if not include_timing:
            d.pop("wall_time_s", None)
        return d

    if isinstance(run, (list, tuple)):
        payload = {"schema": "gridseg-result/v1", "rows": [one(r) for r in run]}
    else:
        payload = {"schema": "gridseg-result/v1", **one(run)}
    return _canonical_json(payload) + "\n"
