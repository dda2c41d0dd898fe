"""Dense exact LP solver and binary branch-and-bound.

A small, deterministic two-phase primal simplex over a dense numpy
tableau, plus a depth-first branch-and-bound layer for programs whose
integer variables are all binary.  Problem sizes in this project are a
few hundred rows, so dense machinery is deliberate: it keeps pivots
reproducible and the code auditable.

Dual convention: the dual value reported for a row is the sensitivity
dObjective/dRHS of the problem as the caller stated it.  For a
minimisation problem that means duals of ">=" rows are >= 0, duals of
"<=" rows are <= 0 and equality rows are free.  Reduced costs are
c_j - y^T A_j over the user rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-8        # primal feasibility tolerance
PIVOT_TOL = 1e-9       # smallest acceptable pivot magnitude
INT_TOL = 1e-6         # integrality tolerance for branch and bound
OPT_TOL = 1e-9         # reduced-cost optimality tolerance

LE, GE, EQ = "<=", ">=", "="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LpError(Exception):
    """Malformed program (duplicate names, unknown variables, bad bounds)."""


class LpNumericError(Exception):
    """Raised when no acceptable pivot exists; signals ill-scaled input."""


@dataclass
class _Var:
    name: str
    lb: float | None
    ub: float | None


@dataclass
class _Constr:
    name: str
    coeffs: dict[str, float]
    sense: str
    rhs: float


class LinearProgram:
    """A named-variable LP: bounds, linear rows, and a single objective."""

    def __init__(self, name: str = "lp"):
        self.name = name
        self.vars: list[_Var] = []
        self.constrs: list[_Constr] = []
        self.objective: dict[str, float] = {}
        self.obj_sense = "min"
        self._var_index: dict[str, int] = {}
        self._constr_names: set[str] = set()

    def add_var(self, name: str, lb: float | None = 0.0, ub: float | None = None) -> str:
        if name in self._var_index:
            raise LpError(f"duplicate variable {name!r}")
        if lb is not None and ub is not None and lb > ub + FEAS_TOL:
            raise LpError(f"variable {name!r} has empty bound interval [{lb}, {ub}]")
        self._var_index[name] = len(self.vars)
        self.vars.append(_Var(name, lb, ub))
        return name

    def add_constr(self, name: str, coeffs: dict[str, float], sense: str, rhs: float) -> str:
        if name in self._constr_names:
            raise LpError(f"duplicate constraint {name!r}")
        if sense not in (LE, GE, EQ):
            raise LpError(f"bad sense {sense!r}")
        for v in coeffs:
            if v not in self._var_index:
                raise LpError(f"constraint {name!r} references unknown variable {v!r}")
        self._constr_names.add(name)
        self.constrs.append(_Constr(name, dict(coeffs), sense, float(rhs)))
        return name

    def set_objective(self, coeffs: dict[str, float], sense: str = "min") -> None:
        if sense not in ("min", "max"):
            raise LpError(f"bad objective sense {sense!r}")
        for v in coeffs:
            if v not in self._var_index:
                raise LpError(f"objective references unknown variable {v!r}")
        self.objective = dict(coeffs)
        self.obj_sense = sense

    def var_names(self) -> list[str]:
        return [v.name for v in self.vars]


@dataclass
class LpSolution:
    """Solver result: status, primal/dual values and the objective."""

    status: str
    objective: float | None = None
    values: dict[str, float] = field(default_factory=dict)
    duals: dict[str, float] = field(default_factory=dict)
    reduced_costs: dict[str, float] = field(default_factory=dict)
    node_count: int = 0  # branch-and-bound nodes (0 for plain LP solves)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class MixedBinaryProgram:
    """An LP plus a set of variables restricted to {0, 1}."""

    lp: LinearProgram
    binaries: tuple[str, ...]

    def __post_init__(self):
        self.binaries = tuple(self.binaries)
        idx = self.lp._var_index
        for b in self.binaries:
            if b not in idx:
                raise LpError(f"binary variable {b!r} not declared")
            v = self.lp.vars[idx[b]]
            if v.lb is None or v.ub is None or v.lb < -FEAS_TOL or v.ub > 1 + FEAS_TOL:
                raise LpError(f"binary variable {b!r} must have bounds within [0, 1]")


# ---------------------------------------------------------------------------
# standard-form assembly
#
# Internal form: min c.x  s.t.  A x = b, x >= 0.  Finite lower bounds are
# shifted out, finite upper bounds become internal "<=" rows, free variables
# split into positive and negative parts, "<="/">=" rows gain slack columns,
# and rows with no usable slack gain artificial columns for phase 1.


class _Standard:
    def __init__(self, lp: LinearProgram, lb_override: dict[str, float] | None,
                 ub_override: dict[str, float] | None):
        lbo = lb_override or {}
        ubo = ub_override or {}
        self.lp = lp
        self.bad_bounds = False
        nv = len(lp.vars)
        self.map: list[tuple[str, int, int]] = []
        self.shift = np.zeros(nv)
        cols = 0
        self.upper_rows: list[tuple[int, float]] = []
        for j, v in enumerate(lp.vars):
            lb = lbo.get(v.name, v.lb)
            ub = ubo.get(v.name, v.ub)
            if lb is not None and ub is not None and lb > ub + FEAS_TOL:
                self.bad_bounds = True
            if lb is not None:
                self.map.append(("shift", cols, -1))
                self.shift[j] = lb
                if ub is not None:
                    self.upper_rows.append((cols, max(0.0, ub - lb)))
                cols += 1
            elif ub is not None:
                self.map.append(("neg", cols, -1))
                self.shift[j] = ub
                cols += 1
            else:
                self.map.append(("split", cols, cols + 1))
                cols += 2
        self.ncols = cols

    def col_expr(self, j: int) -> list[tuple[int, float]]:
        kind, c0, c1 = self.map[j]
        if kind == "shift":
            return [(c0, 1.0)]
        if kind == "neg":
            return [(c0, -1.0)]
        return [(c0, 1.0), (c1, -1.0)]

    def assemble(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str], float]:
        lp = self.lp
        vidx = lp._var_index
        rows: list[np.ndarray] = []
        rhs: list[float] = []
        senses: list[str] = []
        for con in lp.constrs:
            row = np.zeros(self.ncols)
            b = con.rhs
            for vname, coef in con.coeffs.items():
                j = vidx[vname]
                for col, mult in self.col_expr(j):
                    row[col] += coef * mult
                b -= coef * self.shift[j]
            rows.append(row)
            rhs.append(b)
            senses.append(con.sense)
        for col, cap in self.upper_rows:
            row = np.zeros(self.ncols)
            row[col] = 1.0
            rows.append(row)
            rhs.append(cap)
            senses.append(LE)
        A = np.array(rows) if rows else np.zeros((0, self.ncols))
        b = np.array(rhs) if rhs else np.zeros(0)
        c = np.zeros(self.ncols)
        sign = 1.0 if lp.obj_sense == "min" else -1.0
        for vname, coef in lp.objective.items():
            j = vidx[vname]
            for col, mult in self.col_expr(j):
                c[col] += sign * coef * mult
        return A, b, c, senses, sign


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    piv = T[row, col]
    if abs(piv) < PIVOT_TOL:
        raise LpNumericError(f"pivot {piv:.3e} below tolerance")
    T[row] /= piv
    colv = T[:, col].copy()
    colv[row] = 0.0
    rows = np.flatnonzero(np.abs(colv) > 1e-13)
    if rows.size:
        T[rows] -= colv[rows, None] * T[row]
    T[:, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


def _simplex(T: np.ndarray, basis: list[int], allowed: np.ndarray,
             pivot_budget: int) -> str:
    """Primal simplex on tableau T (objective last row, rhs last column).

    Dantzig pricing with lowest-index tie-break, switching to Bland's rule
    after `pivot_budget` pivots.  Ratio-test ties break on the smallest
    basis index, keeping the visited bases reproducible.
    """
    m = T.shape[0] - 1
    pivots = 0
    hard_limit = pivot_budget + 200000
    while True:
        obj = T[-1, :-1]
        cand = np.where(allowed & (obj < -OPT_TOL))[0]
        if cand.size == 0:
            return OPTIMAL
        if pivots < pivot_budget:
            col = int(cand[np.argmin(obj[cand])])
        else:
            col = int(cand[0])  # Bland's rule
        colvals = T[:m, col]
        pos = np.where(colvals > PIVOT_TOL)[0]
        if pos.size == 0:
            return UNBOUNDED
        ratios = T[pos, -1] / colvals[pos]
        best = float(np.min(ratios))
        tied = pos[ratios <= best + 1e-12]
        row = int(tied[int(np.argmin([basis[i] for i in tied]))])
        _pivot(T, basis, row, col)
        pivots += 1
        if pivots > hard_limit:
            raise LpNumericError("pivot limit exhausted; cycling suspected")


def solve_lp(lp: LinearProgram, _lb: dict[str, float] | None = None,
             _ub: dict[str, float] | None = None) -> LpSolution:
    """Two-phase simplex solve with duals satisfying strong duality.

    `_lb`/`_ub` are internal bound overrides used by branch and bound.
    """
    std = _Standard(lp, _lb, _ub)
    if std.bad_bounds:
        return LpSolution(INFEASIBLE)
    A, b, c, senses, sign = std.assemble()
    m, n = A.shape

    # append slack/surplus columns
    slack_of_row = [-1] * m
    slack_cols: list[np.ndarray] = []
    for i, s in enumerate(senses):
        if s in (LE, GE):
            col = np.zeros(m)
            col[i] = 1.0 if s == LE else -1.0
            slack_cols.append(col)
            slack_of_row[i] = n + len(slack_cols) - 1
    Aeq = np.hstack([A] + [s.reshape(m, 1) for s in slack_cols]) if slack_cols else A.copy()
    nreal = Aeq.shape[1]
    ceq = np.concatenate([c, np.zeros(nreal - n)])

    # flip rows so the rhs is nonnegative
    beq = b.copy()
    flips = beq < -0.0
    Aeq[flips] *= -1.0
    beq[flips] *= -1.0

    # initial basis: slack columns that survive the flip with +1, else artificials
    basis = [-1] * m
    for i in range(m):
        sc = slack_of_row[i]
        if sc >= 0 and Aeq[i, sc] > 0.5:
            basis[i] = sc
    art_rows = [i for i in range(m) if basis[i] < 0]
    nfull = nreal + len(art_rows)
    Afull = np.zeros((m, nfull))
    Afull[:, :nreal] = Aeq
    art_cols: list[int] = []
    for k, i in enumerate(art_rows):
        Afull[i, nreal + k] = 1.0
        basis[i] = nreal + k
        art_cols.append(nreal + k)
    cfull = np.concatenate([ceq, np.zeros(len(art_cols))])
    pivot_budget = 2000 + 20 * (m + nfull)

    T = np.zeros((m + 1, nfull + 1))
    T[:m, :nfull] = Afull
    T[:m, -1] = beq

    if art_cols:
        c1 = np.zeros(nfull)
        c1[art_cols] = 1.0
        T[-1, :nfull] = c1
        for i, bv in enumerate(basis):
            if c1[bv]:
                T[-1] -= T[i]
        allowed = np.ones(nfull, dtype=bool)
        status = _simplex(T, basis, allowed, pivot_budget)
        scale = 1.0 + (abs(beq).max() if m else 0.0)
        if status != OPTIMAL or T[-1, -1] < -FEAS_TOL * scale:
            return LpSolution(INFEASIBLE)
        # drive basic artificials to zero-level real columns where possible
        for i in range(m):
            if basis[i] in art_cols:
                nz = np.where(np.abs(T[i, :nreal]) > 1e-7)[0]
                if nz.size:
                    _pivot(T, basis, i, int(nz[0]))
        T[-1, :] = 0.0

    # phase 2 objective row (artificial columns barred from entering)
    T[-1, :nfull] = cfull
    T[-1, -1] = 0.0
    for i, bv in enumerate(basis):
        if cfull[bv]:
            T[-1] -= cfull[bv] * T[i]
    allowed = np.ones(nfull, dtype=bool)
    for ac in art_cols:
        allowed[ac] = False
    status = _simplex(T, basis, allowed, pivot_budget)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED)

    # refine primal/dual values directly from the final basis
    B = Afull[:, basis]
    try:
        xb = np.linalg.solve(B, beq)
        yvec = np.linalg.solve(B.T, cfull[basis])
    except np.linalg.LinAlgError:
        xb = T[:m, -1].copy()
        yvec = None

    xfull = np.zeros(nfull)
    for i, bv in enumerate(basis):
        xfull[bv] = xb[i]

    values: dict[str, float] = {}
    for j, v in enumerate(lp.vars):
        kind, c0, c1 = std.map[j]
        if kind == "shift":
            values[v.name] = float(std.shift[j] + xfull[c0])
        elif kind == "neg":
            values[v.name] = float(std.shift[j] - xfull[c0])
        else:
            values[v.name] = float(xfull[c0] - xfull[c1])
    obj = float(sum(coef * values[name] for name, coef in lp.objective.items()))

    duals: dict[str, float] = {}
    red: dict[str, float] = {}
    ncon = len(lp.constrs)
    if yvec is not None:
        yuser = np.zeros(ncon)
        for i in range(ncon):
            y = float(yvec[i])
            if flips[i]:
                y = -y
            yuser[i] = sign * y
        for i, con in enumerate(lp.constrs):
            duals[con.name] = yuser[i]
        for v in lp.vars:
            cj = lp.objective.get(v.name, 0.0)
            acc = 0.0
            for i, con in enumerate(lp.constrs):
                coef = con.coeffs.get(v.name)
                if coef:
                    acc += yuser[i] * coef
            red[v.name] = cj - acc
    else:
        for con in lp.constrs:
            duals[con.name] = 0.0

    return LpSolution(OPTIMAL, objective=obj, values=values, duals=duals,
                      reduced_costs=red)


def solve_milp(mip: MixedBinaryProgram, incumbent_cutoff: float | None = None) -> LpSolution:
    """Exact optimum by depth-first branch and bound on fractional binaries.

    Branching picks the most fractional binary (lowest declaration index on
    ties) and explores the 1-branch first.  Nodes are pruned against the best
    integral incumbent (best-bound pruning).  When `incumbent_cutoff` is
    given, the search additionally stops as soon as the incumbent reaches the
    cutoff (>= for max problems, <= for min problems); callers use this when
    they only need to know whether the optimum clears a threshold.
    """
    lp = mip.lp
    maximize = lp.obj_sense == "max"
    best: LpSolution | None = None
    best_obj = -math.inf if maximize else math.inf
    nodes = 0
    stack: list[tuple[dict[str, float], dict[str, float]]] = [({}, {})]
    while stack:
        fix_lb, fix_ub = stack.pop()
        nodes += 1
        rel = solve_lp(lp, _lb=fix_lb, _ub=fix_ub)
        if rel.status == INFEASIBLE:
            continue
        if rel.status == UNBOUNDED:
            return LpSolution(UNBOUNDED, node_count=nodes)
        bound = rel.objective
        if maximize:
            if bound <= best_obj + 1e-9:
                continue
        else:
            if bound >= best_obj - 1e-9:
                continue
        frac_var = None
        frac_dist = INT_TOL
        for bname in mip.binaries:
            d = abs(rel.values[bname] - round(rel.values[bname]))
            if d > frac_dist + 1e-12:
                frac_var, frac_dist = bname, d
        if frac_var is None:
            best = rel
            best_obj = bound
            if incumbent_cutoff is not None:
                if maximize and best_obj >= incumbent_cutoff - 1e-9:
                    break
                if not maximize and best_obj <= incumbent_cutoff + 1e-9:
                    break
            continue
        zero = (dict(fix_lb), dict(fix_ub, **{frac_var: 0.0}))
        one = (dict(fix_lb, **{frac_var: 1.0}), dict(fix_ub))
        stack.append(zero)
        stack.append(one)  # popped first: 1-branch explored first

    if best is None:
        return LpSolution(INFEASIBLE, node_count=nodes)
    best.node_count = nodes
    for bname in mip.binaries:
        best.values[bname] = float(round(best.values[bname]))
    return best


def dump_lp(lp: LinearProgram) -> str:
    """Debug dump in LP-format-like text for external cross-checking."""
    out = [f"\\ {lp.name}"]
    out.append("Minimize" if lp.obj_sense == "min" else "Maximize")
    terms = " ".join(f"{c:+g} {v}" for v, c in sorted(lp.objective.items()))
    out.append(f" obj: {terms if terms else '0'}")
    out.append("Subject To")
    for con in lp.constrs:
        terms = " ".join(f"{c:+g} {v}" for v, c in sorted(con.coeffs.items()))
        out.append(f" {con.name}: {terms} {con.sense} {con.rhs:g}")
    out.append("Bounds")
    for v in lp.vars:
        lo = "-inf" if v.lb is None else f"{v.lb:g}"
        hi = "+inf" if v.ub is None else f"{v.ub:g}"
        out.append(f" {lo} <= {v.name} <= {hi}")
    out.append("End")
    return "\n".join(out) + "\n"
