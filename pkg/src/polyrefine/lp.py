"""Linear programs over the neurons of a network.

``encode`` builds the feasibility system of an abstract element intersected
with a spurious region, using the triangle relaxation for uncertain ReLUs.
``solve`` and ``tighten`` run the bundled simplex (``polyrefine.simplex``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import simplex
from .deeppoly import AbstractElement, NeuronState
from .errors import NumericalFailure, ShapeError
from .network import Affine

EPS_LP = simplex.PIVOT_TOL
RESIDUAL_TOL = 1e-5

OPTIMAL = simplex.OPTIMAL
INFEASIBLE = simplex.INFEASIBLE
UNBOUNDED = simplex.UNBOUNDED
NUMERICAL_FAILURE = simplex.FAILED

LE, GE, EQ = simplex.LE, simplex.GE, simplex.EQ


@dataclass
class LinearProgram:
    num_vars: int
    constraints: list = field(default_factory=list)  # (coeffs: dict, relation, rhs)
    var_lower: np.ndarray | None = None
    var_upper: np.ndarray | None = None
    objective: dict = field(default_factory=dict)
    sense: str = "minimize"

    def __post_init__(self):
        if self.var_lower is None:
            self.var_lower = np.full(self.num_vars, -np.inf)
        if self.var_upper is None:
            self.var_upper = np.full(self.num_vars, np.inf)
        self.var_lower = np.asarray(self.var_lower, dtype=float)
        self.var_upper = np.asarray(self.var_upper, dtype=float)

    def add(self, coeffs: dict, relation: str, rhs: float) -> None:
        if relation not in (LE, GE, EQ):
            raise ValueError(f"unknown relation {relation!r}")
        for idx, c in coeffs.items():
            if not 0 <= idx < self.num_vars:
                raise ShapeError(f"constraint references variable {idx} >= {self.num_vars}")
            if not np.isfinite(c):
                raise ValueError("constraint coefficient is not finite")
        self.constraints.append((dict(coeffs), relation, float(rhs)))

    def with_objective(self, objective: dict, sense: str = "minimize") -> "LinearProgram":
        return LinearProgram(self.num_vars, self.constraints, self.var_lower, self.var_upper, dict(objective), sense)

    def dense(self):
        m = len(self.constraints)
        A = np.zeros((m, self.num_vars))
        b = np.zeros(m)
        rel = []
        for i, (coeffs, r, rhs) in enumerate(self.constraints):
            for j, c in coeffs.items():
                A[i, j] += c
            b[i] = rhs
            rel.append(r)
        return A, rel, b

    def cost_vector(self, objective: dict | None = None, sense: str | None = None) -> np.ndarray:
        objective = self.objective if objective is None else objective
        sense = sense or self.sense
        c = np.zeros(self.num_vars)
        for j, v in objective.items():
            c[j] += v
        return -c if sense == "maximize" else c

    def max_violation(self, x: np.ndarray) -> float:
        A, rel, b = self.dense()
        worst = float(max(np.max(self.var_lower - x, initial=0.0), np.max(x - self.var_upper, initial=0.0)))
        if len(b):
            lhs = A @ x
            for i, r in enumerate(rel):
                gap = lhs[i] - b[i]
                v = gap if r == LE else (-gap if r == GE else abs(gap))
                worst = max(worst, float(v))
        return worst


@dataclass
class LPOutcome:
    status: str
    value: float = float("nan")
    point: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _tableau(lp: LinearProgram) -> simplex.Tableau:
    A, rel, b = lp.dense()
    return simplex.Tableau(A, rel, b, lp.var_lower, lp.var_upper)


def solve(lp: LinearProgram, max_pivots: int = simplex.MAX_PIVOTS) -> LPOutcome:
    if np.any(lp.var_lower > lp.var_upper):
        return LPOutcome(INFEASIBLE)
    tab = _tableau(lp)
    status = tab.phase1(max_pivots)
    if status != OPTIMAL:
        return LPOutcome(status)
    res = tab.phase2(lp.cost_vector(), max_pivots)
    if res.status != OPTIMAL:
        return LPOutcome(res.status)
    if lp.max_violation(res.x) > RESIDUAL_TOL:
        return LPOutcome(NUMERICAL_FAILURE)
    value = -res.value if lp.sense == "maximize" else res.value
    return LPOutcome(OPTIMAL, value, res.x)


def phase_one(lp: LinearProgram) -> tuple[str, simplex.Tableau | None]:
    """Feasibility check; the returned tableau seeds later ``tighten_many`` calls."""
    if np.any(lp.var_lower > lp.var_upper):
        return INFEASIBLE, None
    tab = _tableau(lp)
    return tab.phase1(), tab


def _optimize_var(tab: simplex.Tableau, n: int, var: int, sign: float) -> tuple[str, float]:
    c = np.zeros(n)
    c[var] = sign
    res = tab.copy().phase2(c)
    return res.status, (sign * res.value if res.status == OPTIMAL else float("nan"))


def _tighten_from(tab: simplex.Tableau, lp_lo, lp_hi, var: int) -> tuple[float, float]:
    n = tab.n
    s_min, v_min = _optimize_var(tab, n, var, 1.0)
    s_max, v_max = _optimize_var(tab, n, var, -1.0)
    if NUMERICAL_FAILURE in (s_min, s_max):
        raise NumericalFailure(f"simplex failed while bounding variable {var}")
    new_l = -np.inf if s_min == UNBOUNDED else v_min
    new_u = np.inf if s_max == UNBOUNDED else v_max
    return max(new_l, lp_lo[var]), min(new_u, lp_hi[var])


def tighten(lp: LinearProgram, var: int) -> tuple[float, float]:
    """Minimum and maximum of one variable, clamped to its current bounds.

    An infeasible LP yields an empty interval ``(upper, lower)``.
    """
    if not 0 <= var < lp.num_vars:
        raise ShapeError(f"variable {var} out of range")
    status, tab = phase_one(lp)
    if status == NUMERICAL_FAILURE:
        raise NumericalFailure("phase 1 did not terminate")
    if status == INFEASIBLE:
        return float(lp.var_upper[var]), float(lp.var_lower[var])
    return _tighten_from(tab, lp.var_lower, lp.var_upper, var)


def _tighten_chunk(tab, lo, hi, variables):
    out = []
    for v in variables:
        try:
            out.append(_tighten_from(tab, lo, hi, v))
        except NumericalFailure:
            out.append(None)
    return out


def tighten_many(lp: LinearProgram, variables, tableau: simplex.Tableau | None = None, executor=None, chunks: int = 1) -> list:
    """``tighten`` for several variables from one shared phase-1 basis.

    Entries are ``None`` where the solver failed. With an ``executor`` the
    variables are split into ``chunks`` contiguous batches; results are the
    same as a serial run because every batch starts from the same tableau.
    """
    variables = list(variables)
    if tableau is None:
        status, tableau = phase_one(lp)
        if status == INFEASIBLE:
            return [(float(lp.var_upper[v]), float(lp.var_lower[v])) for v in variables]
        if status != OPTIMAL:
            return [None] * len(variables)
    if executor is None or chunks <= 1 or len(variables) < 2:
        return _tighten_chunk(tableau, lp.var_lower, lp.var_upper, variables)
    parts = [p.tolist() for p in np.array_split(np.array(variables, dtype=int), min(chunks, len(variables)))]
    futures = [executor.submit(_tighten_chunk, tableau, lp.var_lower, lp.var_upper, p) for p in parts]
    out = []
    for fut in futures:
        out.extend(fut.result())
    return out


# --------------------------------------------------------------------- encoding


def encode(elem: AbstractElement, spu, states: dict | None = None) -> LinearProgram:
    """LP over all neurons of ``elem`` intersected with the region ``spu``.

    ``spu`` must provide ``output_constraints(output_dim)`` yielding
    ``(coefficient vector over outputs, relation, rhs)`` triples.
    ``states`` maps ReLU pre-activation indices to ``NeuronState`` and defaults
    to the states recorded in ``elem``.
    """
    net = elem.net
    states = elem.relu_states() if states is None else states
    lp = LinearProgram(net.num_neurons, var_lower=elem.l.copy(), var_upper=elem.u.copy())
    off = net.offsets
    for p, layer in enumerate(net.layers, start=1):
        n = net.sizes[p]
        if isinstance(layer, Affine):
            prev = off[p - 1]
            for j in range(n):
                row = {prev + k: -float(w) for k, w in enumerate(layer.weights[j]) if w != 0.0}
                row[off[p] + j] = 1.0
                lp.add(row, EQ, float(layer.bias[j]))
            continue
        for j in range(n):
            x, y = off[p - 1] + j, off[p] + j
            state = states[x]
            if state == NeuronState.ACTIVATED:
                lp.add({y: 1.0, x: -1.0}, EQ, 0.0)
            elif state == NeuronState.DEACTIVATED:
                lp.add({y: 1.0}, EQ, 0.0)
            else:
                l, u = elem.lower[p - 1][j], elem.upper[p - 1][j]
                slope = u / (u - l)
                lp.add({y: 1.0}, GE, 0.0)
                lp.add({y: 1.0, x: -1.0}, GE, 0.0)
                lp.add({y: 1.0, x: -slope}, LE, -slope * l)
    out0 = off[-1]
    for c, relation, rhs in spu.output_constraints(net.output_dim):
        if len(c) != net.output_dim:
            raise ShapeError("region constraint does not match the output width")
        lp.add({out0 + k: float(v) for k, v in enumerate(c) if v != 0.0}, relation, rhs)
    return lp


# --------------------------------------------------------------------- MPS dump


def _fmt12(v: float) -> str:
    for digits in range(12, 0, -1):
        s = f"{v:.{digits}g}"
        if len(s) <= 12:
            return s
    return f"{v:.1e}"


def mps_text(lp: LinearProgram, name: str = "POLYLP") -> str:
    """Fixed-layout MPS rendering of ``lp`` (objective row ``OBJ``)."""

    def line(f1="", f2="", f3="", f4="", f5="", f6=""):
        s = f" {f1:<2} {f2:<8}  {f3:<8}  {f4:>12}"
        if f5:
            s += f"   {f5:<8}  {f6:>12}"
        return s.rstrip()

    rows = [f"R{i}" for i in range(len(lp.constraints))]
    out = [f"NAME          {name[:8]}", "ROWS", " N  OBJ"]
    kind = {LE: "L", GE: "G", EQ: "E"}
    for r, (_, rel, _) in zip(rows, lp.constraints):
        out.append(f" {kind[rel]}  {r}")
    out.append("COLUMNS")
    cost = lp.cost_vector(sense="minimize")
    col_entries: dict = {j: [] for j in range(lp.num_vars)}
    for j in range(lp.num_vars):
        if cost[j] != 0.0:
            col_entries[j].append(("OBJ", cost[j]))
    for r, (coeffs, _, _) in zip(rows, lp.constraints):
        for j, v in sorted(coeffs.items()):
            col_entries[j].append((r, v))
    for j in range(lp.num_vars):
        entries = col_entries[j] or [("OBJ", 0.0)]
        for k in range(0, len(entries), 2):
            pair = entries[k : k + 2]
            f5, f6 = (pair[1][0], _fmt12(pair[1][1])) if len(pair) > 1 else ("", "")
            out.append(line("", f"X{j}", pair[0][0], _fmt12(pair[0][1]), f5, f6))
    out.append("RHS")
    for r, (_, _, rhs) in zip(rows, lp.constraints):
        if rhs != 0.0:
            out.append(line("", "RHS", r, _fmt12(rhs)))
    out.append("BOUNDS")
    for j in range(lp.num_vars):
        lo, hi = lp.var_lower[j], lp.var_upper[j]
        if np.isfinite(lo) and np.isfinite(hi) and lo == hi:
            out.append(line("FX", "BND", f"X{j}", _fmt12(lo)))
            continue
        if not np.isfinite(lo) and not np.isfinite(hi):
            out.append(line("FR", "BND", f"X{j}"))
            continue
        if np.isfinite(lo):
            if lo != 0.0:
                out.append(line("LO", "BND", f"X{j}", _fmt12(lo)))
        else:
            out.append(line("MI", "BND", f"X{j}"))
        if np.isfinite(hi):
            out.append(line("UP", "BND", f"X{j}", _fmt12(hi)))
    out.append("ENDATA")
    return "\n".join(out) + "\n"


DUMP_ENV = "POLYREFINE_LP_DUMP"


def maybe_dump(lp: LinearProgram, tag: str) -> Path | None:
    """Write ``lp`` as MPS into ``$POLYREFINE_LP_DUMP`` if that variable is set."""
    target = os.environ.get(DUMP_ENV)
    if not target:
        return None
    path = Path(target)
    path.mkdir(parents=True, exist_ok=True)
    out = path / f"{tag}.mps"
    out.write_text(mps_text(lp, tag[:8]))
    return out
