"""Dense two-phase primal simplex with bounded variables.

Problems are given as ``minimize c @ x`` subject to row constraints
``A[i] @ x (<=, >=, =) b[i]`` and ``lo <= x <= hi`` (bounds may be infinite).
Each row receives a slack whose bounds encode the relation, so the working
system is ``A x + s = b``. Rows whose slack cannot absorb the residual of the
starting point get an artificial variable; phase 1 minimises their sum.

Pricing is Dantzig's rule until a run of degenerate pivots is seen, after
which the solve switches to Bland's rule for good.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-9
COST_TOL = 1e-9
FEAS_TOL = 1e-9
INFEAS_MARGIN = 1e-6
MAX_PIVOTS = 100_000
DEGENERATE_RUN = 50

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
FAILED = "numerical_failure"

LE, GE, EQ = "<=", ">=", "="


@dataclass
class SimplexResult:
    status: str
    value: float = float("nan")
    x: np.ndarray | None = None
    pivots: int = 0


class Tableau:
    """Working state of one solve. Copy it to run several objectives from one basis."""

    def __init__(self, A, relations, b, lo, hi):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        m, n = A.shape if A.size else (len(b), len(lo))
        if A.size == 0:
            A = np.zeros((m, n))
        self.n = n
        self.m = m
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)

        s_lo = np.array([0.0 if r in (LE, EQ) else -np.inf for r in relations])
        s_hi = np.array([0.0 if r in (GE, EQ) else np.inf for r in relations])

        # Nonbasic structural start: a finite bound, else zero.
        x0 = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
        resid = b - A @ x0
        s0 = np.clip(resid, s_lo, s_hi) if m else np.zeros(0)
        need = np.abs(resid - s0) > FEAS_TOL
        art_rows = np.flatnonzero(need)
        k = art_rows.size

        total = n + m + k
        self.lo = np.concatenate([lo, s_lo, np.zeros(k)])
        self.hi = np.concatenate([hi, s_hi, np.full(k, np.inf)])
        self.x = np.concatenate([x0, s0, np.zeros(k)])
        self.art = np.arange(n + m, total)

        full = np.zeros((m, total))
        full[:, :n] = A
        full[np.arange(m), n + np.arange(m)] = 1.0
        sign = np.ones(m)
        if k:
            sign[art_rows] = np.sign(resid[art_rows] - s0[art_rows])
            full[art_rows, n + m + np.arange(k)] = sign[art_rows]
        self.basis = n + np.arange(m)
        if k:
            self.basis[art_rows] = n + m + np.arange(k)
        # B is diagonal with entries +-1, so B^-1 = B.
        self.T = full * sign[:, None]
        self.beta = b * sign
        self.is_basic = np.zeros(total, dtype=bool)
        self.is_basic[self.basis] = True
        self.pivots = 0
        self._refresh()

    def copy(self) -> "Tableau":
        other = object.__new__(Tableau)
        other.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()})
        return other

    def _refresh(self) -> None:
        nb = np.where(self.is_basic, 0.0, self.x)
        self.x[self.basis] = self.beta - self.T @ nb

    def run(self, cost: np.ndarray, max_pivots: int = MAX_PIVOTS) -> str:
        bland = False
        degenerate = 0
        while True:
            if self.pivots >= max_pivots:
                return FAILED
            cb = cost[self.basis]
            d = cost - cb @ self.T
            can_up = (~self.is_basic) & (self.x < self.hi - FEAS_TOL) & (d < -COST_TOL)
            can_down = (~self.is_basic) & (self.x > self.lo + FEAS_TOL) & (d > COST_TOL)
            eligible = np.flatnonzero(can_up | can_down)
            if eligible.size == 0:
                return OPTIMAL
            if bland:
                j = int(eligible[0])
            else:
                j = int(eligible[np.argmax(np.abs(d[eligible]))])
            delta = 1.0 if can_up[j] else -1.0

            col = self.T[:, j] * delta
            xb = self.x[self.basis]
            ratios = np.full(self.m, np.inf)
            dec = col > PIVOT_TOL
            inc = col < -PIVOT_TOL
            lo_b = self.lo[self.basis]
            hi_b = self.hi[self.basis]
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios[dec] = (xb[dec] - lo_b[dec]) / col[dec]
                ratios[inc] = (hi_b[inc] - xb[inc]) / -col[inc]
            ratios = np.maximum(ratios, 0.0)
            flip = self.hi[j] - self.lo[j]
            t_row = ratios.min() if self.m else np.inf
            if not np.isfinite(t_row) and not np.isfinite(flip):
                return UNBOUNDED

            self.pivots += 1
            if flip <= t_row:
                self.x[j] = self.hi[j] if delta > 0 else self.lo[j]
                self._refresh()
                degenerate = 0
                continue

            ties = np.flatnonzero(ratios <= t_row + PIVOT_TOL)
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(col[ties]))])
            degenerate = degenerate + 1 if t_row <= FEAS_TOL else 0
            if degenerate >= DEGENERATE_RUN:
                bland = True

            leaving = self.basis[r]
            self.x[leaving] = self.lo[leaving] if col[r] > 0 else self.hi[leaving]
            self._pivot(r, j)

    def _pivot(self, r: int, j: int) -> None:
        piv = self.T[r, j]
        self.T[r] /= piv
        self.beta[r] /= piv
        factor = self.T[:, j].copy()
        factor[r] = 0.0
        self.T -= np.outer(factor, self.T[r])
        self.beta -= factor * self.beta[r]
        self.is_basic[self.basis[r]] = False
        self.basis[r] = j
        self.is_basic[j] = True
        self._refresh()

    def phase1(self, max_pivots: int = MAX_PIVOTS) -> str:
        """Drive artificials to zero. Returns OPTIMAL (feasible), INFEASIBLE or FAILED."""
        if np.any(self.lo[: self.n] > self.hi[: self.n]):
            return INFEASIBLE
        if self.art.size:
            cost = np.zeros(self.x.shape[0])
            cost[self.art] = 1.0
            status = self.run(cost, max_pivots)
            if status == FAILED:
                return FAILED
            if self.x[self.art].sum() > INFEAS_MARGIN:
                return INFEASIBLE
            # Borderline residuals stay allowed (only ever shrinking).
            self.hi[self.art] = np.maximum(self.x[self.art], 0.0)
        return OPTIMAL

    def phase2(self, c: np.ndarray, max_pivots: int = MAX_PIVOTS) -> SimplexResult:
        cost = np.zeros(self.x.shape[0])
        cost[: self.n] = c
        status = self.run(cost, max_pivots)
        if status != OPTIMAL:
            return SimplexResult(status, pivots=self.pivots)
        x = self.x[: self.n].copy()
        return SimplexResult(OPTIMAL, float(c @ x), x, self.pivots)


def solve_lp(c, A, relations, b, lo, hi, max_pivots: int = MAX_PIVOTS) -> SimplexResult:
    """Minimize ``c @ x``; see the module docstring for the constraint form."""
    tab = Tableau(A, relations, b, lo, hi)
    status = tab.phase1(max_pivots)
    if status != OPTIMAL:
        return SimplexResult(status, pivots=tab.pivots)
    return tab.phase2(np.asarray(c, dtype=float), max_pivots)
