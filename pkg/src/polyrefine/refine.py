"""Spurious-region guided refinement on top of DeepPoly.

For every label that DeepPoly cannot rule out, the region "abstraction and
label wins" is handed to an LP. The LP tightens the inputs and the uncertain
pre-activations inside that region. ReLUs whose sign is now fixed get frozen
before DeepPoly runs again under the accumulated facts. A region is ruled out
once the LP is infeasible or the re-run proves the anchor label dominant.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import lp as lpmod
from .deeppoly import EPS_NUM, AbstractElement, ForcedFacts, analyze, margin_lower_bound
from .network import InputBox, Network, classify

log = logging.getLogger(__name__)

YES = "YES"
UNKNOWN = "UNKNOWN"
RULED_OUT = "ruled_out"
UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class SpuriousRegion:
    """Outputs where ``target`` beats ``anchor`` while every ruled-out label loses.

    With ``boundary_mode`` the target constraint is the tie ``y[anchor] == y[target]``.
    """

    target: int
    anchor: int
    boundary_mode: bool = False
    ruled_out: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "ruled_out", tuple(self.ruled_out))
        if self.target == self.anchor:
            raise ValueError("target label equals the anchor label")
        if self.target in self.ruled_out:
            raise ValueError("target label is listed as ruled out")

    def output_constraints(self, output_dim: int):
        def diff(t):
            c = np.zeros(output_dim)
            c[self.anchor] += 1.0
            c[t] -= 1.0
            return c

        yield diff(self.target), (lpmod.EQ if self.boundary_mode else lpmod.LE), 0.0
        for t in self.ruled_out:
            yield diff(t), lpmod.GE, 0.0

    def contains(self, outputs) -> np.ndarray:
        """Row-wise membership test for concrete output vectors."""
        y = np.atleast_2d(outputs)
        d = y[:, self.anchor] - y[:, self.target]
        ok = d == 0 if self.boundary_mode else d <= 0
        for t in self.ruled_out:
            ok &= y[:, self.anchor] - y[:, t] >= 0
        return ok

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "anchor": self.anchor,
            "boundary_mode": self.boundary_mode,
            "ruled_out": list(self.ruled_out),
        }


@dataclass
class IterationSnapshot:
    iteration: int
    exit: str | None
    tightened: int
    input_box: InputBox
    margin_lower_bound: float | None
    activated: list
    deactivated: list
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    modes: dict | None = None
    element: AbstractElement | None = field(default=None, repr=False)
    facts: ForcedFacts | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "exit": self.exit,
            "tightened": self.tightened,
            "input_box": self.input_box.to_dict(),
            "margin_lower_bound": self.margin_lower_bound,
            "activated": list(self.activated),
            "deactivated": list(self.deactivated),
            "lower": None if self.lower is None else self.lower.tolist(),
            "upper": None if self.upper is None else self.upper.tolist(),
        }


@dataclass
class RegionTrace:
    label: int
    region: SpuriousRegion
    verdict: str
    iterations_used: int
    tighten_calls: int
    activated: list
    deactivated: list
    final_input_box: InputBox
    snapshots: list

    @property
    def renewed_activated(self) -> int:
        return len(self.activated)

    @property
    def renewed_deactivated(self) -> int:
        return len(self.deactivated)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "region": self.region.to_dict(),
            "verdict": self.verdict,
            "iterations_used": self.iterations_used,
            "tighten_calls": self.tighten_calls,
            "renewed_activated": self.renewed_activated,
            "renewed_deactivated": self.renewed_deactivated,
            "activated": list(self.activated),
            "deactivated": list(self.deactivated),
            "final_input_box": self.final_input_box.to_dict(),
            "iterations": [s.to_dict() for s in self.snapshots],
        }


@dataclass
class VerificationReport:
    verdict: str
    anchor_label: int
    input_box: InputBox
    candidates: list  # (label, initial margin lower bound), in processing order
    dominated: list
    traces: list
    wall_time: float = 0.0

    def to_dict(self, timing: bool = False) -> dict:
        out = {
            "verdict": self.verdict,
            "anchor_label": self.anchor_label,
            "input_box": self.input_box.to_dict(),
            "candidates": [{"label": t, "margin_lower_bound": b} for t, b in self.candidates],
            "dominated": list(self.dominated),
            "traces": [t.to_dict() for t in self.traces],
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out


def candidate_bounds(elem: AbstractElement, anchor: int) -> dict[int, float]:
    return {t: margin_lower_bound(elem, anchor, t) for t in range(elem.net.output_dim) if t != anchor}


def find_candidates(elem: AbstractElement, anchor: int, prioritize: bool = True) -> list[int]:
    """Labels not dominated by ``anchor``.

    With ``prioritize`` the labels with the largest margin lower bound (the
    likely smallest regions) come first; otherwise label order is kept.
    """
    bounds = candidate_bounds(elem, anchor)
    labels = [t for t, b in bounds.items() if b <= 0]
    if prioritize:
        labels.sort(key=lambda t: (-bounds[t], t))
    return labels


def _snapshot(it, exit_, tightened, box, elem, margin, act, deact, facts=None) -> IterationSnapshot:
    return IterationSnapshot(
        iteration=it,
        exit=exit_,
        tightened=tightened,
        input_box=box,
        margin_lower_bound=margin,
        activated=sorted(act),
        deactivated=sorted(deact),
        lower=None if elem is None else elem.l,
        upper=None if elem is None else elem.u,
        modes=None if elem is None else elem.relu_modes(),
        element=elem,
        facts=facts,
    )


def refine_region(
    net: Network,
    box: InputBox,
    anchor: int,
    region: SpuriousRegion,
    budget: int = 5,
    initial: AbstractElement | None = None,
    executor=None,
    chunks: int = 1,
) -> RegionTrace:
    """Try to rule out ``region`` within ``budget`` refinement iterations."""
    y0 = initial if initial is not None else analyze(net, box)
    target = region.target

    def trace(verdict, used, calls, act, deact, final_box, snaps):
        return RegionTrace(target, region, verdict, used, calls, sorted(act), sorted(deact), final_box, snaps)

    if margin_lower_bound(y0, anchor, target) > 0:
        return trace(RULED_OUT, 0, 0, (), (), y0.input_box, [])

    elem = y0
    current_box = y0.input_box
    pending = y0.uncertain_neurons()
    inputs = list(range(net.input_dim))
    activated: set = set()
    deactivated: set = set()
    forced: dict = {}
    calls = 0
    snaps: list = []

    for it in range(1, budget + 1):
        if elem.bottom:
            snaps.append(_snapshot(it, "empty_abstraction", 0, current_box, None, None, activated, deactivated))
            return trace(RULED_OUT, it, calls, activated, deactivated, current_box, snaps)
        program = lpmod.encode(elem, region)
        lpmod.maybe_dump(program, f"t{target}i{it}")
        status, tab = lpmod.phase_one(program)
        if status == lpmod.INFEASIBLE:
            snaps.append(_snapshot(it, "lp_infeasible", 0, current_box, None, None, activated, deactivated))
            return trace(RULED_OUT, it, calls, activated, deactivated, current_box, snaps)
        if status != lpmod.OPTIMAL:
            log.warning("phase 1 failed for label %d at iteration %d; giving up on region", target, it)
            snaps.append(_snapshot(it, "solver_failure", 0, current_box, None, None, activated, deactivated))
            return trace(UNRESOLVED, it, calls, activated, deactivated, current_box, snaps)

        variables = inputs + pending
        results = lpmod.tighten_many(program, variables, tableau=tab, executor=executor, chunks=chunks)
        calls += len(variables)
        tightened: dict = {}
        empty = False
        for v, res in zip(variables, results):
            if res is None:
                continue
            lo, hi = res
            if lo > hi + EPS_NUM:
                empty = True
                break
            if lo > hi:
                lo = hi = 0.5 * (lo + hi)
            tightened[v] = (float(lo), float(hi))
        if empty:
            snaps.append(_snapshot(it, "empty_bound", len(variables), current_box, None, None, activated, deactivated))
            return trace(RULED_OUT, it, calls, activated, deactivated, current_box, snaps)

        for v in pending:
            lo, hi = tightened.get(v, elem.bounds(v))
            if lo >= 0:
                activated.add(v)
            elif hi <= 0:
                deactivated.add(v)
        for v, (lo, hi) in tightened.items():
            if v in forced:
                lo, hi = max(lo, forced[v][0]), min(hi, forced[v][1])
            forced[v] = (lo, hi)

        in_lo, in_hi = current_box.lower.copy(), current_box.upper.copy()
        for i in inputs:
            if i in forced:
                in_lo[i], in_hi[i] = forced[i]
        current_box = InputBox(in_lo, in_hi)
        facts = ForcedFacts(
            {v: b for v, b in forced.items() if v >= net.input_dim},
            frozenset(activated),
            frozenset(deactivated),
        )
        elem = analyze(net, current_box, facts)
        pending = [v for v in elem.uncertain_neurons() if v not in activated and v not in deactivated]
        if elem.bottom:
            snaps.append(_snapshot(it, "empty_abstraction", len(variables), current_box, elem, None, activated, deactivated, facts))
            return trace(RULED_OUT, it, calls, activated, deactivated, current_box, snaps)
        margin = margin_lower_bound(elem, anchor, target)
        dominated = margin > 0
        snaps.append(_snapshot(it, "dominated" if dominated else None, len(variables), current_box, elem, margin, activated, deactivated, facts))
        if dominated:
            return trace(RULED_OUT, it, calls, activated, deactivated, current_box, snaps)

    return trace(UNRESOLVED, budget, calls, activated, deactivated, current_box, snaps)


def verify_box(
    net: Network,
    box: InputBox,
    anchor: int,
    budget: int = 5,
    boundary_mode: bool = True,
    prioritize: bool = True,
    stop_on_unresolved: bool = True,
    executor=None,
    chunks: int = 1,
) -> VerificationReport:
    """Decide whether ``anchor`` wins on all of ``box`` (YES) or give up (UNKNOWN)."""
    start = time.perf_counter()
    y0 = analyze(net, box)
    bounds = candidate_bounds(y0, anchor)
    labels = find_candidates(y0, anchor, prioritize)
    dominated = sorted(t for t in bounds if t not in labels)
    traces = []
    ruled: list = []
    verdict = YES
    for t in labels:
        region = SpuriousRegion(t, anchor, boundary_mode, tuple(ruled))
        tr = refine_region(net, box, anchor, region, budget, initial=y0, executor=executor, chunks=chunks)
        traces.append(tr)
        log.debug("label %d: %s after %d iterations", t, tr.verdict, tr.iterations_used)
        if tr.verdict == RULED_OUT:
            ruled.append(t)
        else:
            verdict = UNKNOWN
            if stop_on_unresolved:
                break
    return VerificationReport(
        verdict=verdict,
        anchor_label=int(anchor),
        input_box=box,
        candidates=[(t, bounds[t]) for t in labels],
        dominated=dominated,
        traces=traces,
        wall_time=time.perf_counter() - start,
    )


def verify(
    net: Network,
    x,
    radius: float,
    budget: int = 5,
    boundary_mode: bool = True,
    prioritize: bool = True,
    executor=None,
    chunks: int = 1,
) -> VerificationReport:
    """Local robustness of ``net`` on the L-infinity ball of ``radius`` around ``x``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    anchor = int(classify(net, x))
    return verify_box(
        net, InputBox.ball(x, radius), anchor, budget, boundary_mode, prioritize,
        executor=executor, chunks=chunks,
    )


def deeppoly_verifies(net: Network, box: InputBox, anchor: int) -> bool:
    """Plain DeepPoly check: every other label has a positive margin lower bound."""
    return not find_candidates(analyze(net, box), anchor, prioritize=False)


def max_verified_radius(
    net: Network,
    x,
    engine: str = "refine",
    r_max: float = 1.0,
    tol: float = 1e-3,
    max_steps: int = 20,
    budget: int = 5,
    boundary_mode: bool = True,
    prioritize: bool = True,
    executor=None,
    chunks: int = 1,
) -> tuple[float, float]:
    """Bisection for the largest radius the engine verifies.

    Returns the final bracket ``(lo, hi)``: ``lo`` was verified (or is 0) and
    ``hi`` was not (or is ``r_max``). Verification is assumed monotone in the
    radius.
    """
    x = np.asarray(x, dtype=float)
    anchor = int(classify(net, x))

    def ok(r: float) -> bool:
        box = InputBox.ball(x, r)
        if engine == "deeppoly":
            return deeppoly_verifies(net, box, anchor)
        if engine == "refine":
            return verify_box(net, box, anchor, budget, boundary_mode, prioritize, executor=executor, chunks=chunks).verdict == YES
        raise ValueError(f"unknown engine {engine!r}")

    if ok(r_max):
        return r_max, r_max
    lo, hi = 0.0, r_max
    for _ in range(max_steps):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo, hi
