"""Quantitative robustness: a sound lower bound on the fraction of the ball
(uniform measure) that keeps the centre's label.

The ball is split into equal-volume boxes. Each box is verified with
refinement. For every region that cannot be ruled out, the volume of its
final LP-tightened input box is charged against the bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBox, InvalidK
from .network import InputBox, Network, classify
from .refine import UNRESOLVED, YES, verify_box


def split_box(box: InputBox, k: int) -> list[InputBox]:
    """Bisect along the widest dimension (lowest index on ties) until there are ``k`` boxes."""
    if k < 1 or k & (k - 1):
        raise InvalidK(f"number of splits must be a power of two, got {k}")
    boxes = [box]
    while len(boxes) < k:
        nxt = []
        for b in boxes:
            d = int(np.argmax(b.widths))
            mid = 0.5 * (b.lower[d] + b.upper[d])
            hi = b.upper.copy()
            hi[d] = mid
            lo = b.lower.copy()
            lo[d] = mid
            nxt.append(InputBox(b.lower, hi))
            nxt.append(InputBox(lo, b.upper))
        boxes = nxt
    return boxes


def log_volume_fraction(sub: InputBox, whole: InputBox) -> float:
    w = whole.widths
    if np.any(w <= 0):
        raise DegenerateBox("reference box has a zero-width dimension")
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(sub.widths)) - np.sum(np.log(w)))


def box_volume_fraction(sub: InputBox, whole: InputBox) -> float:
    return float(np.exp(log_volume_fraction(sub, whole)))


@dataclass
class SplitResult:
    index: int
    box: InputBox
    volume_fraction: float
    verdict: str
    deeppoly_verified: bool
    unresolved: list  # (label, final input box, volume fraction)
    contribution: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "box": self.box.to_dict(),
            "volume_fraction": self.volume_fraction,
            "verdict": self.verdict,
            "deeppoly_verified": self.deeppoly_verified,
            "unresolved": [
                {"label": t, "box": b.to_dict(), "volume_fraction": v} for t, b, v in self.unresolved
            ],
            "contribution": self.contribution,
        }


@dataclass
class QuantReport:
    anchor_label: int
    eta_lower_bound: float
    violation_upper_bound: float
    deeppoly_eta_lower_bound: float
    deeppoly_violation_upper_bound: float
    splits_total: int
    splits_verified: int
    splits_deeppoly_verified: int
    splits: list = field(default_factory=list)
    eta_target: float | None = None
    eta_verified: bool | None = None

    def to_dict(self) -> dict:
        return {
            "anchor_label": self.anchor_label,
            "eta_lower_bound": self.eta_lower_bound,
            "violation_upper_bound": self.violation_upper_bound,
            "deeppoly_eta_lower_bound": self.deeppoly_eta_lower_bound,
            "deeppoly_violation_upper_bound": self.deeppoly_violation_upper_bound,
            "splits_total": self.splits_total,
            "splits_processed": len(self.splits),
            "splits_verified": self.splits_verified,
            "splits_deeppoly_verified": self.splits_deeppoly_verified,
            "eta_target": self.eta_target,
            "eta_verified": self.eta_verified,
            "splits": [s.to_dict() for s in self.splits],
        }


def _run_split(args) -> SplitResult:
    net, index, sub, whole, anchor, budget, prioritize = args
    frac = box_volume_fraction(sub, whole)
    report = verify_box(net, sub, anchor, budget, boundary_mode=False, prioritize=prioritize, stop_on_unresolved=False)
    unresolved = [
        (tr.label, tr.final_input_box, box_volume_fraction(tr.final_input_box, whole))
        for tr in report.traces
        if tr.verdict == UNRESOLVED
    ]
    contribution = min(sum(v for _, _, v in unresolved), frac)
    return SplitResult(index, sub, frac, report.verdict, not report.candidates, unresolved, contribution)


def violation_bounds(results, splits_total: int | None = None) -> tuple[float, float]:
    """Upper bounds on the violating fraction: (with refinement, DeepPoly alone).

    Each split contributes its capped unresolved volume. When fewer than
    ``splits_total`` results are given (early exit) the missing volume counts
    as fully violated.
    """
    tail = 0.0
    if splits_total is not None and len(results) < splits_total:
        tail = max(1.0 - sum(r.volume_fraction for r in results), 0.0)
    refined = sum(r.contribution for r in results) + tail
    plain = sum(r.volume_fraction for r in results if not r.deeppoly_verified) + tail
    return min(refined, 1.0), min(plain, 1.0)


def quantify_box(
    net: Network,
    box: InputBox,
    anchor: int,
    splits: int = 32,
    budget: int = 5,
    prioritize: bool = True,
    eta_target: float | None = None,
    executor=None,
) -> QuantReport:
    subs = split_box(box, splits)
    jobs = [(net, i, s, box, anchor, budget, prioritize) for i, s in enumerate(subs)]
    results = executor.map(_run_split, jobs) if executor is not None else map(_run_split, jobs)

    done: list = []
    decided = None
    for res in results:
        done.append(res)
        if eta_target is not None and len(done) < len(subs):
            violation = sum(r.contribution for r in done)
            remaining = 1.0 - sum(r.volume_fraction for r in done)
            if violation > 1.0 - eta_target:
                decided = False
            elif violation + remaining <= 1.0 - eta_target:
                decided = True
            if decided is not None:
                break
    violation, dp_violation = violation_bounds(done, len(subs))
    eta = 1.0 - violation
    if eta_target is not None and decided is None:
        decided = eta >= eta_target
    return QuantReport(
        anchor_label=int(anchor),
        eta_lower_bound=eta,
        violation_upper_bound=violation,
        deeppoly_eta_lower_bound=1.0 - dp_violation,
        deeppoly_violation_upper_bound=dp_violation,
        splits_total=len(subs),
        splits_verified=sum(r.verdict == YES for r in done),
        splits_deeppoly_verified=sum(r.deeppoly_verified for r in done),
        splits=done,
        eta_target=eta_target,
        eta_verified=decided,
    )


def quantify(
    net: Network,
    x,
    radius: float,
    splits: int = 32,
    budget: int = 5,
    prioritize: bool = True,
    eta_target: float | None = None,
    executor=None,
) -> QuantReport:
    """Lower bound on the label-preserving fraction of the ball around ``x``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    anchor = int(classify(net, x))
    return quantify_box(net, InputBox.ball(x, radius), anchor, splits, budget, prioritize, eta_target, executor)
