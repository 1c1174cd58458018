"""DeepPoly abstract domain for affine + ReLU networks.

Every neuron carries a symbolic lower and upper bound that is linear in the
neurons of the previous position, plus concrete bounds ``[l, u]``. Concrete
bounds are always obtained by substituting all the way back to the inputs.

An analysis may be *forced*: selected neurons get externally supplied bounds
(intersected with what the analysis computes) and selected ReLUs get a fixed
phase. The concretization of a forced element is the symbolic polyhedron
intersected with the concrete box, which stays sound for any point set the
forced bounds are valid for.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, NamedTuple

import numpy as np

from .errors import InvalidFacts, ShapeError
from .network import Affine, InputBox, Network

EPS_NUM = 1e-7


class NeuronState(IntEnum):
    UNCERTAIN = 0
    ACTIVATED = 1
    DEACTIVATED = 2


class Mode(IntEnum):
    """Lower relaxation used for a ReLU; stable neurons are EXACT."""

    LAMBDA_ZERO = 0
    LAMBDA_ONE = 1
    EXACT = 2


@dataclass(frozen=True)
class LinearForm:
    """``sum(coeffs[i] * x_i) + constant`` over global neuron indices."""

    coeffs: Mapping[int, float] = field(default_factory=dict)
    constant: float = 0.0


@dataclass(frozen=True)
class ForcedFacts:
    """Externally imposed bounds and ReLU phases.

    ``activated`` / ``deactivated`` hold global indices of ReLU *pre-activation*
    neurons.
    """

    forced_bounds: Mapping[int, tuple] = field(default_factory=dict)
    activated: frozenset = frozenset()
    deactivated: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "activated", frozenset(self.activated))
        object.__setattr__(self, "deactivated", frozenset(self.deactivated))

    @property
    def empty(self) -> bool:
        return not (self.forced_bounds or self.activated or self.deactivated)

    def validate(self, net: Network) -> None:
        if self.activated & self.deactivated:
            raise InvalidFacts(f"neurons both activated and deactivated: {sorted(self.activated & self.deactivated)}")
        n = net.num_neurons
        for idx, (lo, hi) in self.forced_bounds.items():
            if not 0 <= idx < n:
                raise InvalidFacts(f"forced bound on unknown neuron {idx}")
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise InvalidFacts(f"forced bound on neuron {idx} is not finite")
            if lo > hi:
                raise InvalidFacts(f"forced bound on neuron {idx} has l > u ({lo} > {hi})")
        pre_relu = set(_relu_pre_indices(net))
        for idx in self.activated | self.deactivated:
            if idx not in pre_relu:
                raise InvalidFacts(f"neuron {idx} does not feed a ReLU")


def _relu_pre_indices(net: Network) -> list[int]:
    out = []
    for p in net.relu_positions:
        start = net.offsets[p - 1]
        out.extend(range(start, start + net.sizes[p - 1]))
    return out


class ReluRelaxation(NamedTuple):
    lower_slope: float
    lower_intercept: float
    upper_slope: float
    upper_intercept: float
    mode: Mode
    state: NeuronState


def relu_transformer(l: float, u: float) -> ReluRelaxation:
    """Linear bounds of ``ReLU(x)`` for ``x`` in ``[l, u]``.

    The lower slope is whichever of 0 and 1 gives the smaller triangle; on a tie
    (``u == -l``) slope 0 is used.
    """
    if u <= 0:
        return ReluRelaxation(0.0, 0.0, 0.0, 0.0, Mode.EXACT, NeuronState.DEACTIVATED)
    if l >= 0:
        return ReluRelaxation(1.0, 0.0, 1.0, 0.0, Mode.EXACT, NeuronState.ACTIVATED)
    slope = u / (u - l)
    lam = 1.0 if u > -l else 0.0
    mode = Mode.LAMBDA_ONE if lam else Mode.LAMBDA_ZERO
    return ReluRelaxation(lam, 0.0, slope, -slope * l, mode, NeuronState.UNCERTAIN)


@dataclass(eq=False)
class AbstractElement:
    """Result of one DeepPoly run, stored per position.

    ``lw[p] @ v[p-1] + lb[p] <= v[p] <= uw[p] @ v[p-1] + ub[p]`` and
    ``lower[p] <= v[p] <= upper[p]`` for every position ``p >= 1``.
    ``states``/``modes`` are keyed by ReLU position and indexed like its neurons.
    """

    net: Network
    lw: list
    lb: list
    uw: list
    ub: list
    lower: list
    upper: list
    states: dict
    modes: dict
    forced: bool = False
    bottom: bool = False

    @property
    def l(self) -> np.ndarray:
        return np.concatenate(self.lower)

    @property
    def u(self) -> np.ndarray:
        return np.concatenate(self.upper)

    @property
    def input_box(self) -> InputBox:
        return InputBox(self.lower[0], np.maximum(self.upper[0], self.lower[0]))

    def bounds(self, index: int) -> tuple[float, float]:
        p, j = self.net.position_of(index)
        return float(self.lower[p][j]), float(self.upper[p][j])

    def _form(self, index: int, w: list, b: list) -> LinearForm:
        p, j = self.net.position_of(index)
        if p == 0:
            return LinearForm({index: 1.0}, 0.0)
        start = self.net.offsets[p - 1]
        row = w[p][j]
        return LinearForm({start + k: float(c) for k, c in enumerate(row) if c != 0.0}, float(b[p][j]))

    def lower_form(self, index: int) -> LinearForm:
        return self._form(index, self.lw, self.lb)

    def upper_form(self, index: int) -> LinearForm:
        return self._form(index, self.uw, self.ub)

    def relu_states(self) -> dict[int, NeuronState]:
        """State of every ReLU, keyed by the pre-activation neuron index."""
        out = {}
        for p, arr in self.states.items():
            start = self.net.offsets[p - 1]
            for j, s in enumerate(arr):
                out[start + j] = NeuronState(int(s))
        return out

    def relu_modes(self) -> dict[int, Mode]:
        out = {}
        for p, arr in self.modes.items():
            start = self.net.offsets[p - 1]
            for j, m in enumerate(arr):
                out[start + j] = Mode(int(m))
        return out

    def uncertain_neurons(self) -> list[int]:
        return sorted(i for i, s in self.relu_states().items() if s == NeuronState.UNCERTAIN)

    def contains(self, values, tol: float = EPS_NUM) -> bool:
        """Membership of a (possibly partial) per-position point in the concretization."""
        return bool(np.all(self.violations(values, tol) == 0))

    def violations(self, values, tol: float = EPS_NUM) -> np.ndarray:
        """Per-sample count of violated constraints; ``values[p]`` is ``(n_p,)`` or ``(s, n_p)``."""
        vals = [np.atleast_2d(np.asarray(v, dtype=float)) for v in values]
        count = np.zeros(vals[0].shape[0], dtype=int)
        for p, v in enumerate(vals):
            count += np.sum(v < self.lower[p] - tol, axis=1)
            count += np.sum(v > self.upper[p] + tol, axis=1)
            if p == 0:
                continue
            prev = vals[p - 1]
            lo = prev @ self.lw[p].T + self.lb[p]
            hi = prev @ self.uw[p].T + self.ub[p]
            count += np.sum(v < lo - tol, axis=1)
            count += np.sum(v > hi + tol, axis=1)
        return count


def _back_substitute(elem: AbstractElement, coeffs: dict, const: np.ndarray, lower: bool) -> np.ndarray:
    """Bound ``sum_p coeffs[p] @ v[p] + const`` by substituting down to the inputs.

    ``coeffs`` maps positions to ``(k, n_p)`` matrices; returns ``k`` bounds.
    """
    const = np.array(const, dtype=float)
    top = max(coeffs)
    acc = coeffs[top].astype(float, copy=True)
    for q in range(top, 0, -1):
        pos = np.maximum(acc, 0.0)
        neg = np.minimum(acc, 0.0)
        if lower:
            acc = pos @ elem.lw[q] + neg @ elem.uw[q]
            const += pos @ elem.lb[q] + neg @ elem.ub[q]
        else:
            acc = pos @ elem.uw[q] + neg @ elem.lw[q]
            const += pos @ elem.ub[q] + neg @ elem.lb[q]
        if q - 1 in coeffs:
            acc = acc + coeffs[q - 1]
    pos = np.maximum(acc, 0.0)
    neg = np.minimum(acc, 0.0)
    if lower:
        return const + pos @ elem.lower[0] + neg @ elem.upper[0]
    return const + pos @ elem.upper[0] + neg @ elem.lower[0]


def back_substitute(form: LinearForm, elem: AbstractElement, direction: str) -> float:
    """Sound concrete lower or upper bound of ``form`` over ``elem``."""
    if direction not in ("lower", "upper"):
        raise ValueError(f"direction must be 'lower' or 'upper', got {direction!r}")
    if not form.coeffs:
        return float(form.constant)
    net = elem.net
    coeffs: dict = {}
    for idx, c in form.coeffs.items():
        p, j = net.position_of(idx)
        if p not in coeffs:
            coeffs[p] = np.zeros((1, net.sizes[p]))
        coeffs[p][0, j] += c
    return float(_back_substitute(elem, coeffs, np.array([form.constant]), direction == "lower")[0])


def output_objective_bound(elem: AbstractElement, c, direction: str = "lower") -> float:
    """Bound of ``c @ y`` over the output neurons."""
    c = np.asarray(c, dtype=float).reshape(-1)
    net = elem.net
    if c.shape[0] != net.output_dim:
        raise ShapeError(f"objective has {c.shape[0]} entries, network has {net.output_dim} outputs")
    if not np.any(c):
        return 0.0
    last = len(net.sizes) - 1
    form = LinearForm({net.offsets[last] + k: float(v) for k, v in enumerate(c) if v != 0.0})
    return back_substitute(form, elem, direction)


def margin_lower_bound(elem: AbstractElement, anchor: int, target: int) -> float:
    """Lower bound of ``y[anchor] - y[target]``."""
    c = np.zeros(elem.net.output_dim)
    c[anchor] += 1.0
    c[target] -= 1.0
    return output_objective_bound(elem, c, "lower")


def _intersect(lo: np.ndarray, hi: np.ndarray, start: int, facts: ForcedFacts) -> bool:
    """Tighten ``lo``/``hi`` in place with forced bounds and phases; True if the result is empty."""
    empty = False
    for j in range(lo.shape[0]):
        fb = facts.forced_bounds.get(start + j)
        if fb is not None:
            lo[j] = max(lo[j], fb[0])
            hi[j] = min(hi[j], fb[1])
        # a forced phase also fixes the sign of the pre-activation
        if start + j in facts.activated:
            lo[j] = max(lo[j], 0.0)
        elif start + j in facts.deactivated:
            hi[j] = min(hi[j], 0.0)
    gap = lo - hi
    if np.any(gap > EPS_NUM):
        empty = True
    # Rounding-level crossings collapse to a point; real ones are flagged above.
    crossed = gap > 0
    if np.any(crossed):
        mid = 0.5 * (lo[crossed] + hi[crossed])
        lo[crossed] = mid
        hi[crossed] = mid
    return empty


def analyze(net: Network, box: InputBox, facts: ForcedFacts | None = None) -> AbstractElement:
    """Run DeepPoly over ``box``, honouring ``facts`` when given."""
    if box.dim != net.input_dim:
        raise ShapeError(f"box has dimension {box.dim}, network expects {net.input_dim}")
    facts = facts or ForcedFacts()
    facts.validate(net)

    lo0 = box.lower.astype(float, copy=True)
    hi0 = box.upper.astype(float, copy=True)
    bottom = _intersect(lo0, hi0, 0, facts)
    elem = AbstractElement(
        net=net, lw=[None], lb=[None], uw=[None], ub=[None],
        lower=[lo0], upper=[hi0], states={}, modes={},
        forced=not facts.empty,
    )
    for p, layer in enumerate(net.layers, start=1):
        if isinstance(layer, Affine):
            w, b = layer.weights, layer.bias
            elem.lw.append(w)
            elem.uw.append(w)
            elem.lb.append(b)
            elem.ub.append(b)
        else:
            n = net.sizes[p]
            start = net.offsets[p - 1]
            lsl, lic, usl, uic = (np.zeros(n) for _ in range(4))
            states = np.zeros(n, dtype=int)
            modes = np.zeros(n, dtype=int)
            pre_lo, pre_hi = elem.lower[p - 1], elem.upper[p - 1]
            for j in range(n):
                if start + j in facts.activated:
                    r = ReluRelaxation(1.0, 0.0, 1.0, 0.0, Mode.EXACT, NeuronState.ACTIVATED)
                elif start + j in facts.deactivated:
                    r = ReluRelaxation(0.0, 0.0, 0.0, 0.0, Mode.EXACT, NeuronState.DEACTIVATED)
                else:
                    r = relu_transformer(pre_lo[j], pre_hi[j])
                lsl[j], lic[j], usl[j], uic[j] = r[:4]
                modes[j], states[j] = r.mode, r.state
            elem.lw.append(np.diag(lsl))
            elem.lb.append(lic)
            elem.uw.append(np.diag(usl))
            elem.ub.append(uic)
            elem.states[p] = states
            elem.modes[p] = modes
        lo = _back_substitute(elem, {p - 1: elem.lw[p]}, elem.lb[p], lower=True)
        hi = _back_substitute(elem, {p - 1: elem.uw[p]}, elem.ub[p], lower=False)
        if not isinstance(layer, Affine):
            # ReLU slopes are non-negative, so one step to [l, u] of the
            # pre-activation is also sound and can beat full substitution
            # once forced facts have clipped that interval
            lo = np.maximum(lo, lsl * pre_lo + lic)
            hi = np.minimum(hi, usl * pre_hi + uic)
        bottom |= _intersect(lo, hi, net.offsets[p], facts)
        elem.lower.append(lo)
        elem.upper.append(hi)
    elem.bottom = bottom
    return elem
