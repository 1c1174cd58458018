"""Ground truth for small instances.

``exact_verify`` walks activation patterns depth first. On a fixed pattern the
network is affine in its input, so each pattern (plus "label t wins") is one
small LP over the input variables. Infeasible partial patterns are pruned.
``mc_violation_rate`` is plain uniform sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooLarge
from .lp import LE, LinearProgram, solve
from .network import Affine, InputBox, Network, classify, forward

MAX_RELUS = 20


@dataclass
class OracleVerdict:
    robust: bool
    counterexample: np.ndarray | None = None
    patterns_explored: int = 0


class _Walker:
    def __init__(self, net: Network, box: InputBox, anchor: int):
        self.net = net
        self.box = box
        self.anchor = anchor
        self.m = net.input_dim
        self.explored = 0
        self.found = None

    def _lp(self, rows, objective=None):
        lp = LinearProgram(self.m, var_lower=self.box.lower.copy(), var_upper=self.box.upper.copy())
        for coeffs, rel, rhs in rows:
            lp.add({k: float(v) for k, v in enumerate(coeffs) if v != 0.0}, rel, rhs)
        if objective is not None:
            lp = lp.with_objective({k: float(v) for k, v in enumerate(objective) if v != 0.0}, "maximize")
        return solve(lp)

    def run(self, layer: int, M: np.ndarray, c: np.ndarray, rows: list, witness) -> None:
        """``M x + c`` is the current position's value on the region ``rows``."""
        if self.found is not None:
            return
        layers = self.net.layers
        while layer < len(layers) and isinstance(layers[layer], Affine):
            w, b = layers[layer].weights, layers[layer].bias
            M, c = w @ M, w @ c + b
            layer += 1
        if layer == len(layers):
            self._leaf(M, c, rows)
            return
        self._branch(layer, M, c, rows, 0, np.ones(M.shape[0], dtype=bool), witness)

    def _branch(self, layer, M, c, rows, j, active, witness):
        if self.found is not None:
            return
        if j == M.shape[0]:
            keep = active.astype(float)
            self.run(layer + 1, M * keep[:, None], c * keep, rows, witness)
            return
        pre = M[j] @ witness + c[j]
        first = pre >= 0
        for on in (first, not first):
            row = (-M[j], LE, c[j]) if on else (M[j], LE, -c[j])
            new_rows = rows + [row]
            if on == first:
                w = witness
            else:
                out = self._lp(new_rows)
                if not out.optimal:
                    continue
                w = out.point
            act = active.copy()
            act[j] = on
            self._branch(layer, M, c, new_rows, j + 1, act, w)

    def _leaf(self, M, c, rows):
        self.explored += 1
        for t in range(self.net.output_dim):
            if t == self.anchor:
                continue
            diff = M[self.anchor] - M[t]
            # y_anchor - y_t <= 0
            cond = (diff, LE, -(c[self.anchor] - c[t]))
            out = self._lp(rows + [cond], objective=-diff)
            if out.optimal:
                self.found = out.point
                return


def exact_verify(net: Network, box: InputBox, anchor: int, max_relus: int = MAX_RELUS) -> OracleVerdict:
    """Exact robustness decision by activation-pattern enumeration."""
    if net.relu_count > max_relus:
        raise TooLarge(f"{net.relu_count} ReLUs exceeds the cap of {max_relus}")
    walker = _Walker(net, box, anchor)
    m = net.input_dim
    centre = 0.5 * (box.lower + box.upper)
    walker.run(0, np.eye(m), np.zeros(m), [], centre)
    if walker.found is None:
        return OracleVerdict(True, None, walker.explored)
    x = np.clip(walker.found, box.lower, box.upper)
    return OracleVerdict(False, x, walker.explored)


def mc_violation_rate(net: Network, box: InputBox, anchor: int, samples: int, seed: int = 0) -> float:
    """Fraction of uniform samples from ``box`` not classified as ``anchor``."""
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    total = 0
    batch = 1 << 16
    done = 0
    while done < samples:
        k = min(batch, samples - done)
        x = rng.uniform(box.lower, box.upper, size=(k, box.dim))
        total += int(np.sum(classify(net, x) != anchor))
        done += k
    return total / samples


def misclassifies(net: Network, x, anchor: int) -> bool:
    return int(classify(net, x)) != anchor


def margin(net: Network, x, anchor: int) -> float:
    """``y[anchor] - max_{t != anchor} y[t]``; negative means another label wins."""
    y = forward(net, x)
    others = np.delete(y, anchor)
    return float(y[anchor] - others.max())
