import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyrefine.deeppoly import analyze
from polyrefine.errors import ShapeError
from polyrefine.lp import (
    EQ, GE, INFEASIBLE, LE, OPTIMAL, UNBOUNDED, LinearProgram, encode, maybe_dump, mps_text,
    phase_one, solve, tighten, tighten_many,
)
from polyrefine.network import InputBox, forward_all
from polyrefine.refine import SpuriousRegion
from polyrefine.simplex import solve_lp

from conftest import EXAMPLE_BOX, example_network


def vertex_enumeration(c, A, rel, b, lo, hi):
    """Minimum of ``c @ x`` over a bounded polytope by brute force over vertices.

    Returns ``None`` when the polytope is empty.
    """
    n = len(c)
    rows, rhs, is_eq = [], [], []
    for a, r, v in zip(A, rel, b):
        rows.append(a)
        rhs.append(v)
        is_eq.append(r == EQ)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows += [e, e]
        rhs += [lo[j], hi[j]]
        is_eq += [False, False]
    rows, rhs = np.array(rows), np.array(rhs)
    eqs = [i for i, f in enumerate(is_eq) if f]
    free = [i for i, f in enumerate(is_eq) if not f]
    best = None
    for pick in itertools.combinations(free, n - len(eqs)):
        idx = eqs + list(pick)
        M = rows[idx]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, rhs[idx])
        lhs = A @ x if len(A) else np.zeros(0)
        ok = np.all(x >= lo - 1e-8) and np.all(x <= hi + 1e-8)
        for v, r, t in zip(lhs, rel, b):
            ok &= (v <= t + 1e-8) if r == LE else (v >= t - 1e-8) if r == GE else abs(v - t) <= 1e-8
        if ok:
            val = float(c @ x)
            best = val if best is None else min(best, val)
    return best


def random_lp(rng):
    n = int(rng.integers(1, 6))
    m = int(rng.integers(0, 6))
    A = np.round(rng.normal(size=(m, n)), 2)
    rel = list(rng.choice([LE, GE, EQ], size=m, p=[0.45, 0.45, 0.1]))
    centre = rng.uniform(-1, 1, n)
    # right-hand sides around a point so most problems are feasible
    b = A @ centre + np.where(np.array(rel) == LE, 1.0, np.where(np.array(rel) == GE, -1.0, 0.0)) * rng.uniform(0, 1, m)
    if rng.random() < 0.2:
        b = b + rng.normal(0, 3, m)
    lo = -rng.uniform(0.5, 3, n)
    hi = rng.uniform(0.5, 3, n)
    c = np.round(rng.normal(size=n), 2)
    return c, A, rel, b, lo, hi


def test_random_lps_match_vertex_enumeration():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(50):
        c, A, rel, b, lo, hi = random_lp(rng)
        ref = vertex_enumeration(c, A, rel, b, lo, hi)
        res = solve_lp(c, A, rel, b, lo, hi)
        if ref is None:
            assert res.status == INFEASIBLE
        else:
            assert res.status == OPTIMAL
            assert res.value == pytest.approx(ref, abs=1e-6)
            checked += 1
    assert checked >= 30


@pytest.mark.parametrize(
    "c,A,rel,b,lo,hi,status",
    [
        ([1.0], [[1.0], [1.0]], [LE, GE], [0.0, 1.0], [-np.inf], [np.inf], INFEASIBLE),
        ([0.0, 0.0], [[1.0, 1.0]], [EQ], [5.0], [0.0, 0.0], [2.0, 2.0], INFEASIBLE),
        ([0.0], np.zeros((0, 1)), [], [], [2.0], [1.0], INFEASIBLE),
        ([-1.0], [[1.0]], [GE], [0.0], [-np.inf], [np.inf], UNBOUNDED),
        ([1.0, -1.0], [[1.0, -1.0]], [LE], [1.0], [0.0, 0.0], [np.inf, np.inf], UNBOUNDED),
        ([1.0], np.zeros((0, 1)), [], [], [-np.inf], [np.inf], UNBOUNDED),
    ],
)
def test_hand_crafted_status(c, A, rel, b, lo, hi, status):
    lp = LinearProgram(len(c), var_lower=np.array(lo, float), var_upper=np.array(hi, float))
    for row, r, v in zip(A, rel, b):
        lp.add({j: float(a) for j, a in enumerate(row)}, r, v)
    lp = lp.with_objective({j: float(a) for j, a in enumerate(c)})
    assert solve(lp).status == status


def test_small_known_optimum():
    lp = LinearProgram(2, var_lower=np.zeros(2))
    lp.add({0: 2.0, 1: 1.0}, GE, 2.0)
    lp.add({0: 1.0, 1: 2.0}, GE, 2.0)
    out = solve(lp.with_objective({0: 1.0, 1: 1.0}))
    assert out.optimal
    assert out.value == pytest.approx(4.0 / 3.0)
    np.testing.assert_allclose(out.point, [2.0 / 3.0, 2.0 / 3.0], atol=1e-9)
    out = solve(lp.with_objective({0: 1.0}, "maximize"))
    assert out.status == UNBOUNDED


def test_degenerate_problem_terminates():
    # many redundant constraints through one vertex
    n = 3
    lp = LinearProgram(n, var_lower=np.zeros(n), var_upper=np.ones(n))
    rng = np.random.default_rng(0)
    for _ in range(40):
        w = rng.uniform(0, 1, n)
        lp.add({j: float(w[j]) for j in range(n)}, LE, float(w.sum()))
    out = solve(lp.with_objective({0: -1.0, 1: -1.0, 2: -1.0}))
    assert out.optimal and out.value == pytest.approx(-3.0)


def test_lp_validation():
    lp = LinearProgram(2)
    with pytest.raises(ShapeError):
        lp.add({3: 1.0}, LE, 0.0)
    with pytest.raises(ValueError):
        lp.add({0: 1.0}, "<", 0.0)
    with pytest.raises(ValueError):
        lp.add({0: np.inf}, LE, 0.0)


def test_tighten_and_infeasible_interval():
    lp = LinearProgram(2, var_lower=np.array([-5.0, -5.0]), var_upper=np.array([5.0, 5.0]))
    lp.add({0: 1.0, 1: 1.0}, LE, 1.0)
    lp.add({0: 1.0, 1: -1.0}, GE, 0.0)
    lo, hi = tighten(lp, 1)
    assert (lo, hi) == pytest.approx((-5.0, 0.5))
    assert tighten_many(lp, [0, 1]) == [pytest.approx(tighten(lp, 0)), pytest.approx((lo, hi))]
    lp.add({0: 1.0}, GE, 9.0)
    lo, hi = tighten(lp, 0)
    assert lo > hi


def test_tighten_many_chunked_matches_serial():
    from concurrent.futures import ThreadPoolExecutor

    rng = np.random.default_rng(7)
    c, A, rel, b, lo, hi = random_lp(rng)
    while vertex_enumeration(c, A, rel, b, lo, hi) is None:
        c, A, rel, b, lo, hi = random_lp(rng)
    lp = LinearProgram(len(c), var_lower=lo, var_upper=hi)
    for row, r, v in zip(A, rel, b):
        lp.add({j: float(a) for j, a in enumerate(row)}, r, float(v))
    serial = tighten_many(lp, range(len(c)))
    with ThreadPoolExecutor(3) as ex:
        assert tighten_many(lp, range(len(c)), executor=ex, chunks=3) == serial


def test_example_encoding_and_tightening():
    elem = analyze(example_network(), EXAMPLE_BOX)
    lp = encode(elem, SpuriousRegion(target=0, anchor=1))
    status, tab = phase_one(lp)
    assert status == OPTIMAL
    got = tighten_many(lp, [0, 1, 2], tableau=tab)
    expected = [(-1.0, 0.0), (-1.0, -2.0 / 3.0), (-1.0 / 3.0, 1.0)]
    for (lo, hi), (elo, ehi) in zip(got, expected):
        assert lo == pytest.approx(elo, abs=1e-9)
        assert hi == pytest.approx(ehi, abs=1e-9)


def test_encoding_with_all_relus_active_has_only_equalities():
    from polyrefine.network import Affine, Network, ReLU

    net = Network((Affine([[1.0, 0.0], [0.0, 1.0]], [5.0, 5.0]), ReLU(), Affine(np.eye(2), np.zeros(2))))
    elem = analyze(net, EXAMPLE_BOX)

    class NoRegion:
        def output_constraints(self, k):
            return []

    lp = encode(elem, NoRegion())
    assert all(r == EQ for _, r, _ in lp.constraints)
    np.testing.assert_allclose(lp.var_lower, elem.l)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_encoding_contains_real_executions(seed):
    from polyrefine.network import random_network

    rng = np.random.default_rng(seed)
    net = random_network(rng, [2, 4, 3, 2])
    box = InputBox.ball(rng.uniform(-1, 1, 2), 0.4)
    elem = analyze(net, box)

    class NoRegion:
        def output_constraints(self, k):
            return []

    lp = encode(elem, NoRegion())
    xs = rng.uniform(box.lower, box.upper, size=(50, 2))
    vals = np.hstack(forward_all(net, xs))
    for v in vals:
        assert lp.max_violation(v) <= 1e-7


def test_mps_dump(tmp_path, monkeypatch):
    lp = LinearProgram(2, var_lower=np.array([0.0, -1.0]), var_upper=np.array([1.0, np.inf]))
    lp.add({0: 1.0, 1: 2.0}, LE, 3.0)
    lp.add({0: 1.0}, GE, 0.5)
    lp.add({1: 1.0}, EQ, 0.25)
    text = mps_text(lp.with_objective({0: 1.0}))
    for section in ("NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"):
        assert section in text
    assert maybe_dump(lp, "x") is None
    monkeypatch.setenv("POLYREFINE_LP_DUMP", str(tmp_path))
    path = maybe_dump(lp, "x")
    assert path is not None and path.exists()
