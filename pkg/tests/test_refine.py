import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyrefine.deeppoly import Mode, analyze, margin_lower_bound
from polyrefine.network import InputBox, Network, Affine, ReLU, forward, forward_all
from polyrefine.refine import (
    RULED_OUT, UNKNOWN, UNRESOLVED, YES, SpuriousRegion, deeppoly_verifies, find_candidates,
    max_verified_radius, refine_region, verify, verify_box,
)

from conftest import EXAMPLE_ANCHOR, EXAMPLE_BOX, example_network, random_instance


def test_region_validation():
    with pytest.raises(ValueError):
        SpuriousRegion(1, 1)
    with pytest.raises(ValueError):
        SpuriousRegion(0, 1, ruled_out=(0,))


def test_region_constraints_and_membership():
    r = SpuriousRegion(0, 2, ruled_out=(1,))
    rows = list(r.output_constraints(3))
    np.testing.assert_allclose(rows[0][0], [-1.0, 0.0, 1.0])
    assert rows[0][1] == "<=" and rows[1][1] == ">="
    assert list(r.contains([[2.0, 0.0, 1.0], [0.0, 1.0, 0.5], [2.0, 3.0, 1.0]])) == [True, False, False]
    tie = SpuriousRegion(0, 1, boundary_mode=True)
    assert list(tie.contains([[1.0, 1.0], [1.0, 2.0]])) == [True, False]


@pytest.mark.parametrize("boundary", [True, False])
def test_example_refinement_rules_out_in_one_iteration(boundary):
    net = example_network()
    report = verify_box(net, EXAMPLE_BOX, EXAMPLE_ANCHOR, budget=5, boundary_mode=boundary)
    assert report.verdict == YES
    assert report.candidates == [(0, pytest.approx(-0.5))]
    (trace,) = report.traces
    assert trace.verdict == RULED_OUT
    assert trace.iterations_used == 1
    snap = trace.snapshots[0]
    if not boundary:
        assert snap.margin_lower_bound == pytest.approx(0.25, abs=1e-3)
        np.testing.assert_allclose(snap.input_box.lower, [-1.0, -1.0], atol=1e-9)
        np.testing.assert_allclose(snap.input_box.upper, [0.0, -2.0 / 3.0], atol=1e-9)


def test_verify_wraps_ball():
    net = example_network()
    report = verify(net, [0.0, 0.0], 1.0)
    assert report.verdict == YES and report.anchor_label == 1
    with pytest.raises(ValueError):
        verify(net, [0.0, 0.0], 0.0)


def test_example_unknown_beyond_true_radius():
    # at r = 1.3 the point (1.3, -1.3) is a real counterexample
    net = example_network()
    x = np.array([1.3, -1.3])
    assert np.argmax(forward(net, x)) == 0
    report = verify(net, [0.0, 0.0], 1.3)
    assert report.verdict == UNKNOWN
    assert report.traces[-1].verdict == UNRESOLVED
    assert report.traces[-1].iterations_used == 5


def test_budget_zero_means_deeppoly_only():
    net = example_network()
    assert verify_box(net, EXAMPLE_BOX, 1, budget=0).verdict == UNKNOWN
    assert verify_box(net, InputBox.ball([0, 0], 0.5), 1, budget=0).verdict == YES


def test_deeppoly_only_radius_and_refined_radius():
    net = example_network()
    lo, hi = max_verified_radius(net, [0.0, 0.0], engine="deeppoly", r_max=2.0, tol=1e-4)
    assert lo <= 5.0 / 6.0 <= hi
    lo, hi = max_verified_radius(net, [0.0, 0.0], engine="refine", r_max=2.0, tol=1e-2)
    assert 1.2 <= lo <= 1.25
    assert max_verified_radius(net, [0.0, 0.0], engine="deeppoly", r_max=0.5) == (0.5, 0.5)
    with pytest.raises(ValueError):
        max_verified_radius(net, [0.0, 0.0], engine="magic")


def test_candidate_order():
    net = Network((Affine(np.eye(3), [0.0, -0.5, -0.2]),))
    elem = analyze(net, InputBox([-1, -1, -1], [1, 1, 1]))
    # margins lower bounds of anchor 0: vs 1 -> -1.5, vs 2 -> -1.8
    assert find_candidates(elem, 0) == [1, 2]
    assert find_candidates(elem, 0, prioritize=False) == [1, 2]
    net = Network((Affine(np.eye(3), [0.0, -0.2, -0.5]),))
    elem = analyze(net, InputBox([-1, -1, -1], [1, 1, 1]))
    assert find_candidates(elem, 0) == [2, 1]
    assert find_candidates(elem, 0, prioritize=False) == [1, 2]


def test_report_is_consistent():
    rng = np.random.default_rng(4)
    for _ in range(10):
        net, x = random_instance(rng)
        report = verify(net, x, 0.3, boundary_mode=False)
        labels = [t for t, _ in report.candidates]
        assert sorted(labels + report.dominated) == [t for t in range(net.output_dim) if t != report.anchor_label]
        all_ruled = all(tr.verdict == RULED_OUT for tr in report.traces) and len(report.traces) == len(labels)
        assert (report.verdict == YES) == all_ruled
        for tr in report.traces:
            assert tr.iterations_used <= 5
        d = report.to_dict()
        assert "wall_time" not in d and "wall_time" in report.to_dict(timing=True)


def _traces(seed, boundary=False):
    rng = np.random.default_rng(seed)
    net, x = random_instance(rng)
    r = float(rng.uniform(0.1, 0.6))
    box = InputBox.ball(x, r)
    anchor = int(np.argmax(forward(net, x)))
    report = verify_box(net, box, anchor, budget=4, boundary_mode=boundary, stop_on_unresolved=False)
    return net, box, anchor, report


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_invariant_samples_in_region_stay_inside(seed):
    net, box, anchor, report = _traces(seed)
    rng = np.random.default_rng(seed + 1)
    xs = rng.uniform(box.lower, box.upper, size=(1000, box.dim))
    vals = forward_all(net, xs)
    for tr in report.traces:
        keep = tr.region.contains(vals[-1])
        if not keep.any():
            continue
        sub = [v[keep] for v in vals]
        flat = np.hstack(sub)
        for snap in tr.snapshots:
            if snap.facts is None:
                continue
            for v, (lo, hi) in snap.facts.forced_bounds.items():
                assert np.all(flat[:, v] >= lo - 1e-7) and np.all(flat[:, v] <= hi + 1e-7)
            assert np.all(flat[:, : net.input_dim] >= snap.input_box.lower - 1e-7)
            assert np.all(flat[:, : net.input_dim] <= snap.input_box.upper + 1e-7)
            assert not snap.element.bottom
            assert not np.any(snap.element.violations(sub))
        # a ruled-out region must not contain real executions
        assert tr.verdict != RULED_OUT


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forcing_is_monotone(seed):
    _, _, _, report = _traces(seed)
    for tr in report.traces:
        prev_act, prev_deact, prev_bounds = set(), set(), {}
        for snap in tr.snapshots:
            assert prev_act <= set(snap.activated) and prev_deact <= set(snap.deactivated)
            assert not set(snap.activated) & set(snap.deactivated)
            prev_act, prev_deact = set(snap.activated), set(snap.deactivated)
            if snap.facts is None:
                continue
            for v, (lo, hi) in snap.facts.forced_bounds.items():
                if v in prev_bounds:
                    assert lo >= prev_bounds[v][0] and hi <= prev_bounds[v][1]
            prev_bounds = dict(snap.facts.forced_bounds)
        assert tr.renewed_activated == len(prev_act) and tr.renewed_deactivated == len(prev_deact)


def test_fixed_mode_runs_shrink():
    """When no initially uncertain ReLU changes mode, bound widths never grow."""
    qualifying = 0
    for seed in range(250):
        net, box, anchor, report = _traces(seed)
        y0 = analyze(net, box)
        init_modes = y0.relu_modes()
        uncertain = y0.uncertain_neurons()
        for tr in report.traces:
            elems = [y0] + [s.element for s in tr.snapshots if s.element is not None]
            if len(elems) < 2:
                continue
            if any(e.relu_modes()[v] != init_modes[v] for e in elems for v in uncertain):
                continue
            qualifying += 1
            for a, b in zip(elems, elems[1:]):
                assert np.all(b.u - b.l <= a.u - a.l + 1e-6)
    assert qualifying >= 5


def test_ruled_out_regions_are_really_empty():
    from polyrefine.oracle import exact_verify

    rng = np.random.default_rng(99)
    for _ in range(15):
        net, x = random_instance(rng, max_hidden=8)
        report = verify(net, x, 0.4)
        if report.verdict == YES:
            assert exact_verify(net, report.input_box, report.anchor_label).robust


def test_deeppoly_verifies_matches_zero_budget():
    rng = np.random.default_rng(8)
    for _ in range(10):
        net, x = random_instance(rng)
        box = InputBox.ball(x, 0.2)
        anchor = int(np.argmax(forward(net, x)))
        assert deeppoly_verifies(net, box, anchor) == (verify_box(net, box, anchor, budget=0).verdict == YES)
