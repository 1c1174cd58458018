import numpy as np
import pytest

from polyrefine.errors import TooLarge
from polyrefine.network import InputBox, classify, random_network
from polyrefine.oracle import exact_verify, margin, mc_violation_rate, misclassifies

from conftest import EXAMPLE_BOX, example_network, random_instance


def test_example_exact():
    net = example_network()
    assert exact_verify(net, EXAMPLE_BOX, 1).robust
    assert exact_verify(net, InputBox.ball([0, 0], 1.24), 1).robust
    res = exact_verify(net, InputBox.ball([0, 0], 3.0), 1)
    assert not res.robust
    assert margin(net, res.counterexample, 1) <= 1e-7
    assert InputBox.ball([0, 0], 3.0).contains(res.counterexample)


def test_example_threshold_is_1_25():
    net = example_network()
    assert exact_verify(net, InputBox.ball([0, 0], 1.2499), 1).robust
    assert not exact_verify(net, InputBox.ball([0, 0], 1.2501), 1).robust


def test_too_large():
    net = random_network(np.random.default_rng(0), [2, 15, 10, 2])
    with pytest.raises(TooLarge):
        exact_verify(net, InputBox.ball([0, 0], 0.1), 0)


def test_counterexamples_are_real_and_robust_matches_sampling():
    rng = np.random.default_rng(12)
    for _ in range(40):
        net, x = random_instance(rng)
        box = InputBox.ball(x, float(rng.uniform(0.05, 1.0)))
        anchor = int(classify(net, x))
        res = exact_verify(net, box, anchor)
        assert (res.counterexample is None) == res.robust
        if res.robust:
            assert mc_violation_rate(net, box, anchor, 5000, seed=1) == 0.0
        else:
            assert box.contains(res.counterexample, tol=1e-9)
            assert margin(net, res.counterexample, anchor) <= 1e-7
        assert res.patterns_explored >= 1


def test_mc_rate():
    net = example_network()
    assert mc_violation_rate(net, EXAMPLE_BOX, 1, 1000) == 0.0
    assert mc_violation_rate(net, EXAMPLE_BOX, 0, 1000) == 1.0
    a = mc_violation_rate(net, InputBox.ball([0, 0], 2.0), 1, 10_000, seed=3)
    assert a == mc_violation_rate(net, InputBox.ball([0, 0], 2.0), 1, 10_000, seed=3)
    with pytest.raises(ValueError):
        mc_violation_rate(net, EXAMPLE_BOX, 1, 0)
    assert misclassifies(net, [0.5, -3.0], 1)
