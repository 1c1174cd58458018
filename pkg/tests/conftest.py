import numpy as np
import pytest

from polyrefine.network import Affine, InputBox, Network, ReLU, random_network


def example_network() -> Network:
    """Two inputs, two hidden ReLUs, identity output layer."""
    return Network((Affine([[1.0, -1.0], [1.0, 1.0]], [0.0, 2.5]), ReLU(), Affine(np.eye(2), [0.0, 0.0])))


EXAMPLE_BOX = InputBox([-1.0, -1.0], [1.0, 1.0])
EXAMPLE_ANCHOR = 1


@pytest.fixture
def example():
    return example_network()


def random_instance(rng: np.random.Generator, max_hidden: int = 12, in_dim=None, out_dim=None):
    """Tiny random network plus a centre point; hidden widths total at most ``max_hidden``."""
    in_dim = in_dim or int(rng.integers(2, 4))
    out_dim = out_dim or int(rng.integers(2, 4))
    depth = int(rng.integers(1, 3))
    budget = max_hidden
    hidden = []
    for _ in range(depth):
        w = int(rng.integers(2, max(3, min(7, budget - 2 * (depth - len(hidden) - 1)) + 1)))
        w = min(w, budget)
        if w < 1:
            break
        hidden.append(w)
        budget -= w
    net = random_network(rng, [in_dim, *hidden, out_dim])
    x = rng.uniform(-1.0, 1.0, size=in_dim)
    return net, x
