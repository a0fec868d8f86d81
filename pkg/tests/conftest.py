import numpy as np
import pytest

from ictlab.nn import Layer, Network, cross_entropy, forward, forward_logits, mse


def central_difference(net, loss_fn, h=1e-5):
    """Numerical gradient of ``loss_fn()`` w.r.t. every parameter of ``net``."""
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = loss_fn()
            p[i] = old - h
            down = loss_fn()
            p[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def loss_closure(net, x, kind, target, on_logits=False):
    if kind == "ce":
        return lambda: cross_entropy(forward(net, x), target)
    f = forward_logits if on_logits else forward
    return lambda: mse(f(net, x), target)


def random_net(rng, sizes, activation="relu"):
    layers = []
    for k, (i, o) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = "identity" if k == len(sizes) - 2 else activation
        layers.append(Layer(rng.normal(0, 1.5 / np.sqrt(i), (o, i)), rng.normal(0, 0.3, o), act))
    return Network(layers)


def zero_net(in_dim=2, classes=2):
    return Network([Layer(np.zeros((classes, in_dim)), np.zeros(classes), "identity")])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
