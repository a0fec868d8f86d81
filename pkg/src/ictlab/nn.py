"""Dense feed-forward classifier with a softmax head and exact backprop.

Weights are stored out x in, so a layer computes ``x @ W.T + b``. All
arrays are float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_EPS = 1e-12
CHECKPOINT_HEADER = "ictlab-checkpoint v1"

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = RELU

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"weights have {self.weights.shape[0]} rows but bias has {self.bias.shape[0]} entries"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Network:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {k} outputs {a.out_dim} units but layer {k + 1} expects {b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def copy(self) -> Network:
        return Network([Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def same_shape(self, other: Network) -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.weights.shape == b.weights.shape for a, b in zip(self.layers, other.layers)
        )


@dataclass
class GradientSet:
    weights: list[np.ndarray] = field(default_factory=list)
    bias: list[np.ndarray] = field(default_factory=list)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.bias):
            out.extend((w, b))
        return out

    def combine(self, other: GradientSet, scale: float) -> GradientSet:
        """Return ``self + scale * other``."""
        return GradientSet(
            [a + scale * b for a, b in zip(self.weights, other.weights)],
            [a + scale * b for a, b in zip(self.bias, other.bias)],
        )


@dataclass
class LossSpec:
    """Which loss to differentiate and against what targets.

    ``kind`` is ``"ce"`` (cross-entropy on probabilities) or ``"mse"``.
    Set ``on_logits`` to apply MSE to pre-softmax outputs instead.
    """

    kind: str
    target: np.ndarray
    on_logits: bool = False


def mlp(sizes, seed=None, rng=None, hidden_activation=RELU) -> Network:
    """Build a network with layer widths ``sizes = [in, h1, ..., classes]``.

    ReLU layers get He-uniform weights in ±sqrt(6/fan_in); the linear output
    layer gets ±sqrt(3/fan_in). Biases start at zero.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = k == len(sizes) - 2
        act = IDENTITY if last else hidden_activation
        bound = np.sqrt((3.0 if act == IDENTITY else 6.0) / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return Network(layers)


def as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {x.shape}")
    return x


def _check_input(net: Network, x: np.ndarray) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[1] != net.in_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, network expects {net.in_dim}")
    return x


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cache(net: Network, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    for layer in net.layers:
        z = h @ layer.weights.T + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == RELU else z
        acts.append(h)
    return acts, pre


def forward_logits(net: Network, x) -> np.ndarray:
    x = _check_input(net, x)
    h = x
    for layer in net.layers:
        h = h @ layer.weights.T + layer.bias
        if layer.activation == RELU:
            h = np.maximum(h, 0.0)
    return h


def forward(net: Network, x) -> np.ndarray:
    """Class probabilities, one row per input row."""
    return softmax(forward_logits(net, x))


def _check_pair(pred, target):
    pred, target = as_matrix(pred), as_matrix(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def cross_entropy(pred, target) -> float:
    pred, target = _check_pair(pred, target)
    logp = np.log(np.maximum(pred, LOG_EPS))
    return float(-(target * logp).sum(axis=1).mean())


def mse(pred, target) -> float:
    """Mean over rows of squared distance, divided by the number of columns."""
    pred, target = _check_pair(pred, target)
    d = pred - target
    return float((d * d).sum(axis=1).mean() / pred.shape[1])


def backward(net: Network, x, spec: LossSpec) -> tuple[float, GradientSet]:
    x = _check_input(net, x)
    acts, pre = _forward_cache(net, x)
    logits = acts[-1]
    n = x.shape[0]
    target = as_matrix(spec.target)
    if target.shape != logits.shape:
        raise ShapeError(f"target shape {target.shape} != output shape {logits.shape}")

    if spec.kind == "ce":
        p = softmax(logits)
        loss = cross_entropy(p, target)
        # d/dz of -sum t log(max(p, eps)); clamped entries contribute nothing
        live = p > LOG_EPS
        t_live = np.where(live, target, 0.0)
        dz = (p * t_live.sum(axis=1, keepdims=True) - t_live) / n
    elif spec.kind == "mse":
        out = logits if spec.on_logits else softmax(logits)
        loss = mse(out, target)
        g = 2.0 * (out - target) / (n * out.shape[1])
        if spec.on_logits:
            dz = g
        else:
            dz = out * (g - (g * out).sum(axis=1, keepdims=True))
    else:
        raise ValueError(f"unknown loss kind {spec.kind!r}")

    gw = [None] * len(net.layers)
    gb = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == RELU:
            dz = dz * (pre[k] > 0)
        gw[k] = dz.T @ acts[k]
        gb[k] = dz.sum(axis=0)
        if k:
            dz = dz @ layer.weights
    return loss, GradientSet(gw, gb)


def param_fingerprint(net: Network) -> str:
    import hashlib

    h = hashlib.blake2b(digest_size=8)
    for p in net.params():
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


# -- checkpoints ---------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def dumps_network(net: Network) -> str:
    lines = [CHECKPOINT_HEADER, f"layers {len(net.layers)}"]
    for k, layer in enumerate(net.layers):
        lines.append(f"layer {k} {layer.activation} {layer.out_dim} {layer.in_dim}")
        lines.append(_fmt(layer.weights))
        lines.append(_fmt(layer.bias))
    return "\n".join(lines) + "\n"


def loads_network(text: str) -> Network:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        raise ValueError(f"not a checkpoint: expected header {CHECKPOINT_HEADER!r}")
    try:
        count = int(lines[1].split()[1])
        layers = []
        for k in range(count):
            tag, idx, act, out_dim, in_dim = lines[2 + 3 * k].split()
            out_dim, in_dim = int(out_dim), int(in_dim)
            w = np.array(lines[3 + 3 * k].split(), dtype=np.float64).reshape(out_dim, in_dim)
            b = np.array(lines[4 + 3 * k].split(), dtype=np.float64).reshape(out_dim)
            layers.append(Layer(w, b, act))
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed checkpoint: {exc}") from exc
    return Network(layers)


def save_network(net: Network, path) -> None:
    Path(path).write_text(dumps_network(net))


def load_network(path) -> Network:
    return loads_network(Path(path).read_text())
