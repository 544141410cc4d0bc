"""Minimal dense-network substrate with reverse-mode gradients and Adam.

Everything is float64 and batch-first: a batch of B inputs is a (B, d) array,
single vectors are promoted to one-row batches.  Weights are stored (out, in)
so a layer computes y = x W^T + b.  There is no autodiff graph; the backward
pass replays the layer list in reverse using caches captured during forward.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

ACTIVATIONS = ("tanh", "relu", "identity")

_net_uid = itertools.count()

CHECKPOINT_FORMAT = "srlnav-net-v1"


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ContractViolation("layer weights must be 2-D")
        if self.biases.shape != (self.weights.shape[0],):
            raise ContractViolation(
                f"bias length {self.biases.shape} does not match "
                f"weight rows {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation {self.activation!r}")

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]


@dataclass
class Network:
    layers: list[DenseLayer]
    # uid/version pair lets backward() detect caches taken from another net
    # or from before a parameter update.
    uid: int = field(default_factory=lambda: next(_net_uid))
    version: int = 0

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_size != b.in_size:
                raise ContractViolation(
                    f"layer sizes {a.out_size} -> {b.in_size} incompatible"
                )

    @property
    def in_size(self) -> int:
        return self.layers[0].in_size

    @property
    def out_size(self) -> int:
        return self.layers[-1].out_size


@dataclass
class ForwardCache:
    net_uid: int
    net_version: int
    inputs: list[np.ndarray]  # per-layer input batch
    preacts: list[np.ndarray]  # per-layer pre-activation batch


@dataclass
class GradientSet:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    def shapes(self):
        return [(w.shape, b.shape) for w, b in zip(self.d_weights, self.d_biases)]


@dataclass
class OptimizerState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: GradientSet | None = None  # first moments, lazily allocated
    v: GradientSet | None = None


def init_network(sizes: list[int], activations: list[str], rng: np.random.Generator) -> Network:
    """Glorot-uniform weights, zero biases.  len(activations) = len(sizes)-1."""
    if len(activations) != len(sizes) - 1:
        raise ContractViolation("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return Network(layers)


def zero_gradients(net: Network) -> GradientSet:
    return GradientSet(
        [np.zeros_like(l.weights) for l in net.layers],
        [np.zeros_like(l.biases) for l in net.layers],
    )


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def forward_batch(net: Network, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run a (B, in_size) batch through the network."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_size:
        raise ContractViolation(
            f"input shape {x.shape} incompatible with network input size {net.in_size}"
        )
    inputs, preacts = [], []
    for layer in net.layers:
        inputs.append(x)
        z = x @ layer.weights.T + layer.biases
        preacts.append(z)
        x = _activate(z, layer.activation)
    return x, ForwardCache(net.uid, net.version, inputs, preacts)


def forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Single-vector convenience wrapper around forward_batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractViolation("forward expects a 1-D vector; use forward_batch")
    y, cache = forward_batch(net, x[None, :])
    return y[0], cache


def backward_batch(
    net: Network, cache: ForwardCache, output_grad: np.ndarray
) -> tuple[GradientSet, np.ndarray]:
    """Backpropagate d-loss/d-output through the cached forward pass.

    output_grad is (B, out_size); any 1/B averaging is the caller's business.
    Returns parameter gradients (summed over the batch) and d-loss/d-input.
    """
    if cache.net_uid != net.uid or cache.net_version != net.version:
        raise ContractViolation("forward cache is stale or belongs to another network")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != net.out_size:
        raise ContractViolation(
            f"output_grad shape {g.shape} incompatible with output size {net.out_size}"
        )
    if g.shape[0] != cache.inputs[0].shape[0]:
        raise ContractViolation("output_grad batch size does not match cache")
    d_weights = [None] * len(net.layers)
    d_biases = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dz = g * _activate_grad(cache.preacts[k], layer.activation)
        d_weights[k] = dz.T @ cache.inputs[k]
        d_biases[k] = dz.sum(axis=0)
        g = dz @ layer.weights
    return GradientSet(d_weights, d_biases), g


def backward(
    net: Network, cache: ForwardCache, output_grad: np.ndarray
) -> tuple[GradientSet, np.ndarray]:
    """Single-vector wrapper: output_grad is (out_size,)."""
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim != 1:
        raise ContractViolation("backward expects a 1-D gradient; use backward_batch")
    grads, input_grad = backward_batch(net, cache, g[None, :])
    return grads, input_grad[0]


def accumulate(a: GradientSet, b: GradientSet, scale: float = 1.0) -> GradientSet:
    """Elementwise a + scale * b."""
    if a.shapes() != b.shapes():
        raise ContractViolation("gradient sets are not shape-congruent")
    return GradientSet(
        [wa + scale * wb for wa, wb in zip(a.d_weights, b.d_weights)],
        [ba + scale * bb for ba, bb in zip(a.d_biases, b.d_biases)],
    )


def accumulate_(a: GradientSet, b: GradientSet, scale: float = 1.0) -> GradientSet:
    """In-place variant of accumulate; returns a."""
    if a.shapes() != b.shapes():
        raise ContractViolation("gradient sets are not shape-congruent")
    for wa, wb in zip(a.d_weights, b.d_weights):
        wa += scale * wb
    for ba, bb in zip(a.d_biases, b.d_biases):
        ba += scale * bb
    return a


def optimizer_step(net: Network, grads: GradientSet, opt: OptimizerState) -> None:
    """One Adam update with bias correction.  Mutates net and opt in place."""
    expected = [(l.weights.shape, l.biases.shape) for l in net.layers]
    if grads.shapes() != expected:
        raise ContractViolation("gradients are not shape-congruent with the network")
    for k, (dw, db) in enumerate(zip(grads.d_weights, grads.d_biases)):
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise ContractViolation(f"non-finite gradient in layer {k}")
    if opt.m is None:
        opt.m = zero_gradients(net)
        opt.v = zero_gradients(net)
    opt.step_count += 1
    t = opt.step_count
    b1, b2 = opt.beta1, opt.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for k, layer in enumerate(net.layers):
        for param, grad, m, v in (
            (layer.weights, grads.d_weights[k], opt.m.d_weights[k], opt.v.d_weights[k]),
            (layer.biases, grads.d_biases[k], opt.m.d_biases[k], opt.v.d_biases[k]),
        ):
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            param -= opt.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + opt.eps)
    net.version += 1


def l2_penalty(net: Network) -> tuple[float, GradientSet]:
    """Sum of squared weights over all layers; biases excluded."""
    value = 0.0
    d_weights, d_biases = [], []
    for layer in net.layers:
        value += float(np.sum(layer.weights**2))
        d_weights.append(2.0 * layer.weights)
        d_biases.append(np.zeros_like(layer.biases))
    return value, GradientSet(d_weights, d_biases)


def clone_network(net: Network) -> Network:
    """Deep parameter copy with a fresh uid."""
    return Network(
        [DenseLayer(l.weights.copy(), l.biases.copy(), l.activation) for l in net.layers]
    )


def copy_params_(dst: Network, src: Network) -> None:
    """Hard-copy src parameters into dst (used for target-network sync)."""
    if [(l.weights.shape, l.biases.shape) for l in dst.layers] != [
        (l.weights.shape, l.biases.shape) for l in src.layers
    ]:
        raise ContractViolation("networks are not shape-congruent")
    for d, s in zip(dst.layers, src.layers):
        np.copyto(d.weights, s.weights)
        np.copyto(d.biases, s.biases)
    dst.version += 1


def network_to_dict(net: Network) -> dict:
    """JSON-safe checkpoint structure.

    Floats pass through json untouched: Python serializes them via repr,
    which round-trips float64 exactly.
    """
    return {
        "format": CHECKPOINT_FORMAT,
        "layer_count": len(net.layers),
        "layers": [
            {
                "in": l.in_size,
                "out": l.out_size,
                "activation": l.activation,
                "weights": l.weights.reshape(-1).tolist(),  # row-major
                "biases": l.biases.tolist(),
            }
            for l in net.layers
        ],
    }


def network_from_dict(d: dict) -> Network:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ContractViolation(f"unrecognized checkpoint format {d.get('format')!r}")
    if d.get("layer_count") != len(d.get("layers", [])):
        raise ContractViolation("checkpoint layer count mismatch")
    layers = []
    for spec in d["layers"]:
        w = np.array(spec["weights"], dtype=np.float64).reshape(spec["out"], spec["in"])
        b = np.array(spec["biases"], dtype=np.float64)
        layers.append(DenseLayer(w, b, spec["activation"]))
    return Network(layers)


def save_network(net: Network, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh)


def load_network(path) -> Network:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ContractViolation(f"corrupt checkpoint {path}: {e}") from e
    return network_from_dict(d)
