"""Dense MLP substrate with manual backpropagation.

Layers are plain float64 numpy arrays. Weights are stored ``[in_dim, out_dim]``
so a forward pass is ``x @ W + b``.
"""

from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .errors import NonFinite, ShapeMismatch

RELU = "relu"
IDENTITY = "identity"
_KINDS = (RELU, IDENTITY)


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeMismatch(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )
        if self.activation not in _KINDS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class LayerCache:
    input: np.ndarray
    pre_activation: np.ndarray


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"non-finite entries in {what}")


def init_mlp(widths: Sequence[int], rng: np.random.Generator, final_activation=IDENTITY):
    """Glorot-uniform MLP with ReLU hidden layers.

    ``widths`` lists every layer boundary, e.g. ``[784, 64, 10]`` builds two layers.
    """
    if len(widths) < 2:
        raise ValueError("need at least an input and an output width")
    layers = []
    n = len(widths) - 1
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        kind = final_activation if i == n - 1 else RELU
        layers.append(DenseLayer(w, np.zeros(fan_out), kind))
    return layers


def mlp_forward(layers: Sequence[DenseLayer], x: np.ndarray) -> Tuple[np.ndarray, List[LayerCache]]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeMismatch(f"expected a non-empty [B, d] input, got shape {x.shape}")
    caches = []
    h = x
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.in_dim:
            raise ShapeMismatch(f"layer {i} expects {layer.in_dim} inputs, got {h.shape[1]}")
        z = h @ layer.weights + layer.bias
        caches.append(LayerCache(h, z))
        h = np.maximum(z, 0.0) if layer.activation == RELU else z
    _check_finite(h, "forward output")
    return h, caches


def mlp_backward(layers, caches, grad_output):
    """Backpropagate ``grad_output`` through ``layers``.

    Returns ``(grad_input, [(dW, db), ...])`` with one pair per layer.
    """
    if len(caches) != len(layers):
        raise ShapeMismatch("caches do not belong to these layers")
    g = np.asarray(grad_output, dtype=np.float64)
    last = caches[-1].pre_activation if caches else None
    if last is not None and g.shape != last.shape:
        raise ShapeMismatch(f"upstream gradient {g.shape} does not match output {last.shape}")
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer, cache = layers[i], caches[i]
        if cache.pre_activation.shape[1] != layer.out_dim or cache.input.shape[1] != layer.in_dim:
            raise ShapeMismatch(f"cache {i} inconsistent with layer shape")
        if layer.activation == RELU:
            g = g * (cache.pre_activation > 0.0)
        grads[i] = (cache.input.T @ g, g.sum(axis=0))
        g = g @ layer.weights.T
    _check_finite(g, "input gradient")
    for dw, db in grads:
        _check_finite(dw, "weight gradient")
        _check_finite(db, "bias gradient")
    return g, grads


def layer_params(layers: Sequence[DenseLayer]) -> List[np.ndarray]:
    """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
    out = []
    for layer in layers:
        out.extend((layer.weights, layer.bias))
    return out


def flat_grads(grads) -> List[np.ndarray]:
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out


def with_params(layers: Sequence[DenseLayer], params: Sequence[np.ndarray]) -> List[DenseLayer]:
    if len(params) != 2 * len(layers):
        raise ShapeMismatch("parameter count does not match layer list")
    return [
        DenseLayer(params[2 * i], params[2 * i + 1], layer.activation)
        for i, layer in enumerate(layers)
    ]


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> List[np.ndarray]:
    # lr == 0 is accepted (frozen-model runs); negative steps are not.
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    out = []
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeMismatch(f"param {p.shape} vs grad {np.shape(g)}")
        out.append(p - lr * g)
    return out


def finite_diff_grad(loss_fn: Callable[[List[np.ndarray]], float], params, h: float = 1e-5):
    """Central-difference gradient of a scalar ``loss_fn(params)``.

    ``params`` is not modified; each entry is perturbed on a private copy.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    work = [np.array(p, dtype=np.float64, copy=True) for p in params]
    grads = []
    for p in work:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn(work)
            flat[j] = orig - h
            down = loss_fn(work)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        _check_finite(g, "finite-difference gradient")
        grads.append(g)
    return grads
