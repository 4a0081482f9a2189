"""Split-model computation: client forward, logit-adjusted server loss, both updates."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ShapeMismatch, StaleCache, ZeroClassProbability
from .nn import (
    DenseLayer,
    LayerCache,
    flat_grads,
    layer_params,
    mlp_backward,
    mlp_forward,
    sgd_step,
    with_params,
)

# floor for log P_k(y) on classes a client does not hold
ABSENT_CLASS_FLOOR = 1e-8


@dataclass
class SplitModel:
    client_layers: List[DenseLayer]
    server_layers: List[DenseLayer]
    num_classes: int

    def __post_init__(self):
        if not self.client_layers or not self.server_layers:
            raise ShapeMismatch("both sides of the split need at least one layer")
        if self.client_layers[-1].out_dim != self.server_layers[0].in_dim:
            raise ShapeMismatch("client output dim differs from server input dim")
        if self.server_layers[-1].out_dim != self.num_classes:
            raise ShapeMismatch("server output dim must equal num_classes")

    @property
    def cut_dim(self) -> int:
        return self.client_layers[-1].out_dim

    @classmethod
    def from_layers(cls, layers, cut, num_classes):
        """Split a stacked layer list so the first ``cut`` layers run on the client."""
        if not 0 < cut < len(layers):
            raise ValueError(f"cut index {cut} outside (0, {len(layers)})")
        return cls([l.copy() for l in layers[:cut]], [l.copy() for l in layers[cut:]], num_classes)


@dataclass
class ActivationBatch:
    activations: np.ndarray
    labels: np.ndarray
    client_id: int = -1
    progress_stamp: int = 0
    label_dist: Optional[np.ndarray] = None
    num_classes: int = field(default=0, repr=False)

    def __post_init__(self):
        self.activations = np.asarray(self.activations, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.activations.ndim != 2:
            raise ShapeMismatch("activations must be a [B, d] matrix")
        if self.labels.shape[0] != self.activations.shape[0]:
            raise ShapeMismatch("labels length differs from activation row count")
        if self.label_dist is None:
            if self.num_classes <= 0:
                raise ValueError("need label_dist or num_classes")
            self.label_dist = empirical_label_dist(self.labels, self.num_classes)
        else:
            self.label_dist = np.asarray(self.label_dist, dtype=np.float64)
            if np.any(self.label_dist < 0) or abs(self.label_dist.sum() - 1.0) > 1e-9:
                raise ValueError("label_dist must be a probability vector")
        self.num_classes = self.label_dist.shape[0]
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")

    @property
    def rows(self) -> int:
        return self.activations.shape[0]

    @property
    def dim(self) -> int:
        return self.activations.shape[1]


def empirical_label_dist(labels, num_classes) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes).astype(np.float64)
    total = counts.sum()
    if total == 0:
        return np.full(num_classes, 1.0 / num_classes)
    return counts / total


def client_forward(client_layers, inputs, labels, label_dist, client_id=-1):
    """Run the client-side model; returns ``(ActivationBatch, caches)``.

    The progress stamp is left at 0 — the server stamps batches on receipt.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != np.shape(inputs)[0]:
        raise ShapeMismatch("inputs and labels differ in row count")
    acts, caches = mlp_forward(client_layers, inputs)
    batch = ActivationBatch(acts, labels.copy(), client_id=client_id, label_dist=label_dist)
    return batch, caches


def logit_adjusted_loss(logits, labels, label_dist):
    """Mean softmax cross-entropy over scores shifted by ``log P_k(y)``.

    Returns ``(loss, grad_logits)`` where the gradient is w.r.t. the raw logits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    p = np.asarray(label_dist, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != p.shape[0] or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"logits {logits.shape}, labels {labels.shape}, P {p.shape}")
    present = np.unique(labels)
    if np.any(p[present] <= 0.0):
        bad = present[p[present] <= 0.0].tolist()
        raise ZeroClassProbability(f"labels {bad} present in batch but have zero probability")
    adjusted = logits + np.log(np.maximum(p, ABSENT_CLASS_FLOOR))
    shifted = adjusted - adjusted.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    b = logits.shape[0]
    rows = np.arange(b)
    loss = -log_probs[rows, labels].mean()
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= b
    return float(loss), grad


def server_loss_and_grads(server_layers, batch: ActivationBatch):
    """One forward/backward pass on the server side.

    Returns ``(loss, [(dW, db), ...], grad_activations)``.
    """
    if batch.dim != server_layers[0].in_dim:
        raise ShapeMismatch(f"activation dim {batch.dim} != server input {server_layers[0].in_dim}")
    logits, caches = mlp_forward(server_layers, batch.activations)
    loss, grad_logits = logit_adjusted_loss(logits, batch.labels, batch.label_dist)
    grad_acts, grads = mlp_backward(server_layers, caches, grad_logits)
    return loss, grads, grad_acts


def server_update(server_layers, concat_batch: ActivationBatch, lr: float):
    _, grads, _ = server_loss_and_grads(server_layers, concat_batch)
    new_params = sgd_step(layer_params(server_layers), flat_grads(grads), lr)
    return with_params(server_layers, new_params)


def client_backward_update(client_layers, caches: Sequence[LayerCache], grad_activations, lr: float):
    g = np.asarray(grad_activations, dtype=np.float64)
    if len(caches) != len(client_layers) or caches[-1].pre_activation.shape != g.shape:
        raise StaleCache(
            f"activation gradient {g.shape} does not match cached forward "
            f"{caches[-1].pre_activation.shape if caches else None}"
        )
    _, grads = mlp_backward(client_layers, caches, g)
    new_params = sgd_step(layer_params(client_layers), flat_grads(grads), lr)
    return with_params(client_layers, new_params)
