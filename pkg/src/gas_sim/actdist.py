"""Per-label streaming weighted Gaussians over cut-layer activations.

Each label keeps a running weighted mean and (co)variance; new activation rows
are folded in with a weight ``s(n)`` that grows with training progress ``n``, so
older activations fade relative to fresh ones. The generator then tops up
under-represented labels in the activation buffer by sampling these Gaussians.
"""

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyInput, IneligibleLabel, NonFinite, NonPSD
from .split import ActivationBatch

DIAGONAL = "diag"
FULL = "full"
MIN_SAMPLES = 2
FULL_COV_MAX_DIM = 64
_JITTER = 1e-9


@dataclass(frozen=True)
class WeightingFn:
    """Progress weighting: ``linear`` n, ``poly`` a*n**b or ``exp`` a*exp(b*n)."""

    kind: str = "linear"
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "poly", "exp"):
            raise ValueError(f"unknown weighting kind {self.kind!r}")
        if self.kind != "linear" and (self.a <= 0 or self.b < 0):
            raise ValueError("weighting needs a > 0 and b >= 0 to stay positive and nondecreasing")

    def __call__(self, n) -> float:
        if n < 1:
            raise ValueError("progress counter starts at 1")
        if self.kind == "linear":
            return float(n)
        if self.kind == "poly":
            return float(self.a * n ** self.b)
        return float(self.a * np.exp(self.b * n))

    def describe(self) -> str:
        if self.kind == "linear":
            return "linear"
        return f"{self.kind}({self.a!r},{self.b!r})"


class LabelGaussian:
    def __init__(self, dim: int, mode: str = DIAGONAL):
        if mode not in (DIAGONAL, FULL):
            raise ValueError(f"unknown covariance mode {mode!r}")
        if mode == FULL and dim > FULL_COV_MAX_DIM:
            raise ValueError(f"full covariance is limited to d <= {FULL_COV_MAX_DIM}")
        self.dim = dim
        self.mode = mode
        self.mean = np.zeros(dim)
        self.var = np.zeros(dim) if mode == DIAGONAL else np.zeros((dim, dim))
        self.weight_sum = 0.0
        self.sample_count = 0

    def update(self, row, weight: float) -> "LabelGaussian":
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.dim,):
            raise DimensionMismatch(f"row shape {row.shape}, estimator dim {self.dim}")
        if not weight > 0:
            raise ValueError("weight must be positive")
        prev_sum = self.weight_sum
        new_sum = prev_sum + weight
        prev_mean = self.mean
        mean = (prev_sum / new_sum) * prev_mean + (weight / new_sum) * row
        shift = mean - prev_mean
        resid = mean - row
        # overflow is reported below as NonFinite rather than as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            if self.mode == DIAGONAL:
                var = (prev_sum * (self.var + shift * shift) + weight * resid * resid) / new_sum
            else:
                var = (prev_sum * (self.var + np.outer(shift, shift)) + weight * np.outer(resid, resid)) / new_sum
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise NonFinite("estimator update produced non-finite statistics")
        self.mean, self.var, self.weight_sum = mean, var, new_sum
        self.sample_count += 1
        return self

    def covariance(self) -> np.ndarray:
        return np.diag(self.var) if self.mode == DIAGONAL else self.var

    def copy(self) -> "LabelGaussian":
        g = LabelGaussian(self.dim, self.mode)
        g.mean, g.var = self.mean.copy(), self.var.copy()
        g.weight_sum, g.sample_count = self.weight_sum, self.sample_count
        return g

    def state_dict(self) -> dict:
        return {
            "dim": self.dim,
            "mode": self.mode,
            "mean": self.mean.tolist(),
            "var": self.var.tolist(),
            "weight_sum": self.weight_sum,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_state(cls, state: Mapping) -> "LabelGaussian":
        g = cls(state["dim"], state["mode"])
        g.mean = np.asarray(state["mean"], dtype=np.float64)
        g.var = np.asarray(state["var"], dtype=np.float64)
        g.weight_sum = float(state["weight_sum"])
        g.sample_count = int(state["sample_count"])
        return g


def update_label_gaussian(g: LabelGaussian, activation_row, weight: float) -> LabelGaussian:
    return g.update(activation_row, weight)


def batch_weighted_stats_oracle(rows: Sequence, weights: Sequence[float], mode: str = DIAGONAL):
    """Direct two-pass weighted mean and weight-normalised (biased) covariance."""
    if len(rows) == 0:
        raise EmptyInput("no rows")
    if len(rows) != len(weights):
        raise ValueError("rows and weights differ in length")
    x = np.asarray(rows, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    total = w.sum()
    mean = (w[:, None] * x).sum(axis=0) / total
    centered = x - mean
    if mode == DIAGONAL:
        var = (w[:, None] * centered ** 2).sum(axis=0) / total
    else:
        var = (w[:, None] * centered).T @ centered / total
    return mean, var


class ActivationDistributions:
    """One LabelGaussian per class, updated row by row as batches arrive."""

    def __init__(self, num_classes: int, dim: int, mode: str = DIAGONAL, weighting: Optional[WeightingFn] = None):
        self.num_classes = num_classes
        self.dim = dim
        self.mode = mode
        self.weighting = weighting or WeightingFn()
        self.estimators: Dict[int, LabelGaussian] = {}

    def observe(self, batch: ActivationBatch):
        w = self.weighting(batch.progress_stamp)
        for row, y in zip(batch.activations, batch.labels):
            y = int(y)
            if y not in self.estimators:
                self.estimators[y] = LabelGaussian(self.dim, self.mode)
            self.estimators[y].update(row, w)

    def state_dict(self) -> dict:
        return {str(y): g.state_dict() for y, g in sorted(self.estimators.items())}

    def load_state(self, state: Mapping):
        self.estimators = {int(y): LabelGaussian.from_state(s) for y, s in state.items()}


def _eligible(estimators, y, min_samples):
    g = estimators.get(y)
    return g is not None and g.sample_count >= min_samples


def plan_generation(label_counts, estimators: Mapping[int, LabelGaussian], cap: int, min_samples: int = MIN_SAMPLES) -> Dict[int, int]:
    """How many rows to generate per label so every label reaches the buffer's maximum count.

    Labels are filled in ascending order until ``cap`` rows have been planned.
    """
    counts = np.asarray(label_counts, dtype=np.int64)
    plan = {int(y): 0 for y in range(len(counts))}
    if counts.size == 0 or np.any(counts < 0):
        return plan
    target = int(counts.max())
    remaining = max(int(cap), 0)
    for y in range(len(counts)):
        if remaining == 0:
            break
        if not _eligible(estimators, y, min_samples):
            continue
        n = min(target - int(counts[y]), remaining)
        plan[y] = n
        remaining -= n
    return plan


def _cholesky(cov):
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + _JITTER * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NonPSD("covariance is not positive semidefinite") from exc


def sample_activations(estimators: Mapping[int, LabelGaussian], plan: Mapping[int, int], rng: np.random.Generator,
                       num_classes: int, dim: int, progress_stamp: int = 0, clamp: bool = False,
                       min_samples: int = MIN_SAMPLES) -> ActivationBatch:
    rows, labels = [], []
    for y in sorted(plan):
        count = plan[y]
        if count <= 0:
            continue
        if not _eligible(estimators, y, min_samples):
            raise IneligibleLabel(f"label {y} has no eligible estimator")
        g = estimators[y]
        z = rng.standard_normal((count, g.dim))
        if g.mode == DIAGONAL:
            draw = g.mean + np.sqrt(np.maximum(g.var, 0.0)) * z
        else:
            draw = g.mean + z @ _cholesky(g.var).T
        rows.append(draw)
        labels.append(np.full(count, y, dtype=np.int64))
    if rows:
        acts = np.concatenate(rows, axis=0)
        labs = np.concatenate(labels)
    else:
        acts = np.zeros((0, dim))
        labs = np.zeros(0, dtype=np.int64)
    if clamp:
        acts = np.maximum(acts, 0.0)
    return ActivationBatch(acts, labs, client_id=-1, progress_stamp=progress_stamp, num_classes=num_classes)
