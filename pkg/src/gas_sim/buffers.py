"""Server-side activation and model buffers."""

import enum
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import BufferNotFull, BufferOverflow, ShapeMismatch
from .split import ActivationBatch


class BufferStatus(enum.Enum):
    NOT_FULL = "not_full"
    FULL = "full"


class ActivationBuffer:
    """FIFO of activation minibatches, drained once it holds ``Q_s * B`` rows."""

    def __init__(self, num_batches: int, batch_size: int):
        if num_batches < 1 or batch_size < 1:
            raise ValueError("buffer needs Q_s >= 1 and B >= 1")
        self.batch_size = batch_size
        self.capacity_rows = num_batches * batch_size
        self.entries: List[ActivationBatch] = []
        self.current_rows = 0

    def __len__(self):
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return self.current_rows == self.capacity_rows

    def store(self, batch: ActivationBatch) -> BufferStatus:
        if batch.rows != self.batch_size:
            raise ShapeMismatch(f"batch has {batch.rows} rows, buffer expects B={self.batch_size}")
        if self.current_rows + batch.rows > self.capacity_rows:
            raise BufferOverflow("activation buffer would exceed its capacity")
        self.entries.append(batch)
        self.current_rows += batch.rows
        return BufferStatus.FULL if self.is_full else BufferStatus.NOT_FULL

    def label_counts(self, num_classes: int) -> np.ndarray:
        counts = np.zeros(num_classes, dtype=np.int64)
        for e in self.entries:
            counts += np.bincount(e.labels, minlength=num_classes)
        return counts

    def snapshot(self, num_classes: int, progress_stamp: int = 0) -> ActivationBatch:
        """Concatenate current contents without draining."""
        if not self.entries:
            raise BufferNotFull("activation buffer is empty")
        acts = np.concatenate([e.activations for e in self.entries], axis=0)
        labels = np.concatenate([e.labels for e in self.entries])
        return ActivationBatch(acts, labels, progress_stamp=progress_stamp, num_classes=num_classes)

    def drain_concat(self, generated: Optional[ActivationBatch] = None, progress_stamp: int = 0) -> ActivationBatch:
        """Real rows in arrival order, then generated rows; empties the buffer."""
        if not self.is_full:
            raise BufferNotFull(f"{self.current_rows}/{self.capacity_rows} rows buffered")
        num_classes = self.entries[0].num_classes
        parts = list(self.entries)
        if generated is not None and generated.rows:
            if generated.dim != parts[0].dim:
                raise ShapeMismatch("generated activations have the wrong width")
            parts.append(generated)
        acts = np.concatenate([p.activations for p in parts], axis=0)
        labels = np.concatenate([p.labels for p in parts])
        self.entries = []
        self.current_rows = 0
        return ActivationBatch(acts, labels, progress_stamp=progress_stamp, num_classes=num_classes)


@dataclass
class ModelEntry:
    params: List[np.ndarray]
    data_size: int
    staleness: int
    client_id: int


class ModelBuffer:
    """Holds uploaded client-side models until ``Q_c`` are present."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("model buffer capacity must be >= 1")
        self.capacity = capacity
        self.entries: List[ModelEntry] = []

    def __len__(self):
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) == self.capacity

    def store(self, params: Sequence[np.ndarray], data_size: int, staleness: int = 0, client_id: int = -1) -> BufferStatus:
        if data_size <= 0:
            raise ValueError("data_size must be positive")
        if self.is_full:
            raise BufferOverflow("model buffer already full")
        # duplicates from the same client are kept; the weighted mean has no dedup rule
        self.entries.append(ModelEntry([np.array(p, dtype=np.float64) for p in params], int(data_size), int(staleness), client_id))
        return BufferStatus.FULL if self.is_full else BufferStatus.NOT_FULL

    def aggregate(self) -> List[np.ndarray]:
        """Data-size weighted mean of the stored models; empties the buffer."""
        if not self.is_full:
            raise BufferNotFull(f"{len(self.entries)}/{self.capacity} models buffered")
        ordered = sorted(self.entries, key=lambda e: e.client_id)
        total = float(sum(e.data_size for e in ordered))
        agg = []
        # reference + weighted deltas: identical models come back bit-exact
        for j in range(len(ordered[0].params)):
            ref = ordered[0].params[j]
            acc = np.zeros_like(ref)
            for e in ordered[1:]:
                acc = acc + (e.data_size / total) * (e.params[j] - ref)
            agg.append(ref + acc)
        self.entries = []
        return agg


def store_activation(buf: ActivationBuffer, batch: ActivationBatch) -> BufferStatus:
    return buf.store(batch)


def drain_concat(buf: ActivationBuffer, generated=None, progress_stamp: int = 0) -> ActivationBatch:
    return buf.drain_concat(generated, progress_stamp)


def store_model(buf: ModelBuffer, params, data_size, staleness=0, client_id=-1) -> BufferStatus:
    return buf.store(params, data_size, staleness, client_id)


def aggregate_models(buf: ModelBuffer) -> List[np.ndarray]:
    return buf.aggregate()
