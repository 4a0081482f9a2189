"""Accuracy, gradient dissimilarity and the metrics log writers."""

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from typing import IO, Iterable, List, Optional

import numpy as np

from .nn import flat_grads, mlp_forward
from .split import ActivationBatch, server_loss_and_grads
from .errors import ShapeMismatch


@dataclass
class MetricsRow:
    aggregation: int
    sim_time: float
    server_updates: int
    test_accuracy: Optional[float] = None
    dissim_without_gen: Optional[float] = None
    dissim_with_gen: Optional[float] = None
    activation_rows: int = 0
    model_entries: int = 0
    tau_max: int = 0


COLUMNS = [f.name for f in fields(MetricsRow)]
_INT_COLS = {"aggregation", "server_updates", "activation_rows", "model_entries", "tau_max"}


class MetricsLog(list):
    """List of MetricsRow with the ordering invariant checked on append."""

    def append(self, row: MetricsRow):
        if self and row.aggregation <= self[-1].aggregation:
            raise ValueError("aggregation index must strictly increase")
        if self and row.sim_time < self[-1].sim_time:
            raise ValueError("simulated time went backwards")
        super().append(row)


def evaluate_accuracy(client_layers, server_layers, features, labels) -> float:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] != labels.shape[0]:
        raise ShapeMismatch("features and labels differ in row count")
    if labels.size == 0:
        return 0.0
    acts, _ = mlp_forward(client_layers, features)
    logits, _ = mlp_forward(server_layers, acts)
    return int((logits.argmax(axis=1) == labels).sum()) / labels.size


def gradient_dissimilarity(server_layers, batch: ActivationBatch, reference: ActivationBatch) -> float:
    """Squared L2 distance between the server-parameter gradients on two batches."""
    if batch.rows == 0 or reference.rows == 0:
        raise ShapeMismatch("both batches must be non-empty")
    if batch.dim != reference.dim:
        raise ShapeMismatch("batches differ in activation width")
    _, g1, _ = server_loss_and_grads(server_layers, batch)
    _, g2, _ = server_loss_and_grads(server_layers, reference)
    return float(sum(np.sum((a - b) ** 2) for a, b in zip(flat_grads(g1), flat_grads(g2))))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(col, text):
    if text == "" or text is None:
        return None
    if col in _INT_COLS:
        return int(text)
    return float(text)


class CsvSink:
    def __init__(self, fh: IO[str], header: bool = True):
        self.fh = fh
        self.writer = csv.writer(fh, lineterminator="\n")
        if header:
            self.writer.writerow(COLUMNS)
            fh.flush()

    def write(self, row: MetricsRow):
        self.writer.writerow([_fmt(getattr(row, c)) for c in COLUMNS])
        self.fh.flush()


class JsonlSink:
    def __init__(self, fh: IO[str]):
        self.fh = fh

    def write(self, row: MetricsRow):
        d = asdict(row)
        self.fh.write(json.dumps({c: d[c] for c in COLUMNS}) + "\n")
        self.fh.flush()


def emit_metrics(log: Iterable[MetricsRow], sink, fmt: str = "csv"):
    """Write ``log`` to a text sink as CSV (header always written) or JSON lines."""
    writer = CsvSink(sink) if fmt == "csv" else JsonlSink(sink)
    for row in log:
        writer.write(row)


def read_metrics_csv(fh) -> List[MetricsRow]:
    reader = csv.reader(fh)
    header = next(reader)
    if header != COLUMNS:
        raise ValueError(f"unexpected header {header}")
    return [MetricsRow(**{c: _parse(c, v) for c, v in zip(COLUMNS, rec)}) for rec in reader]


def read_metrics_jsonl(fh) -> List[MetricsRow]:
    out = []
    for line in fh:
        if line.strip():
            d = json.loads(line)
            out.append(MetricsRow(**{c: d[c] for c in COLUMNS}))
    return out


def metrics_to_csv_text(log) -> str:
    buf = io.StringIO()
    emit_metrics(log, buf, "csv")
    return buf.getvalue()
