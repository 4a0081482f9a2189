import io
import math

import numpy as np
import pytest

from gas_sim.metrics import (
    COLUMNS,
    MetricsLog,
    MetricsRow,
    emit_metrics,
    evaluate_accuracy,
    gradient_dissimilarity,
    metrics_to_csv_text,
    read_metrics_csv,
    read_metrics_jsonl,
)
from gas_sim.nn import DenseLayer, init_mlp
from gas_sim.split import ActivationBatch


def identity_client(d):
    return [DenseLayer(np.eye(d), np.zeros(d))]


def test_constant_predictor_scores_one_over_m():
    m = 5
    labels = np.repeat(np.arange(m), 7)
    feats = np.random.default_rng(0).standard_normal((labels.size, 3))
    server = [DenseLayer(np.zeros((3, m)), np.eye(m)[2])]
    assert evaluate_accuracy(identity_client(3), server, feats, labels) == pytest.approx(1 / m, abs=0)


def test_memorising_model_scores_one():
    labels = np.array([0, 2, 1, 1, 3])
    feats = np.eye(4)[labels]
    server = [DenseLayer(np.eye(4), np.zeros(4))]
    assert evaluate_accuracy(identity_client(4), server, feats, labels) == 1.0


def test_accuracy_matches_per_row_loop_and_is_order_invariant():
    rng = np.random.default_rng(1)
    layers = init_mlp([6, 8, 5, 4], rng)
    client, server = layers[:1], layers[1:]
    x = rng.standard_normal((200, 6))
    y = rng.integers(0, 4, 200)
    hits = 0
    for i in range(200):
        h = np.maximum(x[i] @ client[0].weights + client[0].bias, 0.0)
        h = np.maximum(h @ server[0].weights + server[0].bias, 0.0)
        logits = h @ server[1].weights + server[1].bias
        hits += int(np.argmax(logits) == y[i])
    acc = evaluate_accuracy(client, server, x, y)
    assert acc == hits / 200
    perm = rng.permutation(200)
    assert evaluate_accuracy(client, server, x[perm], y[perm]) == acc


def gaussian_acts(rng, labels, dim=6, sep=3.0):
    centres = np.eye(dim)[: labels.max() + 1] * sep
    return centres[labels] + rng.standard_normal((labels.size, dim))


def test_dissimilarity_zero_on_identical_and_order_invariant():
    rng = np.random.default_rng(2)
    server = init_mlp([6, 8, 4], rng)
    labels = rng.integers(0, 4, 64)
    batch = ActivationBatch(gaussian_acts(rng, labels), labels, num_classes=4)
    assert gradient_dissimilarity(server, batch, batch) == 0.0
    ref = ActivationBatch(gaussian_acts(rng, labels), labels, num_classes=4)
    perm = rng.permutation(64)
    shuffled = ActivationBatch(batch.activations[perm], batch.labels[perm], num_classes=4)
    a = gradient_dissimilarity(server, batch, ref)
    b = gradient_dissimilarity(server, shuffled, ref)
    assert a > 0 and math.isclose(a, b, rel_tol=1e-12)


def test_rebalancing_a_skewed_batch_reduces_dissimilarity():
    rng = np.random.default_rng(3)
    server = init_mlp([6, 16, 4], rng)
    ref_labels = np.repeat(np.arange(4), 200)
    ref = ActivationBatch(gaussian_acts(rng, ref_labels), ref_labels, num_classes=4)
    skew_labels = np.repeat([0, 1], 100)
    skew = ActivationBatch(gaussian_acts(rng, skew_labels), skew_labels, num_classes=4)
    extra = np.repeat([2, 3], 100)
    rebalanced = ActivationBatch(np.vstack([skew.activations, gaussian_acts(rng, extra)]),
                                 np.concatenate([skew_labels, extra]), num_classes=4)
    assert gradient_dissimilarity(server, rebalanced, ref) < gradient_dissimilarity(server, skew, ref)


def rows():
    return [
        MetricsRow(1, 0.25, 10, 0.5, None, None, 32, 0, 1),
        MetricsRow(2, 0.1 + 0.2 + 0.25, 20, None, 1.5e-7, 3.0, 0, 3, 2),
    ]


def test_empty_log_writes_header_only():
    buf = io.StringIO()
    emit_metrics([], buf, "csv")
    assert buf.getvalue() == ",".join(COLUMNS) + "\n"
    buf = io.StringIO()
    emit_metrics([], buf, "jsonl")
    assert buf.getvalue() == ""


def test_csv_and_jsonl_round_trip_exactly():
    log = rows()
    text = metrics_to_csv_text(log)
    assert read_metrics_csv(io.StringIO(text)) == log
    buf = io.StringIO()
    emit_metrics(log, buf, "jsonl")
    assert read_metrics_jsonl(io.StringIO(buf.getvalue())) == log
    # the sum above is not representable in short decimal; repr keeps it exact
    assert read_metrics_csv(io.StringIO(text))[1].sim_time == 0.1 + 0.2 + 0.25


def test_log_ordering_enforced():
    log = MetricsLog()
    log.append(MetricsRow(1, 1.0, 1))
    with pytest.raises(ValueError):
        log.append(MetricsRow(1, 2.0, 2))
    with pytest.raises(ValueError):
        log.append(MetricsRow(2, 0.5, 2))
