import gzip
import struct

import numpy as np
import pytest

from gas_sim.data import (
    Dataset,
    balanced_probe,
    dirichlet_partition,
    load_idx,
    shard_partition,
    synthetic_gaussian_dataset,
    write_idx,
)
from gas_sim.errors import BadMagic, CountMismatch, TooFewSamples, TruncatedFile
from gas_sim.nn import init_mlp, layer_params, mlp_backward, mlp_forward, sgd_step, with_params
from gas_sim.split import logit_adjusted_loss


@pytest.fixture
def idx_pair(tmp_path):
    images = np.array([[[0, 255], [128, 1]], [[0, 0], [0, 0]]], dtype=np.uint8)
    labels = np.array([7, 2], dtype=np.uint8)
    ip, lp = tmp_path / "img-idx3-ubyte", tmp_path / "lab-idx1-ubyte"
    write_idx(images, labels, ip, lp)
    return images, labels, ip, lp


def test_idx_round_trip(idx_pair):
    images, labels, ip, lp = idx_pair
    ds = load_idx(ip, lp)
    assert len(ds) == 2 and ds.features.shape == (2, 4)
    assert np.array_equal(np.round(ds.features * 255).astype(np.uint8), images.reshape(2, 4))
    assert ds.labels.tolist() == [7, 2]
    assert np.all(ds.features[1] == 0.0)
    raw = ip.read_bytes()
    assert struct.unpack(">I", raw[:4])[0] == 0x00000803
    assert struct.unpack(">I", lp.read_bytes()[:4])[0] == 0x00000801


def test_idx_gzip(idx_pair, tmp_path):
    _, _, ip, lp = idx_pair
    gz_i, gz_l = tmp_path / "i.gz", tmp_path / "l.gz"
    gz_i.write_bytes(gzip.compress(ip.read_bytes()))
    gz_l.write_bytes(gzip.compress(lp.read_bytes()))
    assert load_idx(gz_i, gz_l).labels.tolist() == [7, 2]


def test_idx_errors(idx_pair, tmp_path):
    _, _, ip, lp = idx_pair
    with pytest.raises(BadMagic):
        load_idx(lp, lp)
    short = tmp_path / "short"
    short.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(TruncatedFile):
        load_idx(short, lp)
    one = tmp_path / "one-label"
    one.write_bytes(struct.pack(">II", 2049, 1) + b"\x03")
    with pytest.raises(CountMismatch):
        load_idx(ip, one)


def labelled(counts, dim=2):
    labels = np.concatenate([np.full(c, y) for y, c in enumerate(counts)])
    return Dataset(np.zeros((labels.size, dim)), labels, len(counts))


def test_shard_two_labels_per_client():
    ds = labelled([100] * 10)
    parts = shard_partition(ds, 20, 2, np.random.default_rng(0))
    for p in parts:
        assert len(np.unique(ds.labels[p])) <= 2
    allidx = np.concatenate(parts)
    assert len(allidx) == len(np.unique(allidx)) == len(ds)


def test_shard_single_client_gets_its_shards():
    ds = labelled([10, 10])
    parts = shard_partition(ds, 1, 2, np.random.default_rng(0))
    assert len(parts) == 1 and len(parts[0]) == 20


def test_shard_misaligned_still_disjoint():
    ds = labelled([33, 17, 51])
    parts = shard_partition(ds, 7, 2, np.random.default_rng(1))
    allidx = np.concatenate(parts)
    assert len(allidx) == len(np.unique(allidx))
    assert all(len(np.unique(ds.labels[p])) <= 4 for p in parts)


def test_shard_too_few_samples():
    with pytest.raises(TooFewSamples):
        shard_partition(labelled([3]), 4, 2, np.random.default_rng(0))


def test_shard_many_shards_is_near_iid():
    ds = labelled([200] * 4)
    parts = shard_partition(ds, 4, 40, np.random.default_rng(0))
    for p in parts:
        assert len(np.unique(ds.labels[p])) == 4


def test_dirichlet_large_alpha_is_uniform():
    ds = labelled([4000] * 4)
    parts = dirichlet_partition(ds, 5, 1e6, np.random.default_rng(0))
    for p in parts:
        props = np.bincount(ds.labels[p], minlength=4) / len(p)
        assert np.all(np.abs(props - 0.25) <= 0.05)


def test_dirichlet_small_alpha_is_skewed_seed0():
    ds = labelled([500] * 10)
    parts = dirichlet_partition(ds, 10, 0.1, np.random.default_rng(0))
    top = [np.bincount(ds.labels[p], minlength=10).max() / len(p) for p in parts]
    assert max(top) > 0.5


def test_dirichlet_assigns_each_sample_once():
    ds = labelled([37, 5, 60])
    parts = dirichlet_partition(ds, 12, 0.05, np.random.default_rng(3))
    allidx = np.sort(np.concatenate(parts))
    assert np.array_equal(allidx, np.arange(len(ds)))
    assert all(len(p) > 0 for p in parts)


def test_partitions_reproducible():
    ds = labelled([50] * 4)
    a = dirichlet_partition(ds, 6, 0.5, np.random.default_rng(9))
    b = dirichlet_partition(ds, 6, 0.5, np.random.default_rng(9))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_synthetic_counts_and_degenerate_separation():
    ds = synthetic_gaussian_dataset(3, 100, 4, 2.0, np.random.default_rng(0))
    assert len(ds) == 300 and ds.num_classes == 3
    flat = synthetic_gaussian_dataset(3, 4000, 4, 0.0, np.random.default_rng(0))
    means = [flat.features[flat.labels == y].mean(axis=0) for y in range(3)]
    assert np.max(np.abs(means[0] - means[1])) < 0.1


def test_synthetic_well_separated_is_linearly_separable():
    ds = synthetic_gaussian_dataset(4, 100, 8, 10.0, np.random.default_rng(0))
    layers = init_mlp([8, 4], np.random.default_rng(1))
    uniform = np.full(4, 0.25)
    for _ in range(200):
        logits, caches = mlp_forward(layers, ds.features)
        _, g = logit_adjusted_loss(logits, ds.labels, uniform)
        _, grads = mlp_backward(layers, caches, g)
        layers = with_params(layers, sgd_step(layer_params(layers), [a for pair in grads for a in pair], 0.5))
    logits, _ = mlp_forward(layers, ds.features)
    assert (logits.argmax(axis=1) == ds.labels).mean() >= 0.99


def test_balanced_probe():
    ds = labelled([5, 9, 2])
    idx = balanced_probe(ds, 3)
    assert np.bincount(ds.labels[idx]).tolist() == [3, 3, 2]
