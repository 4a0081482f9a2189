"""
Non-IID partitions
==================

Shard partitioning hands each client a couple of label-sorted shards.
Dirichlet partitioning splits each class across clients in Dir(alpha)
proportions. Small alpha gives a few dominant classes per client.
"""

import numpy as np

from gas_sim import dirichlet_partition, shard_partition, synthetic_gaussian_dataset

rng = np.random.default_rng(0)
data = synthetic_gaussian_dataset(10, 100, 16, 4.0, rng)


def show(name, parts):
    print(name)
    for k, idx in enumerate(parts[:5]):
        hist = np.bincount(data.labels[idx], minlength=10)
        print(f"  client {k}: {' '.join(f'{c:3d}' for c in hist)}")


show("shards = 2", shard_partition(data, 10, 2, np.random.default_rng(1)))
show("dirichlet alpha = 0.1", dirichlet_partition(data, 10, 0.1, np.random.default_rng(1)))
show("dirichlet alpha = 100", dirichlet_partition(data, 10, 100.0, np.random.default_rng(1)))
