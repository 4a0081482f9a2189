"""Experiment assembly: data, partition, simulation, outputs and checkpoints."""

import json
import logging
import pickle
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig, parse_config_text, serialize
from .data import Dataset, dirichlet_partition, load_idx, shard_partition, synthetic_gaussian_dataset
from .errors import ConfigHashMismatch, VersionMismatch
from .metrics import CsvSink, JsonlSink
from .nn import layer_params
from .sim import Simulation, rng_stream

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def _take(ds: Dataset, n: int, rng) -> Dataset:
    if n <= 0 or n >= len(ds):
        return ds
    return ds.subset(np.sort(rng.choice(len(ds), n, replace=False)))


def build_datasets(cfg: ExperimentConfig):
    """Return ``(train, test)`` for the configured dataset."""
    rng = rng_stream(cfg.seed, "data")
    if cfg.dataset == "synthetic":
        full = synthetic_gaussian_dataset(cfg.num_classes, cfg.per_class + cfg.test_per_class,
                                          cfg.d_in, cfg.class_sep, rng)
        is_train = np.tile(np.r_[np.ones(cfg.per_class, bool), np.zeros(cfg.test_per_class, bool)],
                           cfg.num_classes)
        return full.subset(np.flatnonzero(is_train)), full.subset(np.flatnonzero(~is_train))
    train = load_idx(cfg.train_images, cfg.train_labels, cfg.num_classes)
    test = load_idx(cfg.test_images, cfg.test_labels, cfg.num_classes)
    return _take(train, cfg.train_subset, rng), _take(test, cfg.test_subset, rng)


def build_partition(cfg: ExperimentConfig, train: Dataset):
    rng = rng_stream(cfg.seed, "partition")
    if cfg.partition == "shard":
        return shard_partition(train, cfg.K, cfg.shards, rng)
    return dirichlet_partition(train, cfg.K, cfg.alpha, rng)


def build_simulation(cfg: ExperimentConfig) -> Simulation:
    train, test = build_datasets(cfg)
    return Simulation(cfg, train, build_partition(cfg, train), test)


class OutputWriter:
    """Streams metrics (CSV + JSONL) and the optional event trace into ``out_dir``."""

    def __init__(self, out_dir, trace=False, append_trace=False):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self._csv_fh = open(self.out / "metrics.csv", "w")
        self._jsonl_fh = open(self.out / "metrics.jsonl", "w")
        self.csv = CsvSink(self._csv_fh)
        self.jsonl = JsonlSink(self._jsonl_fh)
        self._trace_fh = open(self.out / "trace.jsonl", "a" if append_trace else "w") if trace else None

    def attach(self, sim: Simulation):
        sim.on_row = self.write_row
        if self._trace_fh is not None:
            sim.on_event = self.write_event

    def write_row(self, row):
        self.csv.write(row)
        self.jsonl.write(row)

    def write_event(self, record):
        self._trace_fh.write(json.dumps(record) + "\n")
        self._trace_fh.flush()

    def close(self):
        for fh in (self._csv_fh, self._jsonl_fh, self._trace_fh):
            if fh is not None:
                fh.close()


def save_models(sim: Simulation, path):
    arrays = {}
    for i, p in enumerate(layer_params(sim.client_w)):
        arrays[f"client_{i}"] = p
    for i, p in enumerate(layer_params(sim.server_w)):
        arrays[f"server_{i}"] = p
    np.savez(path, **arrays)


def save_checkpoint(sim: Simulation, path):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": serialize(sim.cfg),
        "config_hash": sim.cfg.hash(),
        "simulation": sim,
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)


def resume(path, config: Optional[ExperimentConfig] = None) -> Simulation:
    """Load a checkpoint; if ``config`` is given it must hash-match the saved one."""
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {payload.get('version')}, expected {CHECKPOINT_VERSION}")
    saved = parse_config_text(payload["config"])
    if saved.hash() != payload["config_hash"]:
        raise ConfigHashMismatch("checkpoint config does not match its recorded hash")
    if config is not None and config.hash() != payload["config_hash"]:
        raise ConfigHashMismatch("config differs from the one the checkpoint was taken with")
    return payload["simulation"]


def run_experiment(cfg: ExperimentConfig, out_dir=None, trace=False, checkpoint_at: int = 0,
                   checkpoint_path=None):
    """Run one configured experiment end to end.

    Writes ``metrics.csv``, ``metrics.jsonl``, ``final_model.npz`` (and ``trace.jsonl``)
    when ``out_dir`` is given. Returns ``(metrics_log, simulation)``.
    """
    sim = build_simulation(cfg)
    writer = OutputWriter(out_dir, trace) if out_dir is not None else None
    if writer:
        writer.attach(sim)
        (Path(out_dir) / "config.txt").write_text(serialize(cfg))
    try:
        if checkpoint_at > 0:
            sim.run(until=checkpoint_at)
            save_checkpoint(sim, checkpoint_path or Path(out_dir or ".") / "checkpoint.pkl")
        sim.run()
    finally:
        if writer:
            writer.close()
    if out_dir is not None:
        save_models(sim, Path(out_dir) / "final_model.npz")
    return sim.log, sim


def continue_run(sim: Simulation, out_dir=None, trace=False):
    """Finish a resumed simulation.

    The metrics files are rewritten in full (restored prefix, then new rows); the
    trace, if enabled, is appended to.
    """
    writer = OutputWriter(out_dir, trace, append_trace=True) if out_dir is not None else None
    if writer:
        for row in sim.log:
            writer.write_row(row)
        writer.attach(sim)
    try:
        sim.run()
    finally:
        if writer:
            writer.close()
    if out_dir is not None:
        save_models(sim, Path(out_dir) / "final_model.npz")
    return sim.log, sim
