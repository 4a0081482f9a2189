"""
Generated activations against plain buffering
=============================================

Same data, partition, latencies and client schedule; the only difference is
whether the server tops up each full buffer with activations sampled from
its per-label Gaussians before the update.
"""

from gas_sim.config import parse_config_text
from gas_sim.experiment import run_experiment

base = {"K": "10", "C": "5", "Q_c": "5", "E": "10", "T": "60", "class_sep": "3.0",
        "num_classes": "10", "shards": "2", "eval_every": "10"}

for seed in (0, 1):
    finals = {}
    for mode in ("gas", "async_nogen"):
        log, sim = run_experiment(parse_config_text("", dict(base, mode=mode, seed=str(seed))))
        curve = [f"{r.test_accuracy:.2f}" for r in log if r.test_accuracy is not None]
        print(f"seed {seed} {mode:12s} accuracy every 10 aggregations: {' '.join(curve)}")
        finals[mode] = log[-1].test_accuracy
    print(f"seed {seed} final: gas {finals['gas']:.3f} vs no generation {finals['async_nogen']:.3f}")
