"""
Uplink latency and stragglers
=============================

Clients sit uniformly inside a 1 km cell and share a 10 MHz uplink. Their
compute capacity ranges from 1e9 to 1e10 FLOPs. This script shows which of
the two dominates a local iteration for a small MLP client.
"""

import numpy as np

from gas_sim import latency
from gas_sim.config import parse_config_text
from gas_sim.experiment import build_simulation

for r in (0.1, 0.5, 1.0):
    rate = latency.uplink_rate_bps(r, 1e6)
    print(f"r = {r:.1f} km  path loss {latency.path_loss_db(r):6.1f} dB  rate on 1 MHz {rate / 1e6:6.2f} Mbit/s")

###############################################################################
# One local iteration is forward + activation upload + backward. With the
# default 32-64 client layer, upload time dwarfs compute time.

cfg = parse_config_text("", {"K": "20", "C": "20", "T": "100000", "mode": "async_nogen"})
sim = build_simulation(cfg)
tm = [sim.timing(k) for k in range(cfg.K)]
compute = np.array([t["forward"] + t["backward"] for t in tm])
upload = np.array([t["upload_activations"] for t in tm])
print(f"compute per iteration: {compute.min() * 1e3:.3f} .. {compute.max() * 1e3:.3f} ms")
print(f"upload per iteration:  {upload.min() * 1e3:.3f} .. {upload.max() * 1e3:.3f} ms")

###############################################################################
# Run for ten simulated seconds with every client active and count how many
# minibatches each one delivered. Distance, not FLOPs, sets the order.

sim.run(until_time=10.0)
counts = np.array(sim.activation_arrivals)
order = np.argsort(counts)
for k in (order[0], order[-1]):
    p = sim.profiles[k]
    print(f"client {k:2d}: {counts[k]:4d} arrivals, {p.distance_km:.2f} km, {p.flops_capacity:.2e} FLOPs")
print(f"fastest / slowest = {counts.max() / counts.min():.2f}")
