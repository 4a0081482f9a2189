"""Wireless uplink and compute latency model for simulated clients."""

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import DomainError

BYTES_PER_FLOAT = 4
BYTES_PER_LABEL = 1


@dataclass(frozen=True)
class ClientProfile:
    id: int
    distance_km: float
    flops_capacity: float
    tx_power_watts: float = 0.2
    data_size: int = 1

    def __post_init__(self):
        if self.distance_km <= 0 or self.flops_capacity <= 0:
            raise DomainError("distance and FLOPs capacity must be positive")


def path_loss_db(r_km: float) -> float:
    if r_km <= 0:
        raise DomainError(f"distance must be positive, got {r_km}")
    return 128.1 + 37.6 * math.log10(r_km)


def uplink_rate_bps(distance_km: float, bandwidth_hz: float, tx_power_watts: float = 0.2,
                    noise_dbm_per_hz: float = -174.0) -> float:
    """Shannon rate of an orthogonal uplink channel of width ``bandwidth_hz``."""
    if bandwidth_hz <= 0 or tx_power_watts < 0:
        raise DomainError("bandwidth must be positive and power non-negative")
    gain = 10.0 ** (-path_loss_db(distance_km) / 10.0)
    n0 = 10.0 ** (noise_dbm_per_hz / 10.0) * 1e-3
    snr = tx_power_watts * gain / (n0 * bandwidth_hz)
    return bandwidth_hz * math.log2(1.0 + snr)


def transfer_time(num_bytes: float, rate_bps: float) -> float:
    if rate_bps <= 0 or num_bytes < 0:
        raise DomainError("rate must be positive and payload non-negative")
    return 8.0 * num_bytes / rate_bps


def compute_time(flops_needed: float, flops_capacity: float) -> float:
    if flops_needed < 0 or flops_capacity <= 0:
        raise DomainError("FLOPs must be non-negative and capacity positive")
    return flops_needed / flops_capacity


def dense_forward_flops(batch: int, widths: Sequence[int]) -> int:
    """2*B*in*out summed over consecutive width pairs."""
    return sum(2 * batch * a * b for a, b in zip(widths[:-1], widths[1:]))


def dense_backward_flops(batch: int, widths: Sequence[int]) -> int:
    return 2 * dense_forward_flops(batch, widths)


def activation_payload_bytes(batch: int, dim: int) -> int:
    return batch * dim * BYTES_PER_FLOAT + batch * BYTES_PER_LABEL


def model_payload_bytes(num_params: int) -> int:
    return num_params * BYTES_PER_FLOAT


def sample_profiles(num_clients: int, rng: np.random.Generator, data_sizes: Sequence[int],
                    radius_km: float = 1.0, flops_min: float = 1e9, flops_max: float = 1e10,
                    tx_power_watts: float = 0.2, homogeneous: bool = False) -> List[ClientProfile]:
    """Clients uniform over a disc of ``radius_km``, FLOPs uniform in [min, max].

    ``homogeneous`` places every client at the cell edge with ``flops_min``.
    """
    profiles = []
    for k in range(num_clients):
        # uniform over the disc; 1 - U keeps r > 0
        r = radius_km * math.sqrt(1.0 - rng.random())
        f = rng.uniform(flops_min, flops_max)
        if homogeneous:
            r, f = radius_km, flops_min
        profiles.append(ClientProfile(k, r, f, tx_power_watts, int(data_sizes[k])))
    return profiles
