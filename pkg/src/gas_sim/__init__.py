"""Generative-activation-aided asynchronous split federated learning, simulated."""

from .actdist import (
    ActivationDistributions,
    LabelGaussian,
    WeightingFn,
    batch_weighted_stats_oracle,
    plan_generation,
    sample_activations,
    update_label_gaussian,
)
from .buffers import ActivationBuffer, BufferStatus, ModelBuffer, aggregate_models, drain_concat, store_activation, store_model
from .config import ExperimentConfig, parse_config, parse_config_text, serialize
from .data import Dataset, dirichlet_partition, load_idx, shard_partition, synthetic_gaussian_dataset
from .experiment import build_simulation, resume, run_experiment, save_checkpoint
from .latency import ClientProfile, compute_time, path_loss_db, transfer_time, uplink_rate_bps
from .metrics import MetricsLog, MetricsRow, emit_metrics, evaluate_accuracy, gradient_dissimilarity
from .nn import DenseLayer, LayerCache, finite_diff_grad, init_mlp, mlp_backward, mlp_forward, sgd_step
from .sim import Simulation, run_simulation, select_client
from .split import (
    ActivationBatch,
    SplitModel,
    client_backward_update,
    client_forward,
    logit_adjusted_loss,
    server_loss_and_grads,
    server_update,
)

__version__ = "0.1.0"
