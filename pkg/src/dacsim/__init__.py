"""Deterministic simulator of decentralized peer-to-peer personalized learning.

Clients hold private non-iid data shards, exchange model parameters over a
simulated network, and choose who to talk to by one of six strategies —
most notably similarity-weighted adaptive peer sampling, which softly
clusters the network by each peer's usefulness for the local task.
"""

from .config import ExperimentConfig, format_config, parse_config, parse_config_text
from .datagen import (
    ClientShard,
    ClusterLayout,
    ClusterSpec,
    Dataset,
    apply_label_shift,
    apply_rotation,
    generate_base_task,
    load_idx,
    partition_clients,
)
from .errors import ConfigurationError, IngestionError, TrainingError
from .model import (
    Arch,
    ModelParams,
    OptimizerState,
    adam_step,
    dataset_loss,
    evaluate,
    forward,
    init_optimizer,
    init_params,
    loss_and_grad,
    train_local,
)
from .protocols import ClientRuntime, ProtocolKind, fedavg_merge
from .similarity import (
    SimilarityState,
    TauSchedule,
    propagate_two_hop,
    sampling_probabilities,
    similarity_score,
    tau_at,
    update_measured,
    weighted_sample_without_replacement,
)
from .simulator import (
    ExperimentResult,
    MetricsRecord,
    Simulation,
    run_experiment,
    run_sweep,
    write_artifacts,
)

__version__ = "0.1.0"

__all__ = [
    "Arch",
    "ClientRuntime",
    "ClientShard",
    "ClusterLayout",
    "ClusterSpec",
    "ConfigurationError",
    "Dataset",
    "ExperimentConfig",
    "ExperimentResult",
    "IngestionError",
    "MetricsRecord",
    "ModelParams",
    "OptimizerState",
    "ProtocolKind",
    "Simulation",
    "SimilarityState",
    "TauSchedule",
    "TrainingError",
    "adam_step",
    "apply_label_shift",
    "apply_rotation",
    "dataset_loss",
    "evaluate",
    "fedavg_merge",
    "format_config",
    "forward",
    "generate_base_task",
    "init_optimizer",
    "init_params",
    "load_idx",
    "loss_and_grad",
    "parse_config",
    "parse_config_text",
    "partition_clients",
    "propagate_two_hop",
    "run_experiment",
    "run_sweep",
    "sampling_probabilities",
    "similarity_score",
    "tau_at",
    "train_local",
    "update_measured",
    "weighted_sample_without_replacement",
    "write_artifacts",
]
