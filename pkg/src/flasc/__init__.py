"""Desk-scale simulator for sparse-communication federated LoRA."""

from .config import ConfigError, ExperimentConfig, emit_config, parse_config
from .fed import Federation, FedOptConfig, ServerState, run_round
from .lora import Backbone, FlatParams, Layout, LoraAdapter, backward, forward, init_lora, local_train, merge
from .numeric import RngStream
from .runner import emit_plotdata, run_experiment, run_sweep
from .sparsity import Mask, topk_mask
from .strategies import StrategyConfig, make_strategy

__version__ = "0.1.0"

__all__ = [
    "Backbone", "ConfigError", "ExperimentConfig", "FedOptConfig", "Federation", "FlatParams", "Layout",
    "LoraAdapter", "Mask", "RngStream", "ServerState", "StrategyConfig", "backward", "emit_config",
    "emit_plotdata", "forward", "init_lora", "local_train", "make_strategy", "merge", "parse_config",
    "run_experiment", "run_round", "run_sweep", "topk_mask",
]
