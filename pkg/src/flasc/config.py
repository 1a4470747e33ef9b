"""Flat ``key=value`` experiment configuration.

One setting per line, ``#`` starts a comment. Keys are dotted
(``density.down=0.25``); see ``ExperimentConfig`` for the full list and
defaults, or run ``python -m flasc defaults``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any

from .data import BandwidthModel, PretrainConfig, TaskSpec
from .fed import FedOptConfig
from .lora import LocalTrainConfig
from .privacy import DpConfig
from .sparsity import DensityConfig, SizeModel
from .strategies import StrategyConfig

_GROUPS = {
    "lora", "local", "server", "density", "lth", "budget", "dp", "partition",
    "task", "model", "pretrain", "bandwidth", "size", "eval",
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: str = "dense"
    seed: int = 0
    rounds: int = 100
    clients_per_round: int = 10
    output: str = ""

    lora_rank: int = 16
    lora_scaling: float = 1.0
    lora_init_std: float = 0.02

    local_lr: float = 0.05
    local_momentum: float = 0.9
    local_batch_size: int = 16
    local_epochs: int = 1

    server_lr: float = 5e-3
    server_beta1: float = 0.9
    server_beta2: float = 0.999
    server_eps: float = 1e-8
    server_weighting: str = "uniform"
    server_bias_correction: bool = True

    density_down: float = 0.25
    density_up: float = 0.25
    density_scope: str = "global"

    lth_keep: float = 0.98
    lth_period: int = 1
    budget_tiers: int = 1

    dp_enabled: bool = False
    dp_clip: float = 1.0
    dp_sigma: float = 0.0
    dp_cohort: int = 1000

    partition_clients: int = 100
    partition_alpha: float = 1.0

    task_dim: int = 32
    task_classes: int = 10
    task_informative: int = 8
    task_separation: float = 2.5
    task_noise: float = 1.0
    task_shift: float = 1.8
    task_offset: float = 0.0
    task_source_size: int = 20000
    task_train_size: int = 5000
    task_test_size: int = 1000
    task_seed: int = 0

    model_hidden: tuple = (64, 64)
    pretrain_lr: float = 0.05
    pretrain_max_epochs: int = 30

    bandwidth_down: float = 1.0
    bandwidth_upload_ratio: float = 1.0
    size_mode: str = "param-count"
    eval_every: int = 1

    # --- key mapping -------------------------------------------------------

    @staticmethod
    def key_for(field_name: str) -> str:
        head, _, tail = field_name.partition("_")
        return f"{head}.{tail}" if head in _GROUPS and tail else field_name

    @classmethod
    def keys(cls) -> dict[str, dataclasses.Field]:
        return {cls.key_for(f.name): f for f in fields(cls)}

    # --- component configs --------------------------------------------------

    def strategy_config(self) -> StrategyConfig:
        return StrategyConfig(
            kind=self.strategy,
            d_down=self.density_down,
            d_up=self.density_up,
            scope=self.density_scope,
            lth_keep=self.lth_keep,
            lth_period=self.lth_period,
            budget_tiers=self.budget_tiers,
        )

    def density(self) -> DensityConfig:
        return DensityConfig(self.density_down, self.density_up, self.density_scope)

    def local(self) -> LocalTrainConfig:
        return LocalTrainConfig(self.local_lr, self.local_momentum, self.local_batch_size, self.local_epochs)

    def fedopt(self) -> FedOptConfig:
        return FedOptConfig(
            self.server_lr, self.server_beta1, self.server_beta2, self.server_eps,
            self.server_weighting, self.server_bias_correction,
        )

    def dp(self) -> DpConfig | None:
        if not self.dp_enabled:
            return None
        return DpConfig(self.dp_clip, self.dp_sigma, self.dp_cohort)

    def task(self) -> TaskSpec:
        return TaskSpec(
            dim=self.task_dim, n_classes=self.task_classes, informative=self.task_informative,
            separation=self.task_separation, noise=self.task_noise, shift=self.task_shift,
            offset=self.task_offset, source_size=self.task_source_size, train_size=self.task_train_size,
            test_size=self.task_test_size, seed=self.task_seed,
        )

    def pretrain(self) -> PretrainConfig:
        return PretrainConfig(hidden=tuple(self.model_hidden), lr=self.pretrain_lr, max_epochs=self.pretrain_max_epochs)

    def bandwidth(self) -> BandwidthModel:
        return BandwidthModel(self.bandwidth_down, self.bandwidth_upload_ratio)

    def size_model(self) -> SizeModel:
        return SizeModel(self.size_mode)

    def validate(self) -> "ExperimentConfig":
        checks = [
            ("rounds", self.rounds >= 1, "must be >= 1"),
            ("clients_per_round", self.clients_per_round >= 1, "must be >= 1"),
            ("clients_per_round", self.clients_per_round <= self.partition_clients, "exceeds partition.clients"),
            ("lora.rank", self.lora_rank >= 1, "must be >= 1"),
            ("lora.init_std", self.lora_init_std >= 0, "must be >= 0"),
            ("local.lr", self.local_lr > 0, "must be > 0"),
            ("partition.alpha", self.partition_alpha > 0, "must be > 0"),
            ("partition.clients", self.partition_clients >= 1, "must be >= 1"),
            ("eval.every", self.eval_every >= 1, "must be >= 1"),
            ("density.down", 0 < self.density_down <= 1, "must be in (0, 1]"),
            ("density.up", 0 < self.density_up <= 1, "must be in (0, 1]"),
            ("model.hidden", all(h >= 1 for h in self.model_hidden), "widths must be >= 1"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, f"{msg} (got {_format(getattr(self, self.keys()[key].name))})")
        builders = [
            ("strategy", self.strategy_config), ("density.scope", self.density),
            ("local.momentum", self.local), ("server.lr", self.fedopt), ("dp.clip", self.dp),
            ("task.classes", self.task), ("bandwidth.down", self.bandwidth), ("size.mode", self.size_model),
        ]
        for key, build in builders:
            try:
                build()
            except ValueError as e:
                raise ConfigError(_key_in_message(str(e), key), str(e)) from None
        return self

    def replace(self, **overrides) -> "ExperimentConfig":
        """Copy with overrides given by dotted key or field name."""
        by_key = self.keys()
        changes = {}
        for k, v in overrides.items():
            name = by_key[k].name if k in by_key else k
            changes[name] = _coerce(self.key_for(name), by_key[self.key_for(name)].type, v)
        return dataclasses.replace(self, **changes).validate()


def _key_in_message(message: str, fallback: str) -> str:
    for key in ExperimentConfig.keys():
        if key in message:
            return key
    return fallback


def _coerce(key: str, typ: Any, value: Any):
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if typ == "bool":
            if isinstance(value, bool):
                return value
            s = str(value).strip().lower()
            if s in ("true", "1", "yes"):
                return True
            if s in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if typ == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if typ == "float":
            return float(value)
        if typ == "tuple":
            if isinstance(value, (tuple, list)):
                return tuple(int(v) for v in value)
            return tuple(int(v) for v in str(value).split(",") if v.strip())
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {typ}, got {value!r}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {raw.strip()!r}")
        pairs.append((key.strip(), value.strip()))
    return pairs


def from_pairs(pairs) -> ExperimentConfig:
    known = ExperimentConfig.keys()
    values = {}
    for key, value in pairs:
        if key not in known:
            raise ConfigError(key, "unknown key")
        f = known[key]
        values[f.name] = _coerce(key, f.type, value)
    return ExperimentConfig(**values).validate()


def parse_config(text: str) -> ExperimentConfig:
    return from_pairs(parse_pairs(text))


def emit_config(cfg: ExperimentConfig) -> str:
    """Every key with its effective value, one ``key=value`` per line."""
    return "".join(f"{key}={_format(getattr(cfg, f.name))}\n" for key, f in cfg.keys().items())
