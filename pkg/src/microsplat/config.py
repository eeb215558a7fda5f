"""Flat training configuration shared by the trainer, CLI and gradient checks."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from microsplat.adp import AdpConfig
from microsplat.scene import ConfigError


@dataclass
class TrainConfig:
    seed: int = 0
    lambda1: float = 0.2
    # per-class Adam learning rates; position is multiplied by the scene extent
    lr_position: float = 1.6e-4
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    lr_encoder: float = 1e-3
    position_lr_decay: float = 1.0
    # phase budgets (iterations)
    phase1_iters: int = 2000
    phase2_iters: int = 2000
    phase3_iters: int = 2000
    # adaptive densification and pruning
    lambda_xi: float = 0.1
    ema_decay: float = 0.99
    window: int = 500
    tau: float = 0.005
    patience: int = 3
    lambda2: float = 1e-4
    lambda3: float = 1e-4
    prune_threshold: float = 0.05
    prune_interval: int = 100
    grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    densify_interval: int = 100
    densify_from: int = 0
    max_gaussians: int = 0
    # graph encoder and spatial losses
    feature_dim: int = 32
    hidden_dim: int = 32
    knn_k: int = 8
    n_neighborhoods: int = 64
    neighborhood_size: int = 8
    lambda_c: float = 0.01
    lambda_s: float = 0.001
    graph_refresh: int = 10
    # switches used by ablation variants
    use_elbo: bool = True
    use_opacity_reg: bool = True
    use_pruning: bool = True
    use_gsdo: bool = True
    # bookkeeping
    threads: int = 1
    log_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("phase1_iters", "phase2_iters", "phase3_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("lr_position", "lr_scale", "lr_rotation", "lr_opacity", "lr_color", "lr_encoder"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 <= self.lambda1 <= 1.0:
            raise ConfigError("lambda1 must lie in [0, 1]")
        if self.lambda_c < 0 or self.lambda_s < 0:
            raise ConfigError("lambda_c and lambda_s must be >= 0")
        try:
            self.adp()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def adp(self) -> AdpConfig:
        return AdpConfig(
            lambda_xi=self.lambda_xi, ema_decay=self.ema_decay, window=self.window, tau=self.tau,
            patience=self.patience, lambda2=self.lambda2, lambda3=self.lambda3,
            prune_threshold=self.prune_threshold, prune_interval=self.prune_interval,
            grad_threshold=self.grad_threshold, percent_dense=self.percent_dense,
            densify_interval=self.densify_interval,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in data.items():
            kwargs[key] = _coerce(known[key], value)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)


def _coerce(f: dataclasses.Field, value):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {f.name!r} expects {kind}, got {value!r}") from None
    return value
