"""Run configuration for the two training phases."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

from timbre.augment import EffectConfig
from timbre.errors import ConfigError
from timbre.model.network import ModelConfig

PHASES = ("pretrain", "finetune")

PRETRAIN_DEFAULTS = dict(batch_size=128, epochs=30, max_lr=0.001, warmup_epochs=3.0,
                         label_smoothing=0.05, mixup_prob=0.5, mixup_alpha=0.3, concat_prob=0.5,
                         effect_ratio=0.3)
FINETUNE_DEFAULTS = dict(batch_size=64, epochs=40, warmup_epochs=5.0, label_smoothing=0.0,
                         mixup_prob=0.0, concat_prob=0.0, effect_ratio=0.0)
FINETUNE_LR_PRETRAINED = 0.00025
FINETUNE_LR_RANDOM = 0.0035


@dataclass(frozen=True)
class RunConfig:
    """Hyperparameters and data locations for one training run.

    ``max_lr=None`` resolves per phase; for fine-tuning it depends on whether
    ``init`` names a checkpoint. ``effects.chain_probability`` is overridden by
    ``effect_ratio``.
    """

    phase: str = "pretrain"
    batch_size: int = 128
    epochs: int = 30
    max_lr: float | None = None
    warmup_epochs: float = 3.0
    weight_decay: float = 5e-4
    label_smoothing: float = 0.05
    mixup_prob: float = 0.5
    mixup_alpha: float = 0.3
    concat_prob: float = 0.5
    effect_ratio: float = 0.3
    effects: EffectConfig = field(default_factory=EffectConfig)
    seed: int = 0
    manifest: str = ""
    labels: str = ""
    root: str = ""
    init: str = "random"
    data_fraction: float = 1.0
    model: ModelConfig = field(default_factory=ModelConfig)

    @classmethod
    def for_phase(cls, phase: str, **overrides: Any) -> "RunConfig":
        if phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {phase!r}")
        base = PRETRAIN_DEFAULTS if phase == "pretrain" else FINETUNE_DEFAULTS
        return cls(phase=phase, **{**base, **overrides})

    @property
    def pretrained_init(self) -> bool:
        return self.init != "random"

    def resolved_lr(self) -> float:
        if self.max_lr is not None:
            return float(self.max_lr)
        if self.phase == "pretrain":
            return PRETRAIN_DEFAULTS["max_lr"]
        return FINETUNE_LR_PRETRAINED if self.pretrained_init else FINETUNE_LR_RANDOM

    def effect_config(self) -> EffectConfig:
        return replace(self.effects, chain_probability=self.effect_ratio)

    def validate(self) -> None:
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        for name in ("label_smoothing", "mixup_prob", "concat_prob", "effect_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ConfigError(f"data_fraction must lie in (0, 1], got {self.data_fraction}")
        if self.mixup_alpha <= 0:
            raise ConfigError("mixup_alpha must be positive")
        if self.max_lr is not None and self.max_lr <= 0:
            raise ConfigError("max_lr must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not 0.0 <= self.warmup_epochs < self.epochs:
            raise ConfigError("need 0 <= warmup_epochs < epochs")
        try:
            self.effect_config().validate()
            self.model.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def hyperparameters(self) -> dict:
        """Everything except data locations; recorded in checkpoints."""
        d = self.to_dict()
        for key in ("manifest", "labels", "root", "init"):
            d.pop(key)
        d["pretrained_init"] = self.pretrained_init
        d["max_lr"] = self.resolved_lr()
        return d

    def to_dict(self) -> dict:
        d = asdict(self)
        d["effects"] = self.effects.to_dict()
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], phase: str | None = None) -> "RunConfig":
        """Phase defaults overlaid with ``d``; unknown keys are rejected."""
        if not isinstance(d, Mapping):
            raise ConfigError("train: expected an object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"train: unknown keys {sorted(unknown)}")
        kw = dict(d)
        phase = kw.pop("phase", phase or "pretrain")
        if "effects" in kw:
            try:
                kw["effects"] = EffectConfig.from_dict(kw["effects"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"train.effects: {exc}") from exc
        if "model" in kw:
            kw["model"] = ModelConfig.from_dict(kw["model"])
        try:
            cfg = cls.for_phase(phase, **kw)
        except TypeError as exc:
            raise ConfigError(f"train: {exc}") from exc
        cfg.validate()
        return cfg
