"""Training configuration and named presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..corpus import SCENARIOS
from ..encoders import EncoderConfig
from ..fusion import ABLATIONS, FUSION_METHODS


@dataclass
class TrainConfig:
    scenario: str = "endpointing"
    fusion: str = "gmf"
    cl_enabled: bool = False
    tau: float = 0.05
    cl_dropout_p: float = 0.1
    cl_weight: float = 1.0
    batch_size: int = 32
    epochs: int = 20
    patience: int = 5
    lr: float = 1e-3
    seed: int = 0
    context_turns: int = 3
    l_max: int = 128
    n_buckets: int = 10
    min_count: int = 1
    aug_total: int = 400
    aug_per_batch: int = 8
    aug_in_ce: bool = True
    k_folds: int = 10
    dev_frac: float = 0.1
    drop: str | None = None
    pretrained_path: str | None = None
    encoder: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.fusion not in FUSION_METHODS:
            raise ValueError(f"fusion must be one of {FUSION_METHODS}")
        if self.drop is not None and self.drop not in ABLATIONS:
            raise ValueError(f"drop must be one of {ABLATIONS} or null")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0 <= self.cl_dropout_p < 1:
            raise ValueError("cl_dropout_p must be in [0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0 or self.patience < 1:
            raise ValueError("epochs must be >= 0 and patience >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        if not 0 < self.dev_frac < 1:
            raise ValueError("dev_frac must be in (0, 1)")
        if self.context_turns < 0 or self.l_max < 4 or self.n_buckets < 2:
            raise ValueError("context_turns >= 0, l_max >= 4 and n_buckets >= 2 required")
        if self.aug_total < 0 or self.aug_per_batch < 0:
            raise ValueError("augmentation sizes must be non-negative")
        known = {f.name for f in fields(EncoderConfig)} - {"vocab_size", "l_max", "n_buckets"}
        unknown = set(self.encoder) - known
        if unknown:
            raise ValueError(f"unknown encoder settings: {sorted(unknown)}")
        self.encoder_config(vocab_size=8)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, l_max=self.l_max, n_buckets=self.n_buckets, **self.encoder)

    def effective_context_turns(self) -> int:
        return 0 if self.drop == "context" else self.context_turns

    def model_drop(self) -> str | None:
        return None if self.drop == "context" else self.drop

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_json()
        d.update(changes)
        return TrainConfig.from_json(d)

    def to_json(self) -> dict:
        d = asdict(self)
        d["encoder"] = {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.encoder.items())}
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


# Reduced sizes that keep every layer count (3 Transformer layers, 18 ResNet
# weight layers, 3 MLP layers) but fit 50 cross-validation trainings in a
# single-core half hour.
FAST_ENCODER = {
    "d_model": 32,
    "heads": 4,
    "resnet_channels": [4, 8, 8, 16],
    "stage_time_strides": [1, 2, 2, 2],
    "stem_time_stride": 2,
    "dropout_p": 0.1,
}


def fast_config(**changes) -> TrainConfig:
    base = dict(batch_size=32, epochs=3, patience=1, lr=3e-3, l_max=32, encoder=dict(FAST_ENCODER))
    base.update(changes)
    return TrainConfig(**base)


def toy_config(**changes) -> TrainConfig:
    enc = {
        "d_model": 8,
        "heads": 2,
        "resnet_channels": [2, 2, 2, 2],
        "stage_time_strides": [1, 2, 2, 2],
        "stem_time_stride": 2,
        "dropout_p": 0.0,
    }
    base = dict(batch_size=8, epochs=5, patience=5, lr=1e-2, l_max=24, n_buckets=4, encoder=enc)
    base.update(changes)
    return TrainConfig(**base)
