from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from ..networks.spec import PRESETS

REPAIR_LOSSES = ("saturating", "non-saturating")
ADVERSARIES = ("damage-repair", "gan")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    preset: str = "desk-32"
    # corruption
    theta: float = 0.5
    replacement: str = "average"
    noise_scale: float = 1.0
    # schedule
    batch_size: int = 16
    ae_epochs: int = 80
    adv_epochs: int = 150
    ae_lr: float = 3e-4
    lr_start: float = 3e-4
    lr_end: float = 3e-6
    beta1: float = 0.5
    augment: bool = True
    max_scale: float = 1.25
    # adversarial objective
    mask_loss_weight: float = 1.0
    repair_loss: str = "non-saturating"
    disc_steps: int = 1
    repair_steps: int = 1
    buffer_capacity: int = 256
    buffer_mix_fraction: float = 0.5
    noise_dim: int = 64
    # ablation switches
    raw_real: bool = False
    repair_layout: str = "distributed"
    mask_prediction: bool = True
    encoder_kernel: int = 2
    gating: bool = True
    history: bool = True
    repair: bool = True
    adversary: str = "damage-repair"
    # network overrides in layer notation; empty means preset default
    encoder: str = ""
    decoder: str = ""
    discriminator: str = ""
    # permits theta of exactly 0 or 1
    test_mode: bool = False

    def __post_init__(self):
        lo_ok = 0.0 <= self.theta <= 1.0 if self.test_mode else 0.0 < self.theta < 1.0
        if not lo_ok:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError(f"need 0 < lr_end <= lr_start, got {self.lr_end}, {self.lr_start}")
        if not 0.0 <= self.buffer_mix_fraction <= 1.0:
            raise ValueError(f"buffer_mix_fraction must lie in [0, 1], got {self.buffer_mix_fraction}")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {PRESETS}")
        if self.repair_loss not in REPAIR_LOSSES:
            raise ValueError(f"repair_loss must be one of {REPAIR_LOSSES}")
        if self.adversary not in ADVERSARIES:
            raise ValueError(f"adversary must be one of {ADVERSARIES}")
        if self.repair_layout not in ("distributed", "local"):
            raise ValueError("repair_layout must be 'distributed' or 'local'")
        if self.batch_size < 1 or self.buffer_capacity < 0:
            raise ValueError("batch_size must be >= 1 and buffer_capacity >= 0")

    @property
    def repair_mode(self) -> str:
        if not self.repair:
            return "no-repair"
        return "full" if self.gating else "ungated"

    @property
    def mix_fraction(self) -> float:
        return self.buffer_mix_fraction if self.history else 0.0

    def with_changes(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in asdict(self).items())

    def ae_text(self) -> str:
        """Only the fields that shape the autoencoder; keys AE checkpoints."""
        keys = ("seed", "preset", "batch_size", "ae_epochs", "ae_lr", "beta1", "augment", "max_scale", "encoder_kernel", "encoder", "decoder")
        d = asdict(self)
        return "".join(f"{k} = {_fmt(d[k])}\n" for k in keys)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def config_fields():
    return {f.name: f for f in fields(TrainConfig)}


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; string keys are hashed.

    Every random draw in training is keyed by purpose and step, so any step
    can be replayed without rerunning the ones before it.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))
