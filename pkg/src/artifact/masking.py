"""Drop masks over the encoder bottleneck and the feature corruption they drive.

A mask bit of 1 keeps a bottleneck site, 0 drops it. Dropped sites are filled
either with a 3x3 local average of the clean feature or with channel-scaled
Gaussian noise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.tensor import make_result

log = logging.getLogger(__name__)

REPLACEMENTS = ("average", "noise")


@dataclass
class CorruptionConfig:
    theta: float = 0.5
    replacement: str = "average"
    noise_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.replacement not in REPLACEMENTS:
            raise ValueError(f"replacement must be one of {REPLACEMENTS}, got {self.replacement!r}")


@dataclass
class MaskGrid:
    bits: np.ndarray  # (M, N) uint8, 1 = kept
    theta: float
    seed: int | None = None

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def dropped_fraction(self) -> float:
        return float(1.0 - self.bits.mean())


def sample_mask(m: int, n: int, config: CorruptionConfig, rng: np.random.Generator, seed: int | None = None) -> MaskGrid:
    """Drop every site independently with probability ``config.theta``."""
    if m < 1 or n < 1:
        raise ValueError(f"mask dims must be positive, got {(m, n)}")
    bits = (rng.random((m, n)) >= config.theta).astype(np.uint8)
    return MaskGrid(bits=bits, theta=config.theta, seed=seed)


def stack_masks(masks: Sequence[MaskGrid], dtype=np.float32) -> np.ndarray:
    """Batch of masks as an ``(B, 1, M, N)`` float array (broadcasts over channels)."""
    return np.stack([mk.bits for mk in masks])[:, None].astype(dtype)


def check_batch_has_drops(masks: Sequence[MaskGrid]) -> bool:
    dropped = sum(int((mk.bits == 0).sum()) for mk in masks)
    if dropped == 0 and masks and masks[0].theta >= 0.1:
        log.warning("no site dropped in a batch of %d masks at theta=%.2f", len(masks), masks[0].theta)
        return False
    return True


def corrupt_feature(
    phi: Tensor,
    mask: MaskGrid | Sequence[MaskGrid] | np.ndarray,
    config: CorruptionConfig,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Replace dropped bottleneck sites of ``phi`` (B, L, M, N).

    ``mask`` is a single grid shared by the batch, a sequence of per-item
    grids, or an already stacked ``(B, 1, M, N)`` array.
    """
    omega = _mask_array(mask, phi.dtype)
    if omega.shape[2:] != phi.shape[2:]:
        raise ValueError(f"mask dims {omega.shape[2:]} do not match feature spatial dims {phi.shape[2:]}")
    keep = Tensor(omega)
    drop = Tensor(1.0 - omega)
    if config.replacement == "average":
        fill = ops.avg_pool3(phi)
    else:
        if rng is None:
            raise ValueError("noise replacement needs an rng")
        fill = _channel_noise(phi, rng.standard_normal(phi.shape) * config.noise_scale)
    return ops.add(ops.mul(keep, phi), ops.mul(drop, fill))


def _channel_noise(phi: Tensor, z: np.ndarray) -> Tensor:
    """``z`` scaled by the per-channel standard deviation of ``phi``."""
    axes = (0, 2, 3)
    centered = phi.data - phi.data.mean(axis=axes, keepdims=True)
    std = np.sqrt((centered**2).mean(axis=axes, keepdims=True))
    count = phi.size // phi.shape[1]

    def bw(g):
        # d std / d phi = centered / (count * std); zero where std vanishes
        safe = np.where(std > 0, std, 1.0)
        coef = np.where(std > 0, (g * z).sum(axis=axes, keepdims=True) / (count * safe), 0.0)
        return ((coef * centered).astype(phi.dtype, copy=False),)

    return make_result((z * std).astype(phi.dtype), (phi,), bw)


def upsample_mask(mask: MaskGrid, target_h: int, target_w: int) -> MaskGrid:
    if target_h % mask.height or target_w % mask.width:
        raise ValueError(f"cannot upsample {mask.bits.shape} mask to {(target_h, target_w)}: non-integer factor")
    fh, fw = target_h // mask.height, target_w // mask.width
    bits = mask.bits.repeat(fh, axis=0).repeat(fw, axis=1)
    return MaskGrid(bits=bits, theta=mask.theta, seed=mask.seed)


def upsample_mask_array(omega: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Batched version of :func:`upsample_mask` on a ``(B, 1, M, N)`` array."""
    m, n = omega.shape[2:]
    if target_h % m or target_w % n:
        raise ValueError(f"cannot upsample {(m, n)} mask to {(target_h, target_w)}: non-integer factor")
    return omega.repeat(target_h // m, axis=2).repeat(target_w // n, axis=3)


def _mask_array(mask, dtype) -> np.ndarray:
    if isinstance(mask, MaskGrid):
        return mask.bits[None, None].astype(dtype)
    if isinstance(mask, np.ndarray):
        return mask.astype(dtype, copy=False)
    return stack_masks(mask, dtype)
