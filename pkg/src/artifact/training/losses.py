"""Reconstruction, adversarial and mask-localization losses.

Every log-probability is written through softplus so that no finite logit
ever evaluates log(0):  log sigmoid(z) = -softplus(-z),
log(1 - sigmoid(z)) = -softplus(z).
"""
from __future__ import annotations

import numpy as np

from ..autodiff import DimensionError, Tensor, ops


def loss_auto(x_hat: Tensor, x: Tensor) -> Tensor:
    """Mean squared reconstruction error over batch and pixels."""
    if x_hat.shape != x.shape:
        raise DimensionError(f"loss_auto: shapes differ {x_hat.shape} vs {x.shape}")
    return ops.mean(ops.square(ops.sub(x_hat, x)))


def loss_discriminator_class(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """-mean log sigmoid(real) - mean log(1 - sigmoid(fake))."""
    return ops.add(ops.mean(ops.softplus(ops.mul(real_logits, -1.0))), ops.mean(ops.softplus(fake_logits)))


def loss_repair_class(fake_logits: Tensor, variant: str = "non-saturating") -> Tensor:
    if variant == "saturating":
        # mean log(1 - sigmoid(fake)), minimized by the repair network
        return ops.mul(ops.mean(ops.softplus(fake_logits)), -1.0)
    if variant == "non-saturating":
        return ops.mean(ops.softplus(ops.mul(fake_logits, -1.0)))
    raise ValueError(f"unknown repair loss variant {variant!r}")


def loss_mask(mask_logits: Tensor, mask) -> Tensor:
    """Per-site sigmoid cross-entropy against the keep mask, averaged.

    ``mask`` is a (B, M, N) array of keep bits (or a single (M, N) grid).
    """
    target = np.asarray(getattr(mask, "bits", mask), dtype=mask_logits.dtype)
    if target.ndim == 2:
        target = np.broadcast_to(target, mask_logits.shape)
    if target.ndim == 4:
        target = target[:, 0]
    if target.shape != mask_logits.shape:
        raise DimensionError(f"loss_mask: logits {mask_logits.shape} vs mask {target.shape}")
    # -[t log s(l) + (1-t) log(1-s(l))] = t softplus(-l) + (1-t) softplus(l)
    pos = ops.mul(Tensor(target), ops.softplus(ops.mul(mask_logits, -1.0)))
    neg = ops.mul(Tensor(1.0 - target), ops.softplus(mask_logits))
    return ops.mean(ops.add(pos, neg))


def class_accuracy(real_logits: np.ndarray, fake_logits: np.ndarray) -> float:
    hits = np.sum(real_logits > 0) + np.sum(fake_logits < 0)
    return float(hits) / float(real_logits.size + fake_logits.size)


def mask_accuracy(mask_logits: np.ndarray, keep_bits: np.ndarray) -> float:
    keep_bits = np.asarray(keep_bits)
    if keep_bits.ndim == 4:
        keep_bits = keep_bits[:, 0]
    return float(np.mean((mask_logits > 0) == (keep_bits > 0.5)))
