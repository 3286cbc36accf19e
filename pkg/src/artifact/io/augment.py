from __future__ import annotations

import numpy as np

from ..autodiff.ops import _bilinear_matrix


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a (C, H, W) array."""
    _, h, w = image.shape
    if (out_h, out_w) == (h, w):
        return image
    ah = _bilinear_matrix(h, out_h, np.float64)
    aw = _bilinear_matrix(w, out_w, np.float64)
    return (ah @ image.astype(np.float64) @ aw.T).astype(image.dtype)


def augment(image: np.ndarray, crop_size: int, rng: np.random.Generator, scale_range=(1.0, 1.25)) -> np.ndarray:
    """Random up-scale (uniform in ``scale_range``) followed by a random crop."""
    _, h, w = image.shape
    lo, hi = scale_range
    scale = lo if hi <= lo else rng.uniform(lo, hi)
    nh, nw = max(int(round(h * scale)), 1), max(int(round(w * scale)), 1)
    if crop_size > min(nh, nw):
        raise ValueError(f"crop {crop_size} larger than resized image {nh}x{nw}")
    img = resize_image(image, nh, nw)
    top = int(rng.integers(0, nh - crop_size + 1))
    left = int(rng.integers(0, nw - crop_size + 1))
    return img[:, top : top + crop_size, left : left + crop_size]


def augment_batch(images: np.ndarray, crop_size: int, rng: np.random.Generator, scale_range=(1.0, 1.25)) -> np.ndarray:
    return np.stack([augment(img, crop_size, rng, scale_range) for img in images])
