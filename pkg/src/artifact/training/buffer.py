from __future__ import annotations

from typing import Dict, Tuple

import numpy as np


class HistoryBuffer:
    """FIFO ring of past corrupted images and the masks that produced them."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self._images: list = []
        self._masks: list = []
        self._next = 0  # slot overwritten by the next push once full

    def __len__(self) -> int:
        return len(self._images)

    def push(self, images: np.ndarray, masks: np.ndarray) -> None:
        if self.capacity == 0:
            return
        for img, mk in zip(images, masks):
            if len(self._images) < self.capacity:
                self._images.append(np.array(img))
                self._masks.append(np.array(mk))
            else:
                self._images[self._next] = np.array(img)
                self._masks[self._next] = np.array(mk)
                self._next = (self._next + 1) % self.capacity

    def sample(self, k: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        k = min(k, len(self))
        if k == 0:
            return np.zeros((0,)), np.zeros((0,))
        idx = rng.choice(len(self), size=k, replace=False)
        return np.stack([self._images[i] for i in idx]), np.stack([self._masks[i] for i in idx])

    def state_arrays(self) -> Dict[str, np.ndarray]:
        if not self._images:
            return {}
        return {"images": np.stack(self._images), "masks": np.stack(self._masks).astype(np.uint8)}

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], next_slot: int) -> None:
        self._images = list(np.array(arrays["images"])) if "images" in arrays else []
        self._masks = list(np.array(arrays["masks"])) if "masks" in arrays else []
        self._next = int(next_slot)

    @property
    def next_slot(self) -> int:
        return self._next


def mix_batch(
    images: np.ndarray,
    masks: np.ndarray,
    buffer: HistoryBuffer,
    fraction: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, int]:
    """Swap ``floor(fraction * B)`` fresh items for buffered ones, then push
    the fresh items. Returns the mixed images, masks and the swap count."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    b = len(images)
    want = int(np.floor(fraction * b))
    old_imgs, old_masks = buffer.sample(want, rng)
    n_old = len(old_imgs) if want else 0
    out_imgs, out_masks = images, masks
    if n_old:
        slots = rng.choice(b, size=n_old, replace=False)
        out_imgs = images.copy()
        out_masks = masks.copy()
        out_imgs[slots] = old_imgs
        out_masks[slots] = old_masks
    buffer.push(images, masks)
    return out_imgs, out_masks, n_old
