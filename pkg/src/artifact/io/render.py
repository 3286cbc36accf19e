"""Tiled image grids written as binary PPM (P6)."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

BORDER = 2
COLORS = {"real": (0, 200, 0), "corrupt": (220, 0, 0)}


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def compose_grid(
    images: np.ndarray,
    layout: tuple,
    border_tags: Optional[Sequence[Optional[str]]] = None,
    masks: Optional[Sequence[Optional[np.ndarray]]] = None,
) -> np.ndarray:
    """Tile (n, 3, h, w) images in [0, 1] into an (H, W, 3) uint8 canvas.

    With ``border_tags`` every cell gets a 2-pixel frame, colored green for
    ``"real"``, red for ``"corrupt"`` and black for ``None``. ``masks`` adds a
    keep-mask inset (white = kept, black = dropped) in a cell's bottom-left.
    """
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1] not in (1, 3):
        raise ValueError(f"images must be (n, 1|3, h, w), got {images.shape}")
    rows, cols = layout
    n, _, h, w = images.shape
    if n > rows * cols:
        raise ValueError(f"{n} images do not fit a {rows}x{cols} grid")
    b = BORDER if border_tags is not None else 0
    ch, cw = h + 2 * b, w + 2 * b
    canvas = np.zeros((rows * ch, cols * cw, 3), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        y0, x0 = r * ch, c * cw
        if b:
            tag = border_tags[i] if i < len(border_tags) else None
            canvas[y0 : y0 + ch, x0 : x0 + cw] = COLORS.get(tag, (0, 0, 0))
        cell = _to_u8(np.broadcast_to(images[i], (3, h, w))).transpose(1, 2, 0)
        if masks is not None and i < len(masks) and masks[i] is not None:
            cell = cell.copy()
            _inset(cell, np.asarray(masks[i]))
        canvas[y0 + b : y0 + b + h, x0 + b : x0 + b + w] = cell
    return canvas


def _inset(cell: np.ndarray, mask: np.ndarray) -> None:
    h, w = cell.shape[:2]
    m, n = mask.shape[-2:]
    mask = mask.reshape(m, n)
    # integer upscale to roughly a quarter of the image side
    f = max(1, min(h, w) // (4 * max(m, n)))
    tile = np.repeat(np.repeat(mask > 0.5, f, 0), f, 1)
    th, tw = tile.shape
    cell[h - th :, :tw] = np.where(tile[..., None], 255, 0).astype(np.uint8)


def write_ppm(path, canvas: np.ndarray) -> None:
    canvas = np.asarray(canvas, dtype=np.uint8)
    h, w = canvas.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(canvas).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a P6 file written by :func:`write_ppm`; returns (H, W, 3) uint8."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before the raster
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 file")
    w, h = int(tokens[1]), int(tokens[2])
    raster = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos)
    return raster.reshape(h, w, 3).copy()


def render_grid(images, layout, path, border_tags=None, masks=None) -> np.ndarray:
    canvas = compose_grid(images, layout, border_tags, masks)
    write_ppm(path, canvas)
    return canvas
