"""Colored geometric shapes on textured backgrounds.

The label is the shape type; position, scale, rotation and hue are random.
"""
from __future__ import annotations

import colorsys

import numpy as np

from .dataset import ImageDataset, from_float

SHAPES = ("circle", "square", "triangle", "cross", "ring", "diamond", "hbar", "vbar", "star", "ellipse")


def _shape_mask(kind: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Indicator of a unit-size shape in local coordinates (u, v) in [-1, 1]."""
    au, av = np.abs(u), np.abs(v)
    r = np.hypot(u, v)
    if kind == "circle":
        return r <= 1.0
    if kind == "square":
        return np.maximum(au, av) <= 0.8
    if kind == "triangle":
        return (v <= 0.8) & (v >= 1.7 * au - 0.9)
    if kind == "cross":
        return ((au <= 0.3) & (av <= 1.0)) | ((av <= 0.3) & (au <= 1.0))
    if kind == "ring":
        return (r <= 1.0) & (r >= 0.55)
    if kind == "diamond":
        return au + av <= 1.0
    if kind == "hbar":
        return (au <= 1.0) & (av <= 0.35)
    if kind == "vbar":
        return (au <= 0.35) & (av <= 1.0)
    if kind == "star":
        ang = np.arctan2(v, u)
        return r <= 0.55 + 0.45 * np.cos(5 * ang) ** 2
    if kind == "ellipse":
        return (u / 1.0) ** 2 + (v / 0.5) ** 2 <= 1.0
    raise ValueError(kind)


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v), dtype=np.float64)


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    # smooth two-tone gradient plus faint oriented stripes and pixel grain
    c0 = _hsv(rng.random(), 0.3 * rng.random(), 0.3 + 0.4 * rng.random())
    c1 = _hsv(rng.random(), 0.3 * rng.random(), 0.3 + 0.4 * rng.random())
    a = rng.uniform(0, 2 * np.pi)
    t = 0.5 + 0.5 * np.sin(np.cos(a) * xx * np.pi + np.sin(a) * yy * np.pi)
    img = c0[:, None, None] * t + c1[:, None, None] * (1 - t)
    b = rng.uniform(0, np.pi)
    freq = rng.uniform(4, 10)
    img += 0.06 * np.sin(2 * np.pi * freq * (np.cos(b) * xx + np.sin(b) * yy))[None]
    img += rng.normal(0, 0.03, img.shape)
    return img


def render_shape(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """One (3, size, size) float image in [0, 1]."""
    img = _background(size, rng)
    scale = rng.uniform(0.25, 0.4) * size
    cy, cx = rng.uniform(scale, size - scale, 2)
    rot = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = (yy - cy) / scale, (xx - cx) / scale
    u = np.cos(rot) * dx + np.sin(rot) * dy
    v = -np.sin(rot) * dx + np.cos(rot) * dy
    inside = _shape_mask(kind, u, v)
    color = _hsv(rng.random(), rng.uniform(0.6, 1.0), rng.uniform(0.75, 1.0))
    shade = 1.0 - 0.25 * np.clip(np.hypot(u, v), 0, 1)
    img = np.where(inside[None], color[:, None, None] * shade[None], img)
    return np.clip(img, 0.0, 1.0)


def make_synthetic_shapes(n: int, classes: int = 3, size: int = 32, seed: int | None = 0, rng=None) -> ImageDataset:
    """``n`` labeled shape images; labels are i.i.d. uniform over ``classes``."""
    if not 2 <= classes <= len(SHAPES):
        raise ValueError(f"classes must lie in 2..{len(SHAPES)}, got {classes}")
    if size not in (32, 64):
        raise ValueError(f"size must be 32 or 64, got {size}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=n).astype(np.uint8)
    pixels = np.zeros((n, 3, size, size), dtype=np.uint8)
    for i, lab in enumerate(labels):
        pixels[i] = from_float(render_shape(SHAPES[lab], size, rng))
    return ImageDataset(pixels, labels)
