"""Frozen-feature linear probing and cosine nearest-neighbor retrieval."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from ..autodiff import Tensor, no_grad, ops
from ..networks.model import Discriminator


@dataclass(frozen=True)
class ProbeConfig:
    layer: int = 5
    target_dim: int = 1024
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 64
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.target_dim <= 0:
            raise ValueError("target_dim must be positive")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.layer < 1:
            raise ValueError("layer index is 1-based")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ProbeResult:
    fold_accuracies: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def sd(self) -> float:
        return float(np.std(self.fold_accuracies, ddof=1)) if len(self.fold_accuracies) > 1 else 0.0

    def __str__(self) -> str:
        return f"{100 * self.mean:.2f}% +/- {100 * self.sd:.2f}"


def pooled_grid(channels: int, h: int, w: int, target_dim: int) -> tuple:
    """Pooling grid (gh, gw) whose flattened size channels*gh*gw is closest
    (in ratio) to ``target_dim``; near-square grids win ties."""
    best = None
    for gh in range(1, h + 1):
        for gw in range(1, w + 1):
            key = (round(abs(math.log(channels * gh * gw / target_dim)), 12), abs(gh - gw), gh)
            if best is None or key < best[0]:
                best = (key, gh, gw)
    return best[1], best[2]


def extract_features(disc: Discriminator, images: np.ndarray, config: ProbeConfig, batch: int = 100) -> np.ndarray:
    """Flattened, pooled activations of trunk layer ``config.layer``.

    Runs in inference mode, so batch norm reduces to the fixed affine map of
    its running statistics (equivalent to folding it into the conv).
    """
    n_layers = len(disc.trunk.blocks)
    if not 1 <= config.layer <= n_layers:
        raise IndexError(f"layer {config.layer} out of range 1..{n_layers}")
    rows = []
    with no_grad():
        for i in range(0, len(images), batch):
            feat = disc.features(Tensor(np.asarray(images[i : i + batch], dtype=np.float32)), config.layer)
            c, h, w = feat.shape[1:]
            gh, gw = pooled_grid(c, h, w, config.target_dim)
            if (gh, gw) != (h, w):
                feat = ops.adaptive_avg_pool(feat, gh, gw)
            rows.append(feat.data.reshape(len(feat.data), -1))
    if not rows:
        return np.zeros((0, 0), dtype=np.float32)
    return np.concatenate(rows)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_softmax(x: np.ndarray, y: np.ndarray, classes: int, config: ProbeConfig, rng: np.random.Generator):
    """Multinomial logistic regression with Adam and cosine learning-rate decay."""
    n, d = x.shape
    w = np.zeros((d, classes))
    b = np.zeros(classes)
    mw, vw, mb, vb = np.zeros_like(w), np.zeros_like(w), np.zeros_like(b), np.zeros_like(b)
    b1, b2, eps = 0.9, 0.999, 1e-8
    steps_per_epoch = max(1, -(-n // config.batch_size))
    total = config.epochs * steps_per_epoch
    onehot = np.eye(classes)[y]
    t = 0
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for j in range(steps_per_epoch):
            idx = perm[j * config.batch_size : (j + 1) * config.batch_size]
            p = _softmax(x[idx] @ w + b)
            g = (p - onehot[idx]) / len(idx)
            gw, gb = x[idx].T @ g, g.sum(axis=0)
            lr = 0.5 * config.lr * (1 + math.cos(math.pi * t / total))
            t += 1
            mw = b1 * mw + (1 - b1) * gw
            vw = b2 * vw + (1 - b2) * gw * gw
            mb = b1 * mb + (1 - b1) * gb
            vb = b2 * vb + (1 - b2) * gb * gb
            c1, c2 = 1 - b1**t, 1 - b2**t
            w -= lr * (mw / c1) / (np.sqrt(vw / c2) + eps)
            b -= lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
    return w, b


def linear_probe(features: np.ndarray, labels: np.ndarray, config: ProbeConfig) -> ProbeResult:
    """k-fold accuracy of a linear classifier on frozen features.

    Features are standardized with the training fold's statistics.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) != len(y):
        raise ValueError(f"{len(x)} feature rows but {len(y)} labels")
    if y.min(initial=0) < 0:
        raise ValueError("labels must be non-negative")
    classes = int(y.max()) + 1
    if len(np.unique(y)) < 2:
        raise ValueError("linear probe needs at least 2 classes")
    rng = np.random.default_rng(config.seed)
    folds = np.array_split(rng.permutation(len(y)), config.folds)
    accs = []
    for k, test in enumerate(folds):
        train = np.concatenate([f for i, f in enumerate(folds) if i != k])
        if len(np.unique(y[train])) < 2:
            raise ValueError(f"fold {k}: training split holds a single class")
        mu = x[train].mean(axis=0)
        sd = x[train].std(axis=0) + 1e-6
        xt, xs = (x[train] - mu) / sd, (x[test] - mu) / sd
        w, b = fit_softmax(xt, y[train], classes, config, np.random.default_rng([config.seed, k]))
        accs.append(float(np.mean(np.argmax(xs @ w + b, axis=1) == y[test])))
    return ProbeResult(accs)


def cosine_similarity(features: np.ndarray, query_index: int) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    q = x[query_index]
    dots = x @ q
    denom = norms * norms[query_index]
    # zero-norm rows (or a zero-norm query) have similarity 0
    return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)


def nearest_neighbors(features: np.ndarray, query_index: int, k: int):
    """Top-``k`` rows by cosine similarity to the query (query excluded).

    Returns (indices, similarities); ties go to the lower index.
    """
    n = len(features)
    if not 0 < k < n:
        raise ValueError(f"k must lie in 1..{n - 1}, got {k}")
    sims = cosine_similarity(features, query_index)
    order = [i for i in np.lexsort((np.arange(n), -sims)) if i != query_index][:k]
    idx = np.array(order, dtype=np.int64)
    return idx, sims[idx]
