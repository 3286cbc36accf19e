"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_gradient(f: Callable[[], Tensor], x: Tensor, index: tuple, h: float = 1e-3) -> float:
    orig = x.data[index]
    x.data[index] = orig + h
    fp = float(f().data)
    x.data[index] = orig - h
    fm = float(f().data)
    x.data[index] = orig
    return (fp - fm) / (2.0 * h)


def max_relative_error(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-3,
    samples: int | None = 20,
    rng: np.random.Generator | None = None,
    floor: float = 1e-3,
) -> float:
    """Largest relative error between analytic and numerical gradients.

    ``f`` rebuilds the scalar output from the current contents of ``inputs``.
    At most ``samples`` elements per input are probed (all if None). The
    denominator is ``max(|analytic|, |numeric|, floor)`` so elements with a
    vanishing gradient are compared in absolute terms.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    backward(f(), wrt=inputs)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = np.arange(t.size)
        if samples is not None and t.size > samples:
            flat = rng.choice(t.size, size=samples, replace=False)
        for k in flat:
            idx = np.unravel_index(int(k), t.shape)
            num = numerical_gradient(f, t, idx, h)
            a = float(ga[idx])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst
