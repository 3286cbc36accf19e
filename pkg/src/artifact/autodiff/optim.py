from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied in place to ``params``.

    Parameters are keyed by name so the moment buffers can be checkpointed.
    Missing gradients count as zero.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.dtype, copy=False)


class Adam:
    """Adam over a fixed, named parameter set.

    Defaults follow the training recipe: beta1 = 0.5, beta2 = 0.999,
    eps = 1e-8.
    """

    def __init__(self, params: Dict[str, Tensor], lr: float = 3e-4, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        grads = {name: p.grad for name, p in self.params.items()}
        adam_step(self.params, grads, self.state, self.lr if lr is None else lr)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            if name in self.state.m:
                out[f"m/{name}"] = self.state.m[name]
                out[f"v/{name}"] = self.state.v[name]
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], step: int) -> None:
        self.state.step = int(step)
        self.state.m.clear()
        self.state.v.clear()
        for key, arr in arrays.items():
            kind, name = key.split("/", 1)
            if name not in self.params:
                raise KeyError(f"optimizer state for unknown parameter {name!r}")
            getattr(self.state, kind)[name] = np.array(arr, dtype=self.params[name].dtype)


def parameters_finite(params: Sequence[Tensor]) -> List[bool]:
    return [bool(np.all(np.isfinite(p.data))) for p in params]
