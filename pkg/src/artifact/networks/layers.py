from __future__ import annotations

from typing import Dict, Iterator, List, Tuple

import numpy as np

from ..autodiff import Tensor, ops
from ..autodiff.ops import BatchNormState


class Module:
    """Minimal parameter container.

    Sub-modules and parameters are discovered from attributes (lists of
    modules included) in definition order, so names are stable across builds.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and getattr(value, "_is_param", False):
                yield name, value
            elif isinstance(value, BatchNormState):
                yield f"{name}.gamma", value.gamma
                yield f"{name}.beta", value.beta
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, BatchNormState):
                yield f"{name}.running_mean", value.running_mean
                yield f"{name}.running_var", value.running_var
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [k for k in list(params) + list(buffers) if k not in state]
        if strict and missing:
            raise KeyError(f"state is missing entries: {missing[:5]}")
        for name, p in params.items():
            if name in state:
                _assign(p.data, state[name], name)
        for name, buf in buffers.items():
            if name in state:
                _assign(buf, state[name], name)

    def freeze(self) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = False
            p.grad = None

    def unfreeze(self) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = True

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())


def _assign(dst: np.ndarray, src: np.ndarray, name: str) -> None:
    if dst.shape != tuple(src.shape):
        raise ValueError(f"shape mismatch for {name}: expected {dst.shape}, got {tuple(src.shape)}")
    dst[...] = src


def parameter(data: np.ndarray) -> Tensor:
    t = Tensor(data, requires_grad=True)
    t._is_param = True
    return t


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels: int, filters: int, kernel: int, stride: int, rng: np.random.Generator, padding: str = "same"):
        self.w = parameter(he_normal(rng, (filters, in_channels, kernel, kernel), in_channels * kernel * kernel))
        self.b = parameter(np.zeros(filters, np.float32))
        self._stride = stride
        self._padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, self._stride, self._padding)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.w = parameter(he_normal(rng, (n_in, n_out), n_in))
        self.b = parameter(np.zeros(n_out, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.w, self.b)


class BatchNorm(Module):
    def __init__(self, channels: int):
        self.bn = BatchNormState.create(channels)
        self.bn.gamma._is_param = True
        self.bn.beta._is_param = True

    def __call__(self, x: Tensor, training: bool, update_stats: bool = True) -> Tensor:
        return ops.batch_norm(x, self.bn, training, update_stats=update_stats)


def flatten_names(modules: Dict[str, Module]) -> Dict[str, Tensor]:
    out: Dict[str, Tensor] = {}
    for prefix, mod in modules.items():
        for name, p in mod.named_parameters(f"{prefix}."):
            out[name] = p
    return out


def checksum(module: Module) -> List[bytes]:
    return [p.data.tobytes() for _, p in module.named_parameters()]
