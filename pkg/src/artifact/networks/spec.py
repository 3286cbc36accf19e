"""Declarative layer specs and the ``(filters)kernel c|rc stride`` notation.

``(64)3c2`` is a 3x3 convolution with 64 filters and stride 2; ``(256)3rc2``
is a resize-convolution that bilinearly doubles the resolution before a
stride-1 3x3 convolution.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import List

LAYER_KINDS = ("conv", "resize-conv", "dense", "mask-head")
PRESETS = ("paper-128", "desk-32", "desk-64")

_TOKEN = re.compile(r"^\((\d+)\)(\d+)(rc|c)(\d+)$")


class SpecError(ValueError):
    """Raised for malformed or incompatible network specs."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int
    kernel: int = 3
    stride: int = 1
    batchnorm: bool = True
    activation: str = "leaky_relu_0.1"

    def notation(self) -> str:
        if self.kind == "conv":
            return f"({self.filters}){self.kernel}c{self.stride}"
        if self.kind == "resize-conv":
            return f"({self.filters}){self.kernel}rc{self.stride}"
        return f"{self.kind}({self.filters})"


@dataclass
class NetworkSpec:
    layers: List[LayerSpec]
    preset: str = "desk-32"
    in_channels: int = 3

    def notation(self) -> str:
        return "-".join(layer.notation() for layer in self.layers)


def parse_layer(token: str, **kwargs) -> LayerSpec:
    m = _TOKEN.match(token.strip())
    if not m:
        raise SpecError(f"cannot parse layer {token!r}; expected e.g. '(32)3c1' or '(256)3rc2'")
    filters, kernel, kind, stride = int(m[1]), int(m[2]), m[3], int(m[4])
    return LayerSpec(kind="conv" if kind == "c" else "resize-conv", filters=filters, kernel=kernel, stride=stride, **kwargs)


def parse_layers(text: str, **kwargs) -> List[LayerSpec]:
    tokens = [t for t in text.replace(" ", "").split("-") if t]
    if not tokens:
        raise SpecError("empty network spec")
    return [parse_layer(t, **kwargs) for t in tokens]


@dataclass(frozen=True)
class Preset:
    image_size: int
    encoder: str
    decoder: str
    discriminator: str
    disc_hidden: int
    encoder_3x3: str = field(default="")


_PRESETS = {
    "paper-128": Preset(
        image_size=128,
        encoder="(32)3c1-(64)2c2-(128)2c2-(256)2c2-(512)2c2",
        decoder="(256)3rc2-(128)3rc2-(64)3rc2-(32)3rc2-(3)3c1",
        discriminator="(96)11c4-(256)5c2-(384)3c2-(384)3c1-(256)3c1",
        disc_hidden=4096,
    ),
    "desk-64": Preset(
        image_size=64,
        encoder="(16)3c1-(32)2c2-(64)2c2-(64)2c2-(128)2c2",
        decoder="(64)3rc2-(64)3rc2-(32)3rc2-(16)3rc2-(3)3c1",
        discriminator="(32)5c2-(64)3c2-(96)3c2-(96)3c1-(64)3c1",
        disc_hidden=512,
    ),
    "desk-32": Preset(
        image_size=32,
        encoder="(16)3c1-(32)2c2-(64)2c2-(64)2c2-(128)2c2",
        decoder="(64)3rc2-(64)3rc2-(32)3rc2-(16)3rc2-(3)3c1",
        discriminator="(32)5c2-(64)3c2-(96)3c1-(96)3c1-(64)3c2",
        disc_hidden=256,
    ),
}


def get_preset(name: str) -> Preset:
    try:
        return _PRESETS[name]
    except KeyError:
        raise SpecError(f"unknown scale preset {name!r}; choose from {PRESETS}") from None


def encoder_spec(preset: str, kernel: int = 2, notation: str | None = None) -> NetworkSpec:
    """Encoder: BN + leaky-ReLU after every layer.

    ``kernel=3`` swaps the 2x2 stride-2 layers for 3x3 ones (overlapping
    receptive fields).
    """
    layers = parse_layers(notation or get_preset(preset).encoder)
    if kernel != 2:
        layers = [replace(l, kernel=kernel) if l.stride == 2 else l for l in layers]
    return NetworkSpec(layers=layers, preset=preset, in_channels=3)


def decoder_spec(preset: str, in_channels: int, notation: str | None = None) -> NetworkSpec:
    """Decoder: BN on every layer except the last; leaky-ReLU after all."""
    layers = parse_layers(notation or get_preset(preset).decoder)
    layers[-1] = replace(layers[-1], batchnorm=False)
    return NetworkSpec(layers=layers, preset=preset, in_channels=in_channels)


def discriminator_spec(preset: str, notation: str | None = None) -> NetworkSpec:
    """Discriminator trunk: ReLU throughout, batch norm only after the last conv."""
    layers = parse_layers(notation or get_preset(preset).discriminator, batchnorm=False, activation="relu")
    layers[-1] = replace(layers[-1], batchnorm=True)
    return NetworkSpec(layers=layers, preset=preset, in_channels=3)


def validate(spec: NetworkSpec) -> None:
    for i, layer in enumerate(spec.layers):
        if layer.kind not in LAYER_KINDS:
            raise SpecError(f"layer {i}: unknown kind {layer.kind!r}")
        if layer.filters < 1 or layer.kernel < 1:
            raise SpecError(f"layer {i}: filters and kernel must be positive ({layer.notation()})")
        if layer.kind == "conv" and layer.stride not in (1, 2, 4):
            raise SpecError(f"layer {i}: unsupported stride {layer.stride}")
        if layer.kind == "resize-conv" and layer.stride < 1:
            raise SpecError(f"layer {i}: resize factor must be >= 1")
        if layer.kind in ("dense", "mask-head") and i != len(spec.layers) - 1:
            raise SpecError(f"layer {i}: {layer.kind} layers may only close a network")
