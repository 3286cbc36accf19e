"""Encoder, decoder, repair network, discriminator and the forward paths that
tie them together."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..autodiff import Tensor, ops
from ..masking import CorruptionConfig, MaskGrid, corrupt_feature, sample_mask, stack_masks, upsample_mask_array
from .layers import BatchNorm, Conv2d, Dense, Module
from .spec import LayerSpec, NetworkSpec, SpecError, get_preset, validate

REPAIR_MODES = ("full", "no-repair", "ungated", "double-pass")


class ConvBlock(Module):
    """conv or resize-conv, then optional batch norm, then activation."""

    def __init__(self, layer: LayerSpec, in_channels: int, rng: np.random.Generator):
        stride = layer.stride if layer.kind == "conv" else 1
        self.conv = Conv2d(in_channels, layer.filters, layer.kernel, stride, rng)
        self.norm = BatchNorm(layer.filters) if layer.batchnorm else None
        self._layer = layer

    def out_hw(self, h: int, w: int) -> tuple:
        s = self._layer.stride
        if self._layer.kind == "resize-conv":
            return h * s, w * s
        return -(-h // s), -(-w // s)

    def __call__(self, x: Tensor, training: bool, update_stats: bool = True) -> Tensor:
        if self._layer.kind == "resize-conv" and self._layer.stride != 1:
            x = ops.resize_bilinear(x, x.shape[2] * self._layer.stride, x.shape[3] * self._layer.stride)
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x, training, update_stats)
        return ops.activation(x, self._layer.activation)


class Network(Module):
    """Sequential stack of :class:`ConvBlock` built from a :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        validate(spec)
        self.blocks: List[ConvBlock] = []
        ch = spec.in_channels
        for i, layer in enumerate(spec.layers):
            if layer.kind not in ("conv", "resize-conv"):
                raise SpecError(f"layer {i}: {layer.kind} is not allowed in a convolutional stack")
            self.blocks.append(ConvBlock(layer, ch, rng))
            ch = layer.filters
        self._spec = spec

    @property
    def spec(self) -> NetworkSpec:
        return self._spec

    @property
    def out_channels(self) -> int:
        return self._spec.layers[-1].filters

    def stage_channels(self) -> List[int]:
        return [layer.filters for layer in self._spec.layers]

    def out_hw(self, h: int, w: int) -> tuple:
        for block in self.blocks:
            h, w = block.out_hw(h, w)
        return h, w

    def __call__(
        self,
        x: Tensor,
        training: bool = False,
        hook: Optional[Callable[[int, Tensor], Tensor]] = None,
        stop: Optional[int] = None,
        update_stats: bool = True,
    ) -> Tensor:
        """Run the stack; ``hook(i, h)`` may rewrite the input of block ``i``;
        ``stop`` returns the output of the first ``stop`` blocks."""
        for i, block in enumerate(self.blocks[:stop]):
            if hook is not None:
                x = hook(i, x)
            x = block(x, training, update_stats)
        return x


def build_network(spec: NetworkSpec, rng: np.random.Generator) -> Network:
    return Network(spec, rng)


class RepairBlock(Module):
    """BN -> concat drop mask -> 3x3 conv -> leaky-ReLU -> 3x3 conv.

    Channel count is preserved so the correction can be added to its input.
    The (1 - mask) gate is applied by the caller.
    """

    def __init__(self, channels: int, rng: np.random.Generator, mask_concat: bool = True):
        self.norm = BatchNorm(channels)
        self.conv1 = Conv2d(channels + (1 if mask_concat else 0), channels, 3, 1, rng)
        self.conv2 = Conv2d(channels, channels, 3, 1, rng)
        self._mask_concat = mask_concat

    def __call__(self, h: Tensor, omega: np.ndarray, training: bool, update_stats: bool = True) -> Tensor:
        z = self.norm(h, training, update_stats)
        if self._mask_concat:
            z = ops.concat([z, Tensor(omega.astype(h.dtype, copy=False))], axis=1)
        z = ops.leaky_relu(self.conv1(z), 0.1)
        return self.conv2(z)


class RepairNetwork(Module):
    """Five repair blocks, either distributed before each decoder layer or
    stacked locally in front of the first one."""

    def __init__(self, bottleneck_channels: int, decoder: Network, rng: np.random.Generator, layout: str = "distributed"):
        if layout not in ("distributed", "local"):
            raise ValueError(f"unknown repair layout {layout!r}")
        n = len(decoder.blocks)
        if layout == "distributed":
            channels = [bottleneck_channels] + decoder.stage_channels()[: n - 1]
        else:
            channels = [bottleneck_channels] * n
        self.blocks = [RepairBlock(c, rng) for c in channels]
        self._layout = layout

    @property
    def layout(self) -> str:
        return self._layout


class Discriminator(Module):
    """Conv trunk with a real/corrupt head and a spatial mask head."""

    def __init__(self, spec: NetworkSpec, image_size: int, mask_hw: tuple, hidden: int, rng: np.random.Generator):
        self.trunk = Network(spec, rng)
        c = self.trunk.out_channels
        fh, fw = self.trunk.out_hw(image_size, image_size)
        self.fc_hidden = Dense(c * fh * fw, hidden, rng)
        self.fc_out = Dense(hidden, 1, rng)
        self.mask_head = Conv2d(c, 1, 3, 1, rng)
        self._mask_hw = tuple(mask_hw)
        self._image_size = image_size

    @property
    def mask_hw(self) -> tuple:
        return self._mask_hw

    def __call__(self, image: Tensor, training: bool = False, update_stats: bool = True) -> "DiscriminatorOutput":
        if image.shape[2:] != (self._image_size, self._image_size):
            raise ValueError(f"discriminator expects {self._image_size}x{self._image_size} images, got {image.shape[2:]}")
        feat = self.trunk(image, training, update_stats=update_stats)
        hidden = ops.relu(self.fc_hidden(ops.flatten(feat)))
        class_logit = ops.reshape(self.fc_out(hidden), (image.shape[0],))
        m = feat
        if m.shape[2:] != self._mask_hw:
            m = ops.resize_nearest(m, *self._mask_hw)
        mask_logits = ops.reshape(self.mask_head(m), (image.shape[0],) + self._mask_hw)
        return DiscriminatorOutput(class_logit, mask_logits)

    def features(self, image: Tensor, layer: int) -> Tensor:
        """Inference-mode activations after trunk conv layer ``layer`` (1-based)."""
        if not 1 <= layer <= len(self.trunk.blocks):
            raise IndexError(f"layer {layer} out of range 1..{len(self.trunk.blocks)}")
        return self.trunk(image, training=False, stop=layer)


@dataclass
class DiscriminatorOutput:
    class_logit: Tensor  # (B,)
    mask_logits: Tensor  # (B, M, N)

    @property
    def class_prob(self) -> np.ndarray:
        return ops._sigmoid(self.class_logit.data)


class Generator(Module):
    """Noise-to-image generator: dense projection to the bottleneck shape, then
    a decoder-shaped stack. Used only for the plain-GAN comparison."""

    def __init__(self, noise_dim: int, bottleneck: tuple, decoder_spec: NetworkSpec, rng: np.random.Generator):
        c, m, n = bottleneck
        self.project = Dense(noise_dim, c * m * n, rng)
        self.decoder = Network(decoder_spec, rng)
        self._bottleneck = bottleneck
        self._noise_dim = noise_dim

    @property
    def noise_dim(self) -> int:
        return self._noise_dim

    def __call__(self, z: Tensor, training: bool = True) -> Tensor:
        h = ops.leaky_relu(self.project(z), 0.1)
        h = ops.reshape(h, (z.shape[0],) + self._bottleneck)
        return self.decoder(h, training)


# ---------------------------------------------------------------------------
# forward paths
# ---------------------------------------------------------------------------
def forward_autoencode(encoder: Network, decoder: Network, x: Tensor, training: bool = False) -> Tensor:
    if x.ndim != 4 or x.shape[1] != encoder.spec.in_channels:
        raise ValueError(f"expected (N, {encoder.spec.in_channels}, H, W) input, got {x.shape}")
    return decoder(encoder(x, training), training)


@dataclass
class RepairTrace:
    """Per-stage record of the additive corrections (for instrumentation)."""

    corrections: List[np.ndarray]
    masks: List[np.ndarray]


def _as_omega(mask, batch: int, dtype) -> np.ndarray:
    if isinstance(mask, MaskGrid):
        return np.broadcast_to(mask.bits[None, None], (batch, 1) + mask.bits.shape).astype(dtype)
    if isinstance(mask, np.ndarray):
        return mask.astype(dtype, copy=False)
    return stack_masks(mask, dtype)


def forward_damage_repair(
    encoder: Network,
    decoder: Network,
    repair: Optional[RepairNetwork],
    x: Tensor,
    mask,
    mode: str = "full",
    corruption: CorruptionConfig | None = None,
    rng: np.random.Generator | None = None,
    repair_training: bool = False,
    trace: Optional[RepairTrace] = None,
    update_stats: bool = True,
) -> Tensor:
    """Corrupt the bottleneck of ``x`` with ``mask`` and decode with repair.

    ``mode``: ``full`` gates every correction by the (upsampled) drop mask,
    ``no-repair`` decodes the corrupted feature directly, ``ungated`` lets
    corrections through everywhere, ``double-pass`` feeds the full-mode output
    through the network a second time with a fresh mask drawn from ``rng``.
    The encoder and decoder always run in inference mode.
    """
    if mode not in REPAIR_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {REPAIR_MODES}")
    corruption = corruption or CorruptionConfig()
    if mode == "double-pass":
        first = forward_damage_repair(
            encoder, decoder, repair, x, mask, "full", corruption, rng, repair_training, trace, update_stats
        )
        if rng is None:
            raise ValueError("double-pass mode needs an rng for the second mask")
        omega = _as_omega(mask, x.shape[0], x.dtype)
        m, n = omega.shape[2:]
        fresh = [sample_mask(m, n, corruption, rng) for _ in range(x.shape[0])]
        return forward_damage_repair(
            encoder, decoder, repair, first, fresh, "full", corruption, rng, repair_training, trace, update_stats
        )

    phi = encoder(x, training=False)
    omega = _as_omega(mask, x.shape[0], phi.dtype)
    if omega.shape[2:] != phi.shape[2:]:
        raise ValueError(f"mask dims {omega.shape[2:]} do not match bottleneck dims {phi.shape[2:]}")
    phi_hat = corrupt_feature(phi, omega, corruption, rng)
    if mode == "no-repair" or repair is None:
        return decoder(phi_hat, training=False)

    gated = mode == "full"

    def correct(block: RepairBlock, h: Tensor) -> Tensor:
        om = upsample_mask_array(omega, h.shape[2], h.shape[3])
        corr = block(h, om, repair_training, update_stats)
        if gated:
            corr = ops.mul(Tensor(1.0 - om), corr)
        if trace is not None:
            trace.corrections.append(corr.data.copy())
            trace.masks.append(om)
        return ops.add(h, corr)

    def hook(i: int, h: Tensor) -> Tensor:
        if repair.layout == "distributed":
            return correct(repair.blocks[i], h)
        if i == 0:
            for block in repair.blocks:
                h = correct(block, h)
        return h

    return decoder(phi_hat, training=False, hook=hook)


def build_models(preset: str, rng: np.random.Generator, encoder_kernel: int = 2, layout: str = "distributed"):
    """Encoder, decoder, repair network and discriminator for a scale preset."""
    from .spec import decoder_spec, discriminator_spec, encoder_spec

    p = get_preset(preset)
    enc = Network(encoder_spec(preset, kernel=encoder_kernel), rng)
    dec = Network(decoder_spec(preset, enc.out_channels), rng)
    rep = RepairNetwork(enc.out_channels, dec, rng, layout=layout)
    mask_hw = enc.out_hw(p.image_size, p.image_size)
    disc = Discriminator(discriminator_spec(preset), p.image_size, mask_hw, p.disc_hidden, rng)
    return enc, dec, rep, disc


def bottleneck_shape(encoder: Network, image_size: int) -> tuple:
    return (encoder.out_channels,) + encoder.out_hw(image_size, image_size)


def discriminate(disc: Discriminator, image: Tensor, training: bool = False) -> DiscriminatorOutput:
    return disc(image, training)


