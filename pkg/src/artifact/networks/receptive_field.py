from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from ..autodiff import Tensor, backward, ops
from .spec import LayerSpec, NetworkSpec, SpecError, parse_layers

# The overlapping-encoder ablation is documented elsewhere with a 15-pixel
# overlap; the recurrence below gives receptive field 33, stride 16, i.e. 17.
OVERLAP_NOTE = (
    "note: for the 3x3 stride-2 encoder the recurrence gives overlap 33-16=17; "
    "an overlap of 15 pixels is sometimes quoted for this design"
)


@dataclass(frozen=True)
class RFSummary:
    receptive_field: int
    effective_stride: int

    @property
    def overlap(self) -> int:
        return self.receptive_field - self.effective_stride

    def __str__(self) -> str:
        return f"rf={self.receptive_field} stride={self.effective_stride} overlap={self.overlap}"


def receptive_field(spec: Union[NetworkSpec, Iterable[LayerSpec], str]) -> RFSummary:
    """r <- r + (k - 1) * j, j <- j * s over a conv-only stack."""
    if isinstance(spec, str):
        layers = parse_layers(spec)
    elif isinstance(spec, NetworkSpec):
        layers = spec.layers
    else:
        layers = list(spec)
    r, j = 1, 1
    for i, layer in enumerate(layers):
        if layer.kind != "conv":
            raise SpecError(f"layer {i} ({layer.notation()}) is not a plain convolution")
        r += (layer.kernel - 1) * j
        j *= layer.stride
    return RFSummary(r, j)


def empirical_receptive_field(encoder, image_size: int, site: tuple | None = None) -> RFSummary:
    """Measure receptive field and stride of a built encoder by backprop.

    The input-gradient support of one bottleneck entry gives its receptive
    field; the shift of that support between horizontally adjacent entries
    gives the stride. Pick an interior ``site`` so padding does not clip.
    """
    rng = np.random.default_rng(0)
    x_np = rng.standard_normal((1, encoder.spec.in_channels, image_size, image_size))
    out_h, out_w = encoder.out_hw(image_size, image_size)
    if site is None:
        site = (out_h // 2, out_w // 2)
    boxes = []
    for dj in (0, 1):
        x = Tensor(x_np.copy(), requires_grad=True)
        # float64 copies of the parameters keep tiny gradients from underflowing
        feat = _encode64(encoder, x)
        sel = np.zeros(feat.shape)
        sel[0, :, site[0], site[1] + dj] = 1.0
        backward(ops.sum(ops.mul(feat, Tensor(sel))))
        support = np.abs(x.grad[0]).sum(axis=0) > 0
        rows = np.where(support.any(axis=1))[0]
        cols = np.where(support.any(axis=0))[0]
        boxes.append((rows.min(), rows.max(), cols.min(), cols.max()))
    (r0, r1, c0, c1), (_, _, c0b, _) = boxes
    size = max(r1 - r0 + 1, c1 - c0 + 1)
    return RFSummary(int(size), int(c0b - c0))


def _encode64(encoder, x: Tensor) -> Tensor:
    h = x
    for block in encoder.blocks:
        layer = block._layer
        w = Tensor(block.conv.w.data.astype(np.float64))
        b = Tensor(block.conv.b.data.astype(np.float64))
        h = ops.conv2d(h, w, b, block.conv._stride, "same")
        if block.norm is not None:
            st = block.norm.bn
            scale = st.gamma.data / np.sqrt(st.running_var + st.eps)
            shift = st.beta.data - st.running_mean * scale
            h = ops.add(ops.mul(h, Tensor(scale.astype(np.float64)[None, :, None, None])), Tensor(shift.astype(np.float64)[None, :, None, None]))
        h = ops.activation(h, layer.activation)
    return h
