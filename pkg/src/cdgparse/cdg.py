"""Class-distribution-guided feature module.

The module squeezes a feature map along each spatial axis, reduces channels
through a small 1D bottleneck, predicts per-axis class distributions (the
supervised heads) and per-axis sigmoid gates, broadcasts the gates back to
the full grid, blends them with two learned scalars into a spatial guidance
map, and injects the guidance by elementwise multiply + concat + fused conv.

Guidance is built from (H + W) x C pre-broadcast elements only, which is the
whole point: it grows linearly with image size where a dense pairwise
attention map would grow as (H * W)^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import HEIGHT, WIDTH, Graph, Node
from .nn import (
    BnParams,
    Conv1dParams,
    Conv2dParams,
    apply_bn,
    apply_conv1d,
    apply_conv2d,
    bn_buffers,
    bn_named,
    conv_named,
    init_bn,
    init_conv1d,
    init_conv2d,
)


@dataclass
class CdgParams:
    """Learnable state of the guided module for C feature channels and N classes.

    Both axes carry a k=3 bottleneck conv (C -> C/2) with batch norm, a k=3
    distribution head (C/2 -> N) and a k=7 gate conv (C/2 -> C); ``alpha``
    and ``beta`` weight the two broadcast gates, and ``fuse`` is the 3x3
    conv + BN squashing the concatenated 2C channels back to C.
    """

    reduce_h: Conv1dParams
    reduce_bn_h: BnParams
    reduce_v: Conv1dParams
    reduce_bn_v: BnParams
    dist_head_h: Conv1dParams
    dist_head_v: Conv1dParams
    gate_h: Conv1dParams
    gate_v: Conv1dParams
    alpha: np.ndarray  # rank-0 scalar
    beta: np.ndarray  # rank-0 scalar
    fuse: Conv2dParams
    fuse_bn: BnParams

    @property
    def channels(self) -> int:
        return self.reduce_h.weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.dist_head_h.weight.shape[2]

    def named_parameters(self, prefix: str = "cdg") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        out.update(conv_named(self.reduce_h, f"{prefix}.reduce_h"))
        out.update(bn_named(self.reduce_bn_h, f"{prefix}.reduce_bn_h"))
        out.update(conv_named(self.reduce_v, f"{prefix}.reduce_v"))
        out.update(bn_named(self.reduce_bn_v, f"{prefix}.reduce_bn_v"))
        out.update(conv_named(self.dist_head_h, f"{prefix}.dist_head_h"))
        out.update(conv_named(self.dist_head_v, f"{prefix}.dist_head_v"))
        out.update(conv_named(self.gate_h, f"{prefix}.gate_h"))
        out.update(conv_named(self.gate_v, f"{prefix}.gate_v"))
        out[f"{prefix}.alpha"] = self.alpha
        out[f"{prefix}.beta"] = self.beta
        out.update(conv_named(self.fuse, f"{prefix}.fuse"))
        out.update(bn_named(self.fuse_bn, f"{prefix}.fuse_bn"))
        return out

    def named_buffers(self, prefix: str = "cdg") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        out.update(bn_buffers(self.reduce_bn_h, f"{prefix}.reduce_bn_h"))
        out.update(bn_buffers(self.reduce_bn_v, f"{prefix}.reduce_bn_v"))
        out.update(bn_buffers(self.fuse_bn, f"{prefix}.fuse_bn"))
        return out


@dataclass
class CdgOutput:
    """Forward products kept around for the loss and for inspection."""

    feature: Node  # guided output feature, [H, W, C]
    dist_h: Node  # predicted horizontal class distribution, [W, N], in (0, 1)
    dist_v: Node  # predicted vertical class distribution, [H, N], in (0, 1)
    guidance: Node  # blended spatial guidance map, [H, W, C]
    gate_h: Node  # pre-broadcast horizontal gate, [W, C], in (0, 1)
    gate_v: Node  # pre-broadcast vertical gate, [H, C], in (0, 1)


def init_params(channels: int, num_classes: int, seed: int) -> CdgParams:
    """Seeded initialization: conv weights uniform in +-sqrt(6 / fan_in),
    zero biases, identity batch norm, alpha = beta = 0.5 (balanced blend)."""
    if channels <= 0 or channels % 2 != 0:
        raise ValueError(f"channels must be even and positive, got {channels}")
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    half = channels // 2
    rng = np.random.default_rng(seed)
    return CdgParams(
        reduce_h=init_conv1d(rng, 3, channels, half),
        reduce_bn_h=init_bn(half),
        reduce_v=init_conv1d(rng, 3, channels, half),
        reduce_bn_v=init_bn(half),
        dist_head_h=init_conv1d(rng, 3, half, num_classes),
        dist_head_v=init_conv1d(rng, 3, half, num_classes),
        gate_h=init_conv1d(rng, 7, half, channels),
        gate_v=init_conv1d(rng, 7, half, channels),
        alpha=np.array(0.5, dtype=np.float32),
        beta=np.array(0.5, dtype=np.float32),
        fuse=init_conv2d(rng, 3, 3, 2 * channels, channels),
        fuse_bn=init_bn(channels),
    )


def cdg_forward(g: Graph, x: Node, params: CdgParams, mode: str = "train", prefix: str = "cdg") -> CdgOutput:
    """Run the guided module on a feature node of shape [H, W, C] (an extra
    leading batch axis is allowed). Parameters are bound into ``g`` as
    trainable leaves under ``prefix``."""
    if x.value.ndim not in (3, 4):
        raise ValueError(f"cdg_forward: feature must be rank 3 or 4, got {x.value.ndim}")
    c = x.value.shape[-1]
    if c != params.channels:
        raise ValueError(f"cdg_forward: feature has {c} channels, params expect {params.channels}")
    h, w = x.value.shape[-3], x.value.shape[-2]

    # Horizontal branch: squeeze out the height axis, leaving a width profile.
    pooled_h = g.axis_avg_pool(x, HEIGHT)  # [W, C]
    reduced_h = g.relu(
        apply_bn(g, apply_conv1d(g, pooled_h, params.reduce_h, f"{prefix}.reduce_h"), params.reduce_bn_h, f"{prefix}.reduce_bn_h", mode)
    )
    dist_h = g.sigmoid(apply_conv1d(g, reduced_h, params.dist_head_h, f"{prefix}.dist_head_h"))  # [W, N]
    gate_h = g.sigmoid(apply_conv1d(g, reduced_h, params.gate_h, f"{prefix}.gate_h"))  # [W, C]
    gate_h_map = g.broadcast_upsample(gate_h, HEIGHT, h)

    # Vertical branch, symmetric: squeeze out the width axis.
    pooled_v = g.axis_avg_pool(x, WIDTH)  # [H, C]
    reduced_v = g.relu(
        apply_bn(g, apply_conv1d(g, pooled_v, params.reduce_v, f"{prefix}.reduce_v"), params.reduce_bn_v, f"{prefix}.reduce_bn_v", mode)
    )
    dist_v = g.sigmoid(apply_conv1d(g, reduced_v, params.dist_head_v, f"{prefix}.dist_head_v"))  # [H, N]
    gate_v = g.sigmoid(apply_conv1d(g, reduced_v, params.gate_v, f"{prefix}.gate_v"))  # [H, C]
    gate_v_map = g.broadcast_upsample(gate_v, WIDTH, w)

    alpha = g.param(f"{prefix}.alpha", params.alpha)
    beta = g.param(f"{prefix}.beta", params.beta)
    guidance = g.add(g.scale(gate_h_map, alpha), g.scale(gate_v_map, beta))

    gated = g.mul(x, guidance)
    merged = g.concat_channels(x, gated)
    fused = apply_conv2d(g, merged, params.fuse, f"{prefix}.fuse")
    feature = g.relu(apply_bn(g, fused, params.fuse_bn, f"{prefix}.fuse_bn", mode))
    return CdgOutput(feature, dist_h, dist_v, guidance, gate_h, gate_v)


def guidance_memory(h: int, w: int, c: int) -> dict[str, int]:
    """Element counts backing the efficiency claim: the pre-broadcast guidance
    profiles need (H + W) * C elements, a dense pairwise attention map needs
    (H * W)^2."""
    if h < 1 or w < 1 or c < 1:
        raise ValueError(f"dimensions must be positive, got ({h}, {w}, {c})")
    return {"cdg": (h + w) * c, "attention_reference": (h * w) ** 2}
