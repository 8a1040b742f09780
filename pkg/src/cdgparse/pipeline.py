"""Desk-scale end-to-end pipeline: synthetic figures, a small encoder /
guided-module / decoder network, SGD with a polynomial schedule, flip and
scale augmentation, and multi-scale + flip inference averaging.

Everything is seeded; identical (seed, config, dataset) runs produce
bit-identical logs and parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node, NumericError, resize_bilinear
from .cdg import CdgOutput, CdgParams, cdg_forward, init_params
from .labels import ClassDistribution, LabelMap, SwapTable, class_distributions, edge_label, hflip, one_hot, resize_nearest
from .losses import LossWeights, cdg_loss, cross_entropy, total_loss, weighted_edge_ce
from .metrics import ConfusionAccumulator
from .nn import Conv2dParams, BnParams, apply_bn, apply_conv2d, bn_buffers, bn_named, conv_named, init_bn, init_conv2d

Sample = tuple[np.ndarray, LabelMap, SwapTable]


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 4
    base_lr: float = 3e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    flip_prob: float = 0.5
    scale_jitter: tuple[float, float] = (0.5, 1.25)
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    channels: int = 16
    num_classes: int = 5
    cdg_enabled: bool = True
    edge_head_enabled: bool = False
    crop_size: int = 64
    image_size: int = 64
    train_samples: int = 8
    val_samples: int = 0
    scales: tuple[float, ...] = (0.75, 1.0, 1.25)

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError(f"scales must be non-empty and positive, got {self.scales}")
        if self.crop_size % 4 != 0 or self.crop_size < 4:
            raise ValueError(f"crop_size must be a positive multiple of 4, got {self.crop_size}")
        if self.epochs < 1 or self.batch_size < 1 or self.train_samples < 1:
            raise ValueError("epochs, batch_size and train_samples must be >= 1")
        lo, hi = self.scale_jitter
        if lo <= 0 or hi < lo:
            raise ValueError(f"scale_jitter range ({lo}, {hi}) must be positive and ordered")


@dataclass
class ToyNet:
    """Two stride-2 conv blocks down to H/4 x W/4 x C, the optional guided
    module, a conv decoder whose logits are bilinearly upsampled back to the
    input grid, and an optional two-channel edge head."""

    enc1: Conv2dParams  # 3 -> C/2, stride 2
    enc1_bn: BnParams
    enc2: Conv2dParams  # C/2 -> C, stride 2
    enc2_bn: BnParams
    cdg: CdgParams | None
    decoder: Conv2dParams  # C -> N
    edge_head: Conv2dParams | None  # C -> 2
    channels: int
    num_classes: int

    def named_parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        out.update(conv_named(self.enc1, "enc1"))
        out.update(bn_named(self.enc1_bn, "enc1_bn"))
        out.update(conv_named(self.enc2, "enc2"))
        out.update(bn_named(self.enc2_bn, "enc2_bn"))
        if self.cdg is not None:
            out.update(self.cdg.named_parameters("cdg"))
        out.update(conv_named(self.decoder, "decoder"))
        if self.edge_head is not None:
            out.update(conv_named(self.edge_head, "edge_head"))
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        out.update(bn_buffers(self.enc1_bn, "enc1_bn"))
        out.update(bn_buffers(self.enc2_bn, "enc2_bn"))
        if self.cdg is not None:
            out.update(self.cdg.named_buffers("cdg"))
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {**self.named_parameters(), **self.named_buffers()}


def init_toynet(
    channels: int,
    num_classes: int,
    seed: int,
    cdg_enabled: bool = True,
    edge_enabled: bool = False,
) -> ToyNet:
    """Seeded init. Component streams are independent, so toggling the guided
    module or the edge head never changes the other components' draws."""
    if channels <= 0 or channels % 2 != 0:
        raise ValueError(f"channels must be even and positive, got {channels}")
    enc_ss, dec_ss, edge_ss, cdg_ss = np.random.SeedSequence(seed).spawn(4)
    enc_rng = np.random.default_rng(enc_ss)
    half = channels // 2
    return ToyNet(
        enc1=init_conv2d(enc_rng, 3, 3, 3, half),
        enc1_bn=init_bn(half),
        enc2=init_conv2d(enc_rng, 3, 3, half, channels),
        enc2_bn=init_bn(channels),
        cdg=init_params(channels, num_classes, int(cdg_ss.generate_state(1)[0])) if cdg_enabled else None,
        decoder=init_conv2d(np.random.default_rng(dec_ss), 3, 3, channels, num_classes),
        edge_head=init_conv2d(np.random.default_rng(edge_ss), 3, 3, channels, 2) if edge_enabled else None,
        channels=channels,
        num_classes=num_classes,
    )


def forward(g: Graph, net: ToyNet, image: Node, mode: str = "train") -> tuple[Node, CdgOutput | None, Node | None]:
    """Wire the network on an image node of shape [H, W, 3] (or batched).
    Returns full-resolution logits, the guided-module products when enabled,
    and edge logits when that head exists."""
    h, w = image.value.shape[-3], image.value.shape[-2]
    if h % 4 != 0 or w % 4 != 0:
        raise ValueError(f"image dims ({h}, {w}) must be divisible by 4")
    x = g.relu(apply_bn(g, apply_conv2d(g, image, net.enc1, "enc1", stride=2), net.enc1_bn, "enc1_bn", mode))
    x = g.relu(apply_bn(g, apply_conv2d(g, x, net.enc2, "enc2", stride=2), net.enc2_bn, "enc2_bn", mode))
    cdg_out = cdg_forward(g, x, net.cdg, mode) if net.cdg is not None else None
    feat = cdg_out.feature if cdg_out is not None else x
    logits = g.upsample_bilinear(apply_conv2d(g, feat, net.decoder, "decoder"), h, w)
    edge_logits = None
    if net.edge_head is not None:
        edge_logits = g.upsample_bilinear(apply_conv2d(g, feat, net.edge_head, "edge_head"), h, w)
    return logits, cdg_out, edge_logits


@dataclass
class ForwardResult:
    logits: np.ndarray
    dist_h: np.ndarray | None
    dist_v: np.ndarray | None
    guidance: np.ndarray | None
    edge_logits: np.ndarray | None


def run_forward(net: ToyNet, image: np.ndarray, mode: str = "eval") -> ForwardResult:
    """Graph-free convenience wrapper returning plain arrays."""
    g = Graph()
    logits, cdg_out, edge_logits = forward(g, net, g.constant(image), mode)
    return ForwardResult(
        logits=logits.value,
        dist_h=cdg_out.dist_h.value if cdg_out else None,
        dist_v=cdg_out.dist_v.value if cdg_out else None,
        guidance=cdg_out.guidance.value if cdg_out else None,
        edge_logits=edge_logits.value if edge_logits is not None else None,
    )


# ----------------------------------------------------------------------
# synthetic data
# ----------------------------------------------------------------------

# Background, head, torso, left limb, right limb.
_PALETTE = np.array(
    [
        [0.15, 0.16, 0.19],
        [0.89, 0.74, 0.58],
        [0.22, 0.48, 0.84],
        [0.84, 0.26, 0.21],
        [0.95, 0.79, 0.22],
    ],
    dtype=np.float32,
)
_NOISE_SIGMA = 0.01
LEFT_LIMB, RIGHT_LIMB = 3, 4


def synth_dataset(seed: int, count: int, height: int, width: int, num_classes: int) -> list[Sample]:
    """Procedural stick figures: head disk (1) above a torso rectangle (2)
    flanked by left/right limb rectangles (3, 4, a swap pair), drawn in
    distinct fill colors with seeded pixel noise."""
    if num_classes < 5:
        raise ValueError(f"num_classes must be >= 5 (background, head, torso, 2 limbs), got {num_classes}")
    if height < 16 or width < 16:
        raise ValueError(f"image size ({height}, {width}) too small to place the figure parts")
    swaps = SwapTable(((LEFT_LIMB, RIGHT_LIMB),))
    samples: list[Sample] = []
    for child in np.random.SeedSequence(seed).spawn(count):
        rng = np.random.default_rng(child)
        label = np.zeros((height, width), dtype=np.int64)

        torso_top = int(rng.uniform(0.36, 0.48) * height)
        torso_h = int(rng.uniform(0.30, 0.42) * height)
        torso_w = int(rng.uniform(0.28, 0.38) * width)
        cx = int(rng.uniform(0.42, 0.58) * width)
        t_left, t_right = cx - torso_w // 2, cx + (torso_w + 1) // 2
        label[torso_top : torso_top + torso_h, t_left:t_right] = 2

        radius = int(rng.uniform(0.12, 0.16) * min(height, width))
        head_cy = torso_top - radius - 1
        yy, xx = np.ogrid[:height, :width]
        head = (yy - head_cy) ** 2 + (xx - cx) ** 2 <= radius**2
        label[head & (label == 0)] = 1

        limb_w = max(3, int(rng.uniform(0.18, 0.22) * width))
        limb_h = max(4, int(rng.uniform(0.36, 0.46) * height))
        gap = 0  # limbs attach to the torso; thin background slivers are unlearnable at feature resolution
        l_right = t_left - gap
        label[torso_top : torso_top + limb_h, max(0, l_right - limb_w) : l_right] = LEFT_LIMB
        r_left = t_right + gap
        label[torso_top : torso_top + limb_h, r_left : min(width, r_left + limb_w)] = RIGHT_LIMB

        image = _PALETTE[label] + rng.normal(0.0, _NOISE_SIGMA, size=(height, width, 3))
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        samples.append((image, LabelMap(label, num_classes), swaps))
    return samples


# ----------------------------------------------------------------------
# augmentation
# ----------------------------------------------------------------------


def augment(image: np.ndarray, label: LabelMap, swaps: SwapTable, cfg: TrainConfig, rng: np.random.Generator) -> tuple[np.ndarray, LabelMap]:
    """Scale jitter, crop or pad back to crop_size, then a laterality-aware
    horizontal flip. Padding uses zeros for the image and background for the
    label."""
    lo, hi = cfg.scale_jitter
    s = rng.uniform(lo, hi)
    h, w = label.pixels.shape
    nh, nw = max(1, round(h * s)), max(1, round(w * s))
    if (nh, nw) != (h, w):
        image = resize_bilinear(image, nh, nw)
        label = resize_nearest(label, nh, nw)

    crop = cfg.crop_size
    y0 = int(rng.integers(0, nh - crop + 1)) if nh > crop else 0
    x0 = int(rng.integers(0, nw - crop + 1)) if nw > crop else 0
    image = image[y0 : y0 + crop, x0 : x0 + crop]
    pixels = label.pixels[y0 : y0 + crop, x0 : x0 + crop]
    pad_y, pad_x = crop - image.shape[0], crop - image.shape[1]
    if pad_y or pad_x:
        image = np.pad(image, ((0, pad_y), (0, pad_x), (0, 0)))
        pixels = np.pad(pixels, ((0, pad_y), (0, pad_x)))
    label = LabelMap(pixels, label.num_classes)

    if rng.random() < cfg.flip_prob:
        image, label = hflip(image, label, swaps)
    return image, label


def _distribution_targets(label: LabelMap, feat_h: int, feat_w: int) -> tuple[ClassDistribution, ClassDistribution]:
    # Supervision happens at the resolution the guided module actually sees.
    small = resize_nearest(label, feat_h, feat_w)
    return class_distributions(one_hot(small), normalize=True)


# ----------------------------------------------------------------------
# optimization
# ----------------------------------------------------------------------


def poly_lr(base: float, cur_iter: int, total_iter: int, power: float) -> float:
    """base * (1 - cur/total) ** power."""
    if cur_iter < 0 or cur_iter > total_iter:
        raise ValueError(f"cur_iter {cur_iter} outside [0, {total_iter}]")
    return base * (1.0 - cur_iter / total_iter) ** power


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
    velocity: dict[str, np.ndarray],
) -> None:
    """Classical momentum update in place: v = m*v + g + wd*w; w -= lr*v.
    Velocity buffers persist across steps via ``velocity``."""
    for name, w in params.items():
        grad = grads[name]
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for parameter {name!r} (lr={lr})")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(w)
        v *= momentum
        v += grad + weight_decay * w
        w -= lr * v


# ----------------------------------------------------------------------
# training and inference
# ----------------------------------------------------------------------


def _train_miou(net: ToyNet, dataset: Sequence[Sample], num_classes: int) -> float:
    acc = ConfusionAccumulator(num_classes)
    for image, label, _ in dataset:
        result = run_forward(net, image, mode="eval")
        acc.update(result.logits.argmax(axis=-1), label.pixels)
    return acc.report().mean_iou


def train(cfg: TrainConfig, dataset: Sequence[Sample]) -> tuple[ToyNet, list[dict]]:
    """Seeded training loop over shuffled minibatches.

    Each step augments its samples, rebuilds the graph, applies the composite
    objective, and takes one SGD step at the polynomial learning rate. The
    per-epoch log records mean loss terms, the last learning rate, and the
    training-set mIoU measured in eval mode.
    """
    cfg.validate()
    if not dataset:
        raise ValueError("dataset is empty")
    net = init_toynet(cfg.channels, cfg.num_classes, cfg.seed, cfg.cdg_enabled, cfg.edge_head_enabled)
    params = net.named_parameters()
    velocity: dict[str, np.ndarray] = {}
    shuffle_ss, aug_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    aug_rng = np.random.default_rng(aug_ss)

    steps_per_epoch = -(-len(dataset) // cfg.batch_size)
    total_iter = cfg.epochs * steps_per_epoch
    feat = cfg.crop_size // 4
    logs: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(dataset))
        sums = {"total": 0.0, "parsing": 0.0, "edge": 0.0, "cdg": 0.0}
        lr = cfg.base_lr
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
            images, labels, targets_h, targets_v, edges = [], [], [], [], []
            for image, label, swaps in batch:
                image, label = augment(image, label, swaps, cfg, aug_rng)
                images.append(image)
                labels.append(label.pixels)
                if cfg.cdg_enabled:
                    th, tv = _distribution_targets(label, feat, feat)
                    targets_h.append(th)
                    targets_v.append(tv)
                if cfg.edge_head_enabled:
                    edges.append(edge_label(label))

            g = Graph()
            image_node = g.constant(np.stack(images))
            label_arr = np.stack(labels)
            logits, cdg_out, edge_logits = forward(g, net, image_node, mode="train")
            parsing = cross_entropy(g, logits, label_arr)
            edge = weighted_edge_ce(g, edge_logits, np.stack(edges)) if cfg.edge_head_enabled else None
            dist = (
                cdg_loss(g, cdg_out.dist_h, cdg_out.dist_v, targets_h, targets_v, cfg.weights)
                if cfg.cdg_enabled
                else 0.0
            )
            loss = total_loss(parsing, edge, dist, cfg.weights, cfg.edge_head_enabled)

            lr = poly_lr(cfg.base_lr, step, total_iter, cfg.poly_power)
            try:
                grads = g.backward(loss)
                sgd_step(params, grads, lr, cfg.momentum, cfg.weight_decay, velocity)
            except NumericError as err:
                raise NumericError(f"epoch {epoch}, step {step}: {err}") from err
            step += 1

            sums["total"] += loss.item()
            sums["parsing"] += parsing.item()
            sums["edge"] += edge.item() if edge is not None else 0.0
            sums["cdg"] += dist.item() if isinstance(dist, Node) else 0.0

        logs.append(
            {
                "epoch": epoch,
                "lr": lr,
                "loss_total": sums["total"] / steps_per_epoch,
                "loss_parsing": sums["parsing"] / steps_per_epoch,
                "loss_edge": sums["edge"] / steps_per_epoch,
                "loss_cdg": sums["cdg"] / steps_per_epoch,
                "train_miou": _train_miou(net, dataset, cfg.num_classes),
            }
        )
    return net, logs


def softmax(logits: np.ndarray) -> np.ndarray:
    x = logits.astype(np.float64)
    x -= x.max(axis=-1, keepdims=True)
    z = np.exp(x)
    return z / z.sum(axis=-1, keepdims=True)


def _scaled_size(dim: int, scale: float) -> int:
    return max(4, int(round(dim * scale / 4.0)) * 4)


def infer_multiscale_flip(
    net: ToyNet,
    image: np.ndarray,
    scales: Sequence[float] = (1.0,),
    swaps: SwapTable | None = None,
    use_flip: bool = False,
) -> LabelMap:
    """Average softmax probabilities over an image pyramid (and mirrored
    copies whose probability maps are un-mirrored with the class-id swap),
    then take the per-pixel argmax."""
    if any(s <= 0 for s in scales):
        raise ValueError(f"scales must be positive, got {tuple(scales)}")
    swaps = swaps or SwapTable()
    h, w = image.shape[:2]
    n = net.num_classes
    perm = swaps.permutation(n)
    acc = np.zeros((h, w, n), dtype=np.float64)
    count = 0
    for s in scales:
        scaled = resize_bilinear(image, _scaled_size(h, s), _scaled_size(w, s))
        probs = softmax(run_forward(net, scaled).logits)
        acc += resize_bilinear(probs, h, w)
        count += 1
        if use_flip:
            probs_f = softmax(run_forward(net, np.ascontiguousarray(scaled[:, ::-1, :])).logits)
            unflipped = probs_f[:, ::-1, :][:, :, perm]
            acc += resize_bilinear(unflipped, h, w)
            count += 1
    acc /= count
    return LabelMap(acc.argmax(axis=-1), n)
