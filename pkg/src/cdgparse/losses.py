"""Training losses: distribution-supervision MSE, pixel cross-entropy, a
class-balanced edge cross-entropy, and the weighted composite objective.

All losses build nodes on a Graph so their gradients flow back through the
network; targets enter as constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node
from .labels import ClassDistribution


@dataclass
class LossWeights:
    """Balance weights: theta/phi scale the horizontal/vertical distribution
    terms, tau the base segmentation loss, gamma the distribution loss."""

    theta: float = 1.0
    phi: float = 1.0
    tau: float = 1.0
    gamma: float = 40.0


def _stack_targets(target: ClassDistribution | Sequence[ClassDistribution], axis: str, batched: bool) -> np.ndarray:
    items = list(target) if isinstance(target, (list, tuple)) else [target]
    for t in items:
        if not isinstance(t, ClassDistribution):
            raise TypeError(f"target must be ClassDistribution, got {type(t).__name__}")
        if t.axis != axis:
            raise ValueError(f"target axis {t.axis!r} does not match the {axis!r} prediction")
        if not t.normalized:
            raise ValueError("distribution targets must be normalized to [0, 1]")
    stacked = np.stack([t.values for t in items])
    return stacked if batched else stacked[0]


def _mse(g: Graph, pred: Node, target: np.ndarray) -> Node:
    if pred.value.shape != target.shape:
        raise ValueError(f"prediction shape {pred.value.shape} != target shape {target.shape}")
    diff = g.sub(pred, g.constant(target))
    return g.mean_all(g.mul(diff, diff))


def cdg_loss(
    g: Graph,
    dist_h: Node,
    dist_v: Node,
    target_h: ClassDistribution | Sequence[ClassDistribution],
    target_v: ClassDistribution | Sequence[ClassDistribution],
    weights: LossWeights,
) -> Node:
    """theta * MSE(horizontal) + phi * MSE(vertical), each mean-reduced over
    its L x N grid. Batched [B, L, N] predictions take one target per sample."""
    batched = dist_h.value.ndim == 3
    th = _stack_targets(target_h, "horizontal", batched)
    tv = _stack_targets(target_v, "vertical", batched)
    loss_h = _mse(g, dist_h, th)
    loss_v = _mse(g, dist_v, tv)
    return g.add(g.scale(loss_h, weights.theta), g.scale(loss_v, weights.phi))


def cross_entropy(g: Graph, logits: Node, label: np.ndarray, ignore_id: int | None = None) -> Node:
    """Mean over non-ignored pixels of -log softmax(logits)[label].

    logits: [H, W, N] or [B, H, W, N]; label: matching integer map. Softmax
    is computed with max subtraction, so constant logit shifts are harmless.
    """
    label = np.asarray(label)
    if logits.value.shape[:-1] != label.shape:
        raise ValueError(f"logits spatial shape {logits.value.shape[:-1]} != label shape {label.shape}")
    n = logits.value.shape[-1]
    flat_label = label.reshape(-1)
    if ignore_id is None:
        valid = np.ones(flat_label.shape, dtype=bool)
    else:
        valid = flat_label != ignore_id
    if not valid.any():
        raise ValueError("cross_entropy: every pixel is ignored")
    bad = flat_label[valid]
    if bad.min() < 0 or bad.max() >= n:
        raise ValueError(f"label ids span [{bad.min()}, {bad.max()}], outside [0, {n - 1}]")
    n_valid = int(valid.sum())
    safe_label = np.where(valid, flat_label, 0)
    rows = np.arange(flat_label.size)
    ctx: dict = {}

    def fwd(lv):
        x = lv.reshape(-1, n)
        m = x.max(axis=1, keepdims=True)
        z = np.exp(x - m)
        zsum = z.sum(axis=1, keepdims=True)
        ce = (m[:, 0] + np.log(zsum[:, 0])) - x[rows, safe_label]
        ctx["probs"] = z / zsum
        return ce[valid].mean()

    def bwd(grad, vals, out):
        (lv,) = vals
        d = ctx["probs"].copy()
        d[rows[valid], safe_label[valid]] -= 1.0
        d[~valid] = 0.0
        d *= float(grad) / n_valid
        return (d.reshape(lv.shape),)

    return g.record("cross_entropy", (logits,), fwd, bwd)


def weighted_edge_ce(g: Graph, edge_logits: Node, edge_gt: np.ndarray) -> Node:
    """Two-class cross-entropy with per-image class balancing.

    Edge pixels weigh #neg/(#pos+#neg) and non-edge pixels #pos/(#pos+#neg),
    computed per image, then the weighted per-pixel terms are mean-reduced.
    An image without edges zeroes its own contribution.
    """
    edge_gt = np.asarray(edge_gt)
    if edge_logits.value.shape[:-1] != edge_gt.shape:
        raise ValueError(f"edge logits spatial shape {edge_logits.value.shape[:-1]} != edge map shape {edge_gt.shape}")
    if edge_logits.value.shape[-1] != 2:
        raise ValueError(f"edge logits need 2 channels, got {edge_logits.value.shape[-1]}")
    gt = edge_gt.astype(np.int64)
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("edge map must be binary")
    batched = gt.ndim == 3
    gtb = gt if batched else gt[None]
    per_image = gtb.reshape(gtb.shape[0], -1)
    pos = per_image.sum(axis=1)
    total = per_image.shape[1]
    w_pos = (total - pos) / total
    w_neg = pos / total
    weight = np.where(gtb == 1, w_pos[:, None, None], w_neg[:, None, None])
    weight = weight if batched else weight[0]
    flat_gt = gt.reshape(-1)
    flat_w = weight.reshape(-1)
    rows = np.arange(flat_gt.size)
    ctx: dict = {}

    def fwd(lv):
        x = lv.reshape(-1, 2)
        m = x.max(axis=1, keepdims=True)
        z = np.exp(x - m)
        zsum = z.sum(axis=1, keepdims=True)
        ce = (m[:, 0] + np.log(zsum[:, 0])) - x[rows, flat_gt]
        ctx["probs"] = z / zsum
        return (flat_w * ce).mean()

    def bwd(grad, vals, out):
        (lv,) = vals
        d = ctx["probs"].copy()
        d[rows, flat_gt] -= 1.0
        d *= (flat_w * (float(grad) / flat_gt.size))[:, None]
        return (d.reshape(lv.shape),)

    return g.record("weighted_edge_ce", (edge_logits,), fwd, bwd)


def total_loss(
    parsing_ce: Node | float,
    edge_ce: Node | float | None,
    cdg: Node | float,
    weights: LossWeights,
    edge_enabled: bool,
) -> Node | float:
    """tau * (parsing + optional edge term) + gamma * distribution loss.

    Works on graph nodes during training; plain numbers fall through to
    float arithmetic for direct evaluation.
    """
    terms = [parsing_ce, edge_ce, cdg]
    nodes = [t for t in terms if isinstance(t, Node)]
    if not nodes:
        base = float(parsing_ce) + (float(edge_ce) if edge_enabled else 0.0)
        return weights.tau * base + weights.gamma * float(cdg)
    g = nodes[0].graph

    def as_node(v):
        return v if isinstance(v, Node) else g.constant(np.asarray(0.0 if v is None else v))

    base = as_node(parsing_ce)
    if edge_enabled:
        base = g.add(base, as_node(edge_ce))
    return g.add(g.scale(base, weights.tau), g.scale(as_node(cdg), weights.gamma))
