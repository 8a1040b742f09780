"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Graph`` is an append-only tape: every operation validates its operands,
computes its value eagerly, and records closures for recomputation and for
its vector-Jacobian product. Nodes reference only earlier nodes, so the tape
is acyclic by construction; ``backward`` walks it once in reverse id order,
which makes gradient accumulation order deterministic.

Values are plain numpy arrays, rank 0 (scalar losses) through rank 4. Each
spatial op documents its per-sample shape and also accepts the same shape
with one extra leading batch axis. Graphs are float32 by default; gradient
checking builds float64 graphs, since central differences drown in float32
rounding noise.

Ops never mutate their inputs. Running statistics for batch norm are the
only mutable state touched by a forward pass, and recomputation (used by
``grad_check``) leaves them alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

HEIGHT = "height"
WIDTH = "width"


class DimensionError(ValueError):
    """Operand shapes disagree; the message names the offending axis."""


class NumericError(RuntimeError):
    """A non-finite value appeared where finite math was required."""


@dataclass
class RunningStats:
    """Moving per-channel mean/variance used by batch norm in eval mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1


class Node:
    """Handle to one tape entry. ``value`` is the op's output array."""

    __slots__ = ("graph", "idx", "op", "inputs", "value", "fwd", "bwd", "name", "trainable")

    def __init__(self, graph, idx, op, inputs, value, fwd, bwd, name=None, trainable=False):
        self.graph = graph
        self.idx = idx
        self.op = op
        self.inputs = inputs
        self.value = value
        self.fwd = fwd
        self.bwd = bwd
        self.name = name
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Node {self.idx} {self.op} shape={self.value.shape}{tag}>"


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


class Graph:
    """Append-only computation tape with named trainable leaves.

    Single-threaded contract: one Graph per thread for build/forward/backward.
    Node values are never mutated once written and may be read concurrently.
    """

    def __init__(self, dtype=np.float32, check_finite: bool = False):
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.update_running_stats = True
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    # ------------------------------------------------------------------
    # leaves and tape plumbing
    # ------------------------------------------------------------------

    def constant(self, value, name: str | None = None) -> Node:
        """Non-trainable leaf. The array is copied into the graph dtype."""
        arr = np.array(value, dtype=self.dtype)
        _require(arr.ndim <= 4, f"leaf rank {arr.ndim} exceeds the supported rank 4")
        return self._append(Node(self, len(self.nodes), "const", (), arr, None, None, name))

    def param(self, name: str, value) -> Node:
        """Named trainable leaf. Re-binding an existing name returns that leaf."""
        if name in self.params:
            node = self.params[name]
            _require(
                node.value.shape == np.shape(value),
                f"param {name!r} re-bound with shape {np.shape(value)}, have {node.value.shape}",
            )
            return node
        arr = np.array(value, dtype=self.dtype)
        _require(arr.ndim <= 4, f"leaf rank {arr.ndim} exceeds the supported rank 4")
        node = Node(self, len(self.nodes), "param", (), arr, None, None, name, trainable=True)
        self.params[name] = node
        return self._append(node)

    def _append(self, node: Node) -> Node:
        if self.check_finite and not np.all(np.isfinite(node.value)):
            raise NumericError(f"non-finite values in {node.op} node {node.idx}")
        self.nodes.append(node)
        return node

    def record(
        self,
        op: str,
        inputs: Sequence[Node],
        fwd: Callable[..., np.ndarray],
        bwd: Callable[..., tuple],
        name: str | None = None,
    ) -> Node:
        """Append an op node. ``fwd(*input_values)`` runs now and on recompute;
        ``bwd(grad, input_values, out_value)`` returns one gradient per input
        (None for inputs that do not receive gradient)."""
        for n in inputs:
            _require(n.graph is self, f"{op}: input node belongs to a different graph")
        value = np.asarray(fwd(*(n.value for n in inputs)), dtype=self.dtype)
        return self._append(Node(self, len(self.nodes), op, tuple(inputs), value, fwd, bwd, name))

    def recompute(self) -> None:
        """Re-run every op from current leaf values, in tape order."""
        for node in self.nodes:
            if node.fwd is None:
                continue
            node.value = np.asarray(node.fwd(*(n.value for n in node.inputs)), dtype=self.dtype)
            if self.check_finite and not np.all(np.isfinite(node.value)):
                raise NumericError(f"non-finite values in {node.op} node {node.idx}")

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Reverse-mode gradients of a scalar loss for every trainable leaf.

        Each node is visited exactly once, in reverse id order; disconnected
        parameters get zero gradients.
        """
        _require(loss.graph is self, "backward: loss node belongs to a different graph")
        if loss.value.ndim != 0:
            raise DimensionError(f"backward: loss must be scalar, got shape {loss.value.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.idx] = np.ones((), dtype=self.dtype)
        for node in reversed(self.nodes[: loss.idx + 1]):
            g = grads[node.idx]
            if g is None or node.bwd is None:
                continue
            in_vals = tuple(n.value for n in node.inputs)
            for inp, gi in zip(node.inputs, node.bwd(g, in_vals, node.value)):
                if gi is None:
                    continue
                if grads[inp.idx] is None:
                    grads[inp.idx] = np.zeros_like(inp.value)
                grads[inp.idx] += gi
        out = {}
        for name, node in self.params.items():
            g = grads[node.idx]
            out[name] = g if g is not None else np.zeros_like(node.value)
        return out

    # ------------------------------------------------------------------
    # convolutions
    # ------------------------------------------------------------------

    def conv1d(self, x: Node, w: Node, b: Node) -> Node:
        """1D cross-correlation, stride 1, zero "same" padding.

        x: [L, Cin] (or [B, L, Cin]), w: [K, Cin, Cout] with K odd, b: [Cout].
        """
        _require(w.value.ndim == 3, f"conv1d: weight must be rank 3, got {w.value.ndim}")
        k, cin_w, cout = w.value.shape
        _require(k % 2 == 1, f"conv1d: kernel size {k} must be odd (tap axis)")
        _require(x.value.ndim in (2, 3), f"conv1d: input must be rank 2 or 3, got {x.value.ndim}")
        _require(
            x.value.shape[-1] == cin_w,
            f"conv1d: input has {x.value.shape[-1]} channels on the last axis, weight expects {cin_w}",
        )
        _require(b.value.shape == (cout,), f"conv1d: bias shape {b.value.shape} != ({cout},) (output channel axis)")

        def fwd(xv, wv, bv):
            return _conv1d_fwd(xv, wv, bv)

        def bwd(g, vals, out):
            return _conv1d_bwd(g, *vals)

        return self.record("conv1d", (x, w, b), fwd, bwd)

    def conv2d(self, x: Node, w: Node, b: Node, stride: int = 1) -> Node:
        """2D cross-correlation with zero "same" padding.

        x: [H, W, Cin] (or [B, H, W, Cin]), w: [Kh, Kw, Cin, Cout] with odd
        kernel dims, b: [Cout]. Output spatial size is ceil(dim / stride);
        output position (i, j) is centred on input position (i*stride, j*stride).
        """
        _require(w.value.ndim == 4, f"conv2d: weight must be rank 4, got {w.value.ndim}")
        kh, kw, cin_w, cout = w.value.shape
        _require(kh % 2 == 1 and kw % 2 == 1, f"conv2d: kernel dims ({kh},{kw}) must be odd")
        _require(x.value.ndim in (3, 4), f"conv2d: input must be rank 3 or 4, got {x.value.ndim}")
        _require(
            x.value.shape[-1] == cin_w,
            f"conv2d: input has {x.value.shape[-1]} channels on the last axis, weight expects {cin_w}",
        )
        _require(b.value.shape == (cout,), f"conv2d: bias shape {b.value.shape} != ({cout},) (output channel axis)")
        _require(isinstance(stride, int) and stride >= 1, f"conv2d: stride {stride} must be a positive int")

        def fwd(xv, wv, bv):
            return _conv2d_fwd(xv, wv, bv, stride)

        def bwd(g, vals, out):
            return _conv2d_bwd(g, *vals, stride)

        return self.record("conv2d", (x, w, b), fwd, bwd)

    # ------------------------------------------------------------------
    # pooling / resampling
    # ------------------------------------------------------------------

    def axis_avg_pool(self, x: Node, axis: str) -> Node:
        """Mean over one spatial axis of [H, W, C].

        axis="height" averages out H and yields [W, C]; axis="width" yields
        [H, C]. A leading batch axis is preserved.
        """
        _require(axis in (HEIGHT, WIDTH), f"axis_avg_pool: unknown axis {axis!r}")
        _require(x.value.ndim in (3, 4), f"axis_avg_pool: input must be rank 3 or 4, got {x.value.ndim}")
        ax = x.value.ndim - (3 if axis == HEIGHT else 2)
        n = x.value.shape[ax]

        def fwd(xv):
            return xv.mean(axis=ax)

        def bwd(g, vals, out):
            (xv,) = vals
            return (np.broadcast_to(np.expand_dims(g, ax), xv.shape) / n,)

        return self.record("axis_avg_pool", (x,), fwd, bwd)

    def broadcast_upsample(self, x: Node, target_axis: str, target_len: int) -> Node:
        """Replicate an [L, C] profile along the missing spatial axis.

        target_axis="height" turns [L, C] into [target_len, L, C];
        target_axis="width" turns [L, C] into [L, target_len, C]. Bilinear
        interpolation of a singleton axis degenerates to exactly this.
        """
        _require(target_axis in (HEIGHT, WIDTH), f"broadcast_upsample: unknown axis {target_axis!r}")
        if target_len < 1:
            raise DimensionError(f"broadcast_upsample: target_len {target_len} must be >= 1")
        _require(x.value.ndim in (2, 3), f"broadcast_upsample: input must be rank 2 or 3, got {x.value.ndim}")
        ax = x.value.ndim - (2 if target_axis == HEIGHT else 1)

        def fwd(xv):
            shape = xv.shape[:ax] + (target_len,) + xv.shape[ax:]
            return np.broadcast_to(np.expand_dims(xv, ax), shape)

        def bwd(g, vals, out):
            return (g.sum(axis=ax),)

        return self.record("broadcast_upsample", (x,), fwd, bwd)

    def upsample_bilinear(self, x: Node, out_h: int, out_w: int) -> Node:
        """True bilinear resize of [H, W, C] to [out_h, out_w, C] (half-pixel
        centres, edges clamped). Exact identity when sizes already match."""
        _require(x.value.ndim in (3, 4), f"upsample_bilinear: input must be rank 3 or 4, got {x.value.ndim}")
        _require(out_h >= 1 and out_w >= 1, f"upsample_bilinear: target size ({out_h},{out_w}) must be positive")
        h, w = x.value.shape[-3], x.value.shape[-2]
        my = _interp_matrix(h, out_h, self.dtype)
        mx = _interp_matrix(w, out_w, self.dtype)

        def fwd(xv):
            return _apply_resize(xv, my, mx)

        def bwd(g, vals, out):
            return (_apply_resize(g, my.T, mx.T),)

        return self.record("upsample_bilinear", (x,), fwd, bwd)

    # ------------------------------------------------------------------
    # pointwise ops
    # ------------------------------------------------------------------

    def sigmoid(self, x: Node) -> Node:
        def fwd(xv):
            return _sigmoid(xv)

        def bwd(g, vals, out):
            return (g * out * (1.0 - out),)

        return self.record("sigmoid", (x,), fwd, bwd)

    def relu(self, x: Node) -> Node:
        def fwd(xv):
            return np.maximum(xv, 0.0)

        def bwd(g, vals, out):
            (xv,) = vals
            return (g * (xv > 0),)

        return self.record("relu", (x,), fwd, bwd)

    def add(self, x: Node, y: Node) -> Node:
        self._same_shape("add", x, y)
        return self.record("add", (x, y), lambda a, b: a + b, lambda g, vals, out: (g, g))

    def sub(self, x: Node, y: Node) -> Node:
        self._same_shape("sub", x, y)
        return self.record("sub", (x, y), lambda a, b: a - b, lambda g, vals, out: (g, -g))

    def mul(self, x: Node, y: Node) -> Node:
        self._same_shape("mul", x, y)

        def bwd(g, vals, out):
            a, b = vals
            return (g * b, g * a)

        return self.record("mul", (x, y), lambda a, b: a * b, bwd)

    def scale(self, x: Node, s) -> Node:
        """Multiply by a python scalar or by a scalar (rank-0) node."""
        if isinstance(s, Node):
            _require(s.value.ndim == 0, f"scale: scale factor must be scalar, got shape {s.value.shape}")

            def bwd(g, vals, out):
                xv, sv = vals
                return (g * sv, np.asarray((g * xv).sum(), dtype=self.dtype))

            return self.record("scale", (x, s), lambda xv, sv: xv * sv, bwd)
        s = float(s)
        if not np.isfinite(s):
            raise NumericError(f"scale: non-finite factor {s}")
        return self.record("scale", (x,), lambda xv: xv * s, lambda g, vals, out: (g * s,))

    def concat_channels(self, x: Node, y: Node) -> Node:
        """Stack two tensors along the channel (last) axis."""
        _require(x.value.ndim == y.value.ndim, f"concat_channels: ranks differ ({x.value.ndim} vs {y.value.ndim})")
        _require(
            x.value.shape[:-1] == y.value.shape[:-1],
            f"concat_channels: spatial dims differ ({x.value.shape[:-1]} vs {y.value.shape[:-1]})",
        )
        c1 = x.value.shape[-1]

        def bwd(g, vals, out):
            return (g[..., :c1], g[..., c1:])

        return self.record("concat_channels", (x, y), lambda a, b: np.concatenate((a, b), axis=-1), bwd)

    def mean_all(self, x: Node) -> Node:
        """Mean over every element, producing a rank-0 scalar."""

        def fwd(xv):
            return xv.mean()

        def bwd(g, vals, out):
            (xv,) = vals
            return (np.broadcast_to(g / xv.size, xv.shape),)

        return self.record("mean_all", (x,), fwd, bwd)

    # ------------------------------------------------------------------
    # batch norm
    # ------------------------------------------------------------------

    def batch_norm(
        self,
        x: Node,
        gamma: Node,
        beta: Node,
        stats: RunningStats,
        eps: float = 1e-5,
        mode: str = "train",
    ) -> Node:
        """Per-channel normalization over every non-channel position.

        Train mode normalizes with the current population (batch x spatial)
        and folds its statistics into ``stats``; eval mode normalizes with
        ``stats``. Channels live on the last axis.
        """
        _require(mode in ("train", "eval"), f"batch_norm: unknown mode {mode!r}")
        c = x.value.shape[-1]
        _require(gamma.value.shape == (c,), f"batch_norm: gamma shape {gamma.value.shape} != ({c},) (channel axis)")
        _require(beta.value.shape == (c,), f"batch_norm: beta shape {beta.value.shape} != ({c},) (channel axis)")
        _require(stats.mean.shape == (c,) and stats.var.shape == (c,), "batch_norm: running stats mismatch channel axis")
        n = x.value.size // c
        if mode == "train" and n < 2:
            raise DimensionError(f"batch_norm: train mode needs >= 2 samples per channel, got {n}")
        ctx: dict = {}

        def fwd(xv, gv, bv):
            axes = tuple(range(xv.ndim - 1))
            if mode == "train":
                mu = xv.mean(axis=axes)
                var = xv.var(axis=axes)
                if self.update_running_stats:
                    m = stats.momentum
                    unbiased = var * (n / (n - 1)) if n > 1 else var
                    stats.mean[...] = ((1.0 - m) * stats.mean + m * mu).astype(stats.mean.dtype)
                    stats.var[...] = ((1.0 - m) * stats.var + m * unbiased).astype(stats.var.dtype)
            else:
                mu = stats.mean.astype(xv.dtype)
                var = stats.var.astype(xv.dtype)
            std = np.sqrt(var + eps)
            xhat = (xv - mu) / std
            ctx.update(std=std, xhat=xhat, axes=axes)
            return gv * xhat + bv

        def bwd(g, vals, out):
            xhat, std, axes = ctx["xhat"], ctx["std"], ctx["axes"]
            gv = vals[1]
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            if mode == "train":
                dxhat = g * gv
                dx = (dxhat - dxhat.mean(axis=axes) - xhat * (dxhat * xhat).mean(axis=axes)) / std
            else:
                dx = g * gv / std
            return dx, dgamma, dbeta

        return self.record("batch_norm", (x, gamma, beta), fwd, bwd)

    def _same_shape(self, op: str, x: Node, y: Node) -> None:
        _require(
            x.value.shape == y.value.shape,
            f"{op}: operand shapes differ ({x.value.shape} vs {y.value.shape})",
        )


# ----------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------


def grad_check(graph: Graph, loss: Node, param: str, h: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central-difference
    gradients for one named parameter.

    Relative error per element is |a - n| / max(|a|, |n|, 1e-8), so exactly
    zero gradients compare as zero error. Use a float64 graph; the tape is
    recomputed around each perturbed element and restored afterwards.
    """
    if param not in graph.params:
        raise KeyError(f"unknown parameter {param!r}")
    node = graph.params[param]
    analytic = graph.backward(loss)[param].reshape(-1).copy()
    flat = node.value.reshape(-1)
    numeric = np.zeros_like(flat)
    saved = graph.update_running_stats
    graph.update_running_stats = False
    try:
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            graph.recompute()
            f_plus = float(loss.value)
            flat[i] = orig - h
            graph.recompute()
            f_minus = float(loss.value)
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * h)
        graph.recompute()
    finally:
        graph.update_running_stats = saved
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())


# ----------------------------------------------------------------------
# array kernels (pure, allocation-only)
# ----------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Two-branch form avoids exp overflow on large negative inputs.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _conv1d_fwd(x, w, b):
    batched = x.ndim == 3
    xb = x if batched else x[None]
    length = xb.shape[1]
    k = w.shape[0]
    p = (k - 1) // 2
    xp = np.pad(xb, ((0, 0), (p, p), (0, 0)))
    out = np.zeros((xb.shape[0], length, w.shape[2]), dtype=x.dtype)
    for tap in range(k):
        out += xp[:, tap : tap + length, :] @ w[tap]
    out += b
    return out if batched else out[0]


def _conv1d_bwd(g, x, w, b):
    batched = x.ndim == 3
    xb = x if batched else x[None]
    gb = g if batched else g[None]
    length = xb.shape[1]
    k = w.shape[0]
    p = (k - 1) // 2
    xp = np.pad(xb, ((0, 0), (p, p), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for tap in range(k):
        dw[tap] = np.tensordot(xp[:, tap : tap + length, :], gb, axes=([0, 1], [0, 1]))
        dxp[:, tap : tap + length, :] += gb @ w[tap].T
    db = gb.sum(axis=(0, 1))
    dx = dxp[:, p : p + length, :]
    return (dx if batched else dx[0]), dw, db


def _conv2d_fwd(x, w, b, stride):
    batched = x.ndim == 4
    xb = x if batched else x[None]
    _, h, wd, _ = xb.shape
    kh, kw, _, cout = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    ho, wo = -(-h // stride), -(-wd // stride)
    xp = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((xb.shape[0], ho, wo, cout), dtype=x.dtype)
    for a in range(kh):
        ra = slice(a, a + (ho - 1) * stride + 1, stride)
        for c in range(kw):
            rc = slice(c, c + (wo - 1) * stride + 1, stride)
            out += np.tensordot(xp[:, ra, rc, :], w[a, c], axes=([3], [0]))
    out += b
    return out if batched else out[0]


def _conv2d_bwd(g, x, w, b, stride):
    batched = x.ndim == 4
    xb = x if batched else x[None]
    gb = g if batched else g[None]
    _, h, wd, _ = xb.shape
    kh, kw, _, _ = w.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    ho, wo = gb.shape[1], gb.shape[2]
    xp = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for a in range(kh):
        ra = slice(a, a + (ho - 1) * stride + 1, stride)
        for c in range(kw):
            rc = slice(c, c + (wo - 1) * stride + 1, stride)
            dw[a, c] = np.tensordot(xp[:, ra, rc, :], gb, axes=([0, 1, 2], [0, 1, 2]))
            dxp[:, ra, rc, :] += np.tensordot(gb, w[a, c], axes=([3], [1]))
    db = gb.sum(axis=(0, 1, 2))
    dx = dxp[:, ph : ph + h, pw : pw + wd, :]
    return (dx if batched else dx[0]), dw, db


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Dense 1D bilinear resampling matrix (half-pixel centres, clamped)."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        return m
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = (src - i0).astype(dtype)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m


def _apply_resize(x: np.ndarray, my: np.ndarray, mx: np.ndarray) -> np.ndarray:
    if x.ndim == 3:
        t = np.einsum("oh,hwc->owc", my, x)
        return np.einsum("pw,owc->opc", mx, t)
    t = np.einsum("oh,bhwc->bowc", my, x)
    return np.einsum("pw,bowc->bopc", mx, t)


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Graph-free bilinear resize of [H, W, C]; same convention as the op."""
    if x.ndim not in (3, 4):
        raise DimensionError(f"resize_bilinear: input must be rank 3 or 4, got {x.ndim}")
    h, w = x.shape[-3], x.shape[-2]
    if (h, w) == (out_h, out_w):
        return x.copy()
    my = _interp_matrix(h, out_h, x.dtype)
    mx = _interp_matrix(w, out_w, x.dtype)
    return _apply_resize(x, my, mx)
