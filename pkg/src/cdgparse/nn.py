"""Parameter containers shared by the guided module and the toy network.

Parameters are plain float32 numpy arrays owned by small dataclasses; a
training step binds copies of them into a fresh Graph under stable dotted
names, and the optimizer updates the canonical arrays in place afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node, RunningStats


@dataclass
class Conv1dParams:
    weight: np.ndarray  # [K, Cin, Cout]
    bias: np.ndarray  # [Cout]


@dataclass
class Conv2dParams:
    weight: np.ndarray  # [Kh, Kw, Cin, Cout]
    bias: np.ndarray  # [Cout]


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    stats: RunningStats


def init_conv1d(rng: np.random.Generator, k: int, cin: int, cout: int) -> Conv1dParams:
    limit = math.sqrt(6.0 / (k * cin))
    weight = rng.uniform(-limit, limit, size=(k, cin, cout)).astype(np.float32)
    return Conv1dParams(weight, np.zeros(cout, dtype=np.float32))


def init_conv2d(rng: np.random.Generator, kh: int, kw: int, cin: int, cout: int) -> Conv2dParams:
    limit = math.sqrt(6.0 / (kh * kw * cin))
    weight = rng.uniform(-limit, limit, size=(kh, kw, cin, cout)).astype(np.float32)
    return Conv2dParams(weight, np.zeros(cout, dtype=np.float32))


def init_bn(c: int, momentum: float = 0.1) -> BnParams:
    return BnParams(
        gamma=np.ones(c, dtype=np.float32),
        beta=np.zeros(c, dtype=np.float32),
        stats=RunningStats(np.zeros(c, dtype=np.float32), np.ones(c, dtype=np.float32), momentum),
    )


def conv_named(p: Conv1dParams | Conv2dParams, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.weight": p.weight, f"{prefix}.bias": p.bias}


def bn_named(p: BnParams, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.gamma": p.gamma, f"{prefix}.beta": p.beta}


def bn_buffers(p: BnParams, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.running_mean": p.stats.mean, f"{prefix}.running_var": p.stats.var}


def apply_conv1d(g: Graph, x: Node, p: Conv1dParams, prefix: str) -> Node:
    return g.conv1d(x, g.param(f"{prefix}.weight", p.weight), g.param(f"{prefix}.bias", p.bias))


def apply_conv2d(g: Graph, x: Node, p: Conv2dParams, prefix: str, stride: int = 1) -> Node:
    return g.conv2d(x, g.param(f"{prefix}.weight", p.weight), g.param(f"{prefix}.bias", p.bias), stride=stride)


def apply_bn(g: Graph, x: Node, p: BnParams, prefix: str, mode: str) -> Node:
    gamma = g.param(f"{prefix}.gamma", p.gamma)
    beta = g.param(f"{prefix}.beta", p.beta)
    return g.batch_norm(x, gamma, beta, p.stats, mode=mode)
