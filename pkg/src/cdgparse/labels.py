"""Supervision-signal synthesis from segmentation label maps.

Turns an integer label map into one-hot form, accumulates per-class pixel
counts along each image axis into horizontal/vertical class distributions,
derives boundary (edge) labels, and provides a laterality-aware horizontal
flip for augmentation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


@dataclass
class LabelMap:
    """H x W integer class-index image; class 0 is background by convention."""

    pixels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ValueError(f"label map must be 2D, got rank {self.pixels.ndim}")
        if self.pixels.size == 0:
            raise ValueError("label map must have H, W >= 1")
        if not np.issubdtype(self.pixels.dtype, np.integer):
            raise ValueError(f"label map must hold integers, got {self.pixels.dtype}")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        lo, hi = int(self.pixels.min()), int(self.pixels.max())
        if lo < 0 or hi >= self.num_classes:
            raise ValueError(f"pixel values span [{lo}, {hi}], outside [0, {self.num_classes - 1}]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class ClassDistribution:
    """Per-axis, per-class positional distribution: an L x N matrix where
    L is the position axis (W for horizontal, H for vertical)."""

    axis: str
    values: np.ndarray
    normalized: bool

    def __post_init__(self):
        if self.axis not in (HORIZONTAL, VERTICAL):
            raise ValueError(f"axis must be horizontal or vertical, got {self.axis!r}")
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"distribution must be 2D (L x N), got rank {self.values.ndim}")
        if self.normalized and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("normalized distribution values must lie in [0, 1]")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]


@dataclass
class SwapTable:
    """Unordered left/right class-id pairs applied when flipping labels."""

    pairs: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        seen: set[int] = set()
        for a, b in self.pairs:
            if a == b:
                raise ValueError(f"swap pair ({a}, {b}) must have distinct ids")
            if a in seen or b in seen:
                raise ValueError(f"class id reused across swap pairs: ({a}, {b})")
            seen.update((a, b))

    def permutation(self, num_classes: int) -> np.ndarray:
        """Length-N index array exchanging each pair and fixing the rest."""
        perm = np.arange(num_classes)
        for a, b in self.pairs:
            if a >= num_classes or b >= num_classes:
                raise ValueError(f"swap pair ({a}, {b}) outside [0, {num_classes - 1}]")
            perm[a], perm[b] = b, a
        return perm


def one_hot(label: LabelMap) -> np.ndarray:
    """Binary [H, W, N] expansion: channel n is 1 exactly where the pixel is n."""
    return np.eye(label.num_classes, dtype=np.float32)[label.pixels]


def class_distributions(m: np.ndarray, normalize: bool) -> tuple[ClassDistribution, ClassDistribution]:
    """Accumulate a one-hot map into per-axis class distributions.

    The horizontal distribution counts, for each width position w and class
    n, the pixels of class n in column w (shape [W, N]); the vertical one
    counts along rows (shape [H, N]). ``normalize`` divides the horizontal
    counts by H and the vertical counts by W so values lie in [0, 1].
    """
    m = np.asarray(m)
    if m.ndim != 3:
        raise ValueError(f"one-hot map must be rank 3 (H, W, N), got {m.ndim}")
    if not np.isin(m, (0.0, 1.0)).all() or not (m.sum(axis=-1) == 1.0).all():
        raise ValueError("map is not one-hot: every pixel needs exactly one channel set to 1")
    h, w, _ = m.shape
    dist_h = m.sum(axis=0, dtype=np.float64)  # [W, N]
    dist_v = m.sum(axis=1, dtype=np.float64)  # [H, N]
    if normalize:
        dist_h = dist_h / h
        dist_v = dist_v / w
    return (
        ClassDistribution(HORIZONTAL, dist_h, normalize),
        ClassDistribution(VERTICAL, dist_v, normalize),
    )


def edge_label(label: LabelMap) -> np.ndarray:
    """Binary [H, W] map: 1 where any in-bounds 4-neighbor differs in class."""
    p = label.pixels
    e = np.zeros(p.shape, dtype=bool)
    e[:-1, :] |= p[:-1, :] != p[1:, :]
    e[1:, :] |= p[1:, :] != p[:-1, :]
    e[:, :-1] |= p[:, :-1] != p[:, 1:]
    e[:, 1:] |= p[:, 1:] != p[:, :-1]
    return e.astype(np.uint8)


def hflip(image: np.ndarray, label: LabelMap, swaps: SwapTable) -> tuple[np.ndarray, LabelMap]:
    """Mirror image and label across the vertical midline, then exchange the
    paired left/right class ids so laterality stays correct."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[:2] != label.pixels.shape:
        raise ValueError(
            f"image shape {image.shape} does not align with label {label.pixels.shape} on the spatial axes"
        )
    perm = swaps.permutation(label.num_classes)
    flipped = perm[label.pixels[:, ::-1]]
    return image[:, ::-1, :].copy(), LabelMap(flipped, label.num_classes)


def resize_nearest(label: LabelMap, new_h: int, new_w: int) -> LabelMap:
    """Nearest-neighbor resample using half-pixel centres (matches the
    bilinear convention used for images)."""
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size ({new_h}, {new_w}) must be positive")
    h, w = label.pixels.shape
    rows = np.minimum(((np.arange(new_h) + 0.5) * (h / new_h)).astype(int), h - 1)
    cols = np.minimum(((np.arange(new_w) + 0.5) * (w / new_w)).astype(int), w - 1)
    return LabelMap(label.pixels[np.ix_(rows, cols)], label.num_classes)
