import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cdgparse.labels import (
    ClassDistribution,
    LabelMap,
    SwapTable,
    class_distributions,
    edge_label,
    hflip,
    one_hot,
    resize_nearest,
)


def oracle_distributions(pixels, n):
    """Independent double-loop pixel counter."""
    h, w = pixels.shape
    dist_h = np.zeros((w, n), dtype=np.int64)
    dist_v = np.zeros((h, n), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            dist_h[j, pixels[i, j]] += 1
            dist_v[i, pixels[i, j]] += 1
    return dist_h, dist_v


def random_label(seed, max_side=16, max_classes=8):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, max_side + 1, size=2)
    n = int(rng.integers(2, max_classes + 1))
    return LabelMap(rng.integers(0, n, size=(h, w)), n)


label_maps = st.integers(0, 2**32 - 1).map(random_label)


# ----------------------------------------------------------------------
# LabelMap / one_hot
# ----------------------------------------------------------------------


def test_label_map_validates():
    with pytest.raises(ValueError):
        LabelMap(np.array([[0, 3]]), 3)
    with pytest.raises(ValueError):
        LabelMap(np.array([[0.5]]), 2)
    with pytest.raises(ValueError):
        LabelMap(np.zeros((0, 2), dtype=int), 2)


def test_one_hot_single_pixel():
    m = one_hot(LabelMap(np.array([[2]]), 3))
    assert np.array_equal(m, [[[0, 0, 1]]])


def test_one_hot_2x2():
    m = one_hot(LabelMap(np.array([[0, 1], [1, 1]]), 2))
    assert np.array_equal(m[..., 0], [[1, 0], [0, 0]])
    assert np.array_equal(m[..., 1], [[0, 1], [1, 1]])


@settings(max_examples=50, deadline=None)
@given(label_maps)
def test_one_hot_partitions(label):
    assert np.array_equal(one_hot(label).sum(axis=-1), np.ones(label.pixels.shape))


# ----------------------------------------------------------------------
# class_distributions
# ----------------------------------------------------------------------


def test_class_distributions_2x2_example():
    dist_h, dist_v = class_distributions(one_hot(LabelMap(np.array([[0, 1], [1, 1]]), 2)), normalize=True)
    assert np.array_equal(dist_h.values, [[0.5, 0.5], [0.0, 1.0]])
    assert np.array_equal(dist_v.values, [[0.5, 0.5], [0.0, 1.0]])
    assert dist_h.axis == "horizontal" and dist_v.axis == "vertical"


def test_class_distributions_uniform_background():
    dist_h, _ = class_distributions(one_hot(LabelMap(np.zeros((3, 4), dtype=int), 2)), normalize=True)
    assert np.array_equal(dist_h.values[:, 0], np.ones(4))
    assert np.array_equal(dist_h.values[:, 1], np.zeros(4))


def test_class_distributions_rejects_non_one_hot():
    bad = np.ones((2, 2, 3), dtype=np.float32)  # channel sums are 3
    with pytest.raises(ValueError, match="one-hot"):
        class_distributions(bad, normalize=False)
    soft = np.full((2, 2, 2), 0.5, dtype=np.float32)  # sums to 1 but not binary
    with pytest.raises(ValueError, match="one-hot"):
        class_distributions(soft, normalize=False)


@settings(max_examples=50, deadline=None)
@given(label_maps)
def test_class_distributions_match_oracle(label):
    dist_h, dist_v = class_distributions(one_hot(label), normalize=False)
    oh, ov = oracle_distributions(label.pixels, label.num_classes)
    assert np.array_equal(dist_h.values, oh)
    assert np.array_equal(dist_v.values, ov)


@settings(max_examples=50, deadline=None)
@given(label_maps)
def test_counting_identities(label):
    dist_h, dist_v = class_distributions(one_hot(label), normalize=False)
    h, w = label.pixels.shape
    # Every column (row) counts each of its pixels exactly once.
    assert np.array_equal(dist_h.values.sum(axis=1), np.full(w, h))
    assert np.array_equal(dist_v.values.sum(axis=1), np.full(h, w))
    assert dist_h.values.sum() == h * w
    assert dist_v.values.sum() == h * w


def test_normalized_distribution_bounds_enforced():
    with pytest.raises(ValueError):
        ClassDistribution("horizontal", np.array([[1.5, 0.0]]), normalized=True)


# ----------------------------------------------------------------------
# edge labels
# ----------------------------------------------------------------------


def test_edge_label_uniform_is_zero():
    assert np.array_equal(edge_label(LabelMap(np.full((3, 3), 2), 4)), np.zeros((3, 3)))


def test_edge_label_vertical_stripes():
    e = edge_label(LabelMap(np.array([[0, 1], [0, 1]]), 2))
    assert np.array_equal(e, np.ones((2, 2)))


def test_edge_label_single_pixel():
    assert np.array_equal(edge_label(LabelMap(np.array([[0]]), 1)), [[0]])


@settings(max_examples=40, deadline=None)
@given(label_maps, st.integers(0, 2**31))
def test_edge_label_invariant_under_class_permutation(label, seed):
    perm = np.random.default_rng(seed).permutation(label.num_classes)
    permuted = LabelMap(perm[label.pixels], label.num_classes)
    assert np.array_equal(edge_label(label), edge_label(permuted))


# ----------------------------------------------------------------------
# flips
# ----------------------------------------------------------------------


def _image_for(label):
    rng = np.random.default_rng(0)
    return rng.random((label.height, label.width, 3), dtype=np.float32)


def test_hflip_reversal_only():
    label = LabelMap(np.array([[0, 3]]), 4)
    _, flipped = hflip(_image_for(label), label, SwapTable())
    assert np.array_equal(flipped.pixels, [[3, 0]])


def test_hflip_adjacent_symmetric_pair_cancels():
    label = LabelMap(np.array([[1, 2]]), 3)
    _, flipped = hflip(_image_for(label), label, SwapTable(((1, 2),)))
    assert np.array_equal(flipped.pixels, [[1, 2]])


@settings(max_examples=40, deadline=None)
@given(label_maps)
def test_hflip_is_involution(label):
    swaps = SwapTable(((0, 1),)) if label.num_classes >= 2 else SwapTable()
    image = _image_for(label)
    img2, lab2 = hflip(*hflip(image, label, swaps), swaps)
    assert np.array_equal(img2, image)
    assert np.array_equal(lab2.pixels, label.pixels)


@settings(max_examples=40, deadline=None)
@given(label_maps, st.integers(0, 2**31))
def test_flip_equivariance_of_distributions(label, seed):
    rng = np.random.default_rng(seed)
    n = label.num_classes
    ids = rng.permutation(n)
    pairs = tuple((int(ids[2 * i]), int(ids[2 * i + 1])) for i in range(rng.integers(0, n // 2 + 1)))
    swaps = SwapTable(pairs)
    perm = swaps.permutation(n)

    _, flipped = hflip(_image_for(label), label, swaps)
    fh, fv = class_distributions(one_hot(flipped), normalize=False)
    oh, ov = class_distributions(one_hot(label), normalize=False)
    assert np.array_equal(fh.values, oh.values[::-1][:, perm])
    assert np.array_equal(fv.values, ov.values[:, perm])


def test_swap_table_validation():
    with pytest.raises(ValueError):
        SwapTable(((1, 1),))
    with pytest.raises(ValueError):
        SwapTable(((1, 2), (2, 3)))
    with pytest.raises(ValueError):
        SwapTable(((1, 9),)).permutation(4)


# ----------------------------------------------------------------------
# nearest resize
# ----------------------------------------------------------------------


def test_resize_nearest_downscale_picks_block_centres():
    pixels = np.arange(16).reshape(4, 4)
    small = resize_nearest(LabelMap(pixels, 16), 2, 2)
    assert np.array_equal(small.pixels, [[5, 7], [13, 15]])


def test_resize_nearest_identity():
    label = random_label(3)
    out = resize_nearest(label, label.height, label.width)
    assert np.array_equal(out.pixels, label.pixels)
