import math

import numpy as np
import pytest

from cdgparse.autodiff import Graph, grad_check
from cdgparse.labels import ClassDistribution
from cdgparse.losses import LossWeights, cdg_loss, cross_entropy, total_loss, weighted_edge_ce


def dist(axis, values, normalized=True):
    return ClassDistribution(axis, np.asarray(values, dtype=np.float64), normalized)


def cdg_loss_value(p_h, p_v, g_h, g_v, w=LossWeights()):
    g = Graph(dtype=np.float64)
    node = cdg_loss(g, g.constant(p_h), g.constant(p_v), dist("horizontal", g_h), dist("vertical", g_v), w)
    return node.item()


# ----------------------------------------------------------------------
# cdg_loss
# ----------------------------------------------------------------------


def test_cdg_loss_zero_at_target():
    target = np.array([[0.25, 0.75], [1.0, 0.0]])
    assert cdg_loss_value(target, target, target, target) == 0.0


def test_cdg_loss_hand_example():
    # Horizontal term: ((0-0.5)^2 + (0-1)^2) / 2 = 0.625; vertical term zero.
    p_h = np.array([[0.0, 0.0]])
    g_h = np.array([[0.5, 1.0]])
    tv = np.array([[0.5, 0.5]])
    assert cdg_loss_value(p_h, tv, g_h, tv) == pytest.approx(0.625, abs=1e-7)


def test_cdg_loss_linear_in_weights():
    rng = np.random.default_rng(0)
    p_h, g_h = rng.random((3, 2)), rng.random((3, 2))
    p_v, g_v = rng.random((4, 2)), rng.random((4, 2))
    only_h = cdg_loss_value(p_h, p_v, g_h, g_v, LossWeights(theta=2.0, phi=0.0))
    base_h = cdg_loss_value(p_h, p_v, g_h, g_v, LossWeights(theta=1.0, phi=0.0))
    assert only_h == pytest.approx(2.0 * base_h, rel=1e-12)


def test_cdg_loss_rejects_unnormalized_target():
    g = Graph()
    p = g.constant(np.zeros((2, 2)))
    raw = ClassDistribution("horizontal", np.array([[2.0, 0.0]]), normalized=False)
    with pytest.raises(ValueError, match="normalized"):
        cdg_loss(g, p, p, raw, dist("vertical", np.zeros((2, 2))), LossWeights())


def test_cdg_loss_rejects_shape_mismatch():
    g = Graph()
    p = g.constant(np.zeros((2, 2)))
    with pytest.raises(ValueError, match="shape"):
        cdg_loss(g, p, p, dist("horizontal", np.zeros((3, 2))), dist("vertical", np.zeros((2, 2))), LossWeights())


def test_cdg_loss_nonnegative_and_strict():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p_h, g_h = rng.random((3, 3)), rng.random((3, 3))
        value = cdg_loss_value(p_h, g_h, g_h, g_h)
        assert value >= 0.0
        assert (value == 0.0) == bool(np.all(p_h == g_h))


def test_cdg_loss_gradients():
    rng = np.random.default_rng(2)
    g = Graph(dtype=np.float64)
    p_h = g.param("p_h", rng.random((3, 2)))
    p_v = g.param("p_v", rng.random((4, 2)))
    loss = cdg_loss(g, p_h, p_v, dist("horizontal", rng.random((3, 2))), dist("vertical", rng.random((4, 2))), LossWeights())
    assert grad_check(g, loss, "p_h") < 1e-6
    assert grad_check(g, loss, "p_v") < 1e-6


# ----------------------------------------------------------------------
# cross-entropy
# ----------------------------------------------------------------------


def ce_value(logits, label, ignore_id=None):
    g = Graph(dtype=np.float64)
    return cross_entropy(g, g.constant(logits), label, ignore_id).item()


def test_cross_entropy_uniform_logits():
    assert ce_value(np.zeros((2, 2, 4)), np.zeros((2, 2), dtype=int)) == pytest.approx(math.log(4), rel=1e-12)


def test_cross_entropy_saturated_correct_class():
    logits = np.zeros((1, 1, 3))
    logits[0, 0, 1] = 20.0
    assert ce_value(logits, np.array([[1]])) < 1e-8


def test_cross_entropy_ignore_reduces_to_single_pixel():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(2, 2, 3))
    label = np.array([[9, 9], [9, 1]])
    single = ce_value(logits[1:, 1:], np.array([[1]]))
    assert ce_value(logits, label, ignore_id=9) == pytest.approx(single, rel=1e-12)


def test_cross_entropy_all_ignored_errors():
    with pytest.raises(ValueError, match="ignored"):
        ce_value(np.zeros((1, 2, 3)), np.array([[5, 5]]), ignore_id=5)


def test_cross_entropy_shift_invariance():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(3, 4, 5))
    label = rng.integers(0, 5, size=(3, 4))
    shifted = logits + rng.normal(size=(3, 4, 1))
    assert ce_value(shifted, label) == pytest.approx(ce_value(logits, label), abs=1e-6)


def test_cross_entropy_gradients():
    rng = np.random.default_rng(4)
    g = Graph(dtype=np.float64)
    logits = g.param("logits", rng.normal(size=(3, 3, 4)))
    loss = cross_entropy(g, logits, rng.integers(0, 4, size=(3, 3)), ignore_id=None)
    assert grad_check(g, loss, "logits") < 1e-6


# ----------------------------------------------------------------------
# weighted edge cross-entropy
# ----------------------------------------------------------------------


def edge_value(logits, gt):
    g = Graph(dtype=np.float64)
    return weighted_edge_ce(g, g.constant(logits), gt).item()


def test_edge_ce_saturated_prediction():
    gt = np.array([[1, 0], [0, 1]])
    logits = np.zeros((2, 2, 2))
    logits[gt == 1, 1] = 30.0
    logits[gt == 0, 0] = 30.0
    assert edge_value(logits, gt) < 1e-6


def test_edge_ce_no_edges_is_zero():
    rng = np.random.default_rng(5)
    assert edge_value(rng.normal(size=(3, 3, 2)), np.zeros((3, 3), dtype=int)) == 0.0


def test_edge_ce_balanced_is_half_unweighted():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(2, 2, 2))
    gt = np.array([[0, 1], [1, 0]])
    unweighted = ce_value(logits, gt)
    assert edge_value(logits, gt) == pytest.approx(0.5 * unweighted, rel=1e-12)


def test_edge_ce_gradients():
    rng = np.random.default_rng(7)
    g = Graph(dtype=np.float64)
    logits = g.param("logits", rng.normal(size=(3, 4, 2)))
    loss = weighted_edge_ce(g, logits, rng.integers(0, 2, size=(3, 4)))
    assert grad_check(g, loss, "logits") < 1e-6


# ----------------------------------------------------------------------
# total loss
# ----------------------------------------------------------------------


def test_total_loss_paper_weights_arithmetic():
    w = LossWeights()  # tau=1, gamma=40
    assert total_loss(1.0, 0.0, 0.1, w, edge_enabled=False) == pytest.approx(5.0)


def test_total_loss_gamma_zero_is_baseline():
    w = LossWeights(gamma=0.0)
    assert total_loss(1.25, 0.5, 7.0, w, edge_enabled=True) == pytest.approx(1.75)


def test_total_loss_all_zero():
    assert total_loss(0.0, 0.0, 0.0, LossWeights(), edge_enabled=True) == 0.0


def test_total_loss_linear_in_each_weight():
    rng = np.random.default_rng(8)
    p, e, c = rng.random(3)
    for tau in (0.0, 0.5, 2.0):
        got = total_loss(p, e, c, LossWeights(tau=tau, gamma=3.0), edge_enabled=True)
        assert got == pytest.approx(tau * (p + e) + 3.0 * c, rel=1e-12)
    for gamma in (0.0, 1.0, 40.0):
        got = total_loss(p, e, c, LossWeights(tau=2.0, gamma=gamma), edge_enabled=True)
        assert got == pytest.approx(2.0 * (p + e) + gamma * c, rel=1e-12)


def test_total_loss_builds_graph_nodes():
    g = Graph(dtype=np.float64)
    parsing = g.mean_all(g.mul(g.param("x", np.array([1.5])), g.constant(np.array([2.0]))))
    node = total_loss(parsing, None, 0.25, LossWeights(), edge_enabled=False)
    assert node.item() == pytest.approx(1.0 * 3.0 + 40.0 * 0.25)
    assert grad_check(g, node, "x") < 1e-6
