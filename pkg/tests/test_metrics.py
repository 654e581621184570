import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gerunet import group as G
from gerunet.errors import ShapeMismatch
from gerunet.metrics import ConfusionCounts, confusion, evaluate, hausdorff, scalar_metrics


def set_oracle(pred, gt):
    """Metrics from Python sets of pixel coordinates."""
    cells = set(itertools.product(range(pred.shape[0]), range(pred.shape[1])))
    A = {p for p in cells if pred[p]}
    B = {p for p in cells if gt[p]}

    def frac(num, den, empty_ok):
        return (1.0 if empty_ok else 0.0) if den == 0 else num / den

    fg_empty = not A and not B
    inter = len(A & B)
    prec = frac(inter, len(A), fg_empty)
    rec = frac(inter, len(B), fg_empty)
    return {
        "dice": frac(2 * inter, len(A) + len(B), fg_empty),
        "jaccard": frac(inter, len(A | B), fg_empty),
        "precision": prec,
        "recall": rec,
        "specificity": frac(len(cells - A - B), len(cells - B), A == cells and B == cells),
        "f1": 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec),
    }


def hausdorff_bruteforce(pred, gt):
    A, B = np.argwhere(pred), np.argwhere(gt)
    if not len(A) or not len(B):
        return None

    def directed(P, Q):
        return max(min(math.hypot(*(p - q)) for q in Q) for p in P)

    return max(directed(A, B), directed(B, A))


def test_confusion_examples():
    one = np.ones((2, 2), bool)
    assert confusion(one, one) == ConfusionCounts(4, 0, 0, 0)
    assert confusion(~one, one).fn == 4
    p = np.zeros((3, 3), bool)
    g = np.zeros((3, 3), bool)
    p[0, :2] = p[1, :2] = True
    g[1, :2] = g[2, :2] = True
    assert confusion(p, g) == ConfusionCounts(2, 2, 2, 3)
    with pytest.raises(ShapeMismatch):
        confusion(p, np.zeros((3, 4)))


def test_scalar_metric_examples():
    r = scalar_metrics(ConfusionCounts(2, 2, 2, 3))
    assert (r.dice, r.jaccard, r.precision, r.recall) == (0.5, 1 / 3, 0.5, 0.5)
    perfect = scalar_metrics(ConfusionCounts(5, 0, 0, 4))
    assert all(v == 1.0 for v in (perfect.dice, perfect.jaccard, perfect.precision, perfect.recall,
                                  perfect.specificity, perfect.f1))
    assert scalar_metrics(ConfusionCounts(0, 0, 0, 9)).dice == 1.0
    assert scalar_metrics(ConfusionCounts(0, 3, 0, 6)).dice == 0.0


def test_metrics_match_set_oracle_on_100_pairs():
    rng = np.random.default_rng(0)
    for i in range(100):
        density = rng.uniform(0, 1) if i % 10 else 0.0
        pred, gt = rng.uniform(size=(8, 8)) < density, rng.uniform(size=(8, 8)) < rng.uniform()
        got = scalar_metrics(confusion(pred, gt)).to_dict()
        want = set_oracle(pred, gt)
        for k, v in want.items():
            assert got[k] == v, (i, k)
        assert got["dice"] >= got["jaccard"]


def test_hausdorff_examples():
    a = np.zeros((12, 12), bool)
    a[2:5, 3:7] = True
    assert hausdorff(a, a) == 0.0
    p, q = np.zeros((5, 5), bool), np.zeros((5, 5), bool)
    p[0, 0], q[3, 4] = True, True
    assert hausdorff(p, q) == 5.0
    A, B = np.zeros((11, 1), bool), np.zeros((11, 1), bool)
    A[0, 0] = A[10, 0] = B[0, 0] = True
    assert hausdorff(A, B) == 10.0
    assert hausdorff(np.zeros((3, 3)), a[:3, :3]) is None


def test_hausdorff_matches_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p = rng.uniform(size=(8, 8)) < rng.uniform(0.02, 0.5)
        g = rng.uniform(size=(8, 8)) < rng.uniform(0.02, 0.5)
        assert hausdorff(p, g) == hausdorff_bruteforce(p, g)


def test_hausdorff_percentile_variant():
    p = np.zeros((20, 20), bool)
    p[5:10, 5:10] = True
    g = p.copy()
    g[19, 19] = True
    assert hausdorff(g, p, percentile=50) == 0.0
    assert hausdorff(g, p) == hausdorff(g, p, percentile=100) > 12


masks = arrays(np.bool_, (6, 6))


@settings(max_examples=60, deadline=None)
@given(masks, masks, masks)
def test_hausdorff_symmetry_and_triangle(a, b, c):
    hab, hba = hausdorff(a, b), hausdorff(b, a)
    assert hab == hba
    hac, hcb = hausdorff(a, c), hausdorff(c, b)
    if None not in (hab, hac, hcb):
        assert hab <= hac + hcb + 1e-12


@settings(max_examples=40, deadline=None)
@given(masks, masks, st.sampled_from(G.ELEMENTS))
def test_metrics_invariant_under_symmetries(a, b, g):
    ta, tb = G.transform_plane(g, a), G.transform_plane(g, b)
    assert scalar_metrics(confusion(ta, tb)) == scalar_metrics(confusion(a, b))
    assert hausdorff(ta, tb) == hausdorff(a, b)


def test_evaluate_macro_average():
    p = np.zeros((2, 4, 4), bool)
    g = np.zeros((2, 4, 4), bool)
    p[0, :2] = g[0, :2] = True
    g[1, 0, 0] = True
    rep = evaluate(p, g)
    assert list(rep) == ["dice", "hausdorff", "jaccard", "precision", "recall", "specificity",
                         "f1", "n_images", "n_hausdorff_undefined"]
    assert rep["dice"] == 0.5
    assert rep["hausdorff"] == 0.0
    assert rep["n_images"] == 2 and rep["n_hausdorff_undefined"] == 1
    assert evaluate(np.zeros((0, 4, 4)), np.zeros((0, 4, 4)))["dice"] is None
