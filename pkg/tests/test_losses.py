"""Loss stack: frozen examples, fixed points, decomposition, gradients."""

from __future__ import annotations

import math

import numpy as np
import pytest

from mvanomaly.losses import (
    LossValue,
    bce_global,
    dice_loss,
    focal_loss,
    mcl_loss,
    mcl_total,
    point_global_loss,
    point_local_loss,
    rgb_global_loss,
    rgb_local_loss,
    total_loss,
)

# frozen by hand: 0.25 * (1-0.5)^2 * ln 2
FOCAL_HALF_POS = 0.04332169878499658


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.abs(analytic - numeric)
    den = np.maximum(1.0, np.abs(numeric))
    return float((num / den).max())


def numeric_block_grad(make_loss, arrays: dict, name: str, h: float = 1e-6) -> np.ndarray:
    base = arrays[name]
    out = np.zeros_like(base, dtype=np.float64)
    for i in range(base.size):
        up = {k: v.copy() for k, v in arrays.items()}
        up[name].flat[i] += h
        dn = {k: v.copy() for k, v in arrays.items()}
        dn[name].flat[i] -= h
        out.flat[i] = (make_loss(up).value - make_loss(dn).value) / (2.0 * h)
    return out


def check_all_blocks(make_loss, arrays: dict, tol: float = 1e-6):
    loss = make_loss(arrays)
    assert set(loss.gradients) == set(arrays)
    for name in arrays:
        numeric = numeric_block_grad(make_loss, arrays, name)
        assert rel_err(loss.gradients[name], numeric) < tol, name


# ---------------------------------------------------------------- contrastive


def test_mcl_worked_example():
    # a=(0,0), p=(3,4), n=(0,0), margin=1: hinge^2 = 1, pull = 25
    loss = mcl_loss([0.0, 0.0], [3.0, 4.0], [0.0, 0.0], margin=1.0)
    assert loss.value == 26.0


def test_mcl_gradients():
    rng = np.random.default_rng(51)
    arrays = {
        "anchor": rng.normal(size=5),
        "positive": rng.normal(size=5),
        "negative": rng.normal(size=5) + 3.0,  # hinge inactive, away from kink
    }
    check_all_blocks(lambda a: mcl_loss(a["anchor"], a["positive"], a["negative"], 1.0), arrays)
    arrays["negative"] = arrays["anchor"] + 0.01  # hinge active
    check_all_blocks(lambda a: mcl_loss(a["anchor"], a["positive"], a["negative"], 1.0), arrays)


def test_mcl_rejects_bad_input():
    with pytest.raises(ValueError, match="dims"):
        mcl_loss([0.0, 0.0], [1.0, 2.0, 3.0], [0.0, 0.0])
    with pytest.raises(ValueError, match="margin"):
        mcl_loss([0.0], [0.0], [0.0], margin=0.0)


def test_mcl_total_fixed_points():
    rng = np.random.default_rng(52)
    e_n = rng.normal(size=6)
    e_a = e_n + 2.0  # separated beyond margin
    aligned = mcl_total(e_n, e_a, e_n, e_a, margin=1.0)
    assert aligned.value == 0.0
    same = rng.normal(size=6)
    collapsed = mcl_total(same, same, same, same, margin=1.3)
    assert collapsed.value == 2.0 * 1.3**2


def test_mcl_total_is_two_anchored_terms():
    rng = np.random.default_rng(53)
    pn, pa, rn, ra = (rng.normal(size=4) for _ in range(4))
    total = mcl_total(pn, pa, rn, ra, margin=1.0)
    hand = mcl_loss(pn, rn, ra, 1.0).value + mcl_loss(pa, ra, rn, 1.0).value
    assert abs(total.value - hand) < 1e-12
    arrays = {"e_point_n": pn, "e_point_a": pa, "e_rgb_n": rn, "e_rgb_a": ra}
    check_all_blocks(
        lambda a: mcl_total(a["e_point_n"], a["e_point_a"], a["e_rgb_n"], a["e_rgb_a"], 1.0),
        arrays,
    )


# ------------------------------------------------------------- focal / dice


def test_focal_worked_example():
    loss = focal_loss(np.array([0.5]), np.array([1.0]))
    assert loss.value == FOCAL_HALF_POS
    assert abs(loss.value - 0.25 * 0.25 * math.log(2.0)) < 1e-16


def test_focal_mean_and_alpha_weighting():
    # two pixels, one of each class, p = 0.5 everywhere
    loss = focal_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    want = 0.5 * (0.25 * 0.25 * math.log(2.0) + 0.75 * 0.25 * math.log(2.0))
    assert abs(loss.value - want) < 1e-15


def test_focal_perfect_prediction_is_tiny():
    m = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert focal_loss(m, m).value < 1e-5


def test_focal_gradients():
    rng = np.random.default_rng(54)
    probs = rng.uniform(0.05, 0.95, size=(3, 4))
    mask = (rng.random((3, 4)) < 0.5).astype(np.float64)
    check_all_blocks(lambda a: focal_loss(a["probs"], mask), {"probs": probs})


def test_focal_shape_mismatch():
    with pytest.raises(ValueError, match="shapes"):
        focal_loss(np.zeros((2, 2)), np.zeros(3))


def test_dice_perfect_prediction_is_exact_zero():
    m = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    assert dice_loss(m, m).value == 0.0
    assert dice_loss(np.zeros((4, 4)), np.zeros((4, 4))).value == 0.0  # eps keeps 0/0 at 0


def test_dice_known_value():
    # pred=1 on half the positive mass: 1 - (2*1+1)/(1+2+1)
    loss = dice_loss(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    assert loss.value == 1.0 - 3.0 / 4.0


def test_dice_gradients():
    rng = np.random.default_rng(55)
    pred = rng.uniform(0.01, 0.99, size=(3, 3))
    target = (rng.random((3, 3)) < 0.4).astype(np.float64)
    check_all_blocks(lambda a: dice_loss(a["pred"], target), {"pred": pred})


# ------------------------------------------------------------ cross-entropy


def test_bce_half_is_ln_two():
    assert bce_global(0.5, 1).value == math.log(2.0)
    assert bce_global(0.5, 0).value == math.log(2.0)
    assert rgb_global_loss(0.5, 1).value == math.log(2.0)


def test_bce_gradients():
    for score, label in ((0.3, 1), (0.8, 0)):
        arrays = {"score": np.array(score)}
        check_all_blocks(lambda a, y=label: bce_global(float(a["score"]), y), arrays)


def test_point_global_loss_composes():
    scores = np.array([0.2, 0.9, 0.6])
    labels = np.array([0.0, 1.0, 1.0])
    loss = point_global_loss(scores, labels, 0.7, 1)
    hand = np.mean([bce_global(s, y).value for s, y in zip(scores, labels)])
    hand += bce_global(0.7, 1).value
    assert abs(loss.value - hand) < 1e-12
    arrays = {"view_scores": scores, "pooled": np.array(0.7)}
    check_all_blocks(
        lambda a: point_global_loss(a["view_scores"], labels, float(a["pooled"]), 1), arrays
    )
    with pytest.raises(ValueError, match="at least one"):
        point_global_loss(np.zeros(0), np.zeros(0), 0.5, 0)


# ---------------------------------------------------------- branch composites


def make_view_case(rng, n_views, hw=(4, 4)):
    probs = []
    masks = []
    for _ in range(n_views):
        a = rng.uniform(0.05, 0.95, size=hw)
        probs.append((1.0 - a, a))
        masks.append((rng.random(hw) < 0.4).astype(np.float64))
    return probs, masks


def test_point_local_single_view_reduces_to_hand_composition():
    rng = np.random.default_rng(56)
    (probs, masks) = make_view_case(rng, 1)
    pn = rng.uniform(0.05, 0.95, size=6)
    pm = (rng.random(6) < 0.5).astype(np.float64)
    loss = point_local_loss(probs, masks, (1.0 - pn, pn), pm)
    m = masks[0]
    hand = (
        focal_loss(probs[0][1], m).value
        + dice_loss(probs[0][0], 1.0 - m).value
        + dice_loss(probs[0][1], m).value
        + dice_loss(1.0 - pn, 1.0 - pm).value
        + dice_loss(pn, pm).value
    )
    assert abs(loss.value - hand) < 1e-12


def test_point_local_decomposes_across_views():
    rng = np.random.default_rng(57)
    probs, masks = make_view_case(rng, 3)
    pn = rng.uniform(0.05, 0.95, size=5)
    pm = (rng.random(5) < 0.5).astype(np.float64)
    loss = point_local_loss(probs, masks, (1.0 - pn, pn), pm)
    view_terms = [
        focal_loss(a, m).value + dice_loss(n, 1.0 - m).value + dice_loss(a, m).value
        for (n, a), m in zip(probs, masks)
    ]
    hand = float(np.sum(view_terms)) / 3.0
    hand += dice_loss(1.0 - pn, 1.0 - pm).value + dice_loss(pn, pm).value
    assert abs(loss.value - hand) < 1e-12


def test_point_local_perfect_prediction_is_tiny():
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    pm = np.array([0.0, 1.0, 0.0])
    loss = point_local_loss([(1.0 - m, m)], [m], (1.0 - pm, pm), pm)
    assert loss.value < 1e-4


def test_point_local_gradients():
    rng = np.random.default_rng(58)
    probs, masks = make_view_case(rng, 2, hw=(2, 3))
    pn = rng.uniform(0.05, 0.95, size=4)
    pm = (rng.random(4) < 0.5).astype(np.float64)
    arrays = {
        "view0.normal": probs[0][0], "view0.anomaly": probs[0][1],
        "view1.normal": probs[1][0], "view1.anomaly": probs[1][1],
        "point.normal": 1.0 - pn, "point.anomaly": pn,
    }

    def make(a):
        return point_local_loss(
            [(a["view0.normal"], a["view0.anomaly"]), (a["view1.normal"], a["view1.anomaly"])],
            masks,
            (a["point.normal"], a["point.anomaly"]),
            pm,
        )

    check_all_blocks(make, arrays)


def test_point_local_view_count_mismatch():
    with pytest.raises(ValueError, match="one mask per view"):
        point_local_loss([], [], (np.zeros(2), np.zeros(2)), np.zeros(2))


def test_rgb_local_decomposes_across_layers():
    rng = np.random.default_rng(59)
    mask = (rng.random((3, 3)) < 0.4).astype(np.float64)
    layers = []
    for _ in range(2):
        a = rng.uniform(0.05, 0.95, size=(3, 3))
        layers.append((1.0 - a, a))
    loss = rgb_local_loss(layers, mask, n_layers=2)
    hand = np.sum([
        focal_loss(a, mask).value + dice_loss(n, 1.0 - mask).value + dice_loss(a, mask).value
        for n, a in layers
    ]) / 2.0
    assert abs(loss.value - hand) < 1e-12
    with pytest.raises(ValueError, match="expected 4 layers"):
        rgb_local_loss(layers, mask)


def test_rgb_local_gradients():
    rng = np.random.default_rng(60)
    mask = (rng.random((2, 2)) < 0.5).astype(np.float64)
    a0 = rng.uniform(0.05, 0.95, size=(2, 2))
    a1 = rng.uniform(0.05, 0.95, size=(2, 2))
    arrays = {
        "layer0.normal": 1.0 - a0, "layer0.anomaly": a0,
        "layer1.normal": 1.0 - a1, "layer1.anomaly": a1,
    }

    def make(a):
        return rgb_local_loss(
            [(a["layer0.normal"], a["layer0.anomaly"]), (a["layer1.normal"], a["layer1.anomaly"])],
            mask,
            n_layers=2,
        )

    check_all_blocks(make, arrays)


# ---------------------------------------------------------------- total loss


def test_total_loss_weights_values_and_merges_gradients():
    g1 = {"shared": np.array([1.0, 2.0]), "only1": np.array([3.0])}
    g2 = {"shared": np.array([10.0, 20.0])}
    g3 = {"only3": np.array([5.0])}
    l1 = LossValue(1.0, g1)
    l2 = LossValue(2.0, g2)
    l3 = LossValue(4.0, g3)
    total = total_loss(l1, l2, l3, lam1=1.0, lam2=0.5, lam3=0.8)
    assert total.value == 1.0 + 0.5 * 2.0 + 0.8 * 4.0
    assert np.array_equal(total.gradients["shared"], 1.0 * g1["shared"] + 0.5 * g2["shared"])
    assert np.array_equal(total.gradients["only1"], g1["only1"])
    assert np.array_equal(total.gradients["only3"], 0.8 * g3["only3"])


def test_total_loss_zero_weight_drops_blocks():
    l1 = LossValue(1.0, {"a": np.ones(2)})
    l2 = LossValue(2.0, {"b": np.ones(2)})
    l3 = LossValue(3.0, {"c": np.ones(2)})
    total = total_loss(l1, l2, l3, lam3=0.0)
    assert "c" not in total.gradients and total.value == 3.0
    with pytest.raises(ValueError, match="nonnegative"):
        total_loss(l1, l2, l3, lam1=-0.1)


def test_loss_value_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite loss"):
        LossValue(math.nan, {})
    with pytest.raises(ValueError, match="non-finite gradient"):
        LossValue(0.0, {"x": np.array([np.inf])})
