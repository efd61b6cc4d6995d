"""Training objectives: contrastive, focal, dice, cross-entropy, and the
weighted total. Every public loss returns the value plus gradients for its
named input blocks; the *_var functions build graph nodes for composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossValue:
    value: float
    gradients: dict

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite loss value {self.value}")
        for name, g in self.gradients.items():
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for block {name!r}")


def _finalize(value: ad.Var, blocks: dict) -> LossValue:
    names = list(blocks)
    grads = ad.backward(value, [blocks[n] for n in names])
    return LossValue(float(value.value), dict(zip(names, grads)))


def mcl_loss_var(anchor: ad.Var, positive: ad.Var, negative: ad.Var, margin: float) -> ad.Var:
    d_an = ad.l2norm(ad.sub(anchor, negative))
    hinge = ad.relu(ad.sub(margin, d_an))
    pull = ad.vsum(ad.powc(ad.sub(anchor, positive), 2.0))
    return ad.add(ad.mul(hinge, hinge), pull)


def mcl_loss(anchor, positive, negative, margin: float = 1.0) -> LossValue:
    """Hinge push-apart from the negative plus squared pull to the positive."""
    anchor, positive, negative = (np.asarray(v, dtype=np.float64) for v in (anchor, positive, negative))
    if not anchor.shape == positive.shape == negative.shape:
        raise ValueError("embedding dims must agree")
    if margin <= 0:
        raise ValueError("margin must be positive")
    blocks = {
        "anchor": ad.Var(anchor),
        "positive": ad.Var(positive),
        "negative": ad.Var(negative),
    }
    value = mcl_loss_var(blocks["anchor"], blocks["positive"], blocks["negative"], margin)
    return _finalize(value, blocks)


def mcl_total_var(
    e_point_n: ad.Var,
    e_point_a: ad.Var,
    e_rgb_n: ad.Var,
    e_rgb_a: ad.Var,
    margin: float,
    anchor: str = "point",
) -> ad.Var:
    if anchor == "point":
        t1 = mcl_loss_var(e_point_n, e_rgb_n, e_rgb_a, margin)
        t2 = mcl_loss_var(e_point_a, e_rgb_a, e_rgb_n, margin)
    elif anchor == "rgb":
        t1 = mcl_loss_var(e_rgb_n, e_point_n, e_point_a, margin)
        t2 = mcl_loss_var(e_rgb_a, e_point_a, e_point_n, margin)
    else:
        raise ValueError(f"anchor must be 'point' or 'rgb', got {anchor!r}")
    return ad.add(t1, t2)


def mcl_total(e_point_n, e_point_a, e_rgb_n, e_rgb_a, margin: float = 1.0) -> LossValue:
    """Both state-aligned contrastive terms, anchored on the point prompts."""
    vecs = [np.asarray(v, dtype=np.float64) for v in (e_point_n, e_point_a, e_rgb_n, e_rgb_a)]
    if len({v.shape for v in vecs}) != 1:
        raise ValueError("embedding dims must agree")
    blocks = {
        "e_point_n": ad.Var(vecs[0]),
        "e_point_a": ad.Var(vecs[1]),
        "e_rgb_n": ad.Var(vecs[2]),
        "e_rgb_a": ad.Var(vecs[3]),
    }
    value = mcl_total_var(
        blocks["e_point_n"], blocks["e_point_a"], blocks["e_rgb_n"], blocks["e_rgb_a"], margin
    )
    return _finalize(value, blocks)


def focal_var(anomaly_prob: ad.Var, target: np.ndarray, gamma: float, alpha: float) -> ad.Var:
    t = np.asarray(target, dtype=np.float64)
    p = ad.clip(anomaly_prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_t = ad.add(ad.mul(p, t), ad.mul(ad.sub(1.0, p), 1.0 - t))
    alpha_t = alpha * t + (1.0 - alpha) * (1.0 - t)
    per_pixel = ad.mul(ad.mul(alpha_t, ad.powc(ad.sub(1.0, p_t), gamma)), ad.log(p_t))
    return ad.neg(ad.vmean(per_pixel))


def focal_loss(anomaly_prob, target, gamma: float = 2.0, alpha: float = 0.25) -> LossValue:
    """Mean focal term on the anomaly-probability map against a binary mask."""
    probs = np.asarray(anomaly_prob, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape:
        raise ValueError("probability and target shapes must agree")
    block = ad.Var(probs)
    return _finalize(focal_var(block, target, gamma, alpha), {"probs": block})


def dice_var(pred: ad.Var, target: np.ndarray, eps: float) -> ad.Var:
    t = np.asarray(target, dtype=np.float64)
    inter = ad.vsum(ad.mul(pred, t))
    num = ad.add(ad.mul(2.0, inter), eps)
    den = ad.add(ad.add(ad.vsum(pred), float(t.sum())), eps)
    return ad.sub(1.0, ad.div(num, den))


def dice_loss(pred, target, eps: float = 1.0) -> LossValue:
    pred_arr = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred_arr.shape != target.shape:
        raise ValueError("prediction and target shapes must agree")
    block = ad.Var(pred_arr)
    return _finalize(dice_var(block, target, eps), {"pred": block})


def bce_var(score: ad.Var, label: float) -> ad.Var:
    s = ad.clip(score, PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = float(label)
    return ad.neg(
        ad.add(ad.mul(y, ad.log(s)), ad.mul(1.0 - y, ad.log(ad.sub(1.0, s))))
    )


def bce_global(score: float, label) -> LossValue:
    block = ad.Var(np.float64(score))
    return _finalize(bce_var(block, float(label)), {"score": block})


def bce_vec_var(scores: ad.Var, labels: np.ndarray) -> ad.Var:
    """Mean binary cross-entropy of a score vector against 0/1 labels."""
    y = np.asarray(labels, dtype=np.float64)
    s = ad.clip(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = ad.add(ad.mul(y, ad.log(s)), ad.mul(1.0 - y, ad.log(ad.sub(1.0, s))))
    return ad.neg(ad.vmean(terms))


def point_local_loss_var(
    view_probs,
    view_masks,
    point_probs,
    point_mask,
    gamma: float,
    alpha: float,
    eps: float,
) -> ad.Var:
    if len(view_probs) < 1 or len(view_probs) != len(view_masks):
        raise ValueError("need one mask per view, at least one view")
    terms = []
    for (normal, anomaly), mask in zip(view_probs, view_masks):
        m = np.asarray(mask, dtype=np.float64)
        t = ad.add(
            focal_var(anomaly, m, gamma, alpha),
            ad.add(dice_var(normal, 1.0 - m, eps), dice_var(anomaly, m, eps)),
        )
        terms.append(t)
    view_term = ad.div(_sum_vars(terms), float(len(terms)))
    pm = np.asarray(point_mask, dtype=np.float64)
    point_term = ad.add(
        dice_var(point_probs[0], 1.0 - pm, eps), dice_var(point_probs[1], pm, eps)
    )
    return ad.add(view_term, point_term)


def _sum_vars(items):
    total = items[0]
    for item in items[1:]:
        total = ad.add(total, item)
    return total


def point_local_loss(
    view_probs,
    view_masks,
    point_probs,
    point_mask,
    gamma: float = 2.0,
    alpha: float = 0.25,
    eps: float = 1.0,
) -> LossValue:
    """Per-view focal+dice plus point-level dice after inverse rendering.

    view_probs: per view an (normal, anomaly) probability map pair;
    point_probs: (normal, anomaly) per-point vectors on valid cells.
    """
    blocks = {}
    wrapped_views = []
    for k, (normal, anomaly) in enumerate(view_probs):
        vn = ad.Var(np.asarray(normal, dtype=np.float64))
        va = ad.Var(np.asarray(anomaly, dtype=np.float64))
        blocks[f"view{k}.normal"] = vn
        blocks[f"view{k}.anomaly"] = va
        wrapped_views.append((vn, va))
    pn = ad.Var(np.asarray(point_probs[0], dtype=np.float64))
    pa = ad.Var(np.asarray(point_probs[1], dtype=np.float64))
    blocks["point.normal"] = pn
    blocks["point.anomaly"] = pa
    value = point_local_loss_var(
        wrapped_views, view_masks, (pn, pa), point_mask, gamma, alpha, eps
    )
    return _finalize(value, blocks)


def point_global_loss_var(view_scores: ad.Var, view_labels, pooled: ad.Var, label) -> ad.Var:
    return ad.add(bce_vec_var(view_scores, view_labels), bce_var(pooled, float(label)))


def point_global_loss(view_scores, view_labels, pooled: float, label) -> LossValue:
    scores = np.asarray(view_scores, dtype=np.float64)
    if scores.size < 1:
        raise ValueError("need at least one view score")
    sv = ad.Var(scores)
    pv = ad.Var(np.float64(pooled))
    value = point_global_loss_var(sv, view_labels, pv, label)
    return _finalize(value, {"view_scores": sv, "pooled": pv})


def rgb_local_loss_var(layer_probs, mask, gamma: float, alpha: float, eps: float, n_layers: int) -> ad.Var:
    if len(layer_probs) != n_layers:
        raise ValueError(f"expected {n_layers} layers, got {len(layer_probs)}")
    m = np.asarray(mask, dtype=np.float64)
    terms = []
    for normal, anomaly in layer_probs:
        t = ad.add(
            focal_var(anomaly, m, gamma, alpha),
            ad.add(dice_var(normal, 1.0 - m, eps), dice_var(anomaly, m, eps)),
        )
        terms.append(t)
    return ad.div(_sum_vars(terms), float(n_layers))


def rgb_local_loss(
    layer_probs, mask, gamma: float = 2.0, alpha: float = 0.25, eps: float = 1.0,
    n_layers: int = 4,
) -> LossValue:
    blocks = {}
    wrapped = []
    for i, (normal, anomaly) in enumerate(layer_probs):
        vn = ad.Var(np.asarray(normal, dtype=np.float64))
        va = ad.Var(np.asarray(anomaly, dtype=np.float64))
        blocks[f"layer{i}.normal"] = vn
        blocks[f"layer{i}.anomaly"] = va
        wrapped.append((vn, va))
    value = rgb_local_loss_var(wrapped, mask, gamma, alpha, eps, n_layers)
    return _finalize(value, blocks)


def rgb_global_loss(score: float, label) -> LossValue:
    return bce_global(score, label)


def total_loss(
    l_point: LossValue,
    l_rgb: LossValue,
    l_mcl: LossValue,
    lam1: float = 1.0,
    lam2: float = 1.0,
    lam3: float = 0.8,
) -> LossValue:
    """Weighted sum; gradients are scaled and merged by block name, and
    components with a zero weight contribute no gradient blocks at all."""
    if lam1 < 0 or lam2 < 0 or lam3 < 0:
        raise ValueError("loss weights must be nonnegative")
    value = lam1 * l_point.value + lam2 * l_rgb.value + lam3 * l_mcl.value
    merged: dict = {}
    for lam, comp in ((lam1, l_point), (lam2, l_rgb), (lam3, l_mcl)):
        if lam == 0.0:
            continue
        for name, g in comp.gradients.items():
            scaled = lam * g
            merged[name] = merged[name] + scaled if name in merged else scaled
    return LossValue(value, merged)
