"""Anomaly maps, global scores, and collaborative score fusion."""

from __future__ import annotations

import numpy as np
import pytest

from mvanomaly import autodiff as ad
from mvanomaly.geometry import render_view, rotation_matrix
from mvanomaly.numerics import gaussian_filter, gradcheck
from mvanomaly.scoring import (
    BranchOutput,
    ScoreReport,
    StageWeights,
    cmm_fuse,
    layer_prob_maps_var,
    mean_by_index_var,
    patch_probs,
    patch_probs_var,
    point_anomaly_map,
    point_anomaly_map_vars,
    point_score,
    point_score_var,
    rgb_anomaly_map,
    rgb_score,
    rgb_score_var,
)
from mvanomaly.tensorio import EmbeddingBundle, EmbeddingTensor

SOFTMAX_02_03_TAU007 = 0.8066786301976913


def make_bundle(rng, n_patches: int = 4, dim: int = 3, n_locals: int = 1) -> EmbeddingBundle:
    return EmbeddingBundle(
        global_=EmbeddingTensor(rng.normal(size=dim)),
        locals_=tuple(
            EmbeddingTensor(rng.normal(size=(n_patches, dim))) for _ in range(n_locals)
        ),
    )


# ---------------------------------------------------------------- patch probs


def test_patch_probs_frozen_value_and_normalization():
    feats = np.array([[0.2, 0.3]])
    p = patch_probs(feats, [1.0, 0.0], [0.0, 1.0])
    assert p.shape == (1, 2)
    assert p[0, 1] == SOFTMAX_02_03_TAU007
    assert abs(p[0].sum() - 1.0) < 1e-12


def test_patch_probs_matches_hand_softmax():
    rng = np.random.default_rng(71)
    feats = rng.normal(size=(6, 4)) * 0.1
    e_n, e_a = rng.normal(size=4), rng.normal(size=4)
    p = patch_probs(feats, e_n, e_a)
    logits = np.stack([feats @ e_n, feats @ e_a], axis=1) / 0.07
    logits -= logits.max(axis=1, keepdims=True)
    hand = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    assert np.abs(p - hand).max() < 1e-15


def test_patch_probs_stage_weight_transforms_prompts():
    rng = np.random.default_rng(72)
    feats = rng.normal(size=(5, 3)) * 0.1
    e_n, e_a = rng.normal(size=3), rng.normal(size=3)
    b = rng.normal(size=(3, 3))
    got = patch_probs(feats, e_n, e_a, b=b)
    want = patch_probs(feats, b.T @ e_n, b.T @ e_a)
    assert np.array_equal(got, want)
    ident = patch_probs(feats, e_n, e_a, b=np.eye(3))
    assert np.array_equal(ident, patch_probs(feats, e_n, e_a))


def test_patch_probs_rejects_dim_mismatch():
    with pytest.raises(ValueError, match="dims"):
        patch_probs(np.zeros((2, 3)), np.zeros(4), np.zeros(4))


def test_patch_probs_var_matches_and_differentiates():
    rng = np.random.default_rng(73)
    feats = rng.normal(size=(4, 3)) * 0.1
    e_n0, e_a0 = rng.normal(size=3), rng.normal(size=3)
    b = rng.normal(size=(3, 3)) * 0.3
    got = patch_probs_var(feats, ad.Var(e_n0), ad.Var(e_a0), b=b).value
    assert np.abs(got - patch_probs(feats, e_n0, e_a0, b=b)).max() < 1e-15

    w = rng.normal(size=(4, 2))

    def f(flat):
        e = ad.Var(flat)
        p = patch_probs_var(feats, e, ad.Var(e_a0), b=b)
        return float(ad.vsum(ad.mul(p, w)).value)

    def g(flat):
        e = ad.Var(flat)
        p = patch_probs_var(feats, e, ad.Var(e_a0), b=b)
        (grad,) = ad.backward(ad.vsum(ad.mul(p, w)), [e])
        return grad

    assert gradcheck(f, g, e_n0) < 1e-7


# ----------------------------------------------------------------- rgb branch


def test_layer_prob_maps_channels_stay_complementary():
    rng = np.random.default_rng(74)
    feats = rng.normal(size=(9, 3)) * 0.1
    e_n, e_a = ad.Var(rng.normal(size=3)), ad.Var(rng.normal(size=3))
    normal, anomaly = layer_prob_maps_var(feats, e_n, e_a, (12, 10))
    assert normal.value.shape == (12, 10) and anomaly.value.shape == (12, 10)
    assert np.abs(normal.value + anomaly.value - 1.0).max() < 1e-12


def test_layer_prob_maps_rejects_non_square_patch_count():
    feats = np.zeros((6, 3))
    with pytest.raises(ValueError, match="square"):
        layer_prob_maps_var(feats, ad.Var(np.zeros(3)), ad.Var(np.zeros(3)), (8, 8))


def test_rgb_anomaly_map_is_layer_mean_of_upsampled_channels():
    rng = np.random.default_rng(75)
    bundle = make_bundle(rng, n_patches=4, dim=3, n_locals=2)
    e_n, e_a = rng.normal(size=3), rng.normal(size=3)
    got = rgb_anomaly_map(bundle, (e_n, e_a), out_res=16)
    acc = np.zeros((16, 16))
    for loc in bundle.locals_:
        p = patch_probs(loc.data.astype(np.float64), e_n, e_a)[:, 1].reshape(2, 2)
        acc += ad.upsample_bilinear(ad.Var(p), (16, 16), align="centers").value
    assert np.array_equal(got, np.clip(acc / 2.0, 0.0, 1.0))
    assert got.min() >= 0.0 and got.max() <= 1.0


def test_rgb_anomaly_map_applies_per_stage_weights():
    rng = np.random.default_rng(76)
    bundle = make_bundle(rng, n_patches=4, dim=3, n_locals=2)
    e_n, e_a = rng.normal(size=3), rng.normal(size=3)
    ident = StageWeights.identity(3, n_stages=2)
    assert np.array_equal(
        rgb_anomaly_map(bundle, (e_n, e_a), b=ident), rgb_anomaly_map(bundle, (e_n, e_a))
    )
    ms = tuple(rng.normal(size=(3, 3)) for _ in range(2))
    with_b = rgb_anomaly_map(bundle, (e_n, e_a), b=StageWeights(ms), out_res=8)
    acc = np.zeros((8, 8))
    for loc, m in zip(bundle.locals_, ms):
        p = patch_probs(loc.data.astype(np.float64), e_n, e_a, b=m)[:, 1].reshape(2, 2)
        acc += ad.upsample_bilinear(ad.Var(p), (8, 8), align="centers").value
    assert np.array_equal(with_b, np.clip(acc / 2.0, 0.0, 1.0))


def test_rgb_score_frozen_value_and_var_parity():
    f = np.array([0.2, 0.3])
    score = rgb_score(f, ([1.0, 0.0], [0.0, 1.0]))
    assert score == SOFTMAX_02_03_TAU007
    assert rgb_score_var(f, ad.Var(np.array([1.0, 0.0])), ad.Var(np.array([0.0, 1.0]))).value == score


def test_stage_weights_must_be_square():
    with pytest.raises(ValueError, match="square"):
        StageWeights((np.zeros((2, 3)),))


# --------------------------------------------------------------- point branch


def square_cloud(rng, side: int = 6):
    from mvanomaly.geometry import OrganizedPointCloud

    pts = rng.normal(size=(side, side, 3))
    valid = np.ones((side, side), dtype=bool)
    mask = np.zeros((side, side), dtype=bool)
    rgb = np.zeros((side, side, 3), dtype=np.uint8)
    return OrganizedPointCloud(pts, valid, mask, rgb)


def test_mean_by_index_forward_and_gradient():
    rng = np.random.default_rng(77)
    vals = rng.normal(size=10)
    p2p = np.array([0, 1, 1, -1, 2, 0, 2, 2, -1, 1], dtype=np.int64)
    out = mean_by_index_var(ad.Var(vals), p2p, 4)
    from mvanomaly import _kernels

    assert np.array_equal(out.value, _kernels.accumulate_means(p2p, vals, 4))
    assert out.value[3] == 0.0  # unseen point

    w = rng.normal(size=4)

    def f(flat):
        return float(ad.vsum(ad.mul(mean_by_index_var(ad.Var(flat), p2p, 4), w)).value)

    def g(flat):
        v = ad.Var(flat)
        (grad,) = ad.backward(ad.vsum(ad.mul(mean_by_index_var(v, p2p, 4), w)), [v])
        return grad

    assert gradcheck(f, g, vals) < 1e-7
    # pixels mapped to -1 must carry zero gradient
    grad = g(vals)
    assert grad[3] == 0.0 and grad[8] == 0.0


def test_point_maps_compose_upsample_and_inverse_render():
    rng = np.random.default_rng(78)
    cloud = square_cloud(rng, side=6)
    views = [render_view(cloud, rotation_matrix("X", a), 8) for a in (0.0, 0.5)]
    bundles = [make_bundle(rng, n_patches=16, dim=3) for _ in views]
    e_n, e_a = rng.normal(size=3), rng.normal(size=3)
    pn, pa, view_maps = point_anomaly_map_vars(
        bundles, views, ad.Var(e_n), ad.Var(e_a), (6, 6)
    )
    assert len(view_maps) == 2
    from mvanomaly import _kernels

    p2p = np.concatenate([v.pix2point.reshape(-1) for v in views])
    flat_a = np.concatenate([m[1].value.reshape(-1) for m in view_maps])
    assert np.array_equal(pa.value, _kernels.accumulate_means(p2p, flat_a, 36))
    assert np.abs(pn.value + pa.value - 1.0)[pa.value != 0.0].max() < 1e-12

    grid = point_anomaly_map(bundles, views, (e_n, e_a), cloud)
    assert grid.shape == (6, 6)
    assert np.array_equal(grid, np.clip(pa.value.reshape(6, 6), 0.0, 1.0))


def test_point_map_vars_rejects_count_mismatch():
    rng = np.random.default_rng(79)
    cloud = square_cloud(rng)
    view = render_view(cloud, rotation_matrix("X", 0.0), 8)
    with pytest.raises(ValueError, match="one bundle per view"):
        point_anomaly_map_vars([], [view], ad.Var(np.zeros(3)), ad.Var(np.zeros(3)), (6, 6))


def test_point_score_is_mean_over_views():
    rng = np.random.default_rng(80)
    globals_ = [rng.normal(size=3) * 0.1 for _ in range(3)]
    e_n, e_a = rng.normal(size=3), rng.normal(size=3)
    got = point_score(globals_, (e_n, e_a))
    hand = np.mean([rgb_score(g, (e_n, e_a)) for g in globals_])
    assert abs(got - hand) < 1e-15
    scores, pooled = point_score_var(globals_, ad.Var(e_n), ad.Var(e_a))
    assert scores.value.shape == (3,)
    assert abs(float(pooled.value) - got) < 1e-15
    with pytest.raises(ValueError, match="at least one"):
        point_score([], (e_n, e_a))


# -------------------------------------------------------------------- fusion


def branch(map_, score):
    return BranchOutput(map=np.asarray(map_, dtype=np.float64), score=score)


def test_fuse_constant_maps_closed_form():
    rgb = branch(np.full((16, 16), 0.6), 0.5)
    point = branch(np.full((16, 16), 0.2), 0.5)
    for eta in (0.0, 0.8, 1.0, 2.0):
        rep = cmm_fuse(rgb, point, eta)
        want = (eta * 0.6 + (2.0 - eta) * 0.2) / 2.0
        assert np.all(rep.fused_map == want), eta


def test_fuse_endpoints_reduce_to_single_branch():
    rng = np.random.default_rng(81)
    rgb = branch(rng.random((20, 20)), 0.7)
    point = branch(rng.random((20, 20)), 0.3)
    zero = cmm_fuse(rgb, point, 0.0, sigma=2.0)
    assert np.array_equal(zero.fused_map, np.clip(gaussian_filter(point.map, 2.0), 0.0, 1.0))
    two = cmm_fuse(rgb, point, 2.0, sigma=2.0)
    assert np.array_equal(two.fused_map, np.clip(gaussian_filter(rgb.map, 2.0), 0.0, 1.0))
    assert zero.fused_score == point.score + (rgb.map.max() + point.map.max()) / 2.0
    assert two.fused_score == rgb.score + (rgb.map.max() + point.map.max()) / 2.0


def test_fuse_worked_example():
    rgb_map = np.zeros((12, 12))
    rgb_map[3, 3] = 0.5
    pt_map = np.zeros((12, 12))
    pt_map[8, 8] = 0.25
    rep = cmm_fuse(branch(rgb_map, 0.6), branch(pt_map, 0.4), 0.8)
    assert abs(rep.fused_score - 0.855) < 1e-12
    assert rep.eta == 0.8


def test_fuse_validation():
    rgb = branch(np.zeros((8, 8)), 0.5)
    point = branch(np.zeros((8, 8)), 0.5)
    with pytest.raises(ValueError, match="eta"):
        cmm_fuse(rgb, point, 2.5)
    with pytest.raises(ValueError, match="shapes"):
        cmm_fuse(rgb, branch(np.zeros((4, 4)), 0.5), 1.0)


def test_branch_output_validation():
    with pytest.raises(ValueError, match="map values"):
        BranchOutput(map=np.array([[1.5]]), score=0.5)
    with pytest.raises(ValueError, match="score"):
        BranchOutput(map=np.zeros((2, 2)), score=1.2)
    with pytest.raises(ValueError, match="fused map"):
        ScoreReport(
            fused_map=np.array([[-0.1]]),
            fused_score=0.5,
            rgb=branch(np.zeros((1, 1)), 0.0),
            point=branch(np.zeros((1, 1)), 0.0),
            eta=1.0,
        )
