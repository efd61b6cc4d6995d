"""Inference-time anomaly maps, global scores, and score fusion.

The *_var functions mirror the numpy paths on autodiff graphs so training
can differentiate the same computations through the prompt embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import autodiff as ad
from .numerics import gaussian_filter, softmax_temp
from .tensorio import EmbeddingBundle

DEFAULT_TAU = 0.07


@dataclass(frozen=True)
class StageWeights:
    """Per-stage D x D weighting matrices for the RGB branch."""

    matrices: tuple

    def __post_init__(self):
        for m in self.matrices:
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("stage weights must be square matrices")

    @classmethod
    def identity(cls, dim: int, n_stages: int = 4) -> "StageWeights":
        return cls(tuple(np.eye(dim) for _ in range(n_stages)))


@dataclass(frozen=True)
class BranchOutput:
    map: np.ndarray  # grid of anomaly probabilities in [0,1]
    score: float

    def __post_init__(self):
        if self.map.min() < 0.0 or self.map.max() > 1.0:
            raise ValueError("branch map values must lie in [0,1]")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("branch score must lie in [0,1]")


@dataclass(frozen=True)
class ScoreReport:
    fused_map: np.ndarray
    fused_score: float  # may exceed 1 (score + map-max term)
    rgb: BranchOutput
    point: BranchOutput
    eta: float

    def __post_init__(self):
        if self.fused_map.min() < 0.0 or self.fused_map.max() > 1.0:
            raise ValueError("fused map values must lie in [0,1]")


def patch_probs_var(local_feats: np.ndarray, e_normal, e_anomaly, b=None, tau: float = DEFAULT_TAU) -> ad.Var:
    feats = ad.Var(np.asarray(local_feats, dtype=np.float64))
    if b is not None:
        bt = ad.transpose(ad.as_var(b))
        e_normal = ad.matmul(bt, ad.as_var(e_normal))
        e_anomaly = ad.matmul(bt, ad.as_var(e_anomaly))
    ln = ad.matmul(feats, ad.as_var(e_normal))
    la = ad.matmul(feats, ad.as_var(e_anomaly))
    logits = ad.stack([ln, la], axis=1)
    return ad.softmax_temp(logits, tau)


def patch_probs(local_feats, e_normal, e_anomaly, b=None, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Per-patch (normal, anomaly) probabilities from prompt similarities."""
    feats = np.asarray(local_feats, dtype=np.float64)
    e_n = np.asarray(e_normal, dtype=np.float64)
    e_a = np.asarray(e_anomaly, dtype=np.float64)
    if feats.shape[1] != e_n.shape[0] or e_n.shape != e_a.shape:
        raise ValueError("feature and prompt dims must agree")
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
        e_n = b.T @ e_n
        e_a = b.T @ e_a
    logits = np.stack([feats @ e_n, feats @ e_a], axis=1)
    return softmax_temp(logits, tau)


def _patch_grid_shape(n_patches: int) -> tuple:
    side = int(math.isqrt(n_patches))
    if side * side != n_patches:
        raise ValueError(f"patch count {n_patches} is not a square grid")
    return side, side


def layer_prob_maps_var(
    local_feats, e_normal, e_anomaly, out_hw, b=None, tau: float = DEFAULT_TAU
) -> tuple:
    """Upsampled (normal, anomaly) probability maps for one layer, as Vars."""
    probs = patch_probs_var(local_feats, e_normal, e_anomaly, b, tau)
    side = _patch_grid_shape(probs.value.shape[0])
    # center alignment keeps each patch's probability over its own pixels
    normal = ad.upsample_bilinear(ad.reshape(probs[:, 0], side), out_hw, align="centers")
    anomaly = ad.upsample_bilinear(ad.reshape(probs[:, 1], side), out_hw, align="centers")
    return normal, anomaly


def rgb_anomaly_map(
    bundle: EmbeddingBundle, prompts, b: StageWeights | None = None,
    tau: float = DEFAULT_TAU, out_res: int = 64,
) -> np.ndarray:
    """Mean over key layers of the upsampled anomaly-channel probability."""
    e_n, e_a = prompts
    if len(bundle.locals_) < 1:
        raise ValueError("bundle has no local layers")
    acc = None
    for i, loc in enumerate(bundle.locals_):
        feats = loc.data.astype(np.float64)
        bi = b.matrices[i] if b is not None else None
        probs = patch_probs(feats, e_n, e_a, bi, tau)
        side = _patch_grid_shape(feats.shape[0])
        grid = probs[:, 1].reshape(side)
        up = ad.upsample_bilinear(
            ad.Var(grid), (out_res, out_res), align="centers"
        ).value
        acc = up if acc is None else acc + up
    return np.clip(acc / len(bundle.locals_), 0.0, 1.0)


def rgb_score_var(global_feat: np.ndarray, e_normal, e_anomaly, tau: float = DEFAULT_TAU) -> ad.Var:
    f = ad.Var(np.asarray(global_feat, dtype=np.float64))
    logits = ad.stack(
        [ad.vsum(ad.mul(f, ad.as_var(e_normal))), ad.vsum(ad.mul(f, ad.as_var(e_anomaly)))],
        axis=0,
    )
    return ad.softmax_temp(logits, tau)[1]


def rgb_score(global_feat, prompts, tau: float = DEFAULT_TAU) -> float:
    """Anomaly-channel probability of the global feature vs the two prompts."""
    e_n, e_a = prompts
    f = np.asarray(global_feat, dtype=np.float64)
    logits = np.array([f @ np.asarray(e_n, dtype=np.float64),
                       f @ np.asarray(e_a, dtype=np.float64)])
    return float(softmax_temp(logits, tau)[1])


def mean_by_index_var(values: ad.Var, pix2point: np.ndarray, n_points: int) -> ad.Var:
    """Differentiable inverse rendering over a concatenated pixel vector."""
    p2p = np.ascontiguousarray(pix2point, dtype=np.int64)
    out = _kernels.accumulate_means(p2p, np.ascontiguousarray(values.value), n_points)
    sel = p2p >= 0
    pts = p2p[sel]
    counts = np.bincount(pts, minlength=n_points)

    def grad(g):
        gx = np.zeros_like(values.value)
        gx[sel] = g[pts] / counts[pts]
        return gx

    return ad.Var(out, ((values, grad),))


def point_anomaly_map_vars(
    view_bundles, views, e_normal, e_anomaly, cloud_shape, tau: float = DEFAULT_TAU
) -> tuple:
    """Per-point (normal, anomaly) value Vars plus the per-view map Vars.

    Uses layer-0 locals per view; per-point values are means over all views'
    pixels via the pixel-to-point maps.
    """
    if len(view_bundles) != len(views) or len(views) < 1:
        raise ValueError("need one bundle per view, at least one view")
    h, w = cloud_shape
    n_points = h * w
    view_maps = []
    for bundle, view in zip(view_bundles, views):
        feats = bundle.locals_[0].data.astype(np.float64)
        out_hw = view.pix2point.shape
        normal, anomaly = layer_prob_maps_var(feats, e_normal, e_anomaly, out_hw, tau=tau)
        view_maps.append((normal, anomaly))
    p2p = np.concatenate([v.pix2point.reshape(-1) for v in views])
    flat_n = ad.concat([ad.reshape(m[0], (-1,)) for m in view_maps])
    flat_a = ad.concat([ad.reshape(m[1], (-1,)) for m in view_maps])
    point_n = mean_by_index_var(flat_n, p2p, n_points)
    point_a = mean_by_index_var(flat_a, p2p, n_points)
    return point_n, point_a, view_maps


def point_anomaly_map(
    view_bundles, views, prompts, cloud, tau: float = DEFAULT_TAU
) -> np.ndarray:
    """Anomaly probability per organized-grid cell; invisible cells get 0."""
    e_n, e_a = prompts
    _, point_a, _ = point_anomaly_map_vars(
        view_bundles, views, ad.Var(np.asarray(e_n, dtype=np.float64)),
        ad.Var(np.asarray(e_a, dtype=np.float64)),
        (cloud.height, cloud.width), tau,
    )
    return np.clip(point_a.value.reshape(cloud.height, cloud.width), 0.0, 1.0)


def point_score_var(view_globals, e_normal, e_anomaly, tau: float = DEFAULT_TAU) -> tuple:
    """(per-view score vector Var, pooled mean Var)."""
    scores = ad.stack(
        [rgb_score_var(g, e_normal, e_anomaly, tau) for g in view_globals], axis=0
    )
    return scores, ad.vmean(scores)


def point_score(view_globals, prompts, tau: float = DEFAULT_TAU) -> float:
    """Mean anomaly probability over the per-view global features."""
    if len(view_globals) < 1:
        raise ValueError("need at least one view")
    vals = [rgb_score(g, prompts, tau) for g in view_globals]
    return float(np.mean(vals))


def cmm_fuse(rgb: BranchOutput, point: BranchOutput, eta: float, sigma: float = 4.0) -> ScoreReport:
    """Collaborative modulation: eta-weighted blend of blurred branch maps,
    plus the score term (eta*S_rgb + (2-eta)*S_point)/2 + (max maps)/2."""
    if not 0.0 <= eta <= 2.0:
        raise ValueError(f"eta must lie in [0,2], got {eta}")
    if rgb.map.shape != point.map.shape:
        raise ValueError("branch map shapes must agree")
    g_rgb = gaussian_filter(rgb.map, sigma)
    g_point = gaussian_filter(point.map, sigma)
    fused_map = (eta * g_rgb + (2.0 - eta) * g_point) / 2.0
    fused_score = (eta * rgb.score + (2.0 - eta) * point.score) / 2.0 + (
        float(rgb.map.max()) + float(point.map.max())
    ) / 2.0
    return ScoreReport(
        fused_map=np.clip(fused_map, 0.0, 1.0),
        fused_score=float(fused_score),
        rgb=rgb,
        point=point,
        eta=eta,
    )
