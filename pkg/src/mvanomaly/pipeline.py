"""Per-sample graph assembly: the training loss and the inference score path."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses, prompts, scoring
from .geometry import OrganizedPointCloud, ViewRender
from .tensorio import EmbeddingBundle


@dataclass(frozen=True)
class PipelineSample:
    """One organized cloud plus its renders and embedding bundles."""

    sample_id: str
    cloud: OrganizedPointCloud
    renders: tuple
    rgb_bundle: EmbeddingBundle
    view_bundles: tuple

    def __post_init__(self):
        if len(self.renders) < 1:
            raise ValueError(f"{self.sample_id}: needs at least one view")
        if len(self.view_bundles) != len(self.renders):
            raise ValueError(
                f"{self.sample_id}: {len(self.view_bundles)} view bundles "
                f"for {len(self.renders)} renders"
            )
        for r in self.renders:
            if not isinstance(r, ViewRender):
                raise TypeError("renders must be ViewRender instances")
        if not isinstance(self.cloud, OrganizedPointCloud):
            raise TypeError("cloud must be an OrganizedPointCloud")


@dataclass(frozen=True)
class LossSettings:
    """Hyperparameters of the per-sample objective."""

    tau: float = 0.07
    margin: float = 1.0
    gamma: float = 2.0
    alpha: float = 0.25
    eps: float = 1.0
    lam1: float = 1.0
    lam2: float = 1.0
    lam3: float = 0.8
    anchor: str = "point"

    def __post_init__(self):
        for name in ("lam1", "lam2", "lam3"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.anchor not in ("point", "rgb"):
            raise ValueError(f"unknown anchor {self.anchor!r}")


def _valid_indices(cloud: OrganizedPointCloud) -> np.ndarray:
    return np.flatnonzero(cloud.valid.reshape(-1))


def sample_loss_var(
    sample: PipelineSample,
    bank: prompts.PromptBank,
    encoder: prompts.StubTextEncoder,
    params: dict,
    settings: LossSettings,
    stage_vars=None,
) -> tuple:
    """Full objective graph for one sample.

    params maps block names to leaf Vars (the trainable state); stage_vars,
    when given, is a per-layer list of D x D Vars applied in the RGB branch.
    Returns (total Var, {"point": v, "rgb": v, "mcl": v} part values). Parts
    whose weight is zero are skipped, so their graphs are never built.
    """
    e_rn, e_ra, e_pn, e_pa = prompts.encode_all_vars(bank, encoder, params)
    cloud = sample.cloud
    out_hw = (cloud.height, cloud.width)
    terms = []
    parts = {}

    if settings.lam1 > 0.0:
        point_n, point_a, view_maps = scoring.point_anomaly_map_vars(
            sample.view_bundles, sample.renders, e_pn, e_pa, out_hw, settings.tau
        )
        idx = _valid_indices(cloud)
        point_probs = (ad.take(point_n, idx), ad.take(point_a, idx))
        point_mask = cloud.mask.reshape(-1)[idx]
        view_masks = [r.mask2d for r in sample.renders]
        l_local = losses.point_local_loss_var(
            view_maps, view_masks, point_probs, point_mask,
            settings.gamma, settings.alpha, settings.eps,
        )
        view_globals = [b.global_.data.astype(np.float64) for b in sample.view_bundles]
        score_vec, pooled = scoring.point_score_var(view_globals, e_pn, e_pa, settings.tau)
        view_labels = np.array([r.view_label for r in sample.renders], dtype=np.float64)
        l_global = losses.point_global_loss_var(
            score_vec, view_labels, pooled, float(cloud.global_label)
        )
        l_point = ad.add(l_local, l_global)
        terms.append(ad.mul(settings.lam1, l_point))
        parts["point"] = float(l_point.value)

    if settings.lam2 > 0.0:
        layer_maps = []
        for i, loc in enumerate(sample.rgb_bundle.locals_):
            b = stage_vars[i] if stage_vars is not None else None
            layer_maps.append(scoring.layer_prob_maps_var(
                loc.data.astype(np.float64), e_rn, e_ra, out_hw, b=b, tau=settings.tau
            ))
        l_local = losses.rgb_local_loss_var(
            layer_maps, cloud.mask, settings.gamma, settings.alpha, settings.eps,
            n_layers=len(layer_maps),
        )
        g_score = scoring.rgb_score_var(
            sample.rgb_bundle.global_.data.astype(np.float64), e_rn, e_ra, settings.tau
        )
        l_rgb = ad.add(l_local, losses.bce_var(g_score, float(cloud.global_label)))
        terms.append(ad.mul(settings.lam2, l_rgb))
        parts["rgb"] = float(l_rgb.value)

    if settings.lam3 > 0.0:
        l_mcl = losses.mcl_total_var(e_pn, e_pa, e_rn, e_ra, settings.margin, settings.anchor)
        terms.append(ad.mul(settings.lam3, l_mcl))
        parts["mcl"] = float(l_mcl.value)

    if not terms:
        raise ValueError("all loss weights are zero")
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total, parts


def score_sample(
    sample: PipelineSample,
    embeds: tuple,
    eta: float = 0.8,
    sigma: float = 4.0,
    tau: float = 0.07,
    stage_weights: scoring.StageWeights | None = None,
) -> scoring.ScoreReport:
    """Run both branches on one sample and fuse them.

    embeds is the (e_rgb_n, e_rgb_a, e_point_n, e_point_a) tuple from
    prompts.encode_all.
    """
    e_rn, e_ra, e_pn, e_pa = embeds
    cloud = sample.cloud
    if cloud.height != cloud.width:
        raise ValueError("scoring expects a square organized grid")
    rgb_map = scoring.rgb_anomaly_map(
        sample.rgb_bundle, (e_rn, e_ra), b=stage_weights, tau=tau, out_res=cloud.height
    )
    rgb_branch = scoring.BranchOutput(
        map=rgb_map,
        score=scoring.rgb_score(sample.rgb_bundle.global_.data, (e_rn, e_ra), tau),
    )
    point_map = scoring.point_anomaly_map(
        sample.view_bundles, sample.renders, (e_pn, e_pa), cloud, tau
    )
    point_branch = scoring.BranchOutput(
        map=point_map,
        score=scoring.point_score(
            [b.global_.data for b in sample.view_bundles], (e_pn, e_pa), tau
        ),
    )
    return scoring.cmm_fuse(rgb_branch, point_branch, eta, sigma)
