"""Seeded synthetic corpus: smooth organized surfaces with bump/dent or color
blotch anomalies, plus embedding bundles from a frozen random feature map."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .fileio import atomic_write_bytes, pgm_bytes, ppm_bytes, read_pgm, read_ppm
from .geometry import OrganizedPointCloud, default_view_set, render_view
from .numerics import gaussian_filter
from .pipeline import PipelineSample
from .tensorio import EmbeddingBundle, EmbeddingTensor, mcle_bytes, read_mcle

RGB_STAT_DIM = 10
RGB_GLOBAL_DIM = 10
DEPTH_STAT_DIM = 7
DEPTH_GLOBAL_DIM = 6
N_RGB_LAYERS = 4
ANOMALY_KINDS = ("geometric", "color")


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 42
    n_normal: int = 40
    n_anomalous: int = 40
    grid: int = 64
    kinds: tuple = ANOMALY_KINDS
    area_min: float = 0.005
    area_max: float = 0.05
    patch: int = 8
    embed_dim: int = 64
    border: int = 2
    # Seed of the frozen feature map standing in for the image encoder; kept
    # separate from `seed` so differently seeded datasets share one encoder.
    feature_seed: int = 7

    def __post_init__(self):
        if self.n_normal < 0 or self.n_anomalous < 0:
            raise ValueError("sample counts must be >= 0")
        if self.n_normal + self.n_anomalous < 1:
            raise ValueError("need at least one sample")
        if not 0.0 < self.area_min <= self.area_max < 1.0:
            raise ValueError("area fractions must satisfy 0 < min <= max < 1")
        if self.grid < 4 * self.patch or self.grid % self.patch != 0:
            raise ValueError("grid must be a multiple of patch, at least 4 patches wide")
        if not self.kinds or any(k not in ANOMALY_KINDS for k in self.kinds):
            raise ValueError(f"kinds must be drawn from {ANOMALY_KINDS}")
        if self.border < 1 or 2 * self.border >= self.grid // 2:
            raise ValueError("border must leave most of the grid valid")

    @property
    def total(self) -> int:
        return self.n_normal + self.n_anomalous


def _upsample(coarse: np.ndarray, hw: tuple) -> np.ndarray:
    return ad.upsample_bilinear(ad.Var(np.asarray(coarse, dtype=np.float64)), hw).value


def _projection(key, out_dim: int, in_dim: int) -> np.ndarray:
    rng = np.random.default_rng(list(key))
    return rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def _tiles(img: np.ndarray, patch: int) -> np.ndarray:
    h, w = img.shape[:2]
    gh, gw = h // patch, w // patch
    tail = img.shape[2:]
    t = img.reshape(gh, patch, gw, patch, *tail)
    t = t.transpose(0, 2, 1, 3, *range(4, t.ndim))
    return t.reshape(gh * gw, patch, patch, *tail)


def rgb_patch_stats(rgb: np.ndarray, patch: int) -> np.ndarray:
    """Per-patch color statistics: channel means and stds, gradient energy,
    and the deviation of patch pixels from the whole-image mean color."""
    img = rgb.astype(np.float64) / 255.0
    tiles = _tiles(img, patch)
    means = tiles.mean(axis=(1, 2))
    stds = tiles.std(axis=(1, 2))
    grad = (
        np.abs(np.diff(tiles, axis=2)).mean(axis=(1, 2, 3))
        + np.abs(np.diff(tiles, axis=1)).mean(axis=(1, 2, 3))
    )
    img_mean = img.mean(axis=(0, 1))
    dev = np.linalg.norm(means - img_mean, axis=1)
    max_dev = np.linalg.norm(tiles - img_mean, axis=3).max(axis=(1, 2))
    bias = np.ones(len(tiles))
    return np.column_stack([means, stds, grad, 3.0 * dev, 2.0 * max_dev, bias])


def rgb_global_stats(rgb: np.ndarray, patch: int) -> np.ndarray:
    img = rgb.astype(np.float64) / 255.0
    stats = rgb_patch_stats(rgb, patch)
    grad = np.abs(np.diff(img, axis=1)).mean() + np.abs(np.diff(img, axis=0)).mean()
    return np.array(
        [
            *img.mean(axis=(0, 1)),
            *img.std(axis=(0, 1)),
            grad,
            stats[:, 7].mean(),
            stats[:, 8].max(),
            1.0,
        ]
    )


def _masked_moments(values, mask):
    """Per-patch mean/std of values where mask holds; zeros on empty patches."""
    w = mask.astype(np.float64)
    cnt = np.maximum(w.sum(axis=(1, 2)), 1.0)
    mean = (values * w).sum(axis=(1, 2)) / cnt
    var = (values**2 * w).sum(axis=(1, 2)) / cnt - mean**2
    return mean, np.sqrt(np.maximum(var, 0.0))


def _masked_diff_stats(values, mask, order: int):
    """Mean and max of |finite difference| restricted to fully covered runs."""
    total, count, peak = 0.0, 0.0, 0.0
    for axis in (1, 2):
        dv = np.abs(np.diff(values, n=order, axis=axis))
        dm = np.ones_like(dv, dtype=bool)
        for k in range(order + 1):
            sl = [slice(None)] * 3
            sl[axis] = slice(k, values.shape[axis] - order + k)
            dm &= mask[tuple(sl)]
        total = total + (dv * dm).sum(axis=(1, 2))
        count = count + dm.sum(axis=(1, 2))
        peak = np.maximum(peak, np.where(dm, dv, 0.0).max(axis=(1, 2)))
    return total / np.maximum(count, 1.0), peak


def depth_patch_stats(depth: np.ndarray, patch: int) -> np.ndarray:
    """Per-patch depth statistics on a lightly smoothed map.

    The z-buffer splat leaves pixel-scale jitter, so gradients and curvature
    are measured after a sigma-1 blur, on pixels eroded away from the
    silhouette; curvature stays near zero on piecewise-planar surfaces and
    flags localized bumps and dents in any view.
    """
    d = np.asarray(depth, dtype=np.float64)
    cover = d > 0.0
    sm = gaussian_filter(d, 1.0)
    core = ndimage.binary_erosion(cover, iterations=4)
    sm_t, core_t = _tiles(sm, patch), _tiles(core, patch)
    mean, std = _masked_moments(sm_t, core_t)
    grad, _ = _masked_diff_stats(sm_t, core_t, order=1)
    curv, curv_max = _masked_diff_stats(sm_t, core_t, order=2)
    coverage = _tiles(cover, patch).mean(axis=(1, 2))
    bias = np.ones(len(sm_t))
    return np.column_stack(
        [mean, std, grad, coverage, 8.0 * curv, 4.0 * curv_max, bias]
    )


def depth_global_stats(depth: np.ndarray, patch: int) -> np.ndarray:
    stats = depth_patch_stats(np.asarray(depth, dtype=np.float64), patch)
    return np.array(
        [
            stats[:, 0].mean(),
            stats[:, 1].mean(),
            stats[:, 2].mean(),
            stats[:, 4].mean(),
            stats[:, 5].max(),
            1.0,
        ]
    )


class _FeatureMap:
    """Frozen random projections applied to patch statistics."""

    def __init__(self, spec: SynthSpec):
        d, fs = spec.embed_dim, spec.feature_seed
        # Patch and global vectors, in both modalities and at every layer,
        # end with the same (mean deviation, max deviation) indicator pair,
        # and all of them project that pair through one shared matrix.  A
        # single direction in embedding space then flags anomalies at every
        # scale, the way a vision-language space shares anomaly semantics
        # across modalities and encoder stages.
        shared = _projection((fs, 9), d, 2)
        mean_dir = _projection((fs, 10), d, 1) * 2.0
        q, _ = np.linalg.qr(np.column_stack([shared, mean_dir]))

        def wire(w: np.ndarray, cols: slice) -> np.ndarray:
            # Nuisance columns are made orthogonal to the shared subspace so
            # that subspace carries the indicator pair and nothing else.  The
            # trailing bias column maps to one common mean direction, giving
            # every embedding the dominant shared component real image
            # encoders exhibit; prompts can shift calibration along it
            # without disturbing the anomaly axis.
            w = w - q @ (q.T @ w)
            w[:, cols] = shared
            w[:, -1:] = mean_dir
            return w

        self.rgb_layers = [
            wire(_projection((fs, 5, layer), d, RGB_STAT_DIM), slice(7, 9))
            for layer in range(N_RGB_LAYERS)
        ]
        self.view_layer = wire(
            _projection((fs, 6), d, DEPTH_STAT_DIM), slice(4, 6)
        )
        self.rgb_global = wire(
            _projection((fs, 7), d, RGB_GLOBAL_DIM), slice(7, 9)
        )
        self.view_global = wire(
            _projection((fs, 8), d, DEPTH_GLOBAL_DIM), slice(3, 5)
        )
        self.patch = spec.patch

    def embed_rgb(self, rgb: np.ndarray, source_id: str) -> EmbeddingBundle:
        stats = rgb_patch_stats(rgb, self.patch)
        locals_ = tuple(
            EmbeddingTensor(_normalize_rows(stats @ p.T).astype(np.float32))
            for p in self.rgb_layers
        )
        g = _normalize_rows(self.rgb_global @ rgb_global_stats(rgb, self.patch))
        return EmbeddingBundle(
            EmbeddingTensor(g.astype(np.float32)), locals_, source_id
        )

    def embed_view(self, depth: np.ndarray, source_id: str) -> EmbeddingBundle:
        # f32 quantization first, so bundles recompute identically from the
        # f32 depth files a dataset stores on disk
        depth = np.asarray(depth, dtype=np.float32).astype(np.float64)
        stats = depth_patch_stats(depth, self.patch)
        local = EmbeddingTensor(
            _normalize_rows(stats @ self.view_layer.T).astype(np.float32)
        )
        g = _normalize_rows(self.view_global @ depth_global_stats(depth, self.patch))
        return EmbeddingBundle(
            EmbeddingTensor(g.astype(np.float32)), (local,), source_id
        )


def _make_cloud(spec: SynthSpec, index: int, anomalous: bool) -> OrganizedPointCloud:
    rng = np.random.default_rng([spec.seed, 4, index])
    n = spec.grid
    # Coarse bilinear base: piecewise planar, so bump curvature stands out
    z = _upsample(rng.standard_normal((3, 3)), (n, n)) * 0.25
    rgb_f = np.clip(125.0 + 35.0 * _upsample_rgb(rng, (n, n)), 70.0, 180.0)
    mask = np.zeros((n, n), dtype=bool)

    if anomalous:
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        # Interior fraction range: pixel counts then stay in range after
        # discretizing the disk.
        frac = rng.uniform(spec.area_min * 1.4, spec.area_max * 0.9)
        radius = math.sqrt(frac * n * n / math.pi)
        margin = spec.border + radius + 1.0
        cr = rng.uniform(margin, n - 1 - margin)
        cc = rng.uniform(margin, n - 1 - margin)
        rr, cg = np.mgrid[0:n, 0:n]
        dist = np.sqrt((rr - cr) ** 2 + (cg - cc) ** 2)
        disk = dist <= radius
        if kind == "geometric":
            sign = 1.0 if rng.random() < 0.5 else -1.0
            amp = sign * rng.uniform(0.8, 1.4)
            profile = np.cos(0.5 * math.pi * dist / radius) ** 2
            z = z + np.where(disk, amp * profile, 0.0)
        else:
            # Flat fill at a fixed offset from the image mean in two channels:
            # every blotch pixel then deviates more than any base pixel can
            chans = rng.permutation(3)[:2]
            img_mean = rgb_f.mean(axis=(0, 1))
            for ch in chans:
                local = rgb_f[disk, ch].mean()
                sign = 1.0 if local >= img_mean[ch] else -1.0
                mag = rng.uniform(110.0, 140.0)
                rgb_f[disk, ch] = np.clip(img_mean[ch] + sign * mag, 0.0, 255.0)
        mask = disk

    valid = np.ones((n, n), dtype=bool)
    b = spec.border
    valid[:b] = valid[-b:] = False
    valid[:, :b] = valid[:, -b:] = False
    mask &= valid

    axis = np.linspace(-1.0, 1.0, n)
    xg, yg = np.meshgrid(axis, axis)
    points = np.stack([xg, yg, z], axis=-1)
    # f32 cast up front so on-disk round trips reproduce renders bit-exactly
    points = points.astype(np.float32).astype(np.float64)
    points[~valid] = 0.0
    rgb = np.clip(np.rint(rgb_f), 0.0, 255.0).astype(np.uint8)
    return OrganizedPointCloud(points=points, valid=valid, mask=mask, rgb=rgb)


def _upsample_rgb(rng: np.random.Generator, hw: tuple) -> np.ndarray:
    coarse = rng.standard_normal((5, 5, 3))
    return np.stack([_upsample(coarse[:, :, c], hw) for c in range(3)], axis=-1)


def generate(spec: SynthSpec, views=None, resolution: int = 64) -> list:
    """Deterministic dataset of PipelineSamples; normals first, then anomalies."""
    if views is None:
        views = default_view_set()
    fmap = _FeatureMap(spec)
    samples = []
    for i in range(spec.total):
        sid = f"s{i:03d}"
        anomalous = i >= spec.n_normal
        cloud = _make_cloud(spec, i, anomalous)
        renders = tuple(render_view(cloud, t, resolution) for t in views)
        rgb_bundle = fmap.embed_rgb(cloud.rgb, f"{sid}/rgb")
        view_bundles = tuple(
            fmap.embed_view(r.depth, f"{sid}/view{k}") for k, r in enumerate(renders)
        )
        samples.append(PipelineSample(sid, cloud, renders, rgb_bundle, view_bundles))
    return samples


def _bundle_files(branch: str, bundle: EmbeddingBundle) -> dict:
    files = {f"{branch}.global.mcle": mcle_bytes(bundle.global_)}
    for m, loc in enumerate(bundle.locals_):
        files[f"{branch}.local{m}.mcle"] = mcle_bytes(loc)
    return files


def write_sample(sample: PipelineSample, out_dir) -> None:
    """Writes the cloud files plus every embedding file for one sample."""
    d = Path(out_dir) / sample.sample_id
    d.mkdir(parents=True, exist_ok=True)
    cloud = sample.cloud
    pts = EmbeddingTensor(cloud.points.astype(np.float32))
    files = {
        "points.mcle": mcle_bytes(pts),
        "rgb.ppm": ppm_bytes(cloud.rgb),
        "mask.pgm": pgm_bytes(cloud.mask.astype(np.uint8) * 255),
    }
    files.update(_bundle_files("rgb", sample.rgb_bundle))
    for k, vb in enumerate(sample.view_bundles):
        files.update(_bundle_files(f"view{k}", vb))
    for name, payload in files.items():
        atomic_write_bytes(d / name, payload)


def write_dataset(samples, out_dir) -> None:
    for sample in samples:
        write_sample(sample, out_dir)


def load_cloud(sample_dir) -> OrganizedPointCloud:
    """Reads points/rgb/mask files back into an organized cloud."""
    d = Path(sample_dir)
    with open(d / "points.mcle", "rb") as fh:
        pts = read_mcle(fh).data.astype(np.float64)
    if pts.ndim != 3 or pts.shape[2] != 3:
        raise ValueError(f"{d}: points tensor must be H x W x 3")
    valid = ~np.all(pts == 0.0, axis=-1)
    rgb = read_ppm(d / "rgb.ppm")
    mask = read_pgm(d / "mask.pgm") > 0
    return OrganizedPointCloud(points=pts, valid=valid, mask=mask, rgb=rgb)


def list_sample_ids(dataset_root) -> list:
    root = Path(dataset_root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    ids = sorted(p.name for p in root.iterdir() if (p / "points.mcle").is_file())
    if not ids:
        raise ValueError(f"no samples under {root}")
    return ids
