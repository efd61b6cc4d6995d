"""Multi-view rendering of organized point clouds and its inverse.

Points are splatted orthographically onto an axis-aligned pixel grid after
centroid-centering and an isotropic fit of the rotated cloud into [-1,1]^3.
Depth polarity: nearer = larger, background = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

# foreground depths live in [DEPTH_FLOOR, 1] so background 0 never collides
DEPTH_FLOOR = 1.0 / 1024.0

DEFAULT_X_ANGLES = (-math.pi / 4, -math.pi / 12, 0.0, math.pi / 4, math.pi / 12)
DEFAULT_Y_ANGLES = (-math.pi / 4, -math.pi / 12, math.pi / 4, math.pi / 12)


@dataclass(frozen=True)
class OrganizedPointCloud:
    """H x W grid of 3D points with validity, anomaly mask, and RGB image."""

    points: np.ndarray  # H x W x 3, float
    valid: np.ndarray   # H x W, bool
    mask: np.ndarray    # H x W, bool; true = anomalous
    rgb: np.ndarray     # H x W x 3, uint8

    def __post_init__(self):
        h, w = self.valid.shape
        if self.points.shape != (h, w, 3) or self.rgb.shape != (h, w, 3):
            raise ValueError("points/rgb shape does not match the valid grid")
        if self.mask.shape != (h, w):
            raise ValueError("mask shape does not match the valid grid")
        if np.any(self.mask & ~self.valid):
            raise ValueError("invalid cells must have mask=false")

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def global_label(self) -> bool:
        return bool(np.any(self.mask & self.valid))


@dataclass(frozen=True)
class ViewTransform:
    axis: str
    angle: float
    matrix: np.ndarray  # 3 x 3 rotation


@dataclass(frozen=True)
class ViewRender:
    depth: np.ndarray      # R x R float64 in [0,1], 0 = background
    mask2d: np.ndarray     # R x R bool
    pix2point: np.ndarray  # R x R int64 flat cloud index, -1 = unset
    view_label: bool
    transform: ViewTransform


def rotation_matrix(axis: str, angle: float) -> ViewTransform:
    """Single-axis rotation; axis is 'X' or 'Y', angle in radians."""
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle}")
    c = math.cos(angle)
    s = math.sin(angle)
    if axis == "X":
        m = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    elif axis == "Y":
        m = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    else:
        raise ValueError(f"axis must be 'X' or 'Y', got {axis!r}")
    return ViewTransform(axis=axis, angle=angle, matrix=m)


def make_view_set(x_angles, y_angles) -> list[ViewTransform]:
    """One single-axis transform per listed angle, X first, order preserved."""
    x_angles = list(x_angles)
    y_angles = list(y_angles)
    if not x_angles and not y_angles:
        raise ValueError("view set needs at least one angle")
    views = [rotation_matrix("X", a) for a in x_angles]
    views += [rotation_matrix("Y", a) for a in y_angles]
    return views


def default_view_set() -> list[ViewTransform]:
    return make_view_set(DEFAULT_X_ANGLES, DEFAULT_Y_ANGLES)


def render_view(cloud: OrganizedPointCloud, t: ViewTransform, resolution: int) -> ViewRender:
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    valid = cloud.valid
    if not valid.any():
        raise ValueError("cloud has no valid points")
    pts = cloud.points[valid].astype(np.float64)
    flat_ids = np.flatnonzero(valid.reshape(-1)).astype(np.int64)

    centered = pts - pts.mean(axis=0)
    rot = centered @ t.matrix.T
    extent = np.abs(rot).max()
    if extent > 0.0:
        rot = rot / extent

    res = resolution
    # round half-up onto the res x res grid; coords are in [-1,1] already
    cols = np.floor((rot[:, 0] + 1.0) / 2.0 * (res - 1) + 0.5).astype(np.int64)
    rows = np.floor((rot[:, 1] + 1.0) / 2.0 * (res - 1) + 0.5).astype(np.int64)
    z = np.ascontiguousarray(rot[:, 2])

    best_z, best_idx = _kernels.splat_zbuffer(
        np.ascontiguousarray(rows), np.ascontiguousarray(cols), z,
        np.ascontiguousarray(flat_ids), res,
    )

    hit = best_idx >= 0
    z_min = z.min()
    z_max = z.max()
    depth = np.zeros((res, res), dtype=np.float64)
    if z_max > z_min:
        raw = (best_z[hit] - z_min) / (z_max - z_min)
        depth[hit] = DEPTH_FLOOR + (1.0 - DEPTH_FLOOR) * raw
    else:
        depth[hit] = 1.0

    pix2point = np.where(hit, best_idx, np.int64(-1))
    mask2d = np.zeros((res, res), dtype=bool)
    mask2d[hit] = cloud.mask.reshape(-1)[best_idx[hit]]
    return ViewRender(
        depth=depth,
        mask2d=mask2d,
        pix2point=pix2point,
        view_label=bool(mask2d.any()),
        transform=t,
    )


def inverse_render(values_per_view, views, n_points: int) -> np.ndarray:
    """Average each point's values over every pixel that maps to it.

    Contribution order is fixed (view order, then row-major pixels) so both
    kernel backends agree bitwise; unseen points get 0.
    """
    if len(values_per_view) != len(views) or len(views) < 1:
        raise ValueError("need equally many value maps and views, at least one")
    maps = []
    p2p = []
    for vals, view in zip(values_per_view, views):
        vals = np.asarray(vals, dtype=np.float64)
        if vals.shape != view.pix2point.shape:
            raise ValueError(
                f"value map shape {vals.shape} != render shape {view.pix2point.shape}"
            )
        maps.append(vals.reshape(-1))
        p2p.append(view.pix2point.reshape(-1))
    values = np.ascontiguousarray(np.concatenate(maps))
    pix2point = np.ascontiguousarray(np.concatenate(p2p))
    return _kernels.accumulate_means(pix2point, values, n_points)
