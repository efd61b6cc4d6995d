"""Shared numerical kernels: temperature softmax, Gaussian filter, gradcheck."""

from __future__ import annotations

import math

import numpy as np


def softmax_temp(logits, tau: float) -> np.ndarray:
    """Softmax of logits/tau along the last axis, max-subtracted for stability.

    Accepts a vector or a batch of row vectors; rows sum to 1 within 1e-12.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian, truncated at radius ceil(4*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _conv1d_reflect(arr: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
    # residual form x + sum_k w_k (x_{i+k} - x_i): constants are exact
    # fixed points even though sum(w) == 1 only up to rounding
    radius = w.size // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="reflect")
    acc = np.zeros_like(arr)
    for k in range(w.size):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(k, k + arr.shape[axis])
        acc += w[k] * (padded[tuple(sl)] - arr)
    return arr + acc


def gaussian_filter(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding.

    Output is clamped to the input's [min, max] envelope; the convex kernel
    keeps it there mathematically, the clamp only removes rounding overshoot.
    """
    w = gaussian_kernel1d(sigma)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D map")
    out = _conv1d_reflect(arr, w, axis=0)
    out = _conv1d_reflect(out, w, axis=1)
    return np.clip(out, arr.min(), arr.max())


def gradcheck(f, grad_f, x, h: float = 1e-5) -> float:
    """Max relative error between grad_f and central differences of f.

    Per coordinate: |analytic - numeric| / max(1, |numeric|).
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(grad_f(x), dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError("gradient shape does not match parameter shape")
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xp.flat[i] += h
        xm = x.copy()
        xm.flat[i] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"non-finite evaluation at coordinate {i}")
        numeric = (fp - fm) / (2.0 * h)
        rel = abs(float(analytic.flat[i]) - numeric) / max(1.0, abs(numeric))
        if rel > worst:
            worst = rel
    return worst
