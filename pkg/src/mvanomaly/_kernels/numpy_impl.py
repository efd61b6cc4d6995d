"""Pure-numpy render kernels, bit-identical to the compiled versions.

Both kernels are specified as sequential loops over a fixed element order;
the vectorized forms below reproduce that order exactly (lexsort with a
deterministic tiebreak, bincount's in-order accumulation).
"""

from __future__ import annotations

import numpy as np


def splat_zbuffer(rows, cols, z, point_ids, res: int):
    """Z-buffer every point over its 3x3 splat footprint.

    rows/cols are center pixels. Per covered pixel the largest z wins;
    ties go to the smallest point id. Returns (best_z, best_idx) with
    best_idx = -1 and best_z = -inf where no point lands.
    """
    n = rows.shape[0]
    best_z = np.full((res, res), -np.inf, dtype=np.float64)
    best_idx = np.full((res, res), -1, dtype=np.int64)
    if n == 0:
        return best_z, best_idx
    offs = np.array([-1, 0, 1], dtype=np.int64)
    # cartesian expansion: for each point, 3 rows x 3 cols
    rr = np.repeat(rows, 9) + np.tile(np.repeat(offs, 3), n)
    cc = np.repeat(cols, 9) + np.tile(np.tile(offs, 3), n)
    zz = np.repeat(z, 9)
    ii = np.repeat(point_ids, 9)
    ok = (rr >= 0) & (rr < res) & (cc >= 0) & (cc < res)
    rr, cc, zz, ii = rr[ok], cc[ok], zz[ok], ii[ok]
    if rr.size == 0:
        return best_z, best_idx
    pix = rr * res + cc
    order = np.lexsort((ii, -zz, pix))
    pix_s = pix[order]
    keep = np.ones(pix_s.size, dtype=bool)
    keep[1:] = pix_s[1:] != pix_s[:-1]
    win = order[keep]
    best_z.reshape(-1)[pix[win]] = zz[win]
    best_idx.reshape(-1)[pix[win]] = ii[win]
    return best_z, best_idx


def accumulate_means(pix2point, values, n_points: int):
    """Per-point arithmetic mean of values, in contribution order.

    pix2point/values are flat, concatenated across views in view order;
    entries < 0 contribute nothing. The mean is computed as
    first + sum(v - first)/count so that an all-equal contribution set
    returns the shared value bit-exactly.
    """
    out = np.zeros(n_points, dtype=np.float64)
    sel = pix2point >= 0
    pts = pix2point[sel]
    if pts.size == 0:
        return out
    vals = values[sel].astype(np.float64, copy=False)
    uniq, first_pos = np.unique(pts, return_index=True)
    first = np.zeros(n_points, dtype=np.float64)
    first[uniq] = vals[first_pos]
    resid = np.bincount(pts, weights=vals - first[pts], minlength=n_points)
    counts = np.bincount(pts, minlength=n_points)
    nz = counts > 0
    out[nz] = first[nz] + resid[nz] / counts[nz]
    return out
