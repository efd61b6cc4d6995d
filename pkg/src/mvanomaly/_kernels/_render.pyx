# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled render kernels. Semantics match numpy_impl bit for bit."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def splat_zbuffer(cnp.int64_t[::1] rows, cnp.int64_t[::1] cols,
                  cnp.float64_t[::1] z, cnp.int64_t[::1] point_ids, int res):
    cdef Py_ssize_t n = rows.shape[0]
    best_z_arr = np.full((res, res), -np.inf, dtype=np.float64)
    best_idx_arr = np.full((res, res), -1, dtype=np.int64)
    cdef cnp.float64_t[:, ::1] best_z = best_z_arr
    cdef cnp.int64_t[:, ::1] best_idx = best_idx_arr
    cdef Py_ssize_t i
    cdef cnp.int64_t r, c, dr, dc, rr, cc
    cdef cnp.float64_t zi
    for i in range(n):
        r = rows[i]
        c = cols[i]
        zi = z[i]
        for dr in range(-1, 2):
            rr = r + dr
            if rr < 0 or rr >= res:
                continue
            for dc in range(-1, 2):
                cc = c + dc
                if cc < 0 or cc >= res:
                    continue
                # larger z wins; equal z falls back to the smaller point id
                if zi > best_z[rr, cc] or (
                    zi == best_z[rr, cc] and point_ids[i] < best_idx[rr, cc]
                ):
                    best_z[rr, cc] = zi
                    best_idx[rr, cc] = point_ids[i]
    return best_z_arr, best_idx_arr


def accumulate_means(cnp.int64_t[::1] pix2point, cnp.float64_t[::1] values,
                     Py_ssize_t n_points):
    cdef Py_ssize_t total = pix2point.shape[0]
    out_arr = np.zeros(n_points, dtype=np.float64)
    first_arr = np.zeros(n_points, dtype=np.float64)
    resid_arr = np.zeros(n_points, dtype=np.float64)
    counts_arr = np.zeros(n_points, dtype=np.int64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef cnp.float64_t[::1] first = first_arr
    cdef cnp.float64_t[::1] resid = resid_arr
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef Py_ssize_t j
    cdef cnp.int64_t p
    cdef cnp.float64_t v
    for j in range(total):
        p = pix2point[j]
        if p < 0:
            continue
        v = values[j]
        if counts[p] == 0:
            first[p] = v
        resid[p] += v - first[p]
        counts[p] += 1
    for p in range(n_points):
        if counts[p] > 0:
            out[p] = first[p] + resid[p] / counts[p]
    return out_arr
