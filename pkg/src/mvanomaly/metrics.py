"""Evaluation metrics: AUROC, average precision, pixel AUROC, AUPRO."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's average rank."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Probability a positive outranks a negative; ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative label")
    ranks = _midranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Area under precision (recall), descending prefixes with ties grouped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise ValueError("need at least one positive label")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = 0
    seen = 0
    prev_recall = 0.0
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        tp += int(y[i : j + 1].sum())
        seen += j + 1 - i
        recall = tp / n_pos
        precision = tp / seen
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(ap)


def pixel_auroc(maps, masks, valid=None) -> float:
    """AUROC over all pixels of all maps; invalid cells are excluded."""
    scores = []
    labels = []
    for i, (m, t) in enumerate(zip(maps, masks)):
        m = np.asarray(m, dtype=np.float64)
        t = np.asarray(t)
        keep = np.ones(m.shape, dtype=bool) if valid is None else np.asarray(valid[i])
        scores.append(m[keep].reshape(-1))
        labels.append(t[keep].reshape(-1).astype(np.int64))
    return auroc(np.concatenate(scores), np.concatenate(labels))


def _pro_curve_points(maps, masks, valid, thresholds):
    """(fpr, pro) pairs for descending thresholds, prefixed by (0, 0)."""
    regions = []  # (map index, boolean region)
    neg_masks = []
    n_neg = 0
    for i, mask in enumerate(masks):
        mask = np.asarray(mask, dtype=bool)
        keep = np.ones(mask.shape, dtype=bool) if valid is None else np.asarray(valid[i])
        labeled, count = ndimage.label(mask & keep, structure=EIGHT_CONNECTED)
        for r in range(1, count + 1):
            regions.append((i, labeled == r))
        neg = keep & ~mask
        neg_masks.append(neg)
        n_neg += int(neg.sum())
    if not regions:
        raise ValueError("no anomalous regions in the dataset")
    if n_neg == 0:
        raise ValueError("no normal pixels in the dataset")
    points = [(0.0, 0.0)]
    for t in thresholds:
        preds = [np.asarray(m, dtype=np.float64) >= t for m in maps]
        pro = 0.0
        for i, region in regions:
            hit = int((preds[i] & region).sum())
            pro += hit / int(region.sum())
        pro /= len(regions)
        fp = sum(int((p & neg).sum()) for p, neg in zip(preds, neg_masks))
        points.append((fp / n_neg, pro))
    return points


def integrate_pro(points, fpr_limit: float) -> float:
    """Trapezoid over FPR up to the limit (with an interpolated cut),
    normalized by the limit."""
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        if x1 <= fpr_limit:
            area += 0.5 * (x1 - x0) * (y0 + y1)
        else:
            if x0 < fpr_limit:
                y_cut = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0)
                area += 0.5 * (fpr_limit - x0) * (y0 + y_cut)
            break
    return area / fpr_limit


def aupro(maps, masks, fpr_limit: float = 0.3, n_thresholds: int = 200, valid=None) -> float:
    """Per-region-overlap vs FPR, integrated to fpr_limit and normalized.

    Thresholds are evenly spaced quantiles of the observed scores, swept
    from high to low; regions use 8-connectivity.
    """
    flat = []
    for i, m in enumerate(maps):
        m = np.asarray(m, dtype=np.float64)
        keep = np.ones(m.shape, dtype=bool) if valid is None else np.asarray(valid[i])
        flat.append(m[keep].reshape(-1))
    scores = np.concatenate(flat)
    qs = np.linspace(1.0, 0.0, n_thresholds)
    thresholds = np.quantile(scores, qs)
    points = _pro_curve_points(maps, masks, valid, thresholds)
    return float(integrate_pro(points, fpr_limit))


def summary_table(rows, out_path=None) -> str:
    """Tab-separated metric table, values x100 with one decimal."""
    header = "category\ti_auroc\tap\tp_auroc\taupro"
    lines = [header]
    for name, vals in rows:
        cells = "\t".join(f"{100.0 * v:.1f}" for v in vals)
        lines.append(f"{name}\t{cells}")
    if len(rows) > 1:
        mean = [sum(v[i] for _, v in rows) / len(rows) for i in range(4)]
        lines.append("mean\t" + "\t".join(f"{100.0 * v:.1f}" for v in mean))
    text = "\n".join(lines) + "\n"
    if out_path is not None:
        from .fileio import atomic_write_bytes

        atomic_write_bytes(out_path, text.encode())
    return text
