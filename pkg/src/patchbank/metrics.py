"""Detection and segmentation metrics.

All ranking metrics follow the same orientation: higher score means more
anomalous, label 1 means anomalous. AUROC is computed from tie-averaged
ranks, which matches enumerating every (anomalous, normal) pair and
crediting wins as 1 and ties as 1/2. Region-level segmentation quality
uses per-component recall averaged over components, integrated against
the pooled false-positive rate up to a limit and normalized by it.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError, UndefinedMetricError

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _tie_averaged_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; equal values share the average of their positions."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    group = np.concatenate(([0], np.cumsum(np.diff(sorted_vals) != 0)))
    counts = np.bincount(group)
    position_sums = np.bincount(group, weights=np.arange(1, values.size + 1))
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = (position_sums / counts)[group]
    return ranks


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum identity."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size != y.size:
        raise DataError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if not np.all(np.isfinite(s)):
        raise DataError("scores contain NaN or Inf")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = _tie_averaged_ranks(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pixel_auroc(maps, masks) -> float:
    """AUROC over every pixel of every image, pooled into one population."""
    if len(maps) != len(masks):
        raise DataError(f"{len(maps)} maps vs {len(masks)} masks")
    if not maps:
        raise DataError("no maps given")
    flat_scores, flat_labels = [], []
    for i, (m, g) in enumerate(zip(maps, masks)):
        m = np.asarray(m, dtype=np.float64)
        g = np.asarray(g).astype(bool)
        if m.shape != g.shape:
            raise DataError(f"pair {i}: map shape {m.shape} != mask shape {g.shape}")
        flat_scores.append(m.ravel())
        flat_labels.append(g.ravel())
    return auroc(np.concatenate(flat_scores), np.concatenate(flat_labels))


def connected_components(mask) -> tuple[np.ndarray, int]:
    """8-connected components of a boolean mask.

    Labels are 1..count; background is 0. Components are numbered by the
    row-major position of their first pixel, so the labeling is a pure
    function of the mask.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DataError(f"mask must be 2-d, got rank {m.ndim}")
    labeled, count = ndimage.label(m.astype(bool), structure=EIGHT_CONNECTED)
    if count == 0:
        return labeled.astype(np.int32), 0
    flat = labeled.ravel()
    first_seen = np.full(count + 1, flat.size, dtype=np.int64)
    np.minimum.at(first_seen, flat, np.arange(flat.size))
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[np.argsort(first_seen[1:], kind="stable") + 1] = np.arange(1, count + 1)
    return remap[labeled], count


def _component_pixel_scores(maps, masks) -> tuple[list[np.ndarray], np.ndarray]:
    """Sorted score arrays per anomalous component, plus pooled normal scores."""
    components: list[np.ndarray] = []
    normal_parts: list[np.ndarray] = []
    for i, (m, g) in enumerate(zip(maps, masks)):
        m = np.asarray(m, dtype=np.float64)
        g = np.asarray(g).astype(bool)
        if m.shape != g.shape:
            raise DataError(f"pair {i}: map shape {m.shape} != mask shape {g.shape}")
        if not np.all(np.isfinite(m)):
            raise DataError(f"pair {i}: map contains NaN or Inf")
        labeled, count = connected_components(g)
        for comp in range(1, count + 1):
            components.append(np.sort(m[labeled == comp]))
        normal_parts.append(m[~g])
    normals = np.sort(np.concatenate(normal_parts)) if normal_parts else np.empty(0)
    return components, normals


def pro_score(maps, masks, fpr_limit: float = 0.3) -> float:
    """Mean per-component overlap integrated over FPR in [0, fpr_limit].

    At each threshold the recall of every ground-truth component is
    averaged (small defects count as much as large ones) and plotted
    against the pooled pixel false-positive rate. The curve is integrated
    by trapezoid up to the limit, with linear interpolation at the
    crossing, then normalized by the limit so a perfect detector scores 1.
    """
    if not (0.0 < fpr_limit <= 1.0):
        raise ConfigError(f"fpr_limit must be in (0, 1], got {fpr_limit}")
    if len(maps) != len(masks):
        raise DataError(f"{len(maps)} maps vs {len(masks)} masks")
    components, normals = _component_pixel_scores(maps, masks)
    if not components:
        raise UndefinedMetricError("no anomalous component in ground truth")
    if normals.size == 0:
        raise UndefinedMetricError("no normal pixel in ground truth")

    pooled = [normals]
    pooled.extend(components)
    thresholds = np.unique(np.concatenate(pooled))[::-1]  # descending

    # classification rule: pixel is flagged when score >= threshold
    mean_recall = np.zeros(thresholds.size, dtype=np.float64)
    asc = thresholds[::-1]
    for comp in components:
        hits = comp.size - np.searchsorted(comp, asc, side="left")
        mean_recall += hits[::-1] / comp.size
    mean_recall /= len(components)
    fpr = (normals.size - np.searchsorted(normals, asc, side="left"))[::-1] / normals.size

    # integrate the curve from (0, 0); fpr is nondecreasing along thresholds
    xs = np.concatenate(([0.0], fpr))
    ys = np.concatenate(([0.0], mean_recall))
    cut = int(np.searchsorted(xs, fpr_limit, side="right"))  # first point past the limit
    area = float(np.trapezoid(ys[:cut], xs[:cut]))
    if cut < xs.size and xs[cut] > xs[cut - 1]:
        frac = (fpr_limit - xs[cut - 1]) / (xs[cut] - xs[cut - 1])
        y_cross = ys[cut - 1] + (ys[cut] - ys[cut - 1]) * frac
        area += 0.5 * (ys[cut - 1] + y_cross) * (fpr_limit - xs[cut - 1])
    return float(area / fpr_limit)


def f1_optimal_threshold(scores, labels) -> tuple[float, int, int]:
    """Threshold maximizing F1 for the rule `score >= threshold`.

    Candidates are midpoints between adjacent distinct scores plus the
    two infinities. Ties prefer the lower threshold. Returns (threshold,
    false positives, false negatives) at the winner.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.size != y.size:
        raise DataError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if not np.all(np.isfinite(s)):
        raise DataError("scores contain NaN or Inf")
    n_pos = int((y == 1).sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("F1 sweep needs at least one positive and one negative")

    uniq = np.unique(s)
    candidates = np.concatenate(([-np.inf], (uniq[:-1] + uniq[1:]) / 2.0, [np.inf]))
    # suffix counts: predictions at threshold t are scores >= t
    order = np.argsort(s, kind="stable")
    sorted_scores = s[order]
    pos_sorted = (y[order] == 1).astype(np.int64)
    pos_suffix = np.concatenate((np.cumsum(pos_sorted[::-1])[::-1], [0]))

    best = (-1.0, np.inf)  # (f1, threshold), threshold breaks ties downward
    best_counts = (0, 0)
    for t in candidates:
        cut = int(np.searchsorted(sorted_scores, t, side="left"))
        predicted = s.size - cut
        tp = int(pos_suffix[cut])
        fp = predicted - tp
        fn = n_pos - tp
        f1 = 0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
        if f1 > best[0]:
            best = (f1, t)
            best_counts = (fp, fn)
    return float(best[1]), best_counts[0], best_counts[1]


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) with thresholds descending, rule score >= t."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.size != y.size:
        raise DataError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both classes")
    thresholds = np.unique(s)[::-1]
    asc = thresholds[::-1]
    pos_sorted = np.sort(s[y])
    neg_sorted = np.sort(s[~y])
    tpr = (n_pos - np.searchsorted(pos_sorted, asc, side="left"))[::-1] / n_pos
    fpr = (n_neg - np.searchsorted(neg_sorted, asc, side="left"))[::-1] / n_neg
    # anchor at (0, 0) so the trapezoid area reproduces the rank AUROC
    fpr = np.concatenate(([0.0], fpr))
    tpr = np.concatenate(([0.0], tpr))
    thresholds = np.concatenate(([np.inf], thresholds))
    return fpr, tpr, thresholds


def precision_recall_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(precision, recall, thresholds) with thresholds descending."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.size != y.size:
        raise DataError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == s.size:
        raise UndefinedMetricError("PR curve needs both classes")
    thresholds = np.unique(s)[::-1]
    asc = thresholds[::-1]
    pos_sorted = np.sort(s[y])
    all_sorted = np.sort(s)
    tp = (n_pos - np.searchsorted(pos_sorted, asc, side="left"))[::-1].astype(np.float64)
    predicted = (s.size - np.searchsorted(all_sorted, asc, side="left"))[::-1].astype(np.float64)
    precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    recall = tp / n_pos
    return precision, recall, thresholds
