"""Evaluation metrics: rank AUC, weighted kappa, correlation, screening tables."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank (Mann-Whitney) statistic.

    Ties get midranks, so the result equals P(s+ > s-) + 1/2 P(s+ = s-).
    Requires both classes present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) stepping through distinct scores, high to low.

    The trapezoidal integral of this curve equals :func:`roc_auc` exactly
    (ties contribute diagonal segments).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    distinct = np.nonzero(np.diff(s))[0]
    idx = np.r_[distinct, len(s) - 1]
    tps = np.cumsum(y)[idx]
    fps = idx + 1 - tps
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_curve needs both classes present")
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[idx]]
    return fpr, tpr, thresholds


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length vectors of size >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt((dx * dx).sum())
    sy = np.sqrt((dy * dy).sum())
    if sx == 0 or sy == 0:
        raise ValueError("pearson is undefined for constant input")
    return float((dx * dy).sum() / (sx * sy))


def confusion_matrix(a, b, categories) -> np.ndarray:
    """Counts of (row=a, col=b) over an explicit ordered category list."""
    cats = list(categories)
    index = {c: i for i, c in enumerate(cats)}
    cm = np.zeros((len(cats), len(cats)), dtype=np.int64)
    for va, vb in zip(np.asarray(a).ravel(), np.asarray(b).ravel()):
        if va not in index or vb not in index:
            raise ValueError(f"rating outside categories: {va!r}/{vb!r}")
        cm[index[va], index[vb]] += 1
    return cm


def weighted_kappa(cm) -> float:
    """Linearly weighted Cohen's kappa from a square confusion matrix.

    kappa = 1 - sum(w * O) / sum(w * E) with w_ij = |i - j|, O the observed
    proportions and E the outer product of the marginals.
    """
    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] < 1:
        raise ValueError("confusion matrix must be square")
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    k = cm.shape[0]
    idx = np.arange(k)
    w = np.abs(idx[:, None] - idx[None, :]).astype(np.float64)
    observed = cm / total
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    num = float((w * observed).sum())
    den = float((w * expected).sum())
    if den == 0:
        if num == 0:
            return 1.0
        raise ValueError("degenerate agreement table")
    return 1.0 - num / den


def group_isup(grades) -> np.ndarray:
    """Collapse ISUP 1-5 into prognostic groups {1: 1, 2-3: 2, 4-5: 3}."""
    g = np.asarray(grades, dtype=np.int64)
    if g.size and (g.min() < 1 or g.max() > 5):
        raise ValueError("ISUP grades must lie in 1..5")
    return np.where(g <= 1, 1, np.where(g <= 3, 2, 3))


def pairwise_mean_kappa(ratings, categories=None) -> np.ndarray:
    """Per-rater mean weighted kappa against every other rater.

    ``ratings`` is (n_cases, n_raters); all pairs share one ordinal category
    list (the sorted union of observed values unless given explicitly).
    """
    ratings = np.asarray(ratings)
    if ratings.ndim != 2 or ratings.shape[1] < 2:
        raise ValueError("ratings must be (n_cases, n_raters >= 2)")
    if categories is None:
        categories = sorted(np.unique(ratings).tolist())
    n_raters = ratings.shape[1]
    means = np.zeros(n_raters, dtype=np.float64)
    for i in range(n_raters):
        vals = [
            weighted_kappa(confusion_matrix(ratings[:, i], ratings[:, j], categories))
            for j in range(n_raters)
            if j != i
        ]
        means[i] = float(np.mean(vals))
    return means


def operating_table(scores, labels, grades, man_ids, targets) -> list[dict]:
    """Screening trade-off rows for a list of target sensitivities.

    Each row reports the calibrated threshold, how many cores it discards
    versus sends to review, missed malignant cores per ISUP grade, and how
    many men lose every one of their malignant cores.
    """
    from corepath.aggregation import calibrate_threshold

    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    grades = np.asarray(grades, dtype=np.int64)
    man_ids = np.asarray(man_ids)
    rows = []
    for target in targets:
        thr = calibrate_threshold(scores, labels, target)
        kept = scores >= thr
        missed = (~kept) & (labels == 1)
        missed_isup = {
            str(g): int(np.sum(missed & (grades == g))) for g in range(1, 6)
        }
        missed_men = 0
        for man in np.unique(man_ids):
            mine = man_ids == man
            pos = mine & (labels == 1)
            if pos.any() and not (pos & kept).any():
                missed_men += 1
        rows.append(
            {
                "target_sensitivity": float(target),
                "threshold": float(thr),
                "n_discarded": int(np.sum(~kept)),
                "n_review": int(np.sum(kept)),
                "missed_isup": missed_isup,
                "missed_men": int(missed_men),
            }
        )
    return rows
