"""Small statistics helpers: IQM, bootstrap CIs, rank correlation."""

from __future__ import annotations

import numpy as np


def iqm(scores) -> float:
    """Interquartile mean: mean of the middle 50% (floor(n/4) trimmed per side)."""
    x = np.sort(np.asarray(scores, dtype=np.float64))
    n = len(x)
    if n == 0:
        raise ValueError("empty scores")
    k = n // 4
    return float(x[k: n - k].mean())


def bootstrap_ci(scores, statistic=iqm, n_resamples: int = 2000, alpha: float = 0.05,
                 rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Percentile bootstrap CI of `statistic` over seed-level scores."""
    x = np.asarray(scores, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(0)
    stats = np.empty(n_resamples)
    for b in range(n_resamples):
        stats[b] = statistic(x[rng.integers(0, len(x), size=len(x))])
    lo, hi = np.quantile(stats, [alpha / 2, 1.0 - alpha / 2])
    return float(lo), float(hi)


def _ranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (ties share the mean rank)."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0.0:
        return 0.0
    return float((a * b).sum() / denom)


def spearman(a, b) -> float:
    """Rank correlation with average-tie handling."""
    return pearson(_ranks(np.asarray(a, dtype=np.float64)),
                   _ranks(np.asarray(b, dtype=np.float64)))
