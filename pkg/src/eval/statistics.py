"""Paired significance testing and rank correlation."""

import logging
from typing import Sequence

import numpy as np
from scipy import stats

from src.utils.errors import ContractError

logger = logging.getLogger(__name__)

EXACT_MAX_N = 25
MIN_RECOMMENDED_N = 6


def _exact_two_sided(ranks: np.ndarray, w_plus: float) -> float:
    """Exact null distribution of W+ over all 2^n sign assignments.

    Average ranks are multiples of 1/2, so the distribution is counted on doubled ranks.
    """
    doubled = np.round(2 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    probs = counts / counts.sum()
    w2 = int(round(2 * w_plus))
    lower = probs[:w2 + 1].sum()
    upper = probs[w2:].sum()
    return float(min(1.0, 2.0 * min(lower, upper)))


def _normal_two_sided(ranks: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    if var <= 0:
        return 1.0
    z = (w_plus - mean) / np.sqrt(var)
    return float(min(1.0, 2.0 * stats.norm.sf(abs(z))))


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped; ties share average ranks. Exact distribution
    up to 25 non-zero pairs, normal approximation with tie correction above.
    All-zero differences give p = 1.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError(f"Paired samples need equal 1-D shapes, got {x.shape} and {y.shape}")

    diff = x - y
    diff = diff[diff != 0]
    n = len(diff)
    if n == 0:
        return 1.0
    if n < MIN_RECOMMENDED_N:
        logger.warning(f"Wilcoxon test on only {n} non-zero pairs; p-values cannot reach 0.05")

    ranks = stats.rankdata(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    if n <= EXACT_MAX_N:
        return _exact_two_sided(ranks, w_plus)
    return _normal_two_sided(ranks, w_plus)


def rank_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman correlation of two maps (flattened).

    Identical maps give 1 even when constant; otherwise a constant map gives 0.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractError(f"Map shapes differ: {a.shape} vs {b.shape}")
    if np.array_equal(a, b):
        return 1.0
    if np.all(a == a[0]) or np.all(b == b[0]):
        return 0.0
    return float(stats.spearmanr(a, b)[0])


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over ``window`` values; shorter series are returned unchanged."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        return values.copy()
    return np.convolve(values, np.ones(window) / window, mode='valid')


def smoothed_decrease(values: Sequence[float], window: int, monotone: bool = False) -> bool:
    """
    Whether a loss series falls once smoothed with a ``window``-point moving average.

    ``monotone`` requires every smoothed step to be non-increasing; otherwise the
    last smoothed value only has to lie below the first. Fewer than two smoothed
    points count as a decrease.
    """
    smooth = moving_average(values, window)
    if len(smooth) < 2:
        return True
    if monotone:
        return bool(np.all(np.diff(smooth) <= 0.0))
    return bool(smooth[-1] < smooth[0])
