"""Interpretable per-series features used for feature-based clustering."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .preprocess import _centred_moving_average, _seasonal_indices, extend_seasonal

FEATURE_NAMES = (
    "mean",
    "variance",
    "acf1",
    "trend_strength",
    "linearity",
    "curvature",
    "spectral_entropy",
    "lumpiness",
    "spikiness",
    "level_shift",
    "variance_change",
    "flat_spots",
    "crossing_points",
)

# smallest trend smoother; widened to a multiple of the period so it also removes seasonality
_MIN_TREND_WIDTH = 13


class FeatureError(ValueError):
    pass


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    ids: list[str]
    standardized: bool = False

    @property
    def names(self) -> tuple[str, ...]:
        return FEATURE_NAMES


def _trend_width(n: int, period: int) -> int:
    mult = math.ceil(_MIN_TREND_WIDTH / period)
    while mult > 1:
        width = period * mult
        span = width if width % 2 == 0 else width - 1
        if n - span >= 3:
            break
        mult -= 1
    return period * mult


def _stl_like(x: np.ndarray, period: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(trend, seasonal, remainder) on the interior where the trend is defined."""
    trend = _centred_moving_average(x, _trend_width(len(x), period))
    if period > 1:
        seasonal = extend_seasonal(_seasonal_indices(x - trend, period), 0, len(x))
    else:
        seasonal = np.zeros_like(x)
    ok = ~np.isnan(trend)
    return trend[ok], seasonal[ok], (x - trend - seasonal)[ok]


def _acf1(x: np.ndarray) -> float:
    d = x - x.mean()
    denom = float(np.dot(d, d))
    if denom <= 0:
        return 0.0
    return float(np.dot(d[:-1], d[1:]) / denom)


def _var(x: np.ndarray) -> float:
    return float(np.var(x, ddof=1)) if len(x) > 1 else 0.0


def _poly_coefficients(trend: np.ndarray) -> tuple[float, float]:
    n = len(trend)
    if n < 3:
        return 0.0, 0.0
    t = np.arange(n, dtype=float)
    t = (t - t.mean()) / max(t.std(), 1.0)
    q, r = np.linalg.qr(np.column_stack([np.ones(n), t, t * t]))
    # orthonormal basis with increasing leading coefficients
    q = q * np.sign(np.diag(r))
    coef = q.T @ trend
    return float(coef[1]), float(coef[2])


def _spectral_entropy(x: np.ndarray) -> float:
    spec = np.abs(np.fft.rfft(x - x.mean()))[1:] ** 2
    total = spec.sum()
    if spec.size < 2 or total <= 0:
        return 0.0
    p = spec / total
    p = p[p > 0]
    return float(min(1.0, -np.sum(p * np.log(p)) / math.log(spec.size)))


def _lumpiness(x: np.ndarray, width: int) -> float:
    n_win = len(x) // width
    if n_win < 2:
        return 0.0
    variances = [_var(x[i * width : (i + 1) * width]) for i in range(n_win)]
    return _var(np.array(variances))


def _spikiness(remainder: np.ndarray) -> float:
    n = len(remainder)
    if n < 3:
        return 0.0
    total = remainder.sum()
    total_sq = np.dot(remainder, remainder)
    loo_sum = total - remainder
    loo_sq = total_sq - remainder**2
    m = n - 1
    loo_var = (loo_sq - loo_sum**2 / m) / (m - 1)
    return _var(loo_var)


def _max_shift(x: np.ndarray, width: int, stat) -> float:
    if len(x) < 2 * width:
        return 0.0
    windows = np.lib.stride_tricks.sliding_window_view(x, width)
    rolled = stat(windows)
    return float(np.max(np.abs(rolled[width:] - rolled[:-width])))


def _flat_spots(x: np.ndarray) -> float:
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return float(len(x))
    bins = np.minimum(((x - lo) / (hi - lo) * 10).astype(int), 9)
    best = run = 1
    for a, b in zip(bins[:-1], bins[1:]):
        run = run + 1 if a == b else 1
        best = max(best, run)
    return float(best)


def _crossing_points(x: np.ndarray) -> float:
    below = x <= np.median(x)
    return float(np.count_nonzero(below[:-1] != below[1:]))


def extract_features(x, period: int) -> np.ndarray:
    """Feature vector in :data:`FEATURE_NAMES` order.

    Parameters
    ----------
    x : array_like
        Raw observations, at least ``max(2 * period, 10)`` of them.
    period : int
        Seasonal period; 1 for non-seasonal data.
    """
    x = np.asarray(x, dtype=float)
    if period < 1:
        raise FeatureError("period must be positive")
    if len(x) < max(2 * period, 10):
        raise FeatureError(f"need at least {max(2 * period, 10)} observations, got {len(x)}")
    trend, _, remainder = _stl_like(x, period)
    detrended_total = trend + remainder
    var_total = _var(detrended_total)
    trend_strength = 0.0 if var_total <= 0 else min(1.0, max(0.0, 1.0 - _var(remainder) / var_total))
    linearity, curvature = _poly_coefficients(trend)
    width = max(period, 10)
    return np.array(
        [
            float(x.mean()),
            _var(x),
            _acf1(x),
            trend_strength,
            linearity,
            curvature,
            _spectral_entropy(x),
            _lumpiness(x, width),
            _spikiness(remainder),
            _max_shift(x, width, lambda w: w.mean(axis=1)),
            _max_shift(x, width, lambda w: w.var(axis=1, ddof=1)),
            _flat_spots(x),
            _crossing_points(x),
        ]
    )


def feature_matrix(series: Sequence[np.ndarray], ids: Sequence[str], period: int) -> FeatureMatrix:
    rows = np.array([extract_features(s, period) for s in series]).reshape(len(ids), len(FEATURE_NAMES))
    return FeatureMatrix(rows, list(ids))


def standardize(fm: FeatureMatrix) -> FeatureMatrix:
    """Column-wise z-scores with population sd; constant columns become zero."""
    if fm.rows.shape[0] < 2:
        raise FeatureError("standardisation needs at least 2 rows")
    mu = fm.rows.mean(axis=0)
    sd = fm.rows.std(axis=0)
    centred = fm.rows - mu
    scale = np.maximum(np.abs(fm.rows).max(axis=0), 1.0)
    constant = sd <= 1e-12 * scale
    out = np.where(constant, 0.0, centred / np.where(constant, 1.0, sd))
    return FeatureMatrix(out, list(fm.ids), standardized=True)
