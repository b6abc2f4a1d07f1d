"""Forecast accuracy metrics and non-parametric significance tests."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaincc

EXACT_WILCOXON_MAX = 20


class MetricError(ValueError):
    pass


def smape(F, Y, zero_safe: bool = False, epsilon: float = 0.1) -> float:
    """Symmetric MAPE in percent.

    With ``zero_safe`` each term's denominator becomes
    ``max(|Y| + |F| + epsilon, 0.5 + epsilon)``, replacing the halved sum.
    A standard-form term with ``Y == F == 0`` counts as zero error.
    """
    F = np.asarray(F, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if F.shape != Y.shape or F.size == 0:
        raise MetricError(f"forecast/actual length mismatch: {F.shape} vs {Y.shape}")
    num = np.abs(F - Y)
    if zero_safe:
        denom = np.maximum(np.abs(Y) + np.abs(F) + epsilon, 0.5 + epsilon)
        return float(100.0 * np.mean(num / denom))
    denom = (np.abs(Y) + np.abs(F)) / 2.0
    terms = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return float(100.0 * np.mean(terms))


def mase(F, Y, train, S: int) -> float:
    F = np.asarray(F, dtype=float)
    Y = np.asarray(Y, dtype=float)
    train = np.asarray(train, dtype=float)
    if F.shape != Y.shape or F.size == 0:
        raise MetricError(f"forecast/actual length mismatch: {F.shape} vs {Y.shape}")
    M, N = len(train), len(Y)
    if M <= S:
        raise MetricError(f"training length {M} must exceed the seasonal period {S}")
    naive = np.abs(train[S:] - train[:-S]).sum()
    if naive <= 0:
        raise MetricError("seasonal naive in-sample error is zero; MASE undefined")
    return float(np.abs(F - Y).sum() / (N / (M - S) * naive))


def _median(values: np.ndarray) -> float:
    return float(np.median(values))


@dataclass
class MetricResult:
    per_series: dict[str, dict[str, float]]
    mean_smape: float
    median_smape: float
    mean_mase: float
    median_mase: float
    mase_excluded: list[str] = field(default_factory=list)

    def aggregates(self) -> dict:
        return {
            "mean_smape": self.mean_smape,
            "median_smape": self.median_smape,
            "mean_mase": self.mean_mase,
            "median_mase": self.median_mase,
            "n_series": len(self.per_series),
            "mase_excluded": len(self.mase_excluded),
        }


def aggregate(values: Mapping[str, float] | Sequence[float]) -> tuple[float, float]:
    """(mean, median) of the metric values."""
    arr = np.asarray(list(values.values()) if isinstance(values, Mapping) else list(values), dtype=float)
    if arr.size == 0:
        raise MetricError("cannot aggregate an empty collection")
    return float(arr.mean()), _median(arr)


def evaluate_forecasts(
    forecasts: Mapping[str, np.ndarray],
    actuals: Mapping[str, np.ndarray],
    train: Mapping[str, np.ndarray],
    seasonal_period: int,
    zero_safe: bool = False,
    epsilon: float = 0.1,
) -> MetricResult:
    """Per-series sMAPE/MASE with mean and median aggregates.

    Series whose MASE is undefined are left out of the MASE aggregates and
    listed in ``mase_excluded``.
    """
    per: dict[str, dict[str, float]] = {}
    excluded = []
    for sid in sorted(forecasts):
        s = smape(forecasts[sid], actuals[sid], zero_safe, epsilon)
        try:
            m = mase(forecasts[sid], actuals[sid], train[sid], seasonal_period)
        except MetricError:
            m = float("nan")
            excluded.append(sid)
        per[sid] = {"smape": s, "mase": m}
    if excluded:
        warnings.warn(f"MASE undefined for {len(excluded)} series; excluded from aggregates", RuntimeWarning)
    mean_s, med_s = aggregate([v["smape"] for v in per.values()])
    mases = [v["mase"] for v in per.values() if not math.isnan(v["mase"])]
    mean_m, med_m = aggregate(mases) if mases else (float("nan"), float("nan"))
    return MetricResult(per, mean_s, med_s, mean_m, med_m, excluded)


# --------------------------------------------------------------------------
# significance tests


def _rank_row(row: np.ndarray) -> np.ndarray:
    """Ranks 1..k with ties sharing their mean rank."""
    order = np.argsort(row, kind="mergesort")
    ranks = np.empty(len(row))
    sorted_row = row[order]
    i = 0
    while i < len(row):
        j = i
        while j + 1 < len(row) and sorted_row[j + 1] == sorted_row[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def chi2_sf(x: float, df: int) -> float:
    if x <= 0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


def friedman_test(errors) -> tuple[float, float, np.ndarray]:
    """Friedman chi-square over a (datasets x models) error matrix.

    Returns ``(statistic, p_value, average_ranks)``; rank 1 is the lowest error.
    """
    E = np.asarray(errors, dtype=float)
    if E.ndim != 2 or E.shape[1] < 2:
        raise MetricError("Friedman test needs at least 2 models")
    if E.shape[0] < 2:
        raise MetricError("Friedman test needs at least 2 datasets")
    n, k = E.shape
    ranks = np.array([_rank_row(r) for r in E])
    avg = ranks.mean(axis=0)
    stat = 12.0 * n / (k * (k + 1)) * float(np.sum((avg - (k + 1) / 2.0) ** 2))
    return stat, chi2_sf(stat, k - 1), avg


def _signed_rank_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each value of 2*W+."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


@dataclass
class WilcoxonResult:
    p_value: float
    statistic: float
    n_nonzero: int
    exact: bool
    degenerate: bool = False


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided paired signed-rank test.

    Exact null distribution for up to 20 nonzero differences, otherwise a
    normal approximation with tie and continuity corrections. All-zero
    differences return p = 1 with ``degenerate`` set.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise MetricError("paired samples must have equal length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(1.0, 0.0, 0, True, degenerate=True)
    ranks = _rank_row(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_WILCOXON_MAX:
        counts = _signed_rank_counts(2 * ranks)
        total = 2**n
        w2 = int(round(2 * w_plus))
        lower = int(sum(counts[: w2 + 1]))
        upper = int(sum(counts[w2:]))
        p = min(1.0, 2.0 * min(lower, upper) / total)
        return WilcoxonResult(p, w_plus, n, True)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    diff = abs(w_plus - mean)
    z = max(diff - 0.5, 0.0) / math.sqrt(var)
    return WilcoxonResult(min(1.0, math.erfc(z / math.sqrt(2.0))), w_plus, n, False)


def holm_adjust(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise MetricError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="mergesort")
    adjusted = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adjusted = np.maximum.accumulate(adjusted)
    out = np.empty(m)
    out[order] = adjusted
    return out


@dataclass
class StatTestReport:
    models: list[str]
    friedman_statistic: float
    friedman_p: float
    average_ranks: dict[str, float]
    raw_p: np.ndarray
    adjusted_p: np.ndarray
    alpha: float = 0.05

    def to_dict(self) -> dict:
        pairs = []
        m = len(self.models)
        for i in range(m):
            for j in range(i + 1, m):
                pairs.append(
                    {
                        "model_a": self.models[i],
                        "model_b": self.models[j],
                        "p_raw": float(self.raw_p[i, j]),
                        "p_holm": float(self.adjusted_p[i, j]),
                        "significant": bool(self.adjusted_p[i, j] < self.alpha),
                    }
                )
        return {
            "friedman_statistic": self.friedman_statistic,
            "friedman_p": self.friedman_p,
            "average_ranks": self.average_ranks,
            "alpha": self.alpha,
            "pairwise": pairs,
        }


def statistical_tests(errors, models: Sequence[str], alpha: float = 0.05) -> StatTestReport:
    """Friedman test plus Holm-corrected pairwise Wilcoxon tests over model columns."""
    E = np.asarray(errors, dtype=float)
    stat, p, ranks = friedman_test(E)
    k = E.shape[1]
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    raw = np.array([wilcoxon_signed_rank(E[:, i], E[:, j]).p_value for i, j in pairs])
    adj = holm_adjust(raw) if len(raw) else raw
    raw_m = np.ones((k, k))
    adj_m = np.ones((k, k))
    for (i, j), r, a in zip(pairs, raw, adj):
        raw_m[i, j] = raw_m[j, i] = r
        adj_m[i, j] = adj_m[j, i] = a
    return StatTestReport(list(models), stat, p, dict(zip(models, ranks.tolist())), raw_m, adj_m, alpha)
