"""Per-series transforms applied before windowing, and their inverses.

Forward order is mean normalisation, log scaling, then seasonal handling.
Forecasts come back through :meth:`Pipeline.inverse` in reverse order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class PreprocessError(ValueError):
    pass


SEASONALITY_POLICIES = ("none", "deseasonalise", "fourier")


def mean_normalize(x) -> tuple[np.ndarray, float, float]:
    """Divide by the series mean.

    Returns ``(normalized, divisor, shift)``. When the mean is not positive
    the series is first shifted by ``1 - min(x)`` and the divisor is 1, so
    ``x == normalized * divisor - shift`` always holds.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise PreprocessError("cannot normalise an empty series")
    m = float(np.mean(x))
    if m > 0:
        return x / m, m, 0.0
    shift = 1.0 - float(np.min(x))
    return x + shift, 1.0, shift


def mean_denormalize(y, divisor: float, shift: float = 0.0) -> np.ndarray:
    return np.asarray(y, dtype=float) * divisor - shift


def log_transform(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise PreprocessError("log transform requires nonnegative input")
    return np.log1p(x)


def inverse_log_transform(y) -> np.ndarray:
    return np.expm1(np.asarray(y, dtype=float))


def _centred_moving_average(x: np.ndarray, width: int) -> np.ndarray:
    """Centred MA; even widths use the 2xwidth weighting. Undefined ends are NaN."""
    n = len(x)
    out = np.full(n, np.nan)
    if width <= 1:
        return x.astype(float).copy()
    if width % 2:
        weights = np.full(width, 1.0 / width)
    else:
        weights = np.full(width + 1, 1.0 / width)
        weights[0] = weights[-1] = 0.5 / width
    half = len(weights) // 2
    if n < len(weights):
        return out
    out[half : n - half] = np.convolve(x, weights, mode="valid")
    return out


def _seasonal_indices(detrended: np.ndarray, period: int) -> np.ndarray:
    phases = np.arange(len(detrended)) % period
    idx = np.zeros(period)
    for p in range(period):
        vals = detrended[(phases == p) & ~np.isnan(detrended)]
        if vals.size:
            idx[p] = vals.mean()
    return idx - idx.mean()


def classical_decompose(x, period: int, mode: str = "additive") -> tuple[np.ndarray, np.ndarray]:
    """Additive moving-average decomposition.

    Returns ``(seasonal, deseasonalized)``, both the length of ``x``. The
    seasonal component repeats with ``period`` and averages to zero over a
    cycle.
    """
    if mode != "additive":
        raise PreprocessError(f"only additive decomposition is supported, got {mode!r}")
    x = np.asarray(x, dtype=float)
    if period < 1:
        raise PreprocessError("period must be positive")
    if len(x) < 2 * period:
        raise PreprocessError(f"need at least {2 * period} observations, got {len(x)}")
    if period == 1:
        return np.zeros_like(x), x.copy()
    trend = _centred_moving_average(x, period)
    indices = _seasonal_indices(x - trend, period)
    seasonal = extend_seasonal(indices, 0, len(x))
    return seasonal, x - seasonal


def extend_seasonal(indices: np.ndarray, start: int, length: int) -> np.ndarray:
    """Seasonal values for time steps ``start .. start+length-1`` (phase 0 at t=0)."""
    indices = np.asarray(indices, dtype=float)
    return indices[(start + np.arange(length)) % len(indices)]


def fourier_terms(t_index: int, period: float, K: int) -> np.ndarray:
    """``[sin(2 pi k t / period), cos(2 pi k t / period)]`` for ``k = 1..K``."""
    if K < 1:
        raise PreprocessError("K must be positive")
    if K > math.floor(period / 2):
        raise PreprocessError(f"K={K} exceeds floor(period/2) for period {period}")
    k = np.arange(1, K + 1)
    angle = 2.0 * np.pi * k * t_index / period
    out = np.empty(2 * K)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def fourier_matrix(t_indices: Sequence[int], period: float, K: int) -> np.ndarray:
    return np.array([fourier_terms(int(t), period, K) for t in t_indices]).reshape(len(t_indices), 2 * K)


def input_window_size(horizon: int, seasonal_period: int) -> int:
    return math.ceil(1.25 * max(horizon, seasonal_period))


@dataclass
class WindowSet:
    inputs: np.ndarray
    targets: np.ndarray
    series_index: np.ndarray
    exog: np.ndarray | None = None

    @property
    def design(self) -> np.ndarray:
        """Lag inputs with any exogenous columns appended."""
        if self.exog is None:
            return self.inputs
        return np.hstack([self.inputs, self.exog])

    def __len__(self) -> int:
        return len(self.targets)


def make_windows(
    series: Sequence[np.ndarray],
    n: int,
    ids: Sequence[str] | None = None,
    exog: Sequence[np.ndarray] | None = None,
) -> WindowSet:
    """Single-step (input, target) pairs, oldest lag first.

    ``exog``, when given, holds one row per time step of each series; the row
    at the target's time index is attached to the pair.
    """
    if n < 1:
        raise PreprocessError("window size must be positive")
    inputs, targets, owner, ex = [], [], [], []
    for i, s in enumerate(series):
        s = np.asarray(s, dtype=float)
        if len(s) < n + 1:
            name = ids[i] if ids is not None else str(i)
            raise PreprocessError(f"series {name!r} has {len(s)} points, needs at least {n + 1}")
        rows = np.lib.stride_tricks.sliding_window_view(s, n)[:-1]
        inputs.append(rows)
        targets.append(s[n:])
        owner.append(np.full(len(s) - n, i))
        if exog is not None:
            ex.append(np.asarray(exog[i], dtype=float)[n : len(s)])
    if not inputs:
        raise PreprocessError("no series to window")
    return WindowSet(
        np.vstack(inputs),
        np.concatenate(targets),
        np.concatenate(owner),
        np.vstack(ex) if exog is not None else None,
    )


@dataclass
class PreprocessRecord:
    series_id: str
    mean_divisor: float
    shift: float = 0.0
    log_applied: bool = False
    seasonal_component: np.ndarray | None = None
    length: int = 0
    pipeline_order: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Pipeline:
    """Configured forward/inverse transform chain for one learner."""

    log: bool = False
    seasonality: str = "none"
    period: int = 1
    fourier_k: int = 1

    def __post_init__(self):
        if self.seasonality not in SEASONALITY_POLICIES:
            raise PreprocessError(f"unknown seasonality policy {self.seasonality!r}")

    def forward(self, x, series_id: str = "") -> tuple[np.ndarray, PreprocessRecord]:
        x = np.asarray(x, dtype=float)
        y, divisor, shift = mean_normalize(x)
        rec = PreprocessRecord(series_id, divisor, shift, length=len(x), pipeline_order=["mean_normalize"])
        if self.log:
            y = log_transform(y)
            rec.log_applied = True
            rec.pipeline_order.append("log")
        # series too short to decompose are left seasonal
        if self.seasonality == "deseasonalise" and self.period > 1 and len(y) >= 2 * self.period:
            seasonal, y = classical_decompose(y, self.period)
            rec.seasonal_component = seasonal[: self.period].copy()
            rec.pipeline_order.append("deseasonalise")
        return y, rec

    def inverse(self, y, rec: PreprocessRecord, start: int = 0) -> np.ndarray:
        """Undo :meth:`forward` for values at time steps ``start, start+1, ...``."""
        y = np.asarray(y, dtype=float)
        for step in reversed(rec.pipeline_order):
            if step == "deseasonalise":
                y = y + extend_seasonal(rec.seasonal_component, start, len(y))
            elif step == "log":
                y = inverse_log_transform(y)
            elif step == "mean_normalize":
                y = mean_denormalize(y, rec.mean_divisor, rec.shift)
        return y

    @property
    def n_exog(self) -> int:
        return 2 * self.effective_fourier_k

    @property
    def effective_fourier_k(self) -> int:
        if self.seasonality != "fourier":
            return 0
        return min(self.fourier_k, self.period // 2)

    def exog(self, t_indices: Sequence[int]) -> np.ndarray | None:
        k = self.effective_fourier_k
        if k == 0:
            return None
        return fourier_matrix(t_indices, self.period, k)
