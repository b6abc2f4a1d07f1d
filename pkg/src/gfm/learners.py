"""Base forecasters.

Two global learners (pooled linear autoregression and a one-hidden-layer
network) share the single-step recursive forecasting loop. A small
exponential-smoothing family plus seasonal naive supplies per-series local
forecasts for global/local combinations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .preprocess import Pipeline, WindowSet, make_windows


class LearnerError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# pooled regression


@dataclass
class PooledRegressionModel:
    coefficients: np.ndarray
    intercept: float
    l2_weight: float
    window_size: int
    n_exog: int = 0

    def predict(self, design: np.ndarray) -> np.ndarray:
        return design @ self.coefficients + self.intercept

    def summary(self) -> dict:
        return {
            "type": "pr",
            "intercept": self.intercept,
            "coefficients": self.coefficients.tolist(),
            "l2_weight": self.l2_weight,
            "window_size": self.window_size,
        }


def fit_pr(ws: WindowSet, l2_weight: float = 0.0) -> PooledRegressionModel:
    """Least squares with an unpenalised intercept and optional ridge penalty.

    Solved from centred normal equations via a Cholesky factorisation.
    """
    X = ws.design
    y = ws.targets
    n_rows, n_cols = X.shape
    if l2_weight < 0:
        raise LearnerError("l2_weight must be nonnegative")
    if n_rows < ws.inputs.shape[1] + 1:
        raise LearnerError(f"need at least {ws.inputs.shape[1] + 1} training rows, got {n_rows}")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc
    gram[np.diag_indices(n_cols)] += l2_weight
    rhs = Xc.T @ (y - y_mean)
    scale = max(float(np.abs(np.diag(gram)).max()), 1e-300)
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError:
        factor = None
    if factor is None or np.min(np.abs(np.diag(factor[0]))) ** 2 <= 1e-13 * scale:
        raise LearnerError("normal equations are singular; use a positive l2_weight (ridge)")
    coef = scipy.linalg.cho_solve(factor, rhs)
    return PooledRegressionModel(
        coef, float(y_mean - x_mean @ coef), float(l2_weight), ws.inputs.shape[1], n_cols - ws.inputs.shape[1]
    )


# --------------------------------------------------------------------------
# feed-forward network


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class FFNNModel:
    weights_in: np.ndarray
    bias_hidden: np.ndarray
    weights_out: np.ndarray
    bias_out: float
    decay: float = 0.0
    window_size: int = 0
    n_exog: int = 0
    loss_history: list[float] = field(default_factory=list, repr=False)

    @property
    def hidden_nodes(self) -> int:
        return len(self.bias_hidden)

    @classmethod
    def zeros(cls, n_inputs: int, hidden: int, bias_out: float = 0.0) -> "FFNNModel":
        return cls(np.zeros((n_inputs, hidden)), np.zeros(hidden), np.zeros(hidden), bias_out, window_size=n_inputs)

    def predict(self, design: np.ndarray) -> np.ndarray:
        hidden = _sigmoid(design @ self.weights_in + self.bias_hidden)
        return hidden @ self.weights_out + self.bias_out

    def pack(self) -> np.ndarray:
        return np.concatenate([self.weights_in.ravel(), self.bias_hidden, self.weights_out, [self.bias_out]])

    def unpack(self, theta: np.ndarray) -> "FFNNModel":
        n, h = self.weights_in.shape
        w1 = theta[: n * h].reshape(n, h)
        b1 = theta[n * h : n * h + h]
        w2 = theta[n * h + h : n * h + 2 * h]
        return replace(self, weights_in=w1.copy(), bias_hidden=b1.copy(), weights_out=w2.copy(), bias_out=float(theta[-1]))

    def summary(self) -> dict:
        return {
            "type": "ffnn",
            "hidden_nodes": self.hidden_nodes,
            "decay": self.decay,
            "window_size": self.window_size,
            "final_loss": self.loss_history[-1] if self.loss_history else None,
        }


def ffnn_loss_and_grad(model: FFNNModel, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error plus ``decay * ||theta||^2`` and its gradient (packed order)."""
    m = len(y)
    z = X @ model.weights_in + model.bias_hidden
    a = _sigmoid(z)
    out = a @ model.weights_out + model.bias_out
    resid = out - y
    theta = model.pack()
    loss = float(resid @ resid / m + model.decay * theta @ theta)
    d_out = 2.0 * resid / m
    g_w2 = a.T @ d_out
    g_b2 = d_out.sum()
    dz = np.outer(d_out, model.weights_out) * a * (1.0 - a)
    g_w1 = X.T @ dz
    g_b1 = dz.sum(axis=0)
    grad = np.concatenate([g_w1.ravel(), g_b1, g_w2, [g_b2]]) + 2.0 * model.decay * theta
    return loss, grad


def fit_ffnn(
    ws: WindowSet,
    h: int,
    decay: float,
    epochs: int,
    seed: int,
    step_size: float = 0.05,
) -> FFNNModel:
    """Full-batch gradient descent with a fixed step from a seeded uniform(-0.5, 0.5) start."""
    X, y = ws.design, ws.targets
    if len(y) < 1:
        raise LearnerError("no training rows")
    if h < 1 or epochs < 1:
        raise LearnerError("hidden nodes and epochs must be positive")
    n = X.shape[1]
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-0.5, 0.5, size=n * h + 2 * h + 1)
    model = FFNNModel.zeros(n, h).unpack(theta)
    model = replace(model, decay=float(decay), window_size=ws.inputs.shape[1], n_exog=n - ws.inputs.shape[1])
    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            loss, grad = ffnn_loss_and_grad(model, X, y)
            if not np.isfinite(loss):
                raise LearnerError("training loss diverged; lower the step size")
            history.append(loss)
            theta = theta - step_size * grad
            model = model.unpack(theta)
        loss, _ = ffnn_loss_and_grad(model, X, y)
    if not np.isfinite(loss):
        raise LearnerError("training loss diverged; lower the step size")
    history.append(loss)
    model.loss_history = history
    return model


# --------------------------------------------------------------------------
# recursive forecasting


def forecast_recursive(model, history, horizon: int, exog_future: np.ndarray | None = None) -> np.ndarray:
    """Iterate a one-step model ``horizon`` times, feeding forecasts back as lags."""
    n = model.window_size
    history = np.asarray(history, dtype=float)
    if len(history) < n:
        raise LearnerError(f"history of length {len(history)} is shorter than the window ({n})")
    buf = list(history[-n:])
    out = np.empty(horizon)
    for i in range(horizon):
        row = np.asarray(buf[-n:])
        if model.n_exog:
            row = np.concatenate([row, exog_future[i]])
        out[i] = model.predict(row[None, :])[0]
        buf.append(out[i])
    return out


# --------------------------------------------------------------------------
# global model wrapper


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "pr"
    window_size: int | None = None
    l2_weight: float = 0.0
    hidden_nodes: int = 4
    decay: float = 0.01
    epochs: int = 300
    step_size: float = 0.05
    log: bool | None = None
    seasonality: str = "none"
    fourier_k: int = 1
    nonnegative: bool = False

    def __post_init__(self):
        if self.kind not in ("pr", "ffnn"):
            raise LearnerError(f"unknown learner {self.kind!r}")

    @property
    def use_log(self) -> bool:
        # PR gets mean normalisation only
        return self.kind == "ffnn" if self.log is None else self.log

    def with_params(self, **params) -> "LearnerConfig":
        return replace(self, **params)

    def to_dict(self) -> dict:
        return asdict(self)


class GlobalModel:
    """One pooled learner over a group of series, from raw values to raw forecasts."""

    def __init__(self, config: LearnerConfig, window_size: int, seasonal_period: int):
        self.config = config
        self.window_size = window_size
        self.pipeline = Pipeline(config.use_log, config.seasonality, seasonal_period, config.fourier_k)
        self.model = None

    def windows(self, histories: Sequence[np.ndarray], ids: Sequence[str] | None = None) -> WindowSet:
        prepped, exog = [], []
        for i, x in enumerate(histories):
            y, _ = self.pipeline.forward(x, ids[i] if ids else "")
            prepped.append(y)
            exog.append(self.pipeline.exog(range(len(y))))
        return make_windows(prepped, self.window_size, ids, exog if self.pipeline.n_exog else None)

    def n_rows(self, histories: Sequence[np.ndarray]) -> int:
        return sum(max(len(x) - self.window_size, 0) for x in histories)

    def fit(self, histories: Sequence[np.ndarray], seed: int, ids: Sequence[str] | None = None) -> "GlobalModel":
        ws = self.windows(histories, ids)
        cfg = self.config
        if cfg.kind == "pr":
            self.model = fit_pr(ws, cfg.l2_weight)
        else:
            self.model = fit_ffnn(ws, cfg.hidden_nodes, cfg.decay, cfg.epochs, seed, cfg.step_size)
        return self

    def predict(self, histories: Sequence[np.ndarray], horizon: int) -> np.ndarray:
        if self.model is None:
            raise LearnerError("model is not fitted")
        out = np.empty((len(histories), horizon))
        for i, x in enumerate(histories):
            y, rec = self.pipeline.forward(x)
            exog = self.pipeline.exog(range(len(x), len(x) + horizon))
            fc = forecast_recursive(self.model, y, horizon, exog)
            fc = self.pipeline.inverse(fc, rec, start=len(x))
            if self.config.nonnegative:
                fc = np.maximum(fc, 0.0)
            out[i] = fc
        return out


# --------------------------------------------------------------------------
# local models

LOCAL_KINDS = ("ses", "holt", "holt_winters_additive", "seasonal_naive")
GRID = np.round(np.arange(0.0, 1.0 + 1e-9, 0.05), 10)


@dataclass
class LocalModel:
    kind: str
    period: int = 1
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    level: float = 0.0
    trend: float = 0.0
    seasonal: np.ndarray | None = None
    sse: float = 0.0
    n_errors: int = 0


def _ses_path(x, alpha):
    level = np.full(alpha.shape, x[0])
    sse = np.zeros(alpha.shape)
    for t in range(1, len(x)):
        e = x[t] - level
        sse += e * e
        level = level + alpha * e
    return sse, level


def _holt_path(x, alpha, beta):
    level = np.full(alpha.shape, x[0])
    trend = np.full(alpha.shape, x[1] - x[0])
    sse = np.zeros(alpha.shape)
    for t in range(1, len(x)):
        e = x[t] - (level + trend)
        sse += e * e
        new_level = alpha * x[t] + (1 - alpha) * (level + trend)
        trend = beta * (new_level - level) + (1 - beta) * trend
        level = new_level
    return sse, level, trend


def _hw_init(x, p):
    first, second = x[:p].mean(), x[p : 2 * p].mean()
    trend = (second - first) / p
    seasonal = x[:p] - (first + trend * (np.arange(p) - (p - 1) / 2))
    level = first + trend * (p - 1) / 2
    return level, trend, seasonal


def _hw_path(x, p, alpha, beta, gamma):
    l0, b0, s0 = _hw_init(x, p)
    level = np.full(alpha.shape, l0)
    trend = np.full(alpha.shape, b0)
    seasonal = np.tile(s0, (len(alpha), 1))
    sse = np.zeros(alpha.shape)
    for t in range(p, len(x)):
        j = t % p
        s = seasonal[:, j]
        e = x[t] - (level + trend + s)
        sse += e * e
        new_level = alpha * (x[t] - s) + (1 - alpha) * (level + trend)
        trend = beta * (new_level - level) + (1 - beta) * trend
        seasonal[:, j] = gamma * (x[t] - new_level) + (1 - gamma) * s
        level = new_level
    return sse, level, trend, seasonal


def fit_local(x, kind: str, period: int = 1) -> LocalModel:
    """Fit a local model; smoothing parameters come from a 0.05-step grid on in-sample one-step SSE.

    ``kind="auto"`` picks among the smoothing models by AIC.
    """
    x = np.asarray(x, dtype=float)
    if kind == "auto":
        candidates = [fit_local(x, "ses", period)]
        if len(x) >= 2:
            candidates.append(fit_local(x, "holt", period))
        if period > 1 and len(x) >= 2 * period:
            candidates.append(fit_local(x, "holt_winters_additive", period))
        return min(candidates, key=lambda m: _aic(m, len(x)))
    if kind not in LOCAL_KINDS:
        raise LearnerError(f"unknown local model {kind!r}")
    min_len = 2 * period if kind == "holt_winters_additive" else max(2, period if kind == "seasonal_naive" else 2)
    if len(x) < min_len:
        raise LearnerError(f"{kind} needs at least {min_len} observations, got {len(x)}")
    if kind == "seasonal_naive":
        return LocalModel(kind, period, seasonal=x[-period:].copy())
    if kind == "ses":
        sse, level = _ses_path(x, GRID)
        i = int(np.argmin(sse))
        return LocalModel(kind, period, alpha=float(GRID[i]), level=float(level[i]), sse=float(sse[i]), n_errors=len(x) - 1)
    if kind == "holt":
        a, b = (g.ravel() for g in np.meshgrid(GRID, GRID, indexing="ij"))
        sse, level, trend = _holt_path(x, a, b)
        i = int(np.argmin(sse))
        return LocalModel(
            kind, period, alpha=float(a[i]), beta=float(b[i]), level=float(level[i]), trend=float(trend[i]),
            sse=float(sse[i]), n_errors=len(x) - 1,
        )
    a, b, g = (v.ravel() for v in np.meshgrid(GRID, GRID, GRID, indexing="ij"))
    sse, level, trend, seasonal = _hw_path(x, period, a, b, g)
    i = int(np.argmin(sse))
    # reorder so seasonal[0] applies to the first forecast step
    start = len(x) % period
    season = np.roll(seasonal[i], -start)
    return LocalModel(
        kind, period, alpha=float(a[i]), beta=float(b[i]), gamma=float(g[i]), level=float(level[i]),
        trend=float(trend[i]), seasonal=season, sse=float(sse[i]), n_errors=len(x) - period,
    )


def _aic(model: LocalModel, n: int) -> float:
    n_params = {"ses": 2, "holt": 4, "holt_winters_additive": 5 + model.period}[model.kind]
    mse = max(model.sse / max(model.n_errors, 1), 1e-300)
    return n * np.log(mse) + 2 * n_params


def forecast_local(model: LocalModel, horizon: int) -> np.ndarray:
    steps = np.arange(1, horizon + 1)
    if model.kind == "seasonal_naive":
        return model.seasonal[(steps - 1) % model.period].astype(float)
    if model.kind == "ses":
        return np.full(horizon, model.level)
    if model.kind == "holt":
        return model.level + steps * model.trend
    return model.level + steps * model.trend + model.seasonal[(steps - 1) % model.period]


def local_forecasts(histories: Mapping[str, np.ndarray], kind: str, period: int, horizon: int) -> dict[str, np.ndarray]:
    return {sid: forecast_local(fit_local(x, kind, period), horizon) for sid, x in histories.items()}
