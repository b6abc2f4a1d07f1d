import numpy as np
import pytest

from gfm.learners import (
    FFNNModel,
    GlobalModel,
    LearnerConfig,
    LearnerError,
    PooledRegressionModel,
    ffnn_loss_and_grad,
    fit_ffnn,
    fit_local,
    fit_pr,
    forecast_local,
    forecast_recursive,
)
from gfm.preprocess import WindowSet, make_windows
from oracles import ar_iterate, central_difference, least_squares_oracle


def ar1_series(c=2.0, phi=0.5, x0=10.0, length=30):
    x = [x0]
    for _ in range(length - 1):
        x.append(c + phi * x[-1])
    return np.array(x)


def random_ws(rng, rows, n):
    X = rng.normal(size=(rows, n))
    y = X @ rng.normal(size=n) + rng.normal(size=rows)
    return WindowSet(X, y, np.zeros(rows, int))


def test_pr_exact_ar_recovery():
    ws = make_windows([ar1_series(), ar1_series(x0=-4.0)], 1)
    model = fit_pr(ws)
    assert model.intercept == pytest.approx(2.0, abs=1e-8)
    assert model.coefficients[0] == pytest.approx(0.5, abs=1e-8)


def test_pr_constant_targets():
    rng = np.random.default_rng(0)
    ws = WindowSet(rng.normal(size=(20, 3)), np.full(20, 4.2), np.zeros(20, int))
    model = fit_pr(ws)
    np.testing.assert_allclose(model.coefficients, 0, atol=1e-12)
    assert model.intercept == pytest.approx(4.2)


def test_pr_ridge_limit(rng):
    ws = random_ws(rng, 40, 3)
    model = fit_pr(ws, 1e9)
    np.testing.assert_allclose(model.coefficients, 0, atol=1e-4)
    assert model.intercept == pytest.approx(ws.targets.mean(), abs=1e-4)


@pytest.mark.parametrize("l2", [0.0, 0.3, 5.0])
def test_pr_matches_oracle(rng, l2):
    for _ in range(20):
        n = int(rng.integers(1, 6))
        ws = random_ws(rng, int(rng.integers(n + 2, 51)), n)
        model = fit_pr(ws, l2)
        b0, b = least_squares_oracle(ws.inputs, ws.targets, l2)
        np.testing.assert_allclose(model.coefficients, b, atol=1e-8)
        assert model.intercept == pytest.approx(b0, abs=1e-8)


def test_pr_singular_advises_ridge():
    X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    ws = WindowSet(X, np.arange(10.0), np.zeros(10, int))
    with pytest.raises(LearnerError, match="l2_weight"):
        fit_pr(ws)
    assert np.all(np.isfinite(fit_pr(ws, 0.1).coefficients))


def test_pr_too_few_rows():
    ws = WindowSet(np.ones((2, 2)), np.ones(2), np.zeros(2, int))
    with pytest.raises(LearnerError):
        fit_pr(ws)


def test_ffnn_zero_network_outputs_bias(rng):
    model = FFNNModel.zeros(3, 4, bias_out=1.7)
    np.testing.assert_array_equal(model.predict(rng.normal(size=(6, 3))), 1.7)


def test_ffnn_gradient_check(rng):
    for _ in range(10):
        n, h, m = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 12))
        X, y = rng.normal(size=(m, n)), rng.normal(size=m)
        model = FFNNModel.zeros(n, h).unpack(rng.normal(size=n * h + 2 * h + 1))
        model.decay = float(rng.uniform(0, 0.1))
        _, grad = ffnn_loss_and_grad(model, X, y)
        numeric = central_difference(lambda t: ffnn_loss_and_grad(model.unpack(t), X, y)[0], model.pack())
        rel = np.abs(grad - numeric) / np.maximum(np.abs(grad) + np.abs(numeric), 1e-8)
        assert rel.max() < 1e-4


def test_ffnn_learns_xor():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0.0, 1.0, 1.0, 0.0])
    model = fit_ffnn(WindowSet(X, y, np.zeros(4, int)), 4, 0.0, 5000, seed=0)
    assert np.mean((model.predict(X) - y) ** 2) < 0.05


def test_ffnn_final_loss_not_above_initial(rng):
    for seed in range(5):
        ws = random_ws(rng, 30, 3)
        model = fit_ffnn(ws, 3, 0.01, 200, seed)
        assert model.loss_history[-1] <= model.loss_history[0]


def test_ffnn_deterministic(rng):
    ws = random_ws(rng, 25, 2)
    a, b = fit_ffnn(ws, 3, 0.01, 50, 7), fit_ffnn(ws, 3, 0.01, 50, 7)
    np.testing.assert_array_equal(a.pack(), b.pack())


def test_ffnn_divergence_raises(rng):
    ws = WindowSet(rng.normal(size=(10, 2)) * 1e3, rng.normal(size=10) * 1e3, np.zeros(10, int))
    with pytest.raises(LearnerError, match="step size"):
        fit_ffnn(ws, 2, 0.0, 200, 0, step_size=10.0)


def test_forecast_random_walk():
    model = PooledRegressionModel(np.array([1.0]), 0.0, 0.0, 1)
    np.testing.assert_array_equal(forecast_recursive(model, [3.0, 5.0, 8.0], 4), [8.0] * 4)


def test_forecast_matches_ar_iteration():
    x = ar1_series()
    model = fit_pr(make_windows([x], 1))
    fc = forecast_recursive(model, x, 12)
    np.testing.assert_allclose(fc, ar_iterate(2.0, 0.5, x, 12), atol=1e-8)


def test_forecast_horizon_one_is_single_evaluation(rng):
    model = FFNNModel.zeros(3, 2).unpack(rng.normal(size=3 * 2 + 5))
    hist = rng.normal(size=7)
    assert forecast_recursive(model, hist, 1)[0] == model.predict(hist[-3:][None, :])[0]


def test_forecast_short_history():
    with pytest.raises(LearnerError):
        forecast_recursive(PooledRegressionModel(np.ones(3), 0.0, 0.0, 3), [1.0, 2.0], 2)


def test_forecast_length_and_finite(rng):
    model = FFNNModel.zeros(4, 3).unpack(rng.normal(size=4 * 3 + 7))
    for h in (1, 5, 30):
        fc = forecast_recursive(model, rng.normal(size=10), h)
        assert fc.shape == (h,) and np.all(np.isfinite(fc))


def test_global_model_pr_on_ar_data():
    series = [ar1_series(x0=v, length=40) for v in (3.0, 6.0, 9.0)]
    gm = GlobalModel(LearnerConfig("pr", log=False), 2, 1).fit(series, seed=0)
    assert gm.predict(series, 3).shape == (3, 3)


def test_global_model_clamps_nonnegative():
    noise = np.random.default_rng(3).normal(scale=0.2, size=(2, 30))
    series = [np.linspace(10.0, 0.5, 30) + noise[0], np.linspace(8.0, 0.2, 30) + noise[1]]
    raw = GlobalModel(LearnerConfig("pr"), 3, 1).fit(series, 0).predict(series, 10)
    clamped = GlobalModel(LearnerConfig("pr", nonnegative=True), 3, 1).fit(series, 0).predict(series, 10)
    assert raw.min() < 0
    np.testing.assert_array_equal(clamped, np.maximum(raw, 0))


def test_ses_constant():
    m = fit_local(np.full(12, 4.0), "ses")
    np.testing.assert_array_equal(forecast_local(m, 5), 4.0)


def test_ses_flat_forecast(rng):
    fc = forecast_local(fit_local(rng.normal(size=30).cumsum(), "ses"), 6)
    assert np.all(fc == fc[0])


def test_seasonal_naive():
    m = fit_local([1, 2, 3, 1, 2, 3], "seasonal_naive", 3)
    np.testing.assert_array_equal(forecast_local(m, 3), [1, 2, 3])


def test_holt_continues_ramp():
    x = 5.0 + 1.5 * np.arange(30)
    fc = forecast_local(fit_local(x, "holt"), 6)
    np.testing.assert_allclose(fc, 5.0 + 1.5 * np.arange(30, 36), atol=1e-6)


def test_holt_winters_noiseless_tail():
    pattern = np.array([2.0, -1.0, 0.5, -1.5])
    t = np.arange(40)
    full = 10.0 + 0.3 * t + pattern[t % 4]
    m = fit_local(full[:32], "holt_winters_additive", 4)
    np.testing.assert_allclose(forecast_local(m, 8), full[32:], atol=1e-4)
    assert 0 <= m.alpha <= 1 and 0 <= m.beta <= 1 and 0 <= m.gamma <= 1


def test_local_horizon_zero():
    for kind in ("ses", "holt", "seasonal_naive"):
        assert forecast_local(fit_local(np.arange(1.0, 9.0), kind, 2), 0).size == 0


def test_local_length_errors():
    with pytest.raises(LearnerError):
        fit_local(np.arange(7.0), "holt_winters_additive", 4)
    with pytest.raises(LearnerError):
        fit_local([1.0], "ses")


def test_auto_picks_seasonal_model_for_seasonal_data():
    t = np.arange(48)
    x = 10 + np.array([3.0, -2.0, 1.0, -2.0])[t % 4] + 0.01 * np.sin(t)
    assert fit_local(x, "auto", 4).kind == "holt_winters_additive"
