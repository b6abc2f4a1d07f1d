"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from gfm.clustering import dtw_distance
from gfm.ensembles import run_baseline, run_cluster_number, run_specialists
from gfm.evaluation import friedman_test, holm_adjust, mase, smape, wilcoxon_signed_rank
from gfm.harness import generate_synthetic
from gfm.learners import FFNNModel, LearnerConfig, ffnn_loss_and_grad, fit_pr, forecast_recursive
from gfm.preprocess import Pipeline, WindowSet, make_windows
from oracles import ar_iterate, central_difference, dtw_brute_force, least_squares_oracle

PR = LearnerConfig("pr")


@pytest.fixture
def gate(capsys):
    """Run ``check`` and print one PASS/FAIL line with its wall time."""

    def run(label, check, limit=None):
        t0 = time.perf_counter()
        err = None
        try:
            check()
        except AssertionError as e:
            err = e
        elapsed = time.perf_counter() - t0
        if err is None and limit is not None and elapsed >= limit:
            err = AssertionError(f"took {elapsed:.2f}s, limit {limit}s")
        with capsys.disabled():
            status = "PASS" if err is None else "FAIL"
            print(f"\n[{status}] {label} ({elapsed:.2f}s)" + ("" if err is None else f": {err}"))
        if err is not None:
            raise err

    return run


def smape_loop(F, Y):
    return 100.0 / len(F) * sum(abs(f - y) / ((abs(y) + abs(f)) / 2) for f, y in zip(F, Y))


def test_criterion_1_metric_oracles(gate):
    def check():
        assert abs(smape([110.0], [90.0]) - 20.0) < 1e-9
        assert abs(smape([0.2], [0.0], zero_safe=True, epsilon=0.1) - 100.0 / 3.0) < 1e-9
        assert abs(mase([5.0], [6.0], [1.0, 2.0, 3.0, 4.0], 1) - 1.0) < 1e-9
        rng = np.random.default_rng(20240601)
        for _ in range(1000):
            h = int(rng.integers(1, 13))
            F = rng.normal(size=h) * 10 ** rng.uniform(-2, 3)
            Y = rng.normal(size=h) * 10 ** rng.uniform(-2, 3)
            c = 10 ** rng.uniform(-3, 3)
            s = smape(F, Y)
            assert 0.0 <= s <= 200.0
            assert abs(s - smape_loop(F, Y)) <= 1e-9 * max(1.0, s)
            assert abs(smape(c * F, c * Y) - s) <= 1e-9 * max(1.0, s)
            # zero-safe invariance checked away from the max() clause
            Fp, Yp = rng.uniform(1, 50, size=h), rng.uniform(1, 50, size=h)
            cz = rng.uniform(1, 20)
            z = smape(Fp, Yp, zero_safe=True, epsilon=0.0)
            assert abs(smape(cz * Fp, cz * Yp, zero_safe=True, epsilon=0.0) - z) <= 1e-9 * max(1.0, z)
            assert smape(F, Y, zero_safe=True) >= 0.0
            train = rng.normal(size=int(rng.integers(3, 30))).cumsum()
            m = mase(F, Y, train, 1)
            assert m >= 0 and abs(mase(c * F, c * Y, c * train, 1) - m) <= 1e-9 * max(1.0, m)

    gate("1 metric oracles + 1000 fuzz cases", check, limit=1.0)


def test_criterion_2_dtw_brute_force(gate):
    dtw_distance([0.0], [0.0])  # trigger JIT compilation before timing

    def check():
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = rng.normal(size=int(rng.integers(1, 7)))
            b = rng.normal(size=int(rng.integers(1, 7)))
            assert dtw_distance(a, b) == dtw_brute_force(a, b), (a, b)

    gate("2 DTW equals brute-force path enumeration (200 pairs, exact)", check, limit=10.0)


def test_criterion_3_pr_oracle(gate):
    def check():
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(1, 6))
            rows = int(rng.integers(n + 2, 51))
            X = rng.normal(size=(rows, n))
            y = X @ rng.normal(size=n) + rng.normal() + rng.normal(size=rows) * 0.5
            l2 = float(rng.choice([0.0, 0.0, 0.1, 10.0]))
            model = fit_pr(WindowSet(X, y, np.zeros(rows, int)), l2)
            b0, b = least_squares_oracle(X, y, l2)
            assert np.max(np.abs(model.coefficients - b)) < 1e-8
            assert abs(model.intercept - b0) < 1e-8
        x = [10.0]
        for _ in range(29):
            x.append(2.0 + 0.5 * x[-1])
        x = np.array(x)
        model = fit_pr(make_windows([x], 1))
        assert abs(model.intercept - 2.0) < 1e-8 and abs(model.coefficients[0] - 0.5) < 1e-8
        assert np.max(np.abs(forecast_recursive(model, x, 10) - ar_iterate(2.0, 0.5, x, 10))) < 1e-8

    gate("3 PR matches normal-equations oracle (100 instances) + AR recovery", check)


def test_criterion_4_ffnn_gradient(gate):
    def check():
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(50):
            n, h, m = int(rng.integers(1, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 20))
            X, y = rng.normal(size=(m, n)), rng.normal(size=m)
            model = FFNNModel.zeros(n, h).unpack(rng.uniform(-1, 1, size=n * h + 2 * h + 1))
            model.decay = float(rng.uniform(0, 0.1))
            _, grad = ffnn_loss_and_grad(model, X, y)
            numeric = central_difference(lambda t: ffnn_loss_and_grad(model.unpack(t), X, y)[0], model.pack())
            rel = np.abs(grad - numeric) / np.maximum(np.abs(grad) + np.abs(numeric), 1e-8)
            worst = max(worst, float(rel.max()))
        assert worst < 1e-4, worst

    gate("4 FFNN analytic vs finite-difference gradient (50 nets)", check)


def test_criterion_5_algorithm_fidelity(gate):
    def check():
        spec = {
            "families": [{"ar": [0.9], "level": 3.0, "count": 8, "name": "A"}, {"ar": [-0.7], "level": 3.0, "count": 8, "name": "B"}],
            "length": 60, "noise_sd": 0.1, "horizon": 6, "seed": 5,
        }
        ds = generate_synthetic(spec)
        base = run_baseline(ds, PR, 5)
        one = run_cluster_number(ds, PR, "kmeans", (1, 1), 5)
        assert all(one.final()[s].tobytes() == base.final()[s].tobytes() for s in ds.ids)
        six = run_cluster_number(ds, PR, "kmeans", (2, 7), 5)
        assert all(six.iteration_count(s) == 6 for s in ds.ids)
        for K, N in ((3, 2), (4, 2), (3, 1)):
            _, state = run_specialists(ds, PR, K, N, seed=5, return_state=True)
            assert all(len(s) == math.ceil(len(ds) / 2) for s in state.rounds[0].train_sets)
            for r in state.rounds[1:]:
                assert not r.repaired
                counts = np.zeros(len(ds), int)
                for s in r.train_sets:
                    counts[s] += 1
                assert np.all(counts == N)
        calls = {"n": 0}

        def growing(f, y):
            calls["n"] += 1
            return float(calls["n"])

        _, state = run_specialists(ds, PR, 3, 2, seed=5, error_fn=growing, return_state=True)
        assert len(state.rounds) == 2 and state.stop_reason == "error_growing" and state.selected_round == 0

    gate("5 k={1} == Baseline bitwise, 6 rows for 2..7, specialists exactly-N and halting", check)


def directional_spec(seed):
    return {
        "families": [
            {"ar": [0.9], "level": 3.0, "count": 20, "name": "A"},
            {"ar": [-0.7], "level": 3.0, "count": 20, "name": "B"},
        ],
        "length": 120, "noise_sd": 0.1, "horizon": 12, "seed": seed,
    }


def mean_smape(fm, ds):
    final = fm.final()
    return float(np.mean([smape(final[s.id], s.values[-ds.horizon :]) for s in ds.series]))


@pytest.mark.slow
def test_criterion_6_directional(gate):
    def check():
        wins, diffs = 0, []
        for seed in range(10):
            ds = generate_synthetic(directional_spec(seed))
            base = mean_smape(run_baseline(ds, PR, seed), ds)
            km = mean_smape(run_cluster_number(ds, PR, "kmeans", (2, 7), seed), ds)
            rnd = mean_smape(run_cluster_number(ds, PR, "random", (2, 7), seed), ds)
            wins += km < base
            diffs.append(km - rnd)
        assert wins >= 9, f"Kmeans.Number beat Baseline in {wins}/10 seeds"
        assert np.mean(diffs) <= 0, f"mean(Kmeans - Random) = {np.mean(diffs):.4f}"

    gate("6 Kmeans.Number < Baseline in >=9/10 seeds and <= Random.Number on average", check, limit=300.0)


def test_criterion_7_statistics(gate):
    def check():
        stat, p, _ = friedman_test(np.array([[1.0, 2.0, 3.0]] * 4))
        assert abs(stat - 8.0) < 1e-12 and abs(p - 0.0183) <= 1e-3
        assert wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0], [0.0] * 5).p_value == 0.0625
        assert holm_adjust([0.01, 0.04, 0.03]).tolist() == [0.03, 0.06, 0.06]

    gate("7 Friedman, exact Wilcoxon and Holm oracles", check)


CLI_CONFIG = {
    "dataset": {"synthetic": dict(directional_spec(0), length=60, horizon=6)},
    "learner": {"kind": "ffnn", "hidden_nodes": 3, "epochs": 40},
    "variants": ["Baseline", "Kmeans.Number", "KmeansPlus.Seed", "Random.OC", "DTW.Number", "Ensemble.Seed",
                 "Ensemble.Specialists", "Baseline+SES"],
    "specialists": {"K": 3},
    "k_range": [2, 4],
    "seed_iterations": 3,
    "seeds": {"master": 11},
}


def test_criterion_8_cli_reproducible(gate, tmp_path):
    import json

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(CLI_CONFIG))

    def gfm_run(out, workers):
        cmd = [sys.executable, "-m", "gfm.cli", "run", "--config", str(cfg), "--out", str(tmp_path / out), "--workers", str(workers)]
        subprocess.run(cmd, check=True, capture_output=True)
        return (tmp_path / out / "final_forecasts.csv").read_bytes()

    def check():
        a = gfm_run("a", 1)
        assert a == gfm_run("b", 1), "repeat run differs"
        assert a == gfm_run("c", 8), "--workers 8 differs from --workers 1"

    gate("8 gfm run byte-identical final_forecasts.csv (repeat, workers 1 vs 8)", check)


def test_criterion_9_preprocess_round_trip(gate):
    def check():
        rng = np.random.default_rng(9)
        worst = 0.0
        for i in range(1000):
            kind = i % 5
            n = int(rng.integers(2, 80))
            if kind == 0:
                x = np.zeros(n)
            elif kind == 1:
                x = np.full(n, rng.uniform(-100, 100))
            elif kind == 2:
                x = rng.gamma(1.0, 10 ** rng.uniform(-3, 4), size=n) * (rng.random(n) > 0.3)
            elif kind == 3:
                x = rng.normal(size=n).cumsum() * 10 ** rng.uniform(-2, 3)
            else:
                x = rng.poisson(3.0, size=n).astype(float)
            period = int(rng.choice([1, 2, 4, 7, 12]))
            seasonality = str(rng.choice(["none", "deseasonalise", "fourier"]))
            log = bool(rng.integers(2)) and x.min() >= 0
            pipe = Pipeline(log=log, seasonality=seasonality, period=period)
            y, rec = pipe.forward(x)
            back = pipe.inverse(y, rec)
            scale = max(float(np.abs(x).max()), 1.0)
            worst = max(worst, float(np.abs(back - x).max()) / scale)
        assert worst <= 1e-9, worst

    gate("9 preprocessing inverse(forward(x)) on 1000 fuzzed series", check)
