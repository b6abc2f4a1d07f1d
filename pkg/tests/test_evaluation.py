import math

import numpy as np
import pytest

from gfm.evaluation import (
    MetricError,
    aggregate,
    chi2_sf,
    evaluate_forecasts,
    friedman_test,
    holm_adjust,
    mase,
    smape,
    statistical_tests,
    wilcoxon_signed_rank,
)
from oracles import wilcoxon_exact_enumeration


def test_smape_examples():
    assert smape([3.0, 4.0], [3.0, 4.0]) == 0
    assert smape([110.0], [90.0]) == pytest.approx(20.0, abs=1e-9)
    assert smape([0.2], [0.0], zero_safe=True) == pytest.approx(100 / 3, abs=1e-9)


def test_smape_zero_zero_term():
    assert smape([0.0, 1.0], [0.0, 1.0]) == 0.0
    assert smape([0.0, 2.0], [0.0, 1.0]) == pytest.approx(100 / 3)


def test_smape_bounds_and_scale(rng):
    for _ in range(200):
        h = int(rng.integers(1, 20))
        F, Y = rng.normal(size=h) * 10, rng.normal(size=h) * 10
        s = smape(F, Y)
        assert 0 <= s <= 200
        assert smape(7.5 * F, 7.5 * Y) == pytest.approx(s, rel=1e-9, abs=1e-9)


def test_smape_zero_safe_scale_outside_clause(rng):
    for _ in range(100):
        F, Y = rng.uniform(1, 10, size=5), rng.uniform(1, 10, size=5)
        base = smape(F, Y, zero_safe=True, epsilon=0.0)
        assert smape(3 * F, 3 * Y, zero_safe=True, epsilon=0.0) == pytest.approx(base, rel=1e-9)
        assert smape(F, Y, zero_safe=True) >= 0


def test_smape_length_mismatch():
    with pytest.raises(MetricError):
        smape([1.0], [1.0, 2.0])


def test_mase_examples():
    assert mase([5.0], [6.0], [1, 2, 3, 4], 1) == pytest.approx(1.0, abs=1e-9)
    assert mase([3.0, 2.0], [3.0, 2.0], [1, 5, 2, 4], 1) == 0
    F, Y, tr = np.array([2.0, 7.0]), np.array([3.0, 5.0]), np.array([1.0, 4.0, 2.0, 8.0, 3.0])
    assert mase(10 * F, 10 * Y, 10 * tr, 2) == pytest.approx(mase(F, Y, tr, 2), rel=1e-9)


def test_mase_undefined():
    with pytest.raises(MetricError):
        mase([1.0], [1.0], [2.0, 2.0, 2.0], 1)
    with pytest.raises(MetricError):
        mase([1.0], [1.0], [2.0, 3.0], 2)


def test_aggregate_examples():
    assert aggregate([1, 2, 3]) == (2.0, 2.0)
    assert aggregate([1, 2, 3, 4])[1] == 2.5
    assert aggregate({"a": 4.0}) == (4.0, 4.0)


def test_evaluate_excludes_undefined_mase():
    fc = {"a": np.array([2.0]), "b": np.array([5.0])}
    actual = {"a": np.array([2.0]), "b": np.array([6.0])}
    train = {"a": np.array([1.0, 1.0, 1.0]), "b": np.array([1.0, 2.0, 3.0, 4.0])}
    with pytest.warns(RuntimeWarning):
        res = evaluate_forecasts(fc, actual, train, 1)
    assert res.mase_excluded == ["a"]
    assert res.mean_mase == pytest.approx(1.0)
    assert res.aggregates()["mase_excluded"] == 1
    assert res.mean_smape == pytest.approx(np.mean([v["smape"] for v in res.per_series.values()]))


def test_chi2_tail():
    assert chi2_sf(8.0, 2) == pytest.approx(math.exp(-4.0), rel=1e-12)
    assert chi2_sf(0.0, 3) == 1.0


def test_friedman_example():
    E = np.array([[1.0, 2.0, 3.0]] * 4)
    stat, p, ranks = friedman_test(E)
    assert stat == pytest.approx(8.0)
    assert p == pytest.approx(0.0183, abs=1e-3)
    np.testing.assert_array_equal(ranks, [1, 2, 3])


def test_friedman_ties_and_symmetry(rng):
    stat, p, ranks = friedman_test(np.ones((4, 3)))
    assert stat == 0 and p == 1 and np.all(ranks == 2)
    E = rng.random((8, 4))
    s1, _, r1 = friedman_test(E)
    perm = [2, 0, 3, 1]
    s2, _, r2 = friedman_test(E[:, perm])
    assert s2 == pytest.approx(s1)
    np.testing.assert_allclose(r2, r1[perm])
    assert r1.mean() == pytest.approx(2.5)


def test_friedman_needs_two_models():
    with pytest.raises(MetricError):
        friedman_test(np.ones((4, 1)))


def test_wilcoxon_examples():
    res = wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])
    assert res.p_value == 1.0 and res.degenerate
    a = np.array([2.0, 3.0, 5.0, 8.0, 13.0])
    assert wilcoxon_signed_rank(a, np.zeros(5)).p_value == 0.0625
    b = np.array([1.0, 4.0, 2.0, 9.0, 1.0])
    assert wilcoxon_signed_rank(a, b).p_value == wilcoxon_signed_rank(b, a).p_value


def test_wilcoxon_exact_matches_enumeration(rng):
    for _ in range(40):
        n = int(rng.integers(1, 11))
        d = np.round(rng.normal(size=n), 1)
        if not np.any(d != 0):
            continue
        assert wilcoxon_signed_rank(d, np.zeros(n)).p_value == pytest.approx(wilcoxon_exact_enumeration(d), abs=1e-12)


def test_wilcoxon_normal_branch():
    d = np.arange(1.0, 31.0)
    res = wilcoxon_signed_rank(d, np.zeros(30))
    assert not res.exact
    z = (465 - 232.5 - 0.5) / math.sqrt(30 * 31 * 61 / 24)
    assert res.p_value == pytest.approx(math.erfc(z / math.sqrt(2)), rel=1e-12)


def test_holm_examples():
    np.testing.assert_allclose(holm_adjust([0.01, 0.04, 0.03]), [0.03, 0.06, 0.06], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(holm_adjust([0.2]), [0.2])
    np.testing.assert_array_equal(holm_adjust([0, 0, 0]), [0, 0, 0])


def test_holm_properties(rng):
    p = rng.random(12) ** 3
    adj = holm_adjust(p)
    assert np.all(adj >= p)
    order = np.argsort(p)
    assert np.all(np.diff(adj[order]) >= 0)


def test_statistical_tests_report(rng):
    E = rng.random((10, 3)) + [0.0, 0.3, 0.6]
    rep = statistical_tests(E, ["a", "b", "c"])
    d = rep.to_dict()
    assert len(d["pairwise"]) == 3
    assert sum(d["average_ranks"].values()) == pytest.approx(6.0)
    assert all(pr["p_holm"] >= pr["p_raw"] for pr in d["pairwise"])
