import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from catebench.metrics import (AggregateRow, RunRecord, aggregate, histogram, nearest_rank,
                               normalized_rmse, percentile_runs, rmse_cate, sigma_bins, sigma_of)

reals = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=30)


def rec(value, draw=0, est="a", setting="s", sigma=1.0, rep=0, status="ok"):
    return RunRecord(setting, draw, rep, est, status=status, rmse=value if status == "ok" else None,
                     sigma_tau=sigma)


def test_rmse_examples():
    assert rmse_cate([1.0, 3.0], [0.0, 0.0]) == pytest.approx(2.23607, abs=1e-5)
    assert rmse_cate([2.0, 5.0], [2.0, 5.0]) == 0.0
    assert rmse_cate(np.arange(4.0) - 1.5, np.arange(4.0)) == pytest.approx(1.5)


def test_rmse_errors():
    with pytest.raises(ValueError):
        rmse_cate([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        rmse_cate([], [])


@given(reals)
def test_rmse_sign_symmetric(err):
    err = np.array(err)
    assert rmse_cate(err, np.zeros_like(err)) == rmse_cate(-err, np.zeros_like(err)) >= 0


def test_sigma_examples():
    assert sigma_of([0.0, 2.0]) == 1.0
    assert sigma_of([0.1] * 7) == 0.0
    with pytest.raises(ValueError):
        sigma_of([])


@given(reals, st.floats(-50, 50, allow_nan=False), st.floats(-1e3, 1e3, allow_nan=False))
def test_sigma_shift_and_scale(v, a, c):
    v = np.array(v)
    assert sigma_of(v + c) == pytest.approx(sigma_of(v), abs=1e-6)
    assert sigma_of(a * v) == pytest.approx(abs(a) * sigma_of(v), rel=1e-9, abs=1e-6)


def test_normalized_rmse():
    assert normalized_rmse(2.0, 4.0) == 0.5
    assert normalized_rmse(2.0, 0.0) is None
    tau0, hat0 = np.array([0.0, 1.0, 3.0]), np.array([0.5, 1.0, 2.0])
    base = normalized_rmse(rmse_cate(hat0, tau0), sigma_of(tau0))
    for a in (0.5, 3.0, 1e3):
        assert normalized_rmse(rmse_cate(a * hat0, a * tau0), sigma_of(a * tau0)) == pytest.approx(base)


def test_nearest_rank():
    values = list(range(1, 101))
    assert nearest_rank(values, 50) == 50
    assert nearest_rank(values, 100) == 100
    assert nearest_rank(values, 0) == 1
    with pytest.raises(ValueError):
        nearest_rank(values, 101)


def test_percentile_runs():
    records = [rec(1.0, draw=d, sigma=float(d + 1)) for d in range(100)]
    assert percentile_runs(records, "sigma_tau", [50, 100]) == [49, 99]
    assert percentile_runs([rec(1.0, draw=7, sigma=3.0)], "sigma_tau", [10, 90]) == [7, 7]
    # equal keys: the lowest draw id wins
    tied = [rec(1.0, draw=d, sigma=2.0) for d in (5, 2, 9)]
    assert percentile_runs(tied, "sigma_tau", [50]) == [2]


def test_aggregate_examples():
    (row,) = aggregate([rec(4.0)])
    assert (row.mean_rmse, row.stderr_rmse, row.median_rmse, row.n_runs) == (4.0, 0.0, 4.0, 1)
    (row,) = aggregate([rec(1.0, draw=0), rec(3.0, draw=1)])
    assert row.mean_rmse == 2.0 and row.stderr_rmse == pytest.approx(1.0)
    (row,) = aggregate([rec(v, draw=d) for d, v in enumerate([1, 1, 1, 1, 100])])
    assert row.mean_rmse == pytest.approx(20.8) and row.median_rmse == 1.0
    assert row.mean_median_ratio == pytest.approx(20.8) and row.heavy_tail


def test_aggregate_two_level():
    # draw 0 has two repetitions (1 and 3 -> 2); draw 1 has one (6)
    records = [rec(1.0, draw=0, rep=0), rec(3.0, draw=0, rep=1), rec(6.0, draw=1)]
    (row,) = aggregate(records)
    assert row.mean_rmse == 4.0 and row.n_runs == 2


def test_aggregate_order_invariant_and_errors(rng):
    records = [rec(float(v), draw=d, est=e) for d, v in enumerate(rng.exponential(size=12)) for e in "ab"]
    records.append(rec(None, draw=0, est="a", status="error"))
    shuffled = [records[i] for i in rng.permutation(len(records))]
    assert aggregate(records) == aggregate(shuffled)
    a, b = aggregate(records)
    assert (a.estimator_name, a.n_runs, a.n_errors) == ("a", 12, 1)
    assert b.n_errors == 0


def test_aggregate_all_errors():
    (row,) = aggregate([rec(None, status="error")])
    assert row.n_runs == 0 and row.n_errors == 1 and math.isnan(row.mean_rmse)


def test_sigma_bins():
    group = sigma_bins([0.0, 1.0, 5.0, math.inf])
    assert group(rec(1.0, sigma=0.5)) == "s|sigma_tau[0,1)"
    assert group(rec(1.0, sigma=1.0)) == "s|sigma_tau[1,5)"
    assert group(rec(1.0, sigma=50.0)) == "s|sigma_tau[5,inf)"
    rows = aggregate([rec(1.0, draw=0, sigma=0.5), rec(3.0, draw=1, sigma=2.0)], group)
    assert [r.group for r in rows] == ["s|sigma_tau[0,1)", "s|sigma_tau[1,5)"]


def test_heavy_tail_flag_threshold():
    assert not AggregateRow("a", "g", 1.4, 0.0, 1.0, 3).heavy_tail
    assert AggregateRow("a", "g", 1.5, 0.0, 1.0, 3).heavy_tail


def test_histogram():
    edges, counts = histogram([1.0, 9.0], bins=2, range=(0, 10))
    assert counts.tolist() == [1, 1] and edges.tolist() == [0, 5, 10]
    _, counts = histogram([3.0], bins=4)
    assert counts.sum() == 1 and np.count_nonzero(counts) == 1
    with pytest.raises(ValueError):
        histogram([])


@given(reals, st.integers(1, 15))
def test_histogram_counts_sum(values, bins):
    assert histogram(values, bins=bins)[1].sum() == len(values)
