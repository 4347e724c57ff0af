import numpy as np
from hypothesis import given, settings, strategies as st

from catebench.dgp.grid import grid_exponent, snap

finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=20), st.lists(finite, min_size=1, max_size=20))
@settings(max_examples=200)
def test_sum_then_difference_is_exact(a, b):
    n = min(len(a), len(b))
    a, b = np.array(a[:n]), np.array(b[:n])
    k = grid_exponent(np.abs(a) + np.abs(b))
    a, b = snap(a, k), snap(b, k)
    assert np.array_equal((a + b) - a, b)


def test_snap_error_bound():
    v = np.random.default_rng(0).normal(size=100) * 50
    k = grid_exponent(v)
    assert np.max(np.abs(snap(v, k) - v)) <= 2.0 ** -(k + 1)


def test_zero_input():
    assert np.array_equal(snap(np.zeros(3), grid_exponent(np.zeros(3))), np.zeros(3))
