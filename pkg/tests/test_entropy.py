import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from empg.entropy import EmptyEntropyBatch, EmptyStep, minmax_normalize, step_entropy


def test_step_entropy_examples():
    assert step_entropy([0.2, 0.4]) == pytest.approx(0.3)
    assert step_entropy([0.7]) == 0.7
    assert step_entropy([math.log(2), math.log(4), 0.0]) == pytest.approx(0.6931471805599453, abs=1e-15)
    with pytest.raises(EmptyStep):
        step_entropy([])


def test_minmax_examples():
    np.testing.assert_array_equal(minmax_normalize([0.5, 0.5, 0.5]), [0, 0, 0])
    np.testing.assert_allclose(minmax_normalize([0, 1, 2], 1e-8), [0, 0.4999999975, 0.999999995], rtol=0, atol=1e-16)
    np.testing.assert_array_equal(minmax_normalize([3.7]), [0.0])
    with pytest.raises(EmptyEntropyBatch):
        minmax_normalize([])
    with pytest.raises(ValueError):
        minmax_normalize([1.0, 2.0], 0.0)


pools = st.lists(st.floats(0, 5, allow_nan=False), min_size=1, max_size=40)


@given(pools)
def test_range_and_order(h):
    out = minmax_normalize(h)
    assert np.all(out >= 0) and np.all(out < 1)
    order = np.argsort(h, kind="stable")
    assert np.all(np.diff(out[order]) >= 0)


@given(pools, st.floats(-3, 3))
def test_shift_invariance(h, b):
    h = np.asarray(h)
    assume(np.ptp(h) > 1e-3 or np.ptp(h) == 0)
    np.testing.assert_allclose(minmax_normalize(h + b), minmax_normalize(h), rtol=0, atol=1e-9)


@given(pools, st.floats(0.5, 4))
def test_scale_changes_only_the_epsilon_share(h, a):
    # rescaling changes the output by exactly the shift in epsilon's share of the spread
    h = np.asarray(h)
    spread = np.ptp(h)
    assume(spread > 1e-3)
    z = (h - h.min()) / spread
    bound = np.max(z) * 1e-8 * abs(1 / spread - 1 / (a * spread)) + 1e-12
    assert np.max(np.abs(minmax_normalize(a * h) - minmax_normalize(h))) <= bound


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=30), st.floats(1, 4))
def test_scale_invariance_on_wide_spreads(h, a):
    h = 20.0 * np.asarray(h)
    assume(np.ptp(h) >= 10)
    np.testing.assert_allclose(minmax_normalize(a * h), minmax_normalize(h), rtol=0, atol=1e-9)
