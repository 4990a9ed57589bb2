import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from leoaudit.errors import DomainError, EmptyInputError
from leoaudit.stats import empirical_cdf, median, percentile, summarize

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
vectors = st.lists(finite, min_size=1, max_size=60)


def sort_median(values):
    xs = sorted(values)
    n = len(xs)
    return xs[n // 2] if n % 2 else (xs[n // 2 - 1] + xs[n // 2]) / 2


def test_median_examples():
    assert median([1.0]) == 1.0
    assert median([1.0, 3.0]) == 2.0
    assert median([3.0, 1.0, 2.0]) == 2.0


def test_median_matches_sort_oracle_on_uniform_draws():
    rng = random.Random(7)
    for n in (999, 1000):
        values = [rng.random() for _ in range(n)]
        assert math.isclose(median(values), sort_median(values), rel_tol=1e-15)


@pytest.mark.parametrize("values,p,expected", [
    ([5.0], 10, 5.0),
    ([0.0, 10.0], 50, 5.0),
    # h = 9 * 0.9 = 8.1 -> x[8] + 0.1 * (x[9] - x[8]) = 9 + 0.1
    ([1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 90, 9.1),
])
def test_percentile_examples(values, p, expected):
    assert percentile(values, p) == pytest.approx(expected, rel=1e-12)


def test_errors():
    with pytest.raises(EmptyInputError):
        median([])
    with pytest.raises(EmptyInputError):
        summarize([])
    with pytest.raises(DomainError):
        percentile([1.0], 100.5)
    with pytest.raises(DomainError):
        percentile([1.0], -1)


def test_summarize_constant_list():
    assert summarize([2, 2, 2]).as_tuple() == (2, 2, 2)


def test_summarize_matches_numpy_linear():
    rng = np.random.default_rng(3)
    x = rng.lognormal(0, 1, 501).tolist()
    t = summarize(x)
    np.testing.assert_allclose(t.as_tuple(), np.percentile(x, [50, 10, 90]), rtol=1e-12)


@given(vectors)
def test_extremes(v):
    assert percentile(v, 0) == min(v)
    assert percentile(v, 100) == max(v)


@given(vectors, st.floats(0, 100), st.floats(0, 100))
def test_percentile_monotone_in_p(v, p, q):
    lo, hi = sorted((p, q))
    assert percentile(v, lo) <= percentile(v, hi)


@given(vectors)
def test_triplet_ordering_and_median_identity(v):
    t = summarize(v)
    assert t.p10 <= t.median <= t.p90
    assert median(v) == percentile(v, 50)


def test_empirical_cdf():
    assert empirical_cdf([3.0, 1.0, 2.0, 2.0]) == [(1.0, 0.25), (2.0, 0.5), (2.0, 0.75), (3.0, 1.0)]
    assert empirical_cdf([]) == []
