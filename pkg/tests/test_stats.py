import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from ecodyn.stats import mann_whitney_u, midranks, summarize

samples = st.lists(st.integers(0, 30).map(float), min_size=1, max_size=40)


def test_u_symmetry_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n1, n2 = rng.integers(1, 30, size=2)
        a = rng.integers(0, 10, n1).astype(float)
        b = rng.integers(0, 10, n2).astype(float)
        assert mann_whitney_u(a, b).u_statistic + mann_whitney_u(b, a).u_statistic == n1 * n2


def _enumerated_p(a, b):
    pooled = np.concatenate([a, b])
    r = midranks(pooled)
    obs = r[:len(a)].sum()
    sums = [r[list(c)].sum() for c in itertools.combinations(range(len(pooled)), len(a))]
    lo = np.mean([s <= obs + 1e-9 for s in sums])
    hi = np.mean([s >= obs - 1e-9 for s in sums])
    return min(1.0, 2 * min(lo, hi))


def test_exact_p_for_separated_triples():
    res = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert res.method == "exact"
    assert res.u_statistic == 0.0
    assert res.p_value == pytest.approx(0.1, abs=1e-12)
    assert res.p_value == pytest.approx(_enumerated_p(np.array([1., 2, 3]), np.array([4., 5, 6])))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 6).map(float), min_size=1, max_size=7),
       st.lists(st.integers(0, 6).map(float), min_size=1, max_size=7))
def test_exact_p_matches_enumeration_with_ties(a, b):
    res = mann_whitney_u(a, b)
    if res.method == "degenerate":
        return
    assert res.p_value == pytest.approx(_enumerated_p(np.array(a), np.array(b)), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 15).map(float), min_size=20, max_size=60),
       st.lists(st.integers(0, 15).map(float), min_size=20, max_size=60))
def test_normal_approximation_matches_scipy(a, b):
    res = mann_whitney_u(a, b)
    if res.method == "degenerate":
        return
    ref = sps.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert res.u_statistic == ref.statistic
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=2, max_size=30), st.lists(st.floats(0.1, 10), min_size=2, max_size=30))
def test_invariant_under_monotone_transform(a, b):
    r1 = mann_whitney_u(a, b)
    r2 = mann_whitney_u(np.array(a) ** 3, np.array(b) ** 3)
    assert r1.u_statistic == r2.u_statistic
    assert r1.p_value == pytest.approx(r2.p_value)


def test_shifted_samples_are_significant():
    rng = np.random.default_rng(1)
    res = mann_whitney_u(rng.normal(0, 1, 500), rng.normal(1, 1, 500))
    assert res.p_value < 1e-10
    assert res.metadata["p_less"] < res.metadata["p_greater"]


def test_degenerate_constant_samples():
    res = mann_whitney_u([2.0, 2.0], [2.0, 2.0, 2.0])
    assert res.p_value == 1.0 and res.tie_correction_applied


def test_empty_sample_rejected():
    with pytest.raises(ValueError):
        mann_whitney_u([], [1.0])


def test_midranks():
    assert midranks([3, 1, 3, 2]).tolist() == [3.5, 1.0, 3.5, 2.0]


def test_summarize_small_sample():
    s = summarize([1, 2, 3, 4, 5])
    assert s.mean == 3.0
    half = 1.96 * math.sqrt(2.5) / math.sqrt(5)
    assert s.ci95 == pytest.approx((3 - half, 3 + half))
    assert s.five_number == (1.0, 2.0, 3.0, 4.0, 5.0)
    edges, counts = s.histogram
    assert counts.sum() == 5 and edges[0] == 1 and edges[-1] == 5


def test_summarize_drops_censored():
    s = summarize([1, 2, 3, 20], censored=[False, False, False, True])
    assert s.censored_count == 1 and s.mean == 2.0
    with pytest.raises(ValueError):
        summarize([1, 2], censored=[True, True])
    with pytest.raises(ValueError):
        summarize([1.0])


def test_summarize_constant_sample():
    s = summarize([2.0, 2.0, 2.0])
    assert s.histogram[1].tolist() == [3]
