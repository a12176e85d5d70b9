import itertools
from fractions import Fraction
from math import comb

import pytest
from hypothesis import given, strategies as st

from qudos import metrics
from qudos.topology import DnnTopology


def brute_pmf(n, c, m, x):
    """Count m-subsets of n nodes (first c corrupted) with exactly x corrupted members."""
    hits = sum(1 for chosen in itertools.combinations(range(n), m) if sum(v < c for v in chosen) == x)
    return Fraction(hits, comb(n, m))


def test_sequential_layer_factor_is_one():
    topo = DnnTopology.with_branches(3, {1: 2})
    assert metrics.corruption_factor_layer(topo, 0) == 1.0
    assert metrics.corruption_factor_layer(topo, 1, 0) == 0.5
    assert metrics.corruption_factor_layer(topo, 1, 1) == 0.5


def test_layer_factor_argument_errors():
    topo = DnnTopology.with_branches(3, {1: 4})
    with pytest.raises(ValueError):
        metrics.corruption_factor_layer(topo, 0, 0)
    with pytest.raises(ValueError):
        metrics.corruption_factor_layer(topo, 1)
    with pytest.raises(IndexError):
        metrics.corruption_factor_layer(topo, 1, 4)


def test_set_factor_examples():
    assert metrics.corruption_factor_set([]) == 0.0
    assert metrics.corruption_factor_set([1.0]) == 1.0
    assert metrics.corruption_factor_set([0.5, 0.5]) == 0.75
    with pytest.raises(ValueError):
        metrics.corruption_factor_set([1.5])


def test_set_factor_matches_route_enumeration():
    # Two independent branches with two sub-layers each; sub-layer 0 of each is corrupted.
    routes = list(itertools.product(range(2), range(2)))
    touched = sum(1 for a, b in routes if a == 0 or b == 0)
    assert metrics.corruption_factor_set([0.5, 0.5]) == touched / len(routes)


factor = st.floats(min_value=0.0, max_value=1.0)


@given(st.lists(factor, max_size=8), st.randoms())
def test_set_factor_order_independent(fs, rnd):
    shuffled = list(fs)
    rnd.shuffle(shuffled)
    assert metrics.corruption_factor_set(fs) == pytest.approx(metrics.corruption_factor_set(shuffled), abs=1e-12)


@given(st.lists(factor, max_size=8), factor)
def test_set_factor_monotone(fs, extra):
    assert metrics.corruption_factor_set(fs + [extra]) >= metrics.corruption_factor_set(fs) - 1e-12


@pytest.mark.parametrize("f", [0.0, 0.75, 1.0])
def test_attack_success_identity(f):
    assert metrics.attack_success_probability(f) == f


@pytest.mark.parametrize("query,expected", [
    ((5, 2, 2, 1), 0.6),
    ((10, 0, 3, 0), 1.0),
    ((100, 1, 1, 1), 0.01),
])
def test_selection_pmf_examples(query, expected):
    assert metrics.selection_pmf(*query) == pytest.approx(expected, rel=1e-12)


def test_selection_pmf_rejects_bad_query():
    for q in [(5, 6, 2, 0), (5, 2, 6, 0), (5, 2, 2, 3)]:
        with pytest.raises(ValueError):
            metrics.selection_pmf(*q)


def test_selection_pmf_matches_subset_enumeration():
    for n in range(0, 13):
        for c in range(n + 1):
            for m in range(n + 1):
                for x in range(min(c, m) + 1):
                    assert metrics.selection_pmf_exact(n, c, m, x) == brute_pmf(n, c, m, x)


def test_selection_pmf_normalizes_exhaustive():
    for n in range(1, 61):
        for c in range(0, n + 1, 3):
            for m in range(0, n + 1, 4):
                total = sum(metrics.selection_pmf(n, c, m, x) for x in range(min(c, m) + 1))
                assert abs(total - 1) <= 1e-9


@pytest.mark.parametrize("n,c,m", [(100_000, 50, 1000), (100_000, 1, 50), (20_000, 300, 700), (10_001, 10, 10)])
def test_selection_pmf_large_pools(n, c, m):
    total = sum(metrics.selection_pmf(n, c, m, x) for x in range(min(c, m) + 1))
    assert abs(total - 1) <= 1e-9
    # Float route agrees with exact rationals.
    for x in range(min(c, m, 4) + 1):
        exact = metrics.selection_pmf_exact(n, c, m, x)
        if exact:
            assert abs(metrics.selection_pmf(n, c, m, x) / float(exact) - 1) <= 1e-9


@pytest.mark.parametrize("n,c,m,expected", [
    (100, 5, 2, 0.09797979797979794),
    (100, 50, 1, 0.5),
    (100_000, 1, 50, 0.0004999999999999449),
])
def test_at_least_one_examples(n, c, m, expected):
    assert metrics.selection_at_least_one(n, c, m) == pytest.approx(expected, rel=1e-9)


def test_at_least_one_saturates():
    assert metrics.selection_at_least_one(10, 5, 6) == 1.0


def test_at_least_one_is_complement_of_zero_hits():
    for n in range(1, 40):
        for c in range(n + 1):
            for m in range(n + 1):
                assert abs(metrics.selection_at_least_one(n, c, m) - (1 - metrics.selection_pmf(n, c, m, 0))) <= 1e-12


def test_at_least_one_monotone():
    for n in (10, 37, 100):
        for c in range(n + 1):
            row = [metrics.selection_at_least_one(n, c, m) for m in range(n + 1)]
            assert all(b >= a - 1e-15 for a, b in zip(row, row[1:]))
        for m in range(n + 1):
            col = [metrics.selection_at_least_one(n, c, m) for c in range(n + 1)]
            assert all(b >= a - 1e-15 for a, b in zip(col, col[1:]))


def test_selection_pmf_large_pool_with_many_draws():
    # C(m, x) alone exceeds the float range here.
    p = metrics.selection_pmf(100_000, 50_000, 33_333, 16_000)
    assert p == pytest.approx(float(metrics.selection_pmf_exact(100_000, 50_000, 33_333, 16_000)), rel=1e-9)
    assert sum(metrics.selection_pmf(100_000, 50_000, 1000, x) for x in range(1001)) == pytest.approx(1.0, abs=1e-9)
