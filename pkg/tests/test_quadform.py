import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.linalg import sqrtm
from scipy.stats import chi2

from lptscan.errors import AllZero, DimensionMismatch, NotPSD
from lptscan.quadform import (
    ChiSquareMixture,
    critical_value,
    mixture_from_gram,
    pvalue_liu,
    pvalue_monte_carlo,
    pvalue_moment_match,
    series_terms,
    weighted_mixture,
)

weights = st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8)


def test_orthonormal_columns_give_unit_weights(rng):
    n = 200
    Q, _ = np.linalg.qr(rng.standard_normal((n, 4)))
    mix = mixture_from_gram(Q * math.sqrt(n))
    assert_allclose(mix.lambdas, 1.0, rtol=1e-12)


def test_single_column():
    g = np.full((25, 1), 2.0)
    assert_allclose(mixture_from_gram(g).lambdas, [4.0])


def test_trace_identity(rng):
    G = rng.standard_normal((500, 8)) @ rng.standard_normal((8, 8))
    assert mixture_from_gram(G).lambdas.sum() == pytest.approx(np.sum(G * G) / 500, rel=1e-8)


def test_weights_sorted_and_tiny_dropped():
    mix = ChiSquareMixture(np.array([0.5, 2.0, 1e-14, 1.0]))
    assert_allclose(mix.lambdas, [2.0, 1.0, 0.5])


@pytest.mark.parametrize("lam, exc", [
    ([1.0, -0.5], NotPSD),
    ([0.0, 0.0], AllZero),
])
def test_mixture_errors(lam, exc):
    with pytest.raises(exc):
        ChiSquareMixture(np.array(lam))


def test_all_zero_block():
    with pytest.raises(AllZero):
        mixture_from_gram(np.zeros((10, 2)))


def test_weighted_identity_and_scaling(rng):
    G = rng.standard_normal((80, 5))
    base = mixture_from_gram(G).lambdas
    assert_allclose(weighted_mixture(G, np.eye(5)).lambdas, base, rtol=1e-10)
    assert_allclose(weighted_mixture(G, 3.0 * np.eye(5)).lambdas, 3.0 * base, rtol=1e-10)


def test_weighted_dense_oracle(rng):
    G = rng.standard_normal((60, 5))
    B = rng.standard_normal((5, 5))
    A = B @ B.T
    root = np.real(sqrtm(A))
    expected = np.sort(np.linalg.eigvals(root @ (G.T @ G / 60) @ root).real)[::-1]
    assert_allclose(weighted_mixture(G, A).lambdas, expected, rtol=1e-8)


def test_weighted_errors(rng):
    G = rng.standard_normal((30, 3))
    with pytest.raises(NotPSD):
        weighted_mixture(G, np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(NotPSD):
        weighted_mixture(G, np.triu(np.ones((3, 3))))
    with pytest.raises(DimensionMismatch):
        weighted_mixture(G, np.eye(2))


@pytest.mark.parametrize("lam, q, expected", [
    ([1.0], 3.841459, 0.05),
    ([1.0, 1.0], 5.991465, math.exp(-5.991465 / 2)),
    ([1.0, 1.0], 5.991465, 0.05),
])
def test_closed_forms(lam, q, expected):
    assert pvalue_moment_match(ChiSquareMixture(np.array(lam)), q) == pytest.approx(expected, abs=1e-4)


def test_against_monte_carlo_oracle():
    mix = ChiSquareMixture(np.array([3.0, 1.0, 0.5, 0.2]))
    q90 = np.quantile((np.random.default_rng(5).standard_normal((200_000, 4)) ** 2) @ mix.lambdas, 0.9)
    mc = pvalue_monte_carlo(mix, q90, 10_000_000, seed=11)
    se = math.sqrt(mc * (1 - mc) / 1e7)
    assert abs(pvalue_moment_match(mix, q90) - mc) <= 3 * se


def test_series_bounded_tail():
    # the series with beta = min(lambda) reproduces a scaled chi2 exactly
    mix = ChiSquareMixture(np.array([2.0, 2.0, 2.0]))
    assert series_terms(mix) == 1
    assert pvalue_moment_match(mix, 9.0) == pytest.approx(chi2.sf(4.5, 3), rel=1e-12)


def test_liu_fallback_for_spread_weights():
    mix = ChiSquareMixture(np.array([1.0, 1e-7]))
    assert series_terms(mix) is None
    assert pvalue_moment_match(mix, 3.0) == pvalue_liu(mix, 3.0)
    assert pvalue_moment_match(mix, 3.0) == pytest.approx(chi2.sf(3.0, 1), abs=1e-3)


def test_pvalue_clamped():
    mix = ChiSquareMixture(np.array([1.0]))
    assert pvalue_moment_match(mix, 1e5) == 1e-300
    assert pvalue_moment_match(mix, -1.0) == 1.0


def test_array_input():
    mix = ChiSquareMixture(np.array([2.0, 1.0]))
    q = np.array([[0.5, 2.0], [5.0, 9.0]])
    out = pvalue_moment_match(mix, q)
    assert out.shape == (2, 2)
    assert_allclose(out.ravel(), [pvalue_moment_match(mix, v) for v in q.ravel()])


def test_critical_value_inverts_pvalue():
    mix = ChiSquareMixture(np.array([4.0, 1.0, 0.3]))
    for alpha in (0.5, 0.05, 1e-4):
        q = critical_value(mix, alpha)
        assert pvalue_moment_match(mix, q) == pytest.approx(alpha, rel=1e-9)


def test_monte_carlo_basics():
    mix = ChiSquareMixture(np.array([1.0]))
    assert pvalue_monte_carlo(mix, 0.0, 10_000, seed=1) == 1.0
    p = pvalue_monte_carlo(ChiSquareMixture(np.array([2.0])), 2 * 3.841459, 1_000_000, seed=2)
    assert abs(p - 0.05) <= 0.001
    assert pvalue_monte_carlo(mix, 1.3, 20_000, 9) == pvalue_monte_carlo(mix, 1.3, 20_000, 9)
    with pytest.raises(ValueError):
        pvalue_monte_carlo(mix, 1.0, 100, 0)


@settings(max_examples=40, deadline=None)
@given(lam=weights, qs=st.lists(st.floats(0.0, 60.0), min_size=2, max_size=6))
def test_monotone_in_q(lam, qs):
    mix = ChiSquareMixture(np.array(lam))
    qs = np.sort(qs)
    p = pvalue_moment_match(mix, qs)
    assert np.all(np.diff(p) <= 1e-15)


@settings(max_examples=40, deadline=None)
@given(lam=weights, q=st.floats(0.01, 40.0), c=st.floats(0.01, 100.0))
def test_scale_invariance(lam, q, c):
    lam = np.array(lam)
    a = pvalue_moment_match(ChiSquareMixture(lam), q)
    b = pvalue_moment_match(ChiSquareMixture(c * lam), c * q)
    assert abs(a - b) <= 1e-12


def test_monte_carlo_scale_invariance_exact():
    lam = np.array([1.5, 0.5, 0.25])
    a = pvalue_monte_carlo(ChiSquareMixture(lam), 3.0, 50_000, 4)
    b = pvalue_monte_carlo(ChiSquareMixture(4.0 * lam), 12.0, 50_000, 4)
    assert a == b
