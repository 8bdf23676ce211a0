import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from lptscan.errors import DegenerateVariance, DimensionMismatch, NonFiniteInput, RankDeficient
from lptscan.nullmodel import (
    GenotypeBlock,
    add_intercept,
    allele_frequency,
    fit_null,
    project_block,
    residual_variance,
)


def design(rng, n, k=2):
    return add_intercept(rng.standard_normal((n, k)))


def dense_projector(Z):
    return np.eye(Z.shape[0]) - Z @ np.linalg.solve(Z.T @ Z, Z.T)


def test_noise_free_recovers_coefficients(rng):
    Z = add_intercept(np.column_stack([rng.normal(5, 1, 40), rng.random(40) < 0.5]))
    fit = fit_null(Z @ np.array([1.0, 0.8, 1.0]), Z)
    assert_allclose(fit.alpha_hat, [1.0, 0.8, 1.0], atol=1e-12)
    assert_allclose(fit.residuals, 0.0, atol=1e-12)


def test_intercept_only():
    fit = fit_null(np.array([1.0, 2.0, 3.0]), np.ones((3, 1)))
    assert_allclose(fit.alpha_hat, [2.0])
    assert_allclose(fit.residuals, [-1.0, 0.0, 1.0], atol=1e-15)


def test_normal_equations_oracle(rng):
    Z = design(rng, 50)
    y = rng.standard_normal(50)
    fit = fit_null(y, Z)
    alpha = np.linalg.solve(Z.T @ Z, Z.T @ y)
    assert_allclose(fit.alpha_hat, alpha, rtol=1e-10)
    assert np.abs(Z.T @ fit.residuals).max() < 1e-8 * np.linalg.norm(y)


@pytest.mark.parametrize("bad, exc", [
    ("rank", RankDeficient),
    ("shape", DimensionMismatch),
    ("nan", NonFiniteInput),
    ("wide", DimensionMismatch),
])
def test_fit_errors(rng, bad, exc):
    Z = design(rng, 20)
    y = rng.standard_normal(20)
    if bad == "rank":
        Z = np.column_stack([Z, Z[:, 1] * 2.0])
    elif bad == "shape":
        y = y[:-1]
    elif bad == "nan":
        y[3] = np.nan
    else:
        Z, y = design(rng, 3, 4), y[:3]
    with pytest.raises(exc):
        fit_null(y, Z)


def test_project_block_centering():
    fit = fit_null(np.array([0.0, 1.0, 5.0]), np.ones((3, 1)))
    assert_allclose(project_block(fit, np.array([[0.0], [1.0], [2.0]])).ravel(), [-1, 0, 1],
                    atol=1e-15)


def test_project_fixed_point(rng):
    Z = design(rng, 30)
    fit = fit_null(rng.standard_normal(30), Z)
    G = dense_projector(Z) @ rng.standard_normal((30, 3))
    assert_allclose(project_block(fit, G), G, atol=1e-12)


def test_project_dense_oracle(rng):
    Z = design(rng, 100)
    fit = fit_null(rng.standard_normal(100), Z)
    G = rng.integers(0, 3, (100, 5)).astype(float)
    Gt = project_block(fit, G)
    assert_allclose(Gt, dense_projector(Z) @ G, atol=1e-10)
    assert np.abs(Gt.T @ Z).max() < 1e-8 * np.abs(G).max() * 100


def test_project_block_accepts_genotype_block(rng):
    Z = design(rng, 10)
    fit = fit_null(rng.standard_normal(10), Z)
    codes = rng.integers(0, 3, (10, 2)).astype(float)
    block = GenotypeBlock(codes, ["a", "b"], allele_frequency(codes))
    assert_allclose(project_block(fit, block), project_block(fit, codes))
    with pytest.raises(DimensionMismatch):
        project_block(fit, codes[:5])


def test_residual_variance_intercept_only(rng):
    y = rng.standard_normal(25)
    fit = fit_null(y, np.ones((25, 1)))
    r = fit.residuals
    assert_allclose(residual_variance(fit, r), np.var(r) * 25 / 24, rtol=1e-12)


def test_residual_variance_dense_oracle(rng):
    Z = design(rng, 200)
    fit = fit_null(rng.standard_normal(200), Z)
    ypsi = rng.standard_t(3, 200)
    expected = ypsi @ dense_projector(Z) @ ypsi / (200 - 3)
    assert_allclose(residual_variance(fit, ypsi), expected, rtol=1e-10)


def test_residual_variance_columnwise(rng):
    Z = design(rng, 60)
    fit = fit_null(rng.standard_normal(60), Z)
    Y = rng.standard_normal((60, 4))
    cols = [residual_variance(fit, Y[:, j]) for j in range(4)]
    assert_allclose(residual_variance(fit, Y), cols, rtol=1e-13)


def test_residual_variance_degenerate(rng):
    Z = design(rng, 30)
    fit = fit_null(rng.standard_normal(30), Z)
    with pytest.raises(DegenerateVariance):
        residual_variance(fit, Z @ np.array([1.0, -2.0, 0.5]))


def test_allele_frequency_folds_and_skips_missing():
    codes = np.array([[0, 2], [1, 2], [2, np.nan], [2, 1]], dtype=float)
    assert_allclose(allele_frequency(codes), [3 / 8, 1 / 6])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(8, 80), k=st.integers(0, 3),
       shift=st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_properties(seed, n, k, shift):
    rng = np.random.default_rng(seed)
    Z = design(rng, n, k)
    y = rng.standard_normal(n) * 3
    fit = fit_null(y, Z)
    G = rng.standard_normal((n, 3))
    once = project_block(fit, G)
    twice = project_block(fit, once)
    assert np.abs(twice - once).max() <= 1e-10 * max(np.abs(once).max(), 1.0)
    assert np.abs(once.T @ Z).max() <= 1e-8 * max(np.abs(G).max(), 1.0) * n
    # shifting y inside span(Z) leaves residuals untouched
    c = np.asarray(shift[: Z.shape[1]])
    shifted = fit_null(y + Z @ c, Z)
    assert np.abs(shifted.residuals - fit.residuals).max() <= 1e-10 * max(np.abs(Z @ c).max(), 1.0)
    # least-squares optimality against small perturbations
    base = np.sum((y - Z @ fit.alpha_hat) ** 2)
    delta = rng.standard_normal(Z.shape[1])
    delta *= 1e-3 / np.linalg.norm(delta)
    assert np.sum((y - Z @ (fit.alpha_hat + delta)) ** 2) >= base - 1e-12 * base
