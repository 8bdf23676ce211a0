"""Null law of quadratic-form statistics: ``sum_j lambda_j chi2_1``.

Tail probabilities come from two analytic routes:

* a gamma-mixture series (Ruben's expansion with ``beta = min lambda``):
  ``P(Q > q) = sum_k c_k P(chi2_{p + 2k} > q / beta)`` with nonnegative
  ``c_k`` summing to one, so the truncation error is bounded by the
  leftover mass ``1 - sum c_k``;
* the four-cumulant noncentral chi-square approximation of Liu, Tang and
  Zhang (2009), used when the weights are too spread out for the series to
  converge within ``MAX_SERIES_TERMS``.

:func:`pvalue_monte_carlo` is an independent brute-force check of both.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaincc
from scipy.stats import chi2, ncx2

from lptscan.errors import (
    AllZero,
    DimensionMismatch,
    InputError,
    NotPSD,
    NumericalFailure,
)

DROP_TOL = 1e-12
NEG_TOL = 1e-10
SERIES_TOL = 1e-12
MAX_SERIES_TERMS = 20_000
PVALUE_FLOOR = 1e-300
MC_CHUNK = 1_000_000


@dataclass(frozen=True)
class ChiSquareMixture:
    """Weights of ``sum_j lambda_j chi2_1``, sorted descending.

    Weights below ``1e-12 * max`` are dropped on construction.
    """

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64).ravel()
        if lam.size == 0 or not np.all(np.isfinite(lam)):
            raise InputError("mixture weights must be a non-empty finite vector")
        if np.any(lam < 0):
            raise NotPSD("mixture weights must be nonnegative")
        top = lam.max()
        if not top > 0:
            raise AllZero("all mixture weights are zero")
        lam = np.sort(lam[lam >= DROP_TOL * top])[::-1]
        object.__setattr__(self, "lambdas", lam)

    @property
    def p(self):
        return self.lambdas.shape[0]

    def cumulant_sums(self):
        lam = self.lambdas
        return tuple(float(np.sum(lam**k)) for k in (1, 2, 3, 4))

    @property
    def mean(self):
        return float(self.lambdas.sum())


def _clamp_eigenvalues(values, what):
    top = values.max()
    if top <= 0:
        raise AllZero(f"{what} has no positive eigenvalue")
    if values.min() < -NEG_TOL * top:
        raise NumericalFailure(f"{what} has a clearly negative eigenvalue")
    return np.clip(values, 0.0, None)


def mixture_from_gram(Gtilde):
    """Eigenvalues of ``G'G / n`` for a projected genotype block."""
    G = np.asarray(Gtilde, dtype=np.float64)
    if G.ndim == 1:
        G = G[:, None]
    n = G.shape[0]
    if not np.any(G):
        raise AllZero("genotype block is identically zero")
    try:
        values = np.linalg.eigvalsh(G.T @ G / n)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from exc
    return ChiSquareMixture(_clamp_eigenvalues(values, "genotype Gram matrix"))


def _psd_sqrt(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch("weight matrix must be square")
    scale = max(np.abs(A).max(), 1e-300)
    if np.abs(A - A.T).max() > NEG_TOL * scale:
        raise NotPSD("weight matrix is not symmetric")
    d, U = np.linalg.eigh((A + A.T) / 2.0)
    if d.min() < -NEG_TOL * max(np.abs(d).max(), 1e-300):
        raise NotPSD("weight matrix has a negative eigenvalue")
    return (U * np.sqrt(np.clip(d, 0.0, None))) @ U.T


def weighted_mixture(Gtilde, A):
    """Null weights of ``r' G A G' r``: eigenvalues of ``A^1/2 (G'G/n) A^1/2``."""
    G = np.asarray(Gtilde, dtype=np.float64)
    if G.ndim == 1:
        G = G[:, None]
    root = _psd_sqrt(A)
    if root.shape[0] != G.shape[1]:
        raise DimensionMismatch(
            f"weight matrix is {root.shape[0]}x{root.shape[0]}, block has {G.shape[1]} columns"
        )
    M = root @ (G.T @ G / G.shape[0]) @ root
    try:
        values = np.linalg.eigvalsh((M + M.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from exc
    return ChiSquareMixture(_clamp_eigenvalues(values, "weighted Gram matrix"))


# -- four-cumulant approximation ------------------------------------------


def _liu_params(mix):
    c1, c2, c3, c4 = mix.cumulant_sums()
    s1 = c3 / c2**1.5
    s2 = c4 / c2**2
    if s1 * s1 > s2:
        a = 1.0 / (s1 - math.sqrt(s1 * s1 - s2))
        delta = s1 * a**3 - a * a
        dof = a * a - 2.0 * delta
    else:
        # always taken for central mixtures (c3^2 <= c2 c4)
        a = 1.0 / s1
        delta = 0.0
        dof = a * a
    return c1, math.sqrt(2.0 * c2), dof, delta, math.sqrt(2.0) * a


def pvalue_liu(mix, q):
    """Four-cumulant noncentral chi-square approximation to ``P(Q > q)``."""
    mu_q, sd_q, dof, delta, sd_x = _liu_params(mix)
    q = np.asarray(q, dtype=np.float64)
    t = (q - mu_q) / sd_q * sd_x + dof + delta
    if delta > 0:
        p = ncx2.sf(t, dof, delta)
    else:
        p = chi2.sf(t, dof)
    p = np.clip(p, PVALUE_FLOOR, 1.0)
    return float(p) if p.ndim == 0 else p


# -- gamma-mixture series --------------------------------------------------


def _series_coefficients(lam, tol=SERIES_TOL, max_terms=MAX_SERIES_TERMS):
    """Ruben's coefficients for ``beta = min(lam)``; None if too slow to converge."""
    beta = lam.min()
    rho = 1.0 - beta / lam
    rho = rho[rho > 0.0]
    c0 = math.exp(0.5 * float(np.sum(np.log(beta / lam))))
    if rho.size == 0:
        return beta, np.array([1.0])
    rmax = rho.max()
    if rmax >= 1.0:
        return None
    # cheap pre-check: the leftover mass decays roughly like rmax^k
    est = math.log(tol) / math.log(rmax)
    if est > max_terms:
        return None

    coeffs = np.zeros(max_terms + 1)
    coeffs[0] = c0
    g = np.zeros(max_terms + 1)
    powers = np.ones_like(rho)
    total = c0
    k = 0
    while 1.0 - total > tol:
        k += 1
        if k > max_terms:
            return None
        powers = powers * rho
        g[k] = 0.5 * powers.sum()
        ck = np.dot(g[k:0:-1], coeffs[:k]) / k
        coeffs[k] = ck
        total += ck
    return beta, coeffs[: k + 1]


def series_terms(mix):
    """Number of series terms needed for ``mix`` (None when it falls back)."""
    out = _series_coefficients(mix.lambdas)
    return None if out is None else out[1].shape[0]


def _series_pvalue(mix, beta, coeffs, q):
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    half_dof = (mix.p + 2.0 * np.arange(coeffs.shape[0])) / 2.0
    out = np.empty(q.shape)
    for i, qi in enumerate(q.ravel()):
        if qi <= 0.0:
            out.flat[i] = 1.0
            continue
        out.flat[i] = np.dot(coeffs, gammaincc(half_dof, qi / (2.0 * beta)))
    return out


def pvalue_moment_match(mix, q):
    """``P(sum_j lambda_j chi2_1 > q)``, clamped to ``[1e-300, 1]``.

    Uses the gamma-mixture series when it converges within
    ``MAX_SERIES_TERMS`` terms (absolute error ~1e-12), otherwise the
    four-cumulant approximation.
    """
    if not isinstance(mix, ChiSquareMixture):
        mix = ChiSquareMixture(mix)
    scalar = np.ndim(q) == 0
    if not np.all(np.isfinite(q)):
        raise InputError("statistic must be finite")
    series = _series_coefficients(mix.lambdas)
    if series is None:
        return pvalue_liu(mix, q)
    p = _series_pvalue(mix, series[0], series[1], q)
    p = np.clip(p.reshape(np.shape(q)), PVALUE_FLOOR, 1.0)
    return float(p) if scalar else p


def critical_value(mix, alpha):
    """Smallest ``q`` with ``pvalue_moment_match(mix, q) <= alpha``."""
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)")
    if not isinstance(mix, ChiSquareMixture):
        mix = ChiSquareMixture(mix)
    lo = 0.0
    hi = mix.mean + 10.0 * math.sqrt(2.0 * float(np.sum(mix.lambdas**2)))
    while pvalue_moment_match(mix, hi) > alpha:
        lo, hi = hi, 2.0 * hi

    def f(x):
        return math.log(pvalue_moment_match(mix, x)) - math.log(alpha)

    return brentq(f, lo, hi, xtol=1e-12 * hi, rtol=1e-14, maxiter=200)


def pvalue_monte_carlo(mix, q, reps, seed):
    """Empirical ``(hits + 1) / (reps + 1)`` from ``reps`` simulated draws.

    ``q`` may be an array; all thresholds share the same draws.
    """
    if not isinstance(mix, ChiSquareMixture):
        mix = ChiSquareMixture(mix)
    if reps < 10_000:
        raise InputError("Monte Carlo p-values need reps >= 1e4")
    q = np.asarray(q, dtype=np.float64)
    flat = q.ravel()
    hits = np.zeros(flat.shape[0], dtype=np.int64)
    rng = np.random.default_rng(seed)
    lam = mix.lambdas
    done = 0
    while done < reps:
        m = min(MC_CHUNK, reps - done)
        z = rng.standard_normal((m, lam.shape[0]))
        draws = (z * z) @ lam
        draws.sort()
        hits += m - np.searchsorted(draws, flat, side="right")
        done += m
    p = (hits + 1.0) / (reps + 1.0)
    return float(p[0]) if q.ndim == 0 else p.reshape(q.shape)
