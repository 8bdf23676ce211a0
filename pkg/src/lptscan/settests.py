"""Burden, SKAT and weighted quadratic-form tests on transformed residuals.

All statistics are built from the score vector ``U = G~' Ypsi`` where
``G~ = P_Z G`` is the covariate-adjusted genotype block and ``Ypsi`` the
transformed null residuals. The covariates are adjusted a second time by
projecting the genotypes, not the transformed response, which keeps the
asymptotic null laws valid for any transformation.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import ndtr

from lptscan.errors import AllZero, DegenerateGene, DimensionMismatch, InputError
from lptscan.nullmodel import project_block
from lptscan.quadform import (
    mixture_from_gram,
    pvalue_moment_match,
    weighted_mixture,
)

TEST_NAMES = ("Burden", "SKAT", "QuadForm")
ZERO_VARIANCE_TOL = 1e-10
DEGENERATE_TOL = 1e-12

FLAG_DROPPED = "DroppedZeroVarianceColumns"
FLAG_DEGENERATE = "DegenerateGene"


@dataclass(frozen=True)
class TestResult:
    statistic: float
    pvalue: float
    test: str
    transform: str | None = None
    p_used: int = 0
    flags: frozenset = frozenset()
    details: dict = field(default_factory=dict, compare=False, repr=False)

    __test__ = False  # not a pytest class


def canonical_test_name(name):
    for known in TEST_NAMES:
        if name.lower() == known.lower():
            return known
    raise InputError(f"unknown test {name!r}; choose from {TEST_NAMES}")


def _as_block(Gtilde):
    G = np.asarray(Gtilde, dtype=np.float64)
    if G.ndim == 1:
        G = G[:, None]
    return G


def _check(G, ypsi, sigma2):
    ypsi = np.asarray(ypsi, dtype=np.float64)
    if ypsi.shape[0] != G.shape[0]:
        raise DimensionMismatch(
            f"response has {ypsi.shape[0]} rows, genotype block {G.shape[0]}"
        )
    if not np.all(np.asarray(sigma2) > 0):
        raise InputError("sigma2_psi must be positive")
    return ypsi


def two_sided_normal_pvalue(z):
    return 2.0 * ndtr(-np.abs(z))


def burden_scores(U, sigma2, n, w, wsw):
    """Studentised burden z-scores from score vectors ``U`` (p or p x R)."""
    raw = (w @ U) / (math.sqrt(n) * np.sqrt(sigma2))
    return raw, raw / math.sqrt(wsw)


def quadratic_scores(U, sigma2, n, A=None):
    """``U' A U / (n sigma2)`` columnwise; ``A=None`` means the identity."""
    AU = U if A is None else A @ U
    return np.einsum("i...,i...->...", U, AU) / (n * sigma2)


def burden_test(Gtilde, ypsi, sigma2_psi, w=None):
    G = _as_block(Gtilde)
    ypsi = _check(G, ypsi, sigma2_psi)
    n, p = G.shape
    w = np.ones(p) if w is None else np.asarray(w, dtype=np.float64)
    if w.shape != (p,) or not np.all(np.isfinite(w)) or not np.any(w):
        raise InputError("weights must be a finite, not-all-zero vector of length p")
    sigma = G.T @ G / n
    wsw = float(w @ sigma @ w)
    norm = float(np.linalg.norm(sigma, 2))
    if wsw <= DEGENERATE_TOL * norm or norm == 0.0:
        raise DegenerateGene("weighted burden has zero variance")
    raw, z = burden_scores(G.T @ ypsi, sigma2_psi, n, w, wsw)
    return TestResult(
        statistic=float(z),
        pvalue=float(two_sided_normal_pvalue(z)),
        test="Burden",
        p_used=p,
        details={"raw": float(raw), "variance": wsw},
    )


def quadform_test(Gtilde, ypsi, sigma2_psi, A=None, name="QuadForm"):
    """``Q_A = (G'Ypsi)' A (G'Ypsi) / (n sigma2)`` with mixture-chi2 p-value."""
    G = _as_block(Gtilde)
    ypsi = _check(G, ypsi, sigma2_psi)
    n, p = G.shape
    try:
        if A is None:
            mix = mixture_from_gram(G)
        else:
            mix = weighted_mixture(G, A)
    except AllZero as exc:
        raise DegenerateGene(str(exc)) from exc
    A = None if A is None else np.asarray(A, dtype=np.float64)
    stat = float(quadratic_scores(G.T @ ypsi, sigma2_psi, n, A))
    return TestResult(
        statistic=stat,
        pvalue=pvalue_moment_match(mix, stat),
        test=name,
        p_used=p,
        details={"lambdas": mix.lambdas},
    )


def skat_test(Gtilde, ypsi, sigma2_psi):
    return quadform_test(Gtilde, ypsi, sigma2_psi, None, name="SKAT")


def ridge_matrix(Gtilde, gamma=None):
    """``(Sigma + gamma I)^{-1}`` with ``Sigma = G'G/n``; default gamma = trace/p."""
    G = _as_block(Gtilde)
    n, p = G.shape
    sigma = G.T @ G / n
    if gamma is None:
        gamma = float(np.trace(sigma)) / p
    if not gamma > 0:
        raise InputError("ridge gamma must be positive")
    A = np.linalg.inv(sigma + gamma * np.eye(p))
    return (A + A.T) / 2.0


def ridge_test(Gtilde, ypsi, sigma2_psi, gamma=None):
    return quadform_test(Gtilde, ypsi, sigma2_psi, ridge_matrix(Gtilde, gamma), name="QuadForm")


def drop_constant_columns(Gtilde, tol=ZERO_VARIANCE_TOL):
    """Boolean mask of columns whose projected variance exceeds ``tol``."""
    G = _as_block(Gtilde)
    return np.einsum("ij,ij->j", G, G) / G.shape[0] > tol


def _run_one(test, G, response, w, gamma):
    if test == "Burden":
        return burden_test(G, response.values, response.sigma2, w)
    if test == "SKAT":
        return skat_test(G, response.values, response.sigma2)
    return ridge_test(G, response.values, response.sigma2, gamma)


def gene_test_suite(fit, G, responses, tests=TEST_NAMES, w=None, gamma=None):
    """Run every (test, transform) pair on one gene.

    ``responses`` are :class:`~lptscan.transforms.TransformedResponse`
    objects prepared once for the whole analysis. Results are ordered by
    test, then by transform, in the order given.
    """
    tests = [canonical_test_name(t) for t in tests]
    Gt = project_block(fit, G)
    keep = drop_constant_columns(Gt)
    flags = set()
    if not keep.all():
        flags.add(FLAG_DROPPED)
        Gt = Gt[:, keep]
        if w is not None:
            w = np.asarray(w, dtype=np.float64)[keep]
    p_used = int(keep.sum())

    results = []
    for test in tests:
        for response in responses:
            if p_used == 0:
                res = None
            else:
                try:
                    res = _run_one(test, Gt, response, w, gamma)
                except DegenerateGene:
                    res = None
            if res is None:
                results.append(TestResult(
                    statistic=math.nan, pvalue=1.0, test=test,
                    transform=response.tag, p_used=p_used,
                    flags=frozenset(flags | {FLAG_DEGENERATE}),
                ))
            else:
                results.append(TestResult(
                    statistic=res.statistic, pvalue=res.pvalue, test=test,
                    transform=response.tag, p_used=p_used,
                    flags=frozenset(flags), details=res.details,
                ))
    return results
