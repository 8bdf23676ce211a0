"""Null linear model: least-squares fit on covariates and the covariate projector.

The projector ``P_Z = I - Z (Z'Z)^{-1} Z'`` is never formed. A thin QR
factorisation ``Z = QR`` is computed once and ``P_Z x = x - Q (Q' x)`` is
applied to every gene block, which costs O(n q p).
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from lptscan.errors import (
    DegenerateVariance,
    DimensionMismatch,
    NonFiniteInput,
    RankDeficient,
)

RANK_TOL = 1e-10


def add_intercept(covariates):
    """Prepend a column of ones to an ``n x k`` covariate matrix (k may be 0)."""
    covariates = np.asarray(covariates, dtype=np.float64)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    ones = np.ones((covariates.shape[0], 1))
    return np.hstack([ones, covariates])


@dataclass(frozen=True)
class NullFit:
    """Fitted null model ``Y = Z alpha + e``.

    Attributes
    ----------
    alpha_hat : ndarray, shape (q,)
    residuals : ndarray, shape (n,)
    basis : ndarray, shape (n, q)
        Orthonormal basis ``Q`` of the column space of ``Z``.
    n, q : int
    """

    alpha_hat: np.ndarray
    residuals: np.ndarray
    basis: np.ndarray = field(repr=False)
    n: int
    q: int

    def project(self, x):
        """Apply ``P_Z`` to a length-n vector or an ``n x p`` block."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.n:
            raise DimensionMismatch(f"expected {self.n} rows, got {x.shape[0]}")
        return x - self.basis @ (self.basis.T @ x)


def _check_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput(f"{name} contains non-finite values")


def fit_null(y, Z):
    """Least-squares fit of ``y`` on the design matrix ``Z``.

    ``Z`` must already contain the intercept column (see :func:`add_intercept`).
    Raises :class:`RankDeficient` when a diagonal entry of the triangular
    factor falls below ``1e-10`` times the largest one.
    """
    y = np.asarray(y, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise DimensionMismatch("Z must be a 2-d matrix")
    if y.ndim != 1 or y.shape[0] != Z.shape[0]:
        raise DimensionMismatch(
            f"Y has shape {y.shape} but Z has {Z.shape[0]} rows"
        )
    n, q = Z.shape
    if not n > q >= 1:
        raise DimensionMismatch(f"need n > q >= 1, got n={n}, q={q}")
    _check_finite("Y", y)
    _check_finite("Z", Z)

    Q, R = np.linalg.qr(Z, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.max() == 0.0 or diag.min() < RANK_TOL * diag.max():
        raise RankDeficient("covariate matrix is rank deficient")
    qty = Q.T @ y
    alpha = solve_triangular(R, qty)
    residuals = y - Q @ qty
    return NullFit(alpha_hat=alpha, residuals=residuals, basis=Q, n=n, q=q)


def project_block(fit, G):
    """Residualise genotype columns on the covariates: ``P_Z G``.

    Accepts a :class:`GenotypeBlock` or a plain array.
    """
    values = getattr(G, "values", G)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != fit.n:
        raise DimensionMismatch(
            f"genotype block has {values.shape[0]} rows, null fit has {fit.n}"
        )
    return fit.project(values)


def residual_variance(fit, ypsi):
    """``ypsi' P_Z ypsi / (n - q)``; columnwise when ``ypsi`` is ``n x R``."""
    ypsi = np.asarray(ypsi, dtype=np.float64)
    if ypsi.shape[0] != fit.n:
        raise DimensionMismatch(f"expected {fit.n} rows, got {ypsi.shape[0]}")
    _check_finite("transformed response", ypsi)
    proj = fit.project(ypsi)
    var = np.einsum("i...,i...->...", proj, proj) / (fit.n - fit.q)
    scale = np.mean(ypsi * ypsi, axis=0)
    if np.any(var <= 1e-12 * scale) or np.any(scale == 0.0):
        raise DegenerateVariance(
            "transformed response lies in the covariate column space"
        )
    return var if var.ndim else float(var)


@dataclass(frozen=True)
class GenotypeBlock:
    """Genotypes of the SNPs of one gene.

    ``values`` is ``n x p``: codes 0/1/2 before imputation, reals after.
    """

    values: np.ndarray
    snp_ids: list
    mafs: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatch("genotype block must be 2-d")
        if values.shape[1] != len(self.snp_ids) or values.shape[1] != len(self.mafs):
            raise DimensionMismatch("snp_ids/mafs length does not match columns")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "snp_ids", list(self.snp_ids))
        object.__setattr__(self, "mafs", np.asarray(self.mafs, dtype=np.float64))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return GenotypeBlock(
            values=self.values[:, index],
            snp_ids=[self.snp_ids[i] for i in index],
            mafs=self.mafs[index],
        )


def allele_frequency(codes):
    """Per-column MAF of a 0/1/2 matrix (NaN = missing): ``min(f, 1 - f)``."""
    codes = np.asarray(codes, dtype=np.float64)
    freq = np.nanmean(codes, axis=0) / 2.0
    return np.minimum(freq, 1.0 - freq)
