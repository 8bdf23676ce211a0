"""Variant-set association tests on score-transformed residuals.

The null model is fitted once, its residuals are transformed (identity,
rank inverse normal, or the kernel-estimated score ``-f'/f``), and each
gene is tested with Burden, SKAT or a ridge-weighted quadratic form.
"""
from lptscan._backend import BACKEND, available_backends
from lptscan.errors import InputError, LptError, NumericalError
from lptscan.nullmodel import (
    GenotypeBlock,
    NullFit,
    add_intercept,
    fit_null,
    project_block,
    residual_variance,
)
from lptscan.quadform import (
    ChiSquareMixture,
    critical_value,
    mixture_from_gram,
    pvalue_monte_carlo,
    pvalue_moment_match,
    weighted_mixture,
)
from lptscan.settests import (
    TestResult,
    burden_test,
    gene_test_suite,
    quadform_test,
    ridge_test,
    skat_test,
)
from lptscan.transforms import (
    BandwidthRule,
    ScoreModel,
    TransformKind,
    apply_transform,
    fit_score_model,
    int_transform,
    kde_density,
    kde_derivative,
    kde_score,
    select_bandwidth,
)

__version__ = "0.1.0"
