"""Residual transformations: identity (UAT), rank-based inverse normal (INT)
and the kernel-estimated score transformation (LPT).

The LPT replaces each null residual ``r_i`` by ``psi(r_i) = -f'(r_i) / f(r_i)``
where ``f`` is a Gaussian kernel density estimate built from the same null
residuals. With this sign the score of a standard normal is the identity,
so Gaussian errors reproduce the untransformed test.

The density estimate is fitted once per analysis and shared by all genes.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from lptscan import _backend
from lptscan.errors import DegenerateSample, DimensionMismatch, InputError
from lptscan.nullmodel import residual_variance

TRANSFORM_TAGS = ("UAT", "INT", "LPT")
DEFAULT_INT_OFFSET = 3.0 / 8.0

# Beyond 8 bandwidths a kernel contributes < exp(-32) ~ 1.3e-14 of its peak.
TRUNCATION_WIDTH = 8.0
TRUNCATE_ABOVE = 20_000
FLOOR_FACTOR = 1e-8

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BandwidthRule:
    """How the kernel bandwidth is chosen.

    ``normal_reference``: ``1.06 * min(sd, IQR / 1.349) * n^(-1/5)``.
    ``fixed_rate``: ``sd * n^(-1/5)``.
    ``manual``: the given ``value``.
    """

    kind: str = "normal_reference"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("normal_reference", "fixed_rate", "manual"):
            raise InputError(f"unknown bandwidth rule {self.kind!r}")
        if self.kind == "manual":
            if self.value is None or not self.value > 0 or not math.isfinite(self.value):
                raise InputError("manual bandwidth must be a positive number")
        elif self.value is not None:
            raise InputError(f"bandwidth rule {self.kind!r} takes no value")

    @classmethod
    def manual(cls, h):
        return cls("manual", float(h))

    @classmethod
    def parse(cls, text):
        """Parse ``nrd``/``normal_reference``, ``fixed_rate`` or a number."""
        if isinstance(text, BandwidthRule):
            return text
        key = str(text).strip().lower().replace("-", "_")
        if key in ("nrd", "normal_reference", "normalreference"):
            return cls("normal_reference")
        if key in ("fixed_rate", "fixedrate", "rate"):
            return cls("fixed_rate")
        try:
            return cls.manual(float(key))
        except ValueError:
            raise InputError(f"cannot parse bandwidth rule {text!r}") from None

    def __str__(self):
        return f"{self.value!r}" if self.kind == "manual" else self.kind


@dataclass(frozen=True)
class TransformKind:
    tag: str
    int_offset: float | None = None
    bandwidth: BandwidthRule | None = None

    def __post_init__(self):
        tag = self.tag.upper()
        if tag not in TRANSFORM_TAGS:
            raise InputError(f"unknown transform {self.tag!r}")
        object.__setattr__(self, "tag", tag)
        if self.int_offset is not None:
            if tag != "INT":
                raise InputError("int_offset only applies to INT")
            if not 0.0 <= self.int_offset < 0.5:
                raise InputError("INT offset must lie in [0, 0.5)")
        if self.bandwidth is not None and tag != "LPT":
            raise InputError("bandwidth only applies to LPT")

    @property
    def offset(self):
        return DEFAULT_INT_OFFSET if self.int_offset is None else self.int_offset

    @property
    def rule(self):
        return BandwidthRule() if self.bandwidth is None else self.bandwidth

    @classmethod
    def from_tag(cls, tag, int_offset=None, bandwidth=None):
        """Build a kind from its tag, dropping parameters that do not apply."""
        tag = tag.upper()
        return cls(
            tag,
            int_offset=int_offset if tag == "INT" else None,
            bandwidth=BandwidthRule.parse(bandwidth) if tag == "LPT" and bandwidth is not None else None,
        )


def select_bandwidth(residuals, rule=None):
    rule = BandwidthRule() if rule is None else BandwidthRule.parse(rule)
    r = np.asarray(residuals, dtype=np.float64)
    n = r.shape[0]
    if n < 2:
        raise DegenerateSample("need at least two residuals")
    if rule.kind == "manual":
        return rule.value
    sd = float(np.std(r, ddof=1))
    if not sd > 0.0:
        raise DegenerateSample("all residuals are equal")
    rate = n ** (-0.2)
    if rule.kind == "fixed_rate":
        return float(sd * rate)
    q75, q25 = np.percentile(r, [75.0, 25.0])
    spread = min(sd, (q75 - q25) / 1.349)
    if spread <= 0.0:
        # more than half the sample tied; the IQR carries no scale
        spread = sd
    return float(1.06 * spread * rate)


@dataclass(frozen=True)
class ScoreModel:
    """Frozen Gaussian KDE of the null residuals.

    ``cutoff`` is the truncation half-width in bandwidths (0 = exact sums).
    """

    sample: np.ndarray = field(repr=False)
    bandwidth: float
    floor: float
    cutoff: float = 0.0

    def __post_init__(self):
        sample = np.sort(np.asarray(self.sample, dtype=np.float64).ravel())
        if sample.size == 0:
            raise DegenerateSample("empty sample")
        if not self.bandwidth > 0.0:
            raise InputError("bandwidth must be positive")
        object.__setattr__(self, "sample", sample)

    @property
    def n(self):
        return self.sample.shape[0]

    def _sums(self, x, backend):
        kern = _backend.get_backend(backend)
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        flat = np.ascontiguousarray(x.ravel())
        s0, s1 = kern.sums_at_points(self.sample, flat, self.bandwidth, self.cutoff)
        return s0.reshape(shape), s1.reshape(shape)

    def _finish(self, s0, s1):
        norm = self.n * self.bandwidth * _SQRT_2PI
        density = np.maximum(s0 / norm, self.floor)
        deriv = s1 / (norm * self.bandwidth)
        return density, deriv


def fit_score_model(residuals, rule=None, truncate=None):
    """Fit the kernel density of ``residuals``.

    ``truncate`` defaults to True for samples larger than 20 000, where
    kernel sums are restricted to an 8-bandwidth window of the sorted sample.
    """
    r = np.asarray(residuals, dtype=np.float64).ravel()
    if r.shape[0] < 2:
        raise DegenerateSample("need at least two residuals")
    if not np.all(np.isfinite(r)):
        raise DegenerateSample("residuals contain non-finite values")
    h = select_bandwidth(r, rule)
    n = r.shape[0]
    if truncate is None:
        truncate = n > TRUNCATE_ABOVE
    floor = FLOOR_FACTOR / (n * h * _SQRT_2PI)
    return ScoreModel(
        sample=r, bandwidth=h, floor=floor,
        cutoff=TRUNCATION_WIDTH if truncate else 0.0,
    )


def _scalar_out(x, values):
    return float(values) if np.ndim(x) == 0 else values


def kde_density(model, x, backend=None):
    """Floored kernel density estimate at ``x`` (scalar or array)."""
    s0, s1 = model._sums(x, backend)
    density, _ = model._finish(s0, s1)
    return _scalar_out(x, density)


def kde_derivative(model, x, backend=None):
    s0, s1 = model._sums(x, backend)
    _, deriv = model._finish(s0, s1)
    return _scalar_out(x, deriv)


def kde_score(model, x, backend=None):
    """Estimated score ``-f'(x) / max(f(x), floor)``."""
    s0, s1 = model._sums(x, backend)
    density, deriv = model._finish(s0, s1)
    return _scalar_out(x, -deriv / density)


def score_at_sample(model, backend=None):
    """Score at every sample point, in the model's sorted order.

    Uses the pairwise kernel so each pair of residuals is visited once.
    """
    kern = _backend.get_backend(backend)
    s0, s1 = kern.sums_at_sample(model.sample, model.bandwidth, model.cutoff)
    density, deriv = model._finish(s0, s1)
    return -deriv / density


def lpt_transform(residuals, rule=None, truncate=None, backend=None):
    """Fit the score model on ``residuals`` and evaluate it at each of them."""
    r = np.asarray(residuals, dtype=np.float64)
    model = fit_score_model(r, rule, truncate)
    order = np.argsort(r, kind="stable")
    out = np.empty_like(r)
    out[order] = score_at_sample(model, backend)
    return out, model


def int_transform(residuals, offset=DEFAULT_INT_OFFSET):
    """Rank-based inverse normal transform with midranks for ties.

    A 2-d input is transformed column by column.
    """
    r = np.asarray(residuals, dtype=np.float64)
    n = r.shape[0]
    if n < 2:
        raise DegenerateSample("need at least two residuals")
    if not 0.0 <= offset < 0.5:
        raise InputError("INT offset must lie in [0, 0.5)")
    ranks = rankdata(r, method="average", axis=0)
    return ndtri((ranks - offset) / (n - 2.0 * offset + 1.0))


def apply_transform(kind, fit):
    """Transform the null residuals of ``fit``.

    Returns ``(ypsi, model)``; ``model`` is the fitted :class:`ScoreModel`
    for LPT and None otherwise.
    """
    if isinstance(kind, str):
        kind = TransformKind(kind)
    r = fit.residuals
    if kind.tag == "UAT":
        return r.copy(), None
    if kind.tag == "INT":
        return int_transform(r, kind.offset), None
    return lpt_transform(r, kind.rule)


@dataclass(frozen=True)
class TransformedResponse:
    """A transformed response ready for gene testing."""

    kind: TransformKind
    values: np.ndarray = field(repr=False)
    sigma2: float
    model: ScoreModel | None = field(default=None, repr=False)

    @property
    def tag(self):
        return self.kind.tag


def prepare_response(kind, fit):
    if isinstance(kind, str):
        kind = TransformKind(kind)
    ypsi, model = apply_transform(kind, fit)
    if ypsi.shape[0] != fit.n:
        raise DimensionMismatch("transformed response has the wrong length")
    return TransformedResponse(kind, ypsi, residual_variance(fit, ypsi), model)
