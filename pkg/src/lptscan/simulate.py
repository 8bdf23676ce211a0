"""Simulation designs for type-I error, power and statistic-equivalence studies.

Genotypes come from a latent Gaussian AR(1) copula: two latent haplotype
vectors per subject are thresholded at the SNP's allele frequency and
summed into 0/1/2 codes. Every replicate draws from its own generator,
seeded by ``(master seed, stream, gene batch, replicate)``, so tables do
not depend on execution order or worker count.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.special import ndtri

from lptscan.errors import InputError
from lptscan.nullmodel import (
    GenotypeBlock,
    add_intercept,
    allele_frequency,
    fit_null,
    residual_variance,
)
from lptscan.quadform import critical_value, mixture_from_gram, weighted_mixture
from lptscan.settests import (
    TEST_NAMES,
    burden_scores,
    canonical_test_name,
    drop_constant_columns,
    quadratic_scores,
    ridge_matrix,
    two_sided_normal_pvalue,
)
from lptscan.transforms import (
    TransformKind,
    int_transform,
    lpt_transform,
)

ERROR_DISTS = (
    "StdNormal",
    "SkewNormal",
    "ChiSq5",
    "LogNormal",
    "BimodalNormal",
    "StudentT3",
)
DEFAULT_ALPHA = np.array([1.0, 0.8, 1.0])

_SKEW_SHAPE = 10.0
_SKEW_SCALE = 5.0
_SKEW_DELTA = _SKEW_SHAPE / math.sqrt(1.0 + _SKEW_SHAPE**2)

# stream tags for derived generators
_GENE_STREAM = 0
_ERROR_STREAM = 1
_EQUIV_STREAM = 2


def canonical_dist(name):
    for known in ERROR_DISTS:
        if name.lower() == known.lower():
            return known
    raise InputError(f"unknown error distribution {name!r}; choose from {ERROR_DISTS}")


def rng_for(seed, *key):
    """Generator for the stream ``key`` under master ``seed``."""
    return np.random.default_rng([int(seed), *map(int, key)])


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_error(dist, n, seed):
    """i.i.d. errors from one of the six designs (not re-centred)."""
    dist = canonical_dist(dist)
    rng = _as_rng(seed)
    if dist == "StdNormal":
        return rng.standard_normal(n)
    if dist == "SkewNormal":
        u0 = np.abs(rng.standard_normal(n))
        u1 = rng.standard_normal(n)
        return _SKEW_SCALE * (_SKEW_DELTA * u0 + math.sqrt(1.0 - _SKEW_DELTA**2) * u1)
    if dist == "ChiSq5":
        return rng.chisquare(5.0, n)
    if dist == "LogNormal":
        return np.exp(rng.standard_normal(n))
    if dist == "BimodalNormal":
        second = rng.random(n) >= 0.3
        z = rng.standard_normal(n)
        return np.where(second, 5.0 + 2.0 * z, z)
    return rng.standard_t(3.0, n)


def simulate_covariates(n, seed):
    """``Z = (1, N(5, 1), Bernoulli(0.5))``."""
    rng = _as_rng(seed)
    z1 = rng.normal(5.0, 1.0, n)
    z2 = (rng.random(n) < 0.5).astype(np.float64)
    return add_intercept(np.column_stack([z1, z2]))


@dataclass(frozen=True)
class SimGenotypeConfig:
    n: int
    p: int
    maf_range: tuple = (0.05, 0.5)
    ld_rho: float = 0.5

    def __post_init__(self):
        lo, hi = self.maf_range
        if not 0.0 < lo <= hi <= 0.5:
            raise InputError("maf_range must satisfy 0 < lo <= hi <= 0.5")
        if not 0.0 <= self.ld_rho < 1.0:
            raise InputError("ld_rho must lie in [0, 1)")
        if not self.n > self.p >= 1:
            raise InputError("need n > p >= 1")


def _ar1_latent(n, p, rho, rng):
    z = rng.standard_normal((n, p))
    if rho > 0.0:
        tail = math.sqrt(1.0 - rho * rho)
        for j in range(1, p):
            z[:, j] = rho * z[:, j - 1] + tail * z[:, j]
    return z


def simulate_genotypes(cfg, seed, mafs=None):
    """Draw a ``cfg.n x cfg.p`` genotype block.

    Allele frequencies are Uniform(``maf_range``) unless ``mafs`` is given.
    The returned block carries empirical MAFs.
    """
    rng = _as_rng(seed)
    if mafs is None:
        lo, hi = cfg.maf_range
        mafs = rng.uniform(lo, hi, cfg.p)
    mafs = np.asarray(mafs, dtype=np.float64)
    if mafs.shape != (cfg.p,):
        raise InputError("mafs must have length p")
    threshold = ndtri(1.0 - mafs)
    codes = np.zeros((cfg.n, cfg.p))
    for _ in range(2):
        codes += _ar1_latent(cfg.n, cfg.p, cfg.ld_rho, rng) > threshold
    return GenotypeBlock(
        values=codes,
        snp_ids=[f"snp{j + 1}" for j in range(cfg.p)],
        mafs=allele_frequency(codes),
    )


# -- effects ----------------------------------------------------------------

_MAGNITUDE_10 = {"ChiSq5": 0.3, "LogNormal": 0.1}
_MAGNITUDE_60 = {
    "ChiSq5": 0.05,
    "LogNormal": 0.02,
    "StdNormal": 0.03,
    "StudentT3": 0.03,
    "SkewNormal": 0.05,
    "BimodalNormal": 0.05,
}


@dataclass(frozen=True)
class EffectConfig:
    proportion_nonzero: float = 0.10
    direction: str = "Unidirectional"
    beta_magnitude: float | None = None
    link: str = "Identity"

    def __post_init__(self):
        if not any(math.isclose(self.proportion_nonzero, v) for v in (0.1, 0.3, 0.6)):
            if self.beta_magnitude is None:
                raise InputError(
                    "proportion_nonzero outside {0.1, 0.3, 0.6} needs an explicit beta_magnitude"
                )
        if not 0.0 <= self.proportion_nonzero <= 1.0:
            raise InputError("proportion_nonzero must lie in [0, 1]")
        direction = self.direction.capitalize()
        if direction not in ("Unidirectional", "Bidirectional"):
            raise InputError(f"unknown effect direction {self.direction!r}")
        link = self.link.capitalize()
        if link not in ("Identity", "Quadratic"):
            raise InputError(f"unknown link {self.link!r}")
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "link", link)


def default_magnitude(proportion, dist):
    dist = canonical_dist(dist)
    if math.isclose(proportion, 0.6):
        return _MAGNITUDE_60[dist]
    base = _MAGNITUDE_10.get(dist, 0.2)
    if math.isclose(proportion, 0.3):
        return base / 2.0
    return base


def make_beta(cfg, p, dist):
    """Effect vector: the first ``ceil(proportion * p)`` SNPs are causal."""
    magnitude = cfg.beta_magnitude
    if magnitude is None:
        magnitude = default_magnitude(cfg.proportion_nonzero, dist)
    k = min(p, math.ceil(cfg.proportion_nonzero * p - 1e-9))
    beta = np.zeros(p)
    beta[:k] = magnitude
    if cfg.direction == "Bidirectional":
        beta[k - k // 2:k] *= -1.0
    return beta


def apply_link(eta, link):
    return eta * eta if link.capitalize() == "Quadratic" else eta


def simulate_phenotype(Z, alpha, G, beta, link, dist, seed):
    """``y = Z alpha + h(G beta) + e`` with ``h`` the identity or the square."""
    Z = np.asarray(Z, dtype=np.float64)
    G = np.asarray(getattr(G, "values", G), dtype=np.float64)
    alpha = DEFAULT_ALPHA if alpha is None else np.asarray(alpha, dtype=np.float64)
    eta = G @ np.asarray(beta, dtype=np.float64)
    return Z @ alpha + apply_link(eta, link) + sample_error(dist, Z.shape[0], seed)


# -- experiments ------------------------------------------------------------


@dataclass(frozen=True)
class _Design:
    tests: tuple
    transforms: tuple
    dist: str
    n: int
    p: int
    alphas: tuple
    seed: int
    reps_per_gene: int
    effect: EffectConfig | None = None
    maf_range: tuple = (0.05, 0.5)
    ld_rho: float = 0.5
    gamma: float | None = None
    alpha_cov: tuple = tuple(DEFAULT_ALPHA)


def _transform_columns(kind, R):
    if kind.tag == "UAT":
        return R
    if kind.tag == "INT":
        return int_transform(R, kind.offset)
    out = np.empty_like(R)
    for j in range(R.shape[1]):
        out[:, j], _ = lpt_transform(R[:, j], kind.rule)
    return out


def _gene_batch(design, batch, n_reps):
    """Rejection counts ``[test, transform, alpha]`` for one simulated gene."""
    rng = rng_for(design.seed, _GENE_STREAM, batch)
    Z = simulate_covariates(design.n, rng)
    geno = simulate_genotypes(
        SimGenotypeConfig(design.n, design.p, design.maf_range, design.ld_rho), rng
    )
    alpha_cov = np.asarray(design.alpha_cov)
    fit = fit_null(Z @ alpha_cov, Z)
    Gt = fit.project(geno.values)
    keep = drop_constant_columns(Gt)
    Gt = Gt[:, keep]
    n = design.n
    p_used = Gt.shape[1]

    signal = np.zeros(n)
    if design.effect is not None:
        beta = make_beta(design.effect, design.p, design.dist)[keep]
        signal = apply_link(geno.values[:, keep] @ beta, design.effect.link)

    base = Z @ alpha_cov + signal
    Y = np.empty((n, n_reps))
    for r in range(n_reps):
        rep_rng = rng_for(design.seed, _ERROR_STREAM, batch, r)
        Y[:, r] = base + sample_error(design.dist, n, rep_rng)
    resid = fit.project(Y)

    counts = np.zeros((len(design.tests), len(design.transforms), len(design.alphas)),
                      dtype=np.int64)
    if p_used == 0:
        return counts

    sigma = Gt.T @ Gt / n
    w = np.ones(p_used)
    wsw = float(w @ sigma @ w)
    null_laws = {}
    for test in design.tests:
        if test == "SKAT":
            null_laws[test] = (None, mixture_from_gram(Gt))
        elif test == "QuadForm":
            A = ridge_matrix(Gt, design.gamma)
            null_laws[test] = (A, weighted_mixture(Gt, A))
    crit = {
        (test, a): (critical_value(law[1], a) if a < 1.0 else -math.inf)
        for test, law in null_laws.items()
        for a in design.alphas
    }

    for ti, kind in enumerate(design.transforms):
        ypsi = _transform_columns(kind, resid)
        sigma2 = residual_variance(fit, ypsi)
        U = Gt.T @ ypsi
        for si, test in enumerate(design.tests):
            if test == "Burden":
                _, z = burden_scores(U, sigma2, n, w, wsw)
                pv = two_sided_normal_pvalue(z)
                for ai, a in enumerate(design.alphas):
                    counts[si, ti, ai] = int(np.sum(pv <= a))
            else:
                A, _ = null_laws[test]
                stat = quadratic_scores(U, sigma2, n, A)
                for ai, a in enumerate(design.alphas):
                    counts[si, ti, ai] = int(np.sum(stat >= crit[(test, a)]))
    return counts


def _batch_worker(args):
    design, batch, n_reps = args
    return _gene_batch(design, batch, n_reps)


def _batches(replicates, reps_per_gene):
    full, rest = divmod(replicates, reps_per_gene)
    sizes = [reps_per_gene] * full + ([rest] if rest else [])
    return list(enumerate(sizes))


def _run(design, replicates, workers):
    jobs = [(design, b, m) for b, m in _batches(replicates, design.reps_per_gene)]
    total = np.zeros((len(design.tests), len(design.transforms), len(design.alphas)),
                     dtype=np.int64)
    if workers is None or workers <= 1:
        for job in jobs:
            total += _batch_worker(job)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for counts in pool.map(_batch_worker, jobs, chunksize=1):
                total += counts
    return total


def _normalise(tests, transforms, int_offset=None, bandwidth=None):
    tests = tuple(canonical_test_name(t) for t in tests)
    kinds = []
    for t in transforms:
        if isinstance(t, TransformKind):
            kinds.append(t)
        else:
            kinds.append(TransformKind.from_tag(t, int_offset, bandwidth))
    return tests, tuple(kinds)


def _rows(design, counts, replicates, labels):
    rows = []
    for si, test in enumerate(design.tests):
        for ti, kind in enumerate(design.transforms):
            for ai, label in enumerate(labels):
                est = float(counts[si, ti, ai] / replicates)
                rows.append({
                    "test": test,
                    "transform": kind.tag,
                    "error_dist": design.dist,
                    "alpha_or_effect": label,
                    "estimate": est,
                    "std_err": math.sqrt(est * (1.0 - est) / replicates),
                    "replicates": replicates,
                })
    return rows


def type1_experiment(tests=TEST_NAMES, transforms=("UAT", "INT", "LPT"),
                     dist="StdNormal", n=2000, replicates=10_000, alphas=(0.01,),
                     seed=0, p=20, reps_per_gene=1000, workers=1, gamma=None,
                     int_offset=None, bandwidth=None, ld_rho=0.5,
                     maf_range=(0.05, 0.5)):
    """Empirical rejection rates under the null, one row per (test, transform, alpha).

    Genotypes and covariates are redrawn for every block of
    ``reps_per_gene`` replicates; phenotypes are redrawn per replicate.
    """
    if replicates < 1:
        raise InputError("replicates must be positive")
    tests, kinds = _normalise(tests, transforms, int_offset, bandwidth)
    alphas = tuple(float(a) for a in alphas)
    if any(not 0.0 < a <= 1.0 for a in alphas):
        raise InputError("alphas must lie in (0, 1]")
    design = _Design(tests, kinds, canonical_dist(dist), int(n), int(p), alphas,
                     int(seed), int(reps_per_gene), None, tuple(maf_range),
                     float(ld_rho), gamma)
    counts = _run(design, replicates, workers)
    return _rows(design, counts, replicates, alphas)


def power_experiment(tests=TEST_NAMES, transforms=("UAT", "INT", "LPT"),
                     dist="StdNormal", effect=None, n=2000, replicates=500,
                     alpha=0.01, seed=0, p=20, reps_per_gene=10, workers=1,
                     gamma=None, int_offset=None, bandwidth=None, ld_rho=0.5,
                     maf_range=(0.05, 0.5)):
    """Rejection rates under an alternative, one row per (test, transform).

    ``alpha_or_effect`` holds the effect magnitude actually used.
    """
    effect = EffectConfig() if effect is None else effect
    tests, kinds = _normalise(tests, transforms, int_offset, bandwidth)
    dist = canonical_dist(dist)
    magnitude = effect.beta_magnitude
    if magnitude is None:
        magnitude = default_magnitude(effect.proportion_nonzero, dist)
        effect = replace(effect, beta_magnitude=magnitude)
    design = _Design(tests, kinds, dist, int(n), int(p), (float(alpha),), int(seed),
                     int(reps_per_gene), effect, tuple(maf_range), float(ld_rho), gamma)
    counts = _run(design, replicates, workers)
    return _rows(design, counts, replicates, (magnitude,))


# -- equivalence of the optimal quadratic statistic and SKAT ------------------


def _t_scores(x, nu):
    s = -(nu + 1.0) * x / (nu + x * x)
    ds = -(nu + 1.0) * (nu - x * x) / (nu + x * x) ** 2
    return s, ds + s * s


def density_scores(dist, x):
    """``(f'/f, f''/f)`` for the error densities with closed forms."""
    dist = canonical_dist(dist)
    x = np.asarray(x, dtype=np.float64)
    if dist == "StdNormal":
        return -x, x * x - 1.0
    if dist == "StudentT3":
        return _t_scores(x, 3.0)
    raise InputError(f"no analytic density derivatives for {dist}")


def fisher_information(dist):
    dist = canonical_dist(dist)
    if dist == "StdNormal":
        return 1.0
    if dist == "StudentT3":
        return 4.0 / 6.0
    raise InputError(f"no analytic Fisher information for {dist}")


def quad_statistics(Gtilde, eps, dist):
    """Return ``(T_quad, T_skat)`` built from the true density at errors ``eps``.

    ``T_quad`` keeps the diagonal ``f''/f`` term of the locally optimal
    random-effects statistic; ``T_skat`` uses squared scores on the diagonal.
    """
    G = np.asarray(Gtilde, dtype=np.float64)
    if G.ndim == 1:
        G = G[:, None]
    n = G.shape[0]
    score, curv = density_scores(dist, eps)
    lev = np.einsum("ij,ij->i", G, G)
    u = G.T @ score
    cross = float(u @ u) - float(np.sum(lev * score * score))
    t_quad = (float(np.sum(lev * curv)) + cross) / n
    t_skat = float(u @ u) / n
    return t_quad, t_skat


@dataclass
class EquivalenceRow:
    n: int
    replicates: int
    mean_diff: float
    var_diff: float
    se_mean: float
    expected_mean: float
    diffs: np.ndarray = field(repr=False, default=None)


def quad_equivalence_check(dist="StdNormal", n_grid=(500, 2000, 8000), replicates=200,
                           seed=0, p=10, ld_rho=0.5):
    """Distribution of ``T_quad - T_skat`` under the null at each sample size.

    The gene's allele frequencies are drawn once and held fixed; genotypes,
    covariates and errors are redrawn per replicate, so the spread of the
    difference reflects sampling noise only. ``expected_mean`` is
    ``-trace(Sigma) * I_f`` averaged over replicates.
    """
    dist = canonical_dist(dist)
    info = fisher_information(dist)
    mafs = rng_for(seed, _EQUIV_STREAM).uniform(0.05, 0.5, p)
    rows = []
    for n in n_grid:
        diffs = np.empty(replicates)
        targets = np.empty(replicates)
        for r in range(replicates):
            rng = rng_for(seed, _EQUIV_STREAM, n, r)
            Z = simulate_covariates(n, rng)
            geno = simulate_genotypes(SimGenotypeConfig(n, p, ld_rho=ld_rho), rng, mafs)
            fit = fit_null(Z @ DEFAULT_ALPHA, Z)
            Gt = fit.project(geno.values)
            eps = sample_error(dist, n, rng)
            t_quad, t_skat = quad_statistics(Gt, eps, dist)
            diffs[r] = t_quad - t_skat
            targets[r] = -info * float(np.sum(Gt * Gt)) / n
        rows.append(EquivalenceRow(
            n=int(n),
            replicates=replicates,
            mean_diff=float(diffs.mean()),
            var_diff=float(diffs.var(ddof=1)),
            se_mean=float(diffs.std(ddof=1) / math.sqrt(replicates)),
            expected_mean=float(targets.mean()),
            diffs=diffs,
        ))
    return rows


# -- whole datasets for the scan driver ----------------------------------------


@dataclass
class ScanDataset:
    sample_ids: list
    y: np.ndarray
    covariates: np.ndarray = field(repr=False)
    codes: np.ndarray = field(repr=False)
    snp_ids: list = field(repr=False)
    genes: dict = field(repr=False)


def simulate_scan_dataset(n=1000, n_genes=50, snps_per_gene=10, dist="StdNormal",
                          seed=0, causal_genes=0, effect=None, missing_rate=0.0,
                          ld_rho=0.5):
    """A phenotype plus ``n_genes`` independent genes of ``snps_per_gene`` SNPs.

    The first ``causal_genes`` genes carry the effect described by
    ``effect``; every other gene is null. ``missing_rate`` blanks genotype
    codes at random (stored as NaN).
    """
    effect = EffectConfig() if effect is None else effect
    rng = rng_for(seed, _GENE_STREAM)
    Z = simulate_covariates(n, rng)
    cfg = SimGenotypeConfig(n, snps_per_gene, ld_rho=ld_rho)
    blocks = [simulate_genotypes(cfg, rng_for(seed, _GENE_STREAM, g + 1))
              for g in range(n_genes)]
    signal = np.zeros(n)
    for g in range(min(causal_genes, n_genes)):
        beta = make_beta(effect, snps_per_gene, dist)
        signal += apply_link(blocks[g].values @ beta, effect.link)
    y = Z @ DEFAULT_ALPHA + signal + sample_error(dist, n, rng_for(seed, _ERROR_STREAM))
    codes = np.hstack([b.values for b in blocks])
    if missing_rate > 0.0:
        blank = rng_for(seed, _ERROR_STREAM, 1).random(codes.shape) < missing_rate
        codes[blank] = np.nan
    genes = {}
    snp_ids = []
    for g in range(n_genes):
        ids = [f"g{g + 1}_s{j + 1}" for j in range(snps_per_gene)]
        genes[f"gene{g + 1}"] = ids
        snp_ids.extend(ids)
    return ScanDataset(
        sample_ids=[f"id{i + 1}" for i in range(n)],
        y=y,
        covariates=Z[:, 1:],
        codes=codes,
        snp_ids=snp_ids,
        genes=genes,
    )
