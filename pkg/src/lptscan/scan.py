"""Gene-scan driver and run comparison.

The null model and every requested transformation are fitted once; genes
are then tested in parallel against the shared, read-only fit. Results
are written in gene order, so output does not depend on the thread count.
"""
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
import json
import logging
import time

import numpy as np

from lptscan.errors import AlignmentError, InputError, SchemaMismatch
from lptscan.io import (
    load_genesets,
    load_genotypes,
    load_table,
    read_results,
    write_records,
    write_results,
)
from lptscan.nullmodel import fit_null
from lptscan.settests import TEST_NAMES, canonical_test_name, gene_test_suite
from lptscan.transforms import (
    DEFAULT_INT_OFFSET,
    TRANSFORM_TAGS,
    BandwidthRule,
    TransformKind,
    prepare_response,
)

log = logging.getLogger(__name__)

NOT_APPLICABLE = "NA"
VALIDATION_SIGNIFICANCE = 0.05


@dataclass
class ScanConfig:
    """Settings for :func:`run_scan`.

    Genes keep SNPs with ``MAF >= maf_min`` and are tested only when at
    least ``min_snps`` SNPs survive the filter.
    """

    maf_min: float = 0.05
    transforms: tuple = TRANSFORM_TAGS
    tests: tuple = TEST_NAMES
    significance: float = 2.5e-6
    bandwidth: str = "normal_reference"
    int_offset: float = DEFAULT_INT_OFFSET
    gamma: float | None = None
    threads: int = 1
    seed: int = 0
    min_snps: int = 6
    phenotype: str = "y"
    covariates: tuple | None = None
    match_threshold: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.significance < 1.0:
            raise InputError("significance must lie in (0, 1)")
        if not 0.0 <= self.maf_min < 0.5:
            raise InputError("maf_min must lie in [0, 0.5)")
        if self.threads < 1:
            raise InputError("threads must be at least 1")
        if self.min_snps < 1:
            raise InputError("min_snps must be at least 1")
        if not 0.0 <= self.match_threshold <= 1.0:
            raise InputError("match_threshold must lie in [0, 1]")
        self.tests = tuple(canonical_test_name(t) for t in self.tests)
        self.transforms = tuple(t.upper() for t in self.transforms)
        for t in self.transforms:
            if t not in TRANSFORM_TAGS:
                raise InputError(f"unknown transform {t!r}")
        self.bandwidth = str(BandwidthRule.parse(self.bandwidth))
        if self.covariates is not None:
            self.covariates = tuple(self.covariates)

    def kinds(self):
        return [TransformKind.from_tag(t, self.int_offset, self.bandwidth)
                for t in self.transforms]


def align_samples(pheno_ids, geno_ids, threshold):
    """Inner join on sample id in phenotype order.

    Returns ``(pheno_rows, geno_rows)``. Raises :class:`AlignmentError`
    when fewer than ``threshold`` of the phenotype ids are found.
    """
    if geno_ids is None:
        raise AlignmentError("genotype file carries no sample ids")
    where = {sid: j for j, sid in enumerate(geno_ids)}
    pheno_rows = [i for i, sid in enumerate(pheno_ids) if sid in where]
    matched = len(pheno_rows)
    if matched < threshold * len(pheno_ids) or matched == 0:
        raise AlignmentError(
            f"only {matched} of {len(pheno_ids)} phenotype samples found in the genotype "
            f"file ({len(pheno_ids) - matched} unmatched)"
        )
    return np.array(pheno_rows), np.array([where[pheno_ids[i]] for i in pheno_rows])


class _Clock:
    """Wall-clock seconds per named phase."""

    def __init__(self):
        self.phases = {}

    @contextmanager
    def __call__(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = time.perf_counter() - start


def _test_gene(gene, source, geno_rows, fit, responses, config):
    block = source.block(gene.snp_ids, geno_rows)
    keep = block.mafs >= config.maf_min
    if int(keep.sum()) < config.min_snps:
        return None
    block = block.subset(keep)
    w = None if gene.weights is None else np.asarray(gene.weights)[keep]
    return gene_test_suite(fit, block, responses, config.tests, w, config.gamma)


def run_scan(config, pheno_path, geno_path, geneset_path, out_path, manifest_path=None):
    """Scan every gene and write results (and a JSON manifest).

    The manifest holds the configuration, counts and significant-gene
    tallies. The thread count and phase timings go to
    ``<manifest>.runtime.json`` so that the manifest is reproducible byte
    for byte. Returns a summary dict that includes the timings.
    """
    clock = _Clock()
    with clock("load"):
        table = load_table(pheno_path, config.phenotype,
                           None if config.covariates is None else list(config.covariates))
        source = load_genotypes(geno_path)
        genes = load_genesets(geneset_path)
        pheno_rows, geno_rows = align_samples(table.sample_ids, source.sample_ids,
                                              config.match_threshold)
        n_phenotype = table.n
        table = table.subset(pheno_rows)
        for gene in genes:
            source.column_index(gene.snp_ids)
    with clock("null_fit"):
        fit = fit_null(table.y, table.Z)
    with clock("transform_fit"):
        responses = [prepare_response(kind, fit) for kind in config.kinds()]

    def work(gene):
        return _test_gene(gene, source, geno_rows, fit, responses, config)

    with clock("gene_tests"):
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                outcomes = list(pool.map(work, genes))
        else:
            outcomes = [work(g) for g in genes]

    rows = []
    skipped = []
    for gene, results in zip(genes, outcomes):
        if results is None:
            skipped.append(gene.gene_id)
        else:
            rows.extend((gene.gene_id, res) for res in results)
    with clock("write"):
        write_results(out_path, rows)

    significant = {}
    for _, res in rows:
        key = f"{res.test}/{res.transform}"
        significant.setdefault(key, 0)
        significant[key] += int(res.pvalue < config.significance)
    manifest = {
        "config": {k: v for k, v in asdict(config).items() if k != "threads"},
        "inputs": {"phenotype": str(pheno_path), "genotypes": str(geno_path),
                   "genesets": str(geneset_path)},
        "counts": {
            "samples_phenotype": n_phenotype,
            "samples_used": int(fit.n),
            "covariates_with_intercept": int(fit.q),
            "genes_total": len(genes),
            "genes_tested": len(genes) - len(skipped),
            "genes_skipped": len(skipped),
            "result_rows": len(rows),
        },
        "significant": significant,
        "bandwidth": {r.tag: r.model.bandwidth for r in responses if r.model is not None},
    }
    timings = {name: round(sec, 6) for name, sec in clock.phases.items()}
    if manifest_path is not None:
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(f"{manifest_path}.runtime.json", "w") as fh:
            json.dump({"threads": config.threads, "timings": timings}, fh, indent=2)
            fh.write("\n")
    log.info("scanned %d genes (%d skipped) in %.2fs", len(genes), len(skipped),
             sum(clock.phases.values()))
    return {**manifest, "timings": timings, "skipped": skipped}


# -- comparing runs ----------------------------------------------------------


def discovery_gain(hits_a, hits_b):
    """``(|A \\ B| / |A u B|, |B \\ A| / |A u B|)``; both 0 when the union is empty."""
    a, b = set(hits_a), set(hits_b)
    union = len(a | b)
    if union == 0:
        return 0.0, 0.0
    return len(a - b) / union, len(b - a) / union


@dataclass
class Reproducibility:
    main_hits: int
    validated: int

    @property
    def proportion(self):
        return None if self.main_hits == 0 else self.validated / self.main_hits

    def formatted(self):
        p = self.proportion
        return NOT_APPLICABLE if p is None else format_percent(p)


def reproducibility(main_hits, validation_hits):
    main_hits = set(main_hits)
    return Reproducibility(len(main_hits), len(main_hits & set(validation_hits)))


def format_percent(x):
    return f"{100.0 * x:.2f}%"


def _hits(records, significance):
    out = {}
    for rec in records:
        key = (rec["test"], rec["transform"])
        bucket = out.setdefault(key, set())
        if rec["pvalue"] < significance:
            bucket.add(rec["gene_id"])
    return out


@dataclass
class Comparison:
    gains: list = field(default_factory=list)
    reproducibility: list = field(default_factory=list)


GAIN_COLUMNS = ("test", "transform_a", "transform_b", "hits_a", "hits_b",
                "gain_a_vs_b", "gain_b_vs_a")
REPRO_COLUMNS = ("test", "transform", "main_hits", "validated", "proportion")


def compare_runs(main_path, significance, validation_path=None,
                 validation_significance=VALIDATION_SIGNIFICANCE):
    """Discovery gains between transforms of one run, plus reproducibility.

    Gains are reported for every pair of transforms within each test.
    With a validation run, each main-run hit (``p < significance``) counts
    as reproduced when its validation p-value is below
    ``validation_significance``.
    """
    main = _hits(read_results(main_path), significance)
    tests = sorted({t for t, _ in main}, key=_test_order)
    cmp = Comparison()
    for test in tests:
        transforms = sorted((tr for t, tr in main if t == test), key=_transform_order)
        for i, ta in enumerate(transforms):
            for tb in transforms[i + 1:]:
                a, b = main[(test, ta)], main[(test, tb)]
                ga, gb = discovery_gain(a, b)
                cmp.gains.append({
                    "test": test, "transform_a": ta, "transform_b": tb,
                    "hits_a": len(a), "hits_b": len(b),
                    "gain_a_vs_b": format_percent(ga), "gain_b_vs_a": format_percent(gb),
                })
    if validation_path is not None:
        valid = _hits(read_results(validation_path), validation_significance)
        missing = sorted(set(main) - set(valid))
        if missing:
            raise SchemaMismatch(
                f"validation run lacks test/transform pairs {missing}"
            )
        for key in sorted(main, key=lambda k: (_test_order(k[0]), _transform_order(k[1]))):
            rep = reproducibility(main[key], valid[key])
            cmp.reproducibility.append({
                "test": key[0], "transform": key[1], "main_hits": rep.main_hits,
                "validated": rep.validated, "proportion": rep.formatted(),
            })
    return cmp


def _test_order(name):
    return TEST_NAMES.index(name) if name in TEST_NAMES else len(TEST_NAMES)


def _transform_order(tag):
    return TRANSFORM_TAGS.index(tag) if tag in TRANSFORM_TAGS else len(TRANSFORM_TAGS)


def write_comparison(cmp, gains_path, repro_path=None):
    write_records(gains_path, cmp.gains, GAIN_COLUMNS)
    if repro_path is not None:
        write_records(repro_path, cmp.reproducibility, REPRO_COLUMNS)

