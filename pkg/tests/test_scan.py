import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lptscan.errors import AlignmentError, InputError, SchemaMismatch, UnknownSNP
from lptscan.io import (
    GeneDefinition,
    read_results,
    write_genesets,
    write_genotype_tsv,
    write_gmx,
    write_results,
    write_table,
)
from lptscan.scan import (
    NOT_APPLICABLE,
    ScanConfig,
    compare_runs,
    discovery_gain,
    reproducibility,
    run_scan,
)
from lptscan.settests import TestResult
from lptscan.simulate import simulate_scan_dataset


def write_dataset(root, data, fmt="tsv", order=None):
    root.mkdir(parents=True, exist_ok=True)
    idx = np.arange(len(data.sample_ids)) if order is None else order
    write_table(root / "pheno.tsv", [data.sample_ids[i] for i in idx], data.y[idx],
                data.covariates[idx], ["age", "sex"])
    if fmt == "gmx":
        geno = root / "geno.gmx"
        write_gmx(geno, data.codes, data.snp_ids, data.sample_ids)
    else:
        geno = root / "geno.tsv"
        write_genotype_tsv(geno, data.codes, data.snp_ids, data.sample_ids)
    write_genesets(root / "sets.tsv", [GeneDefinition(g, tuple(s)) for g, s in data.genes.items()])
    return root / "pheno.tsv", geno, root / "sets.tsv"


@pytest.fixture(scope="module")
def small_data():
    return simulate_scan_dataset(n=400, n_genes=12, snps_per_gene=8, dist="ChiSq5", seed=3,
                                 missing_rate=0.02)


def scan_to(tmp, paths, **cfg):
    out = tmp / f"res_{len(list(tmp.glob('res_*.tsv')))}.tsv"
    summary = run_scan(ScanConfig(**cfg), *paths, out, f"{out}.json")
    return out, summary


def test_small_genes_are_skipped(tmp_path, small_data):
    paths = write_dataset(tmp_path, small_data)
    out, summary = scan_to(tmp_path, paths, min_snps=9)
    assert read_results(out) == []
    manifest = json.loads(open(f"{out}.json").read())
    assert manifest["counts"]["genes_skipped"] == manifest["counts"]["genes_total"] == 12
    assert manifest["counts"]["result_rows"] == 0


def test_results_layout_and_manifest(tmp_path, small_data):
    paths = write_dataset(tmp_path, small_data)
    out, summary = scan_to(tmp_path, paths, significance=0.05)
    rows = read_results(out)
    assert len(rows) == 12 * 9
    assert [r["gene_id"] for r in rows[:9]] == ["gene1"] * 9
    runtime = json.loads(open(f"{out}.json.runtime.json").read())
    assert runtime["threads"] == 1
    assert list(runtime["timings"]).count("transform_fit") == 1
    assert set(summary["timings"]) == {"load", "null_fit", "transform_fit", "gene_tests", "write"}
    assert summary["counts"]["samples_used"] == 400


def test_determinism_and_threads(tmp_path, small_data):
    paths = write_dataset(tmp_path, small_data)
    a, _ = scan_to(tmp_path, paths)
    b, _ = scan_to(tmp_path, paths)
    c, _ = scan_to(tmp_path, paths, threads=4)
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    assert open(f"{a}.json").read().replace(a.name, "") == open(f"{c}.json").read().replace(
        c.name, "")
    assert json.loads(open(f"{c}.json.runtime.json").read())["threads"] == 4


def test_cross_format(tmp_path, small_data):
    tsv = write_dataset(tmp_path / "tsv", small_data)
    gmx = write_dataset(tmp_path / "gmx", small_data, fmt="gmx")
    a, _ = scan_to(tmp_path, tsv)
    b, _ = scan_to(tmp_path, gmx)
    assert a.read_bytes() == b.read_bytes()


def test_sample_order_invariance(tmp_path, small_data):
    base = write_dataset(tmp_path / "a", small_data)
    perm = np.random.default_rng(1).permutation(400)
    shuffled = write_dataset(tmp_path / "b", small_data, order=perm)
    ra = read_results(scan_to(tmp_path, base)[0])
    rb = read_results(scan_to(tmp_path, shuffled)[0])
    for x, y in zip(ra, rb):
        assert x["pvalue"] == pytest.approx(y["pvalue"], rel=1e-9, abs=1e-15)


def test_alignment(tmp_path, small_data):
    pheno, geno, sets = write_dataset(tmp_path, small_data)
    lines = pheno.read_text().splitlines()
    # 20 of 400 phenotype ids unknown to the genotype file -> 95% matched
    renamed = [lines[0]] + [("x" + l if 1 <= i <= 20 else l) for i, l in enumerate(lines[1:], 1)]
    pheno.write_text("\n".join(renamed) + "\n")
    _, summary = scan_to(tmp_path, (pheno, geno, sets))
    assert summary["counts"]["samples_used"] == 380
    with pytest.raises(AlignmentError, match="21 unmatched"):
        renamed[21] = "x" + renamed[21]
        pheno.write_text("\n".join(renamed) + "\n")
        scan_to(tmp_path, (pheno, geno, sets))


def test_maf_filter(tmp_path, rng):
    n = 300
    common = rng.binomial(2, 0.3, (n, 6)).astype(float)
    rare = (rng.random((n, 2)) < 0.02).astype(float)
    data = simulate_scan_dataset(n=n, n_genes=1, snps_per_gene=8, seed=1)
    data.codes = np.hstack([common, rare])
    paths = write_dataset(tmp_path, data)
    out, _ = scan_to(tmp_path, paths, tests=["Burden"], transforms=["UAT"])
    assert read_results(out)[0]["p_used"] == 6
    out, _ = scan_to(tmp_path, paths, maf_min=0.35, tests=["Burden"], transforms=["UAT"])
    assert read_results(out) == []


def test_unknown_snp(tmp_path, small_data):
    pheno, geno, sets = write_dataset(tmp_path, small_data)
    sets.write_text(sets.read_text() + "geneX\tmissing_snp\n")
    with pytest.raises(UnknownSNP):
        scan_to(tmp_path, (pheno, geno, sets))


def test_config_validation():
    with pytest.raises(InputError):
        ScanConfig(significance=1.0)
    with pytest.raises(InputError):
        ScanConfig(maf_min=0.5)
    with pytest.raises(InputError):
        ScanConfig(transforms=("BoxCox",))
    assert ScanConfig(tests=("skat",), bandwidth="nrd").tests == ("SKAT",)


def test_null_scan_significance_count(tmp_path):
    data = simulate_scan_dataset(n=1000, n_genes=500, snps_per_gene=8, dist="LogNormal", seed=9)
    paths = write_dataset(tmp_path, data)
    _, summary = scan_to(tmp_path, paths, significance=0.01)
    bound = 3 * math.sqrt(500 * 0.01 * 0.99)
    for key, count in summary["significant"].items():
        assert abs(count - 5) <= bound, key


# -- discovery gain and comparison --------------------------------------------------


def test_discovery_gain_examples():
    a = {f"g{i}" for i in range(81)}
    b = {f"g{i}" for i in range(51)}
    ga, gb = discovery_gain(a, b)
    assert f"{100 * ga:.2f}%" == "37.04%" and gb == 0.0
    assert discovery_gain(a, a) == (0.0, 0.0)
    assert discovery_gain({"a", "b"}, {"c", "d", "e"}) == (0.4, 0.6)
    assert discovery_gain(set(), set()) == (0.0, 0.0)


@given(a=st.sets(st.integers(0, 30)), b=st.sets(st.integers(0, 30)))
def test_discovery_gain_sum(a, b):
    ga, _ = discovery_gain(a, b)
    gb, _ = discovery_gain(b, a)
    union = a | b
    assert ga + gb == pytest.approx(len(a ^ b) / len(union) if union else 0.0)
    assert ga + gb <= 1.0


def fake_results(path, pvalues):
    rows = [(g, TestResult(0.0, p, "Burden", "LPT", 6)) for g, p in pvalues.items()]
    write_results(path, rows)
    return path


def test_reproducibility_proportion(tmp_path):
    main = {f"g{i}": (1e-7 if i < 81 else 0.5) for i in range(120)}
    valid = {f"g{i}": (0.01 if i < 69 else 0.3) for i in range(120)}
    cmp = compare_runs(fake_results(tmp_path / "m.tsv", main), 2.5e-6,
                       fake_results(tmp_path / "v.tsv", valid))
    rep = cmp.reproducibility[0]
    assert (rep["main_hits"], rep["validated"], rep["proportion"]) == (81, 69, "85.19%")
    assert reproducibility(set(), {"a"}).formatted() == NOT_APPLICABLE


def test_self_comparison(tmp_path):
    main = fake_results(tmp_path / "m.tsv", {f"g{i}": 10.0 ** -i for i in range(10)})
    for sig in (1e-6, 0.01, 0.05):
        rep = compare_runs(main, sig, main).reproducibility[0]
        assert rep["proportion"] == "100.00%"
    empty = compare_runs(main, 1e-20, main).reproducibility[0]
    assert empty["proportion"] == NOT_APPLICABLE


def test_compare_gains_between_transforms(tmp_path):
    rows = []
    for g in range(10):
        rows.append((f"g{g}", TestResult(0.0, 1e-8 if g < 6 else 0.5, "SKAT", "INT", 6)))
        rows.append((f"g{g}", TestResult(0.0, 1e-8 if g < 9 else 0.5, "SKAT", "LPT", 6)))
    write_results(tmp_path / "r.tsv", rows)
    gain = compare_runs(tmp_path / "r.tsv", 2.5e-6).gains[0]
    assert (gain["transform_a"], gain["transform_b"]) == ("INT", "LPT")
    assert (gain["gain_a_vs_b"], gain["gain_b_vs_a"]) == ("0.00%", "33.33%")


def test_compare_schema_mismatch(tmp_path):
    main = fake_results(tmp_path / "m.tsv", {"g1": 0.1})
    other = tmp_path / "o.tsv"
    write_results(other, [("g1", TestResult(0.0, 0.1, "SKAT", "INT", 6))])
    with pytest.raises(SchemaMismatch):
        compare_runs(main, 0.05, other)
