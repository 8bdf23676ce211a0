"""Command-line entry point: ``lptscan <command> [options]``.

Every option can also come from ``--config FILE`` holding ``key = value``
lines or a JSON object; keys are option names with dashes or underscores.
Options given on the command line take precedence.
"""
import argparse
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from lptscan import io, scan, simulate
from lptscan.errors import InputError, LptError
from lptscan.nullmodel import fit_null
from lptscan.quadform import ChiSquareMixture, pvalue_monte_carlo, pvalue_moment_match
from lptscan.settests import TEST_NAMES
from lptscan.transforms import TRANSFORM_TAGS, TransformKind, apply_transform

TABLE_COLUMNS = ("test", "transform", "error_dist", "alpha_or_effect", "estimate",
                 "std_err", "replicates")
CURVE_COLUMNS = ("test", "transform", "error_dist", "proportion_nonzero", "direction",
                 "link", "beta_magnitude", "power", "std_err", "replicates")
EQUIV_COLUMNS = ("error_dist", "n", "replicates", "mean_diff", "var_diff", "se_mean",
                 "expected_mean")


def _csv(text):
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


def _csv_float(text):
    return tuple(float(x) for x in _csv(text))


def _csv_int(text):
    return tuple(int(x) for x in _csv(text))


def _optional_float(text):
    return None if str(text).lower() in ("", "none", "default") else float(text)


def _dists(text):
    names = _csv(text)
    if names == ("all",):
        return simulate.ERROR_DISTS
    return tuple(simulate.canonical_dist(d) for d in names)


def load_config(path):
    """Read ``key = value`` lines or a JSON object into a dict of strings."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON config ({exc})") from None
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}, line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            raw[key.strip()] = value.strip()
    out = {}
    for key, value in raw.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = "none"
        out[key.replace("-", "_")] = value if isinstance(value, bool) else str(value)
    return out


def _add_common(p):
    p.add_argument("--config", help="key = value or JSON file supplying option defaults")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_test_options(p):
    p.add_argument("--tests", type=_csv, default=TEST_NAMES,
                   help="comma list from Burden,SKAT,QuadForm (default: all)")
    p.add_argument("--transforms", type=_csv, default=TRANSFORM_TAGS,
                   help="comma list from UAT,INT,LPT (default: all)")
    p.add_argument("--bandwidth", default="normal_reference",
                   help="normal_reference, fixed_rate or a positive number")
    p.add_argument("--int-offset", type=float, default=3.0 / 8.0)
    p.add_argument("--gamma", type=_optional_float, default=None,
                   help="ridge parameter for QuadForm (default: mean eigenvalue)")


def _add_sim_options(p):
    p.add_argument("--n", type=int, default=2000, help="sample size")
    p.add_argument("--p", type=int, default=20, help="SNPs per simulated gene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--ld-rho", type=float, default=0.5)
    p.add_argument("--out", help="output TSV (default: stdout)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lptscan",
        description="Variant-set association tests on score-transformed residuals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="test every gene of a gene-set file")
    _add_common(p)
    p.add_argument("--pheno", required=True, help="phenotype/covariate TSV")
    p.add_argument("--geno", required=True, help="genotype TSV or GMX1 file")
    p.add_argument("--genesets", required=True, help="gene_id/snp_id[/weight] TSV")
    p.add_argument("--out", required=True, help="results TSV")
    p.add_argument("--manifest", help="JSON run manifest (default: <out>.json)")
    p.add_argument("--phenotype", default="y", help="phenotype column name")
    p.add_argument("--covariates", type=_csv, default=None,
                   help="covariate columns (default: all other columns)")
    p.add_argument("--maf-min", type=float, default=0.05)
    p.add_argument("--min-snps", type=int, default=6,
                   help="skip genes with fewer SNPs after MAF filtering")
    p.add_argument("--significance", type=float, default=2.5e-6)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--match-threshold", type=float, default=0.95,
                   help="minimum fraction of phenotype ids found in the genotype file")
    _add_test_options(p)

    p = sub.add_parser("simulate-type1", help="empirical type-I error table")
    _add_common(p)
    _add_sim_options(p)
    _add_test_options(p)
    p.add_argument("--dist", type=_dists, default=("StdNormal",),
                   help="comma list of error distributions or 'all'")
    p.add_argument("--replicates", type=int, default=10_000)
    p.add_argument("--alphas", type=_csv_float, default=(0.01,))
    p.add_argument("--reps-per-gene", type=int, default=1000)

    p = sub.add_parser("simulate-power", help="empirical power table")
    _add_common(p)
    _add_sim_options(p)
    _add_test_options(p)
    p.add_argument("--dist", type=_dists, default=("StdNormal",))
    p.add_argument("--replicates", type=int, default=500)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--reps-per-gene", type=int, default=10)
    p.add_argument("--proportion", type=float, default=0.10)
    p.add_argument("--direction", default="Unidirectional")
    p.add_argument("--link", default="Identity")
    p.add_argument("--beta-magnitude", type=_optional_float, default=None,
                   help="effect size (default: the design table)")
    p.add_argument("--beta-scales", type=_csv_float, default=(1.0,),
                   help="multipliers of the effect size, one power row each")
    p.add_argument("--curve-out", help="long-format power-curve TSV")

    p = sub.add_parser("simulate-equivalence",
                       help="difference of the optimal quadratic statistic and SKAT")
    _add_common(p)
    p.add_argument("--dist", type=_dists, default=("StdNormal",))
    p.add_argument("--n-grid", type=_csv_int, default=(500, 2000, 8000))
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ld-rho", type=float, default=0.5)
    p.add_argument("--out")

    p = sub.add_parser("simulate-dataset", help="write a synthetic scan dataset")
    _add_common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--genes", type=int, default=50)
    p.add_argument("--snps-per-gene", type=int, default=10)
    p.add_argument("--causal-genes", type=int, default=0)
    p.add_argument("--dist", default="StdNormal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--format", choices=("tsv", "gmx"), default="tsv")

    p = sub.add_parser("transform", help="write transformed null residuals")
    _add_common(p)
    p.add_argument("--pheno", required=True)
    p.add_argument("--phenotype", default="y")
    p.add_argument("--covariates", type=_csv, default=None)
    p.add_argument("--transform", default="LPT", choices=TRANSFORM_TAGS)
    p.add_argument("--bandwidth", default="normal_reference")
    p.add_argument("--int-offset", type=float, default=3.0 / 8.0)
    p.add_argument("--out")

    p = sub.add_parser("pvalue", help="tail probability of a chi-square mixture")
    _add_common(p)
    p.add_argument("--lambdas", type=_csv_float, required=True)
    p.add_argument("--q", type=_csv_float, required=True)
    p.add_argument("--method", choices=("moment", "montecarlo"), default="moment")
    p.add_argument("--reps", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("compare", help="discovery gains and reproducibility")
    _add_common(p)
    p.add_argument("--main", required=True, help="results TSV of the main run")
    p.add_argument("--validation", help="results TSV of a validation run")
    p.add_argument("--significance", type=float, default=2.5e-6)
    p.add_argument("--validation-significance", type=float, default=0.05)
    p.add_argument("--out", help="discovery-gain TSV (default: stdout)")
    p.add_argument("--repro-out", help="reproducibility TSV (default: stdout)")
    return parser


def _apply_config(parser, command, path):
    """Install config-file values as defaults of the ``command`` subparser."""
    sub = parser._subparsers._group_actions[0].choices[command]
    known = {a.dest: a for a in sub._actions}
    for key, value in load_config(path).items():
        action = known.get(key)
        if action is None or key in ("help", "config"):
            raise InputError(f"{path}: unknown option {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction) and not isinstance(value, bool):
            value = value.lower() in ("1", "true", "yes", "on")
        action.required = False
        sub.set_defaults(**{key: value})


def _config_path(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    return known.command, known.config


def _emit(records, columns, path):
    if path is not None:
        io.write_records(path, records, columns)
        return
    sys.stdout.write("\t".join(columns) + "\n")
    for rec in records:
        sys.stdout.write("\t".join(
            io.format_float(rec[c]) if isinstance(rec[c], (float, np.floating)) else str(rec[c])
            for c in columns
        ) + "\n")


def cmd_scan(args):
    config = scan.ScanConfig(
        maf_min=args.maf_min, transforms=args.transforms, tests=args.tests,
        significance=args.significance, bandwidth=args.bandwidth,
        int_offset=args.int_offset, gamma=args.gamma, threads=args.threads,
        seed=args.seed, min_snps=args.min_snps, phenotype=args.phenotype,
        covariates=args.covariates, match_threshold=args.match_threshold,
    )
    manifest = args.manifest or f"{args.out}.json"
    summary = scan.run_scan(config, args.pheno, args.geno, args.genesets, args.out, manifest)
    counts = summary["counts"]
    print(f"tested {counts['genes_tested']} of {counts['genes_total']} genes; "
          f"{counts['result_rows']} rows written to {args.out}", file=sys.stderr)


def cmd_simulate_type1(args):
    rows = []
    for dist in args.dist:
        rows.extend(simulate.type1_experiment(
            tests=args.tests, transforms=args.transforms, dist=dist, n=args.n,
            replicates=args.replicates, alphas=args.alphas, seed=args.seed, p=args.p,
            reps_per_gene=args.reps_per_gene, workers=args.workers, gamma=args.gamma,
            int_offset=args.int_offset, bandwidth=args.bandwidth, ld_rho=args.ld_rho,
        ))
    _emit(rows, TABLE_COLUMNS, args.out)


def cmd_simulate_power(args):
    rows, curve = [], []
    for dist in args.dist:
        base = args.beta_magnitude
        if base is None:
            base = simulate.default_magnitude(args.proportion, dist)
        for scale in args.beta_scales:
            effect = simulate.EffectConfig(args.proportion, args.direction,
                                           base * scale, args.link)
            part = simulate.power_experiment(
                tests=args.tests, transforms=args.transforms, dist=dist, effect=effect,
                n=args.n, replicates=args.replicates, alpha=args.alpha, seed=args.seed,
                p=args.p, reps_per_gene=args.reps_per_gene, workers=args.workers,
                gamma=args.gamma, int_offset=args.int_offset, bandwidth=args.bandwidth,
                ld_rho=args.ld_rho,
            )
            rows.extend(part)
            for r in part:
                curve.append({
                    "test": r["test"], "transform": r["transform"], "error_dist": dist,
                    "proportion_nonzero": float(effect.proportion_nonzero),
                    "direction": effect.direction, "link": effect.link,
                    "beta_magnitude": float(effect.beta_magnitude),
                    "power": r["estimate"], "std_err": r["std_err"],
                    "replicates": r["replicates"],
                })
    _emit(rows, TABLE_COLUMNS, args.out)
    if args.curve_out:
        io.write_records(args.curve_out, curve, CURVE_COLUMNS)


def cmd_simulate_equivalence(args):
    rows = []
    for dist in args.dist:
        for r in simulate.quad_equivalence_check(dist, args.n_grid, args.replicates,
                                                 args.seed, args.p, args.ld_rho):
            rows.append({"error_dist": dist, "n": r.n, "replicates": r.replicates,
                         "mean_diff": r.mean_diff, "var_diff": r.var_diff,
                         "se_mean": r.se_mean, "expected_mean": r.expected_mean})
    _emit(rows, EQUIV_COLUMNS, args.out)


def cmd_simulate_dataset(args):
    data = simulate.simulate_scan_dataset(
        n=args.n, n_genes=args.genes, snps_per_gene=args.snps_per_gene,
        dist=args.dist, seed=args.seed, causal_genes=args.causal_genes,
        missing_rate=args.missing_rate,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table(out / "pheno.tsv", data.sample_ids, data.y, data.covariates,
                   ["age", "sex"])
    if args.format == "gmx":
        io.write_gmx(out / "geno.gmx", data.codes, data.snp_ids, data.sample_ids)
    else:
        io.write_genotype_tsv(out / "geno.tsv", data.codes, data.snp_ids, data.sample_ids)
    genes = [io.GeneDefinition(g, tuple(ids)) for g, ids in data.genes.items()]
    io.write_genesets(out / "genesets.tsv", genes)


def cmd_transform(args):
    table = io.load_table(args.pheno, args.phenotype,
                          None if args.covariates is None else list(args.covariates))
    fit = fit_null(table.y, table.Z)
    kind = TransformKind.from_tag(args.transform, args.int_offset, args.bandwidth)
    ypsi, model = apply_transform(kind, fit)
    records = [{"sample_id": sid, "residual": float(r), "transformed": float(v)}
               for sid, r, v in zip(table.sample_ids, fit.residuals, ypsi)]
    _emit(records, ("sample_id", "residual", "transformed"), args.out)
    if model is not None:
        print(f"bandwidth {model.bandwidth!r}", file=sys.stderr)


def cmd_pvalue(args):
    mix = ChiSquareMixture(np.asarray(args.lambdas))
    q = np.asarray(args.q)
    if args.method == "moment":
        p = np.atleast_1d(pvalue_moment_match(mix, q))
    else:
        p = np.atleast_1d(pvalue_monte_carlo(mix, q, args.reps, args.seed))
    _emit([{"q": float(a), "pvalue": float(b)} for a, b in zip(q, p)], ("q", "pvalue"), None)


def cmd_compare(args):
    cmp = scan.compare_runs(args.main, args.significance, args.validation,
                            args.validation_significance)
    _emit(cmp.gains, scan.GAIN_COLUMNS, args.out)
    if args.validation:
        _emit(cmp.reproducibility, scan.REPRO_COLUMNS, args.repro_out)


COMMANDS = {
    "scan": cmd_scan,
    "simulate-type1": cmd_simulate_type1,
    "simulate-power": cmd_simulate_power,
    "simulate-equivalence": cmd_simulate_equivalence,
    "simulate-dataset": cmd_simulate_dataset,
    "transform": cmd_transform,
    "pvalue": cmd_pvalue,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, config = _config_path(argv)
        if config and command in COMMANDS:
            _apply_config(parser, command, config)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except LptError as exc:
        print(f"lptscan: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"lptscan: error: {exc}", file=sys.stderr)
        return InputError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
