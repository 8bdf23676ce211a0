"""File formats: phenotype tables, genotype matrices, gene sets and results.

Genotypes come either as a TSV (rows = samples) or as the packed GMX1
binary layout::

    b"GMX1" | u32 n | u32 p | p NUL-terminated SNP ids | n rows of codes

Each row holds ``ceil(p / 4)`` bytes of 2-bit codes, least significant
bits first: ``00/01/10`` are 0/1/2 and ``11`` is missing. A column is read
by striding over rows of a memory map, so a gene never touches the full
matrix. GMX1 carries no sample ids; they live in an optional sidecar
``<file>.samples`` with one id per line.
"""
from collections import OrderedDict
import csv
from dataclasses import dataclass
import math
from pathlib import Path
import struct
import warnings

import numpy as np

from lptscan.errors import (
    BadMagic,
    InputError,
    MissingColumn,
    ParseError,
    SchemaMismatch,
    TruncatedFile,
    UnknownSNP,
)
from lptscan.nullmodel import GenotypeBlock, add_intercept, allele_frequency

GMX_MAGIC = b"GMX1"
MISSING_CODE = 3
NA_TOKENS = frozenset({"NA", "na", "NaN", "nan", "", "."})
RESULT_COLUMNS = ("gene_id", "test", "transform", "statistic", "pvalue", "p_used", "flags")


def format_float(x):
    """Shortest round-tripping text for a float."""
    return repr(float(x))


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty", path=path) from None
        rows = [row for row in reader if row]
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, found {len(row)}", path=path, row=i
            )
    return header, rows


def _parse_float(text, path, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as a number", path, row, column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {text!r}", path, row, column)
    return value


# -- phenotype / covariates ---------------------------------------------------


@dataclass(frozen=True)
class PhenotypeTable:
    sample_ids: list
    y: np.ndarray
    Z: np.ndarray
    covariate_names: list

    @property
    def n(self):
        return self.y.shape[0]

    def subset(self, index):
        index = np.asarray(index)
        return PhenotypeTable(
            [self.sample_ids[i] for i in index], self.y[index], self.Z[index],
            self.covariate_names,
        )


def load_table(path, phenotype="y", covariates=None):
    """Read a phenotype TSV: sample id first, then numeric columns.

    ``covariates`` selects columns by name (default: every column other
    than the id and the phenotype). The intercept is prepended.
    """
    header, rows = _read_rows(path)
    if len(header) < 2:
        raise MissingColumn(f"{path}: need a sample id column and a phenotype column")
    names = header[1:]
    if phenotype not in names:
        raise MissingColumn(f"{path}: phenotype column {phenotype!r} not found")
    if covariates is None:
        covariates = [c for c in names if c != phenotype]
    missing = [c for c in covariates if c not in names]
    if missing:
        raise MissingColumn(f"{path}: covariate columns not found: {', '.join(missing)}")
    wanted = [phenotype, *covariates]
    col = {name: header.index(name) for name in wanted}
    values = np.empty((len(rows), len(wanted)))
    ids = []
    for i, row in enumerate(rows):
        ids.append(row[0])
        for j, name in enumerate(wanted):
            values[i, j] = _parse_float(row[col[name]], path, i + 1, name)
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate sample ids", path=path)
    return PhenotypeTable(ids, values[:, 0], add_intercept(values[:, 1:]), list(covariates))


def write_table(path, sample_ids, y, covariates=None, names=None, phenotype="y"):
    """Write a phenotype TSV that :func:`load_table` reads back exactly."""
    y = np.asarray(y, dtype=np.float64)
    cov = np.empty((y.shape[0], 0)) if covariates is None else np.asarray(covariates, dtype=np.float64)
    if cov.ndim == 1:
        cov = cov[:, None]
    if names is None:
        names = [f"x{j + 1}" for j in range(cov.shape[1])]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(["sample_id", phenotype, *names])
        for i, sid in enumerate(sample_ids):
            out.writerow([sid, format_float(y[i]), *(format_float(v) for v in cov[i])])


# -- genotypes ---------------------------------------------------------------


def impute_mean(codes):
    """Replace NaNs by their column mean; all-missing columns become 0."""
    codes = np.array(codes, dtype=np.float64)
    if not np.isnan(codes).any():
        return codes
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-missing columns
        means = np.nanmean(codes, axis=0)
    means = np.where(np.isnan(means), 0.0, means)
    rows, cols = np.nonzero(np.isnan(codes))
    codes[rows, cols] = means[cols]
    return codes


class GenotypeSource:
    """Column-oriented access to a genotype matrix.

    Subclasses provide :meth:`raw_columns`, returning codes with NaN for
    missing entries.
    """

    sample_ids = None
    snp_ids = ()

    def __init__(self):
        self._index = {sid: j for j, sid in enumerate(self.snp_ids)}
        if len(self._index) != len(self.snp_ids):
            raise ParseError("duplicate SNP ids in genotype file")

    @property
    def n(self):
        raise NotImplementedError

    @property
    def p(self):
        return len(self.snp_ids)

    def column_index(self, snp_ids):
        try:
            return [self._index[s] for s in snp_ids]
        except KeyError as exc:
            raise UnknownSNP(f"SNP {exc.args[0]!r} not in genotype file") from None

    def raw_columns(self, snp_ids, rows=None):
        raise NotImplementedError

    def block(self, snp_ids, rows=None):
        """Mean-imputed :class:`GenotypeBlock`; MAF from observed codes."""
        raw = self.raw_columns(snp_ids, rows)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mafs = allele_frequency(raw)
        return GenotypeBlock(impute_mean(raw), list(snp_ids), mafs)


class TsvGenotypes(GenotypeSource):
    """Genotype TSV: header ``sample_id snp1 snp2 ...``, codes 0/1/2/NA."""

    def __init__(self, path):
        header, rows = _read_rows(path)
        self.path = path
        self.snp_ids = header[1:]
        self.sample_ids = [row[0] for row in rows]
        codes = np.empty((len(rows), len(self.snp_ids)))
        for i, row in enumerate(rows):
            for j, cell in enumerate(row[1:]):
                if cell in NA_TOKENS:
                    codes[i, j] = np.nan
                elif cell in ("0", "1", "2"):
                    codes[i, j] = float(cell)
                else:
                    raise ParseError(f"genotype code {cell!r} not in 0/1/2/NA",
                                     path, i + 1, self.snp_ids[j])
        self._codes = codes
        super().__init__()

    @property
    def n(self):
        return self._codes.shape[0]

    def raw_columns(self, snp_ids, rows=None):
        cols = self._codes[:, self.column_index(snp_ids)]
        return cols if rows is None else cols[rows]


class GmxGenotypes(GenotypeSource):
    """Memory-mapped reader for the packed GMX1 layout."""

    def __init__(self, path, sample_ids=None):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            head = fh.read(12)
            if len(head) < 4 or head[:4] != GMX_MAGIC:
                raise BadMagic(f"{path}: not a GMX1 file")
            if len(head) < 12:
                raise TruncatedFile(f"{path}: header is truncated")
            n, p = struct.unpack("<II", head[4:12])
            ids = []
            buf = bytearray()
            while len(ids) < p:
                ch = fh.read(1)
                if not ch:
                    raise TruncatedFile(f"{path}: SNP id block is truncated")
                if ch == b"\0":
                    ids.append(buf.decode("utf-8"))
                    buf.clear()
                else:
                    buf += ch
            offset = fh.tell()
        self._n = n
        self.row_bytes = (p + 3) // 4
        size = self.path.stat().st_size
        if size < offset + n * self.row_bytes:
            raise TruncatedFile(
                f"{path}: expected {n * self.row_bytes} code bytes, found {size - offset}"
            )
        self.snp_ids = ids
        self._data = (
            np.memmap(self.path, dtype=np.uint8, mode="r", offset=offset,
                      shape=(n, self.row_bytes))
            if n * self.row_bytes > 0 else np.zeros((n, self.row_bytes), dtype=np.uint8)
        )
        if sample_ids is None:
            sidecar = Path(str(self.path) + ".samples")
            if sidecar.exists():
                sample_ids = [line.strip() for line in sidecar.read_text().splitlines()
                              if line.strip()]
        if sample_ids is not None and len(sample_ids) != n:
            raise InputError(f"{path}: {len(sample_ids)} sample ids for {n} rows")
        self.sample_ids = None if sample_ids is None else list(sample_ids)
        super().__init__()

    @property
    def n(self):
        return self._n

    def raw_columns(self, snp_ids, rows=None):
        idx = self.column_index(snp_ids)
        data = self._data if rows is None else self._data[rows]
        out = np.empty((data.shape[0], len(idx)))
        for k, j in enumerate(idx):
            code = (data[:, j // 4] >> (2 * (j % 4))) & 0b11
            col = code.astype(np.float64)
            col[code == MISSING_CODE] = np.nan
            out[:, k] = col
        return out


def write_gmx(path, codes, snp_ids, sample_ids=None):
    """Write a 0/1/2 matrix (NaN = missing) as GMX1, plus the id sidecar."""
    codes = np.asarray(codes, dtype=np.float64)
    n, p = codes.shape
    if len(snp_ids) != p:
        raise InputError("snp_ids length does not match columns")
    packed = np.where(np.isnan(codes), MISSING_CODE, codes)
    if not np.all(np.isin(packed, (0, 1, 2, MISSING_CODE))):
        raise InputError("genotype codes must be 0, 1, 2 or NaN")
    packed = packed.astype(np.uint8)
    row_bytes = (p + 3) // 4
    padded = np.zeros((n, row_bytes * 4), dtype=np.uint8)
    padded[:, :p] = packed
    quads = padded.reshape(n, row_bytes, 4)
    body = quads[..., 0] | (quads[..., 1] << 2) | (quads[..., 2] << 4) | (quads[..., 3] << 6)
    with open(path, "wb") as fh:
        fh.write(GMX_MAGIC)
        fh.write(struct.pack("<II", n, p))
        for sid in snp_ids:
            fh.write(sid.encode("utf-8") + b"\0")
        fh.write(np.ascontiguousarray(body, dtype=np.uint8).tobytes())
    if sample_ids is not None:
        Path(str(path) + ".samples").write_text("".join(f"{s}\n" for s in sample_ids))


def write_genotype_tsv(path, codes, snp_ids, sample_ids):
    codes = np.asarray(codes, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(["sample_id", *snp_ids])
        for sid, row in zip(sample_ids, codes):
            out.writerow([sid, *("NA" if np.isnan(v) else str(int(v)) for v in row)])


def load_genotypes(path):
    """Open a genotype file, choosing the reader from its first bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == GMX_MAGIC:
        return GmxGenotypes(path)
    if head[:3] == b"GMX":
        raise BadMagic(f"{path}: unsupported GMX version {head!r}")
    return TsvGenotypes(path)


# -- gene sets ---------------------------------------------------------------


@dataclass(frozen=True)
class GeneDefinition:
    gene_id: str
    snp_ids: tuple
    weights: tuple | None = None

    def __post_init__(self):
        if not self.snp_ids:
            raise InputError(f"gene {self.gene_id!r} has no SNPs")
        if self.weights is not None and len(self.weights) != len(self.snp_ids):
            raise InputError(f"gene {self.gene_id!r}: weights do not match SNPs")


def load_genesets(path):
    """Long-format gene sets: columns ``gene_id``, ``snp_id`` and optionally ``weight``.

    Genes keep the order of their first appearance.
    """
    header, rows = _read_rows(path)
    for name in ("gene_id", "snp_id"):
        if name not in header:
            raise MissingColumn(f"{path}: column {name!r} not found")
    gi, si = header.index("gene_id"), header.index("snp_id")
    wi = header.index("weight") if "weight" in header else None
    genes = OrderedDict()
    for i, row in enumerate(rows, start=1):
        snps, weights = genes.setdefault(row[gi], ([], []))
        if row[si] in snps:
            raise ParseError(f"SNP {row[si]!r} listed twice for gene {row[gi]!r}",
                             path, i, "snp_id")
        snps.append(row[si])
        if wi is not None:
            weights.append(_parse_float(row[wi], path, i, "weight"))
    return [
        GeneDefinition(gene, tuple(snps), tuple(weights) if wi is not None else None)
        for gene, (snps, weights) in genes.items()
    ]


def write_genesets(path, genes):
    with_weights = any(g.weights is not None for g in genes)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(["gene_id", "snp_id", "weight"] if with_weights else ["gene_id", "snp_id"])
        for g in genes:
            for k, snp in enumerate(g.snp_ids):
                row = [g.gene_id, snp]
                if with_weights:
                    row.append(format_float(1.0 if g.weights is None else g.weights[k]))
                out.writerow(row)


# -- results -----------------------------------------------------------------


def format_flags(flags):
    return ",".join(sorted(flags)) if flags else "."


def write_results(path, rows):
    """Write ``(gene_id, TestResult)`` pairs in the given order."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(RESULT_COLUMNS)
        for gene_id, res in rows:
            out.writerow([
                gene_id, res.test, res.transform, format_float(res.statistic),
                format_float(res.pvalue), res.p_used, format_flags(res.flags),
            ])


def read_results(path):
    header, rows = _read_rows(path)
    if tuple(header) != RESULT_COLUMNS:
        raise SchemaMismatch(f"{path}: unexpected results header {header}")
    out = []
    for i, row in enumerate(rows, start=1):
        rec = dict(zip(header, row))
        rec["statistic"] = float(rec["statistic"])
        rec["pvalue"] = _parse_float(rec["pvalue"], path, i, "pvalue")
        rec["p_used"] = int(rec["p_used"])
        rec["flags"] = frozenset() if rec["flags"] == "." else frozenset(rec["flags"].split(","))
        out.append(rec)
    return out


def write_records(path, records, columns):
    """TSV of dict records; floats written with :func:`format_float`."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(columns)
        for rec in records:
            out.writerow([
                format_float(rec[c]) if isinstance(rec[c], (float, np.floating)) else rec[c]
                for c in columns
            ])
