"""Sufficient statistics from individual-level data or GWAS summaries.

File formats
------------
Individual data
    Comma-separated text. An optional first line ``# bayesmr.individual v1``
    declares the format version; the header names the columns
    ``G1,...,GJ,X,Y``.
Summary records
    JSON document ``{"schema": "bayesmr.summary", "version": 1,
    "allele_copies": 2, "variants": [...], "obs_assoc": b, "obs_n": n}``.
    Each variant has ``eaf, beta_gx, se_gx, n_gx, beta_gy, se_gy, n_gy``.
Sufficient statistics
    JSON document ``{"schema": "bayesmr.suffstats", "version": 1, "mean",
    "cov", "n_obs", "eaf", "allele_copies", "meta"}``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._validation import check_rows
from .sem import GenotypeSpec, SufficientStats

logger = logging.getLogger(__name__)

INDIVIDUAL_TAG = "# bayesmr.individual v1"
SUMMARY_SCHEMA = "bayesmr.summary"
STATS_SCHEMA = "bayesmr.suffstats"
FORMAT_VERSION = 1
PSD_FLOOR = -1e-8


class DataFormatError(ValueError):
    """Malformed or inconsistent input data."""


def column_names(J: int) -> list[str]:
    return [f"G{j + 1}" for j in range(J)] + ["X", "Y"]


def stats_from_individual(rows, spec: Optional[GenotypeSpec] = None,
                          allele_copies: int = 2, names: Optional[Sequence[str]] = None
                          ) -> SufficientStats:
    """Moments of an ``(N, J+2)`` table with columns ``G_1..G_J, X, Y``.

    Rows with any missing value are dropped (complete-case analysis) and the
    count is stored in ``meta["n_dropped"]``. The covariance uses denominator
    ``N``. X and Y are centered; the removed means are kept in
    ``meta["offsets"]``. Genotype columns are left uncentered. Without
    ``spec`` the allele frequencies are estimated from the genotype means.
    """
    data = check_rows(rows)
    complete = ~np.isnan(data).any(axis=1)
    n_dropped = int((~complete).sum())
    data = data[complete]
    if n_dropped:
        logger.info("dropped %d incomplete rows", n_dropped)
    N, p = data.shape
    J = p - 2
    names = list(names) if names is not None else column_names(J)
    if N < 2:
        raise DataFormatError(f"at least two complete rows are required, got {N}")

    if spec is not None:
        if spec.J != J:
            raise DataFormatError(f"genotype spec has J={spec.J} but data has {J} variants")
        allele_copies = spec.allele_copies
    g = data[:, :J]
    if np.any((g < 0) | (g > allele_copies) | (g != np.round(g))):
        raise DataFormatError(f"genotype columns must hold integers in 0..{allele_copies}")

    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / N
    zero = np.flatnonzero(np.diag(cov) <= 0)
    if zero.size:
        raise DataFormatError("zero-variance column(s): " + ", ".join(names[i] for i in zero))

    if spec is None:
        spec = GenotypeSpec(mean[:J] / allele_copies, allele_copies)
    offsets = mean[J:].copy()
    mean[J:] = 0.0
    meta = {"offsets": {"X": float(offsets[0]), "Y": float(offsets[1])},
            "n_dropped": n_dropped, "source": "individual"}
    return SufficientStats(mean, cov, N, spec, meta)


def stats_from_covariance(cov, n_obs: int, eaf, allele_copies: int = 2,
                          mean=None) -> SufficientStats:
    """Wrap a published covariance matrix of ``(G, X, Y)``.

    The genotype means default to ``n * eaf`` and the X, Y means to zero.
    """
    spec = GenotypeSpec(eaf, allele_copies)
    if mean is None:
        mean = np.concatenate([spec.mean, [0.0, 0.0]])
    return SufficientStats(mean, np.asarray(cov, dtype=float), n_obs, spec,
                           {"source": "covariance"})


@dataclass(frozen=True)
class VariantSummary:
    """Per-variant GWAS associations for the exposure (gx) and outcome (gy)."""

    eaf: float
    beta_gx: float
    se_gx: float
    n_gx: int
    beta_gy: float
    se_gy: float
    n_gy: int

    def __post_init__(self):
        if not 0 < self.eaf < 1:
            raise DataFormatError(f"eaf must lie in (0, 1), got {self.eaf}")
        if not (self.se_gx > 0 and self.se_gy > 0):
            raise DataFormatError("standard errors must be positive")
        if self.n_gx < 2 or self.n_gy < 2:
            raise DataFormatError("sample sizes must be at least 2")
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                raise DataFormatError(f"{f.name} must be finite")


@dataclass(frozen=True)
class SummaryRecord:
    """Summary statistics of one study: variants plus the observational slope."""

    variants: tuple
    obs_assoc: Optional[float]
    obs_n: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))
        if not self.variants:
            raise DataFormatError("at least one variant is required")
        if self.obs_assoc is None:
            raise DataFormatError("the exposure-outcome association obs_assoc is required")
        if not np.isfinite(self.obs_assoc):
            raise DataFormatError("obs_assoc must be finite")
        if self.obs_n is not None and self.obs_n < 2:
            raise DataFormatError("obs_n must be at least 2")


def stats_from_summary(record: SummaryRecord, allele_copies: int = 2) -> SufficientStats:
    """Reconstruct moments of ``(G, X, Y)`` from summary statistics.

    Genotypes are binomial with the reported frequencies and mutually
    independent. Each variant yields one estimate of Var(X) and Var(Y); the
    averages are used. The sample size is the smallest one reported.
    """
    v = record.variants
    J = len(v)
    f = np.array([r.eaf for r in v])
    spec = GenotypeSpec(f, allele_copies)
    var_g = spec.variance
    gx = np.array([r.beta_gx for r in v])
    gy = np.array([r.beta_gy for r in v])
    se_gx = np.array([r.se_gx for r in v])
    se_gy = np.array([r.se_gy for r in v])
    n_gx = np.array([r.n_gx for r in v], dtype=float)
    n_gy = np.array([r.n_gy for r in v], dtype=float)

    var_x_each = var_g * (gx ** 2 + n_gx * se_gx ** 2)
    var_y_each = var_g * (gy ** 2 + n_gy * se_gy ** 2)
    var_x = float(var_x_each.mean())
    var_y = float(var_y_each.mean())

    cov = np.zeros((J + 2, J + 2))
    cov[np.arange(J), np.arange(J)] = var_g
    cov[:J, J] = cov[J, :J] = var_g * gx
    cov[:J, J + 1] = cov[J + 1, :J] = var_g * gy
    cov[J, J] = var_x
    cov[J + 1, J + 1] = var_y
    cov[J, J + 1] = cov[J + 1, J] = var_x * record.obs_assoc

    cov = _check_psd(cov)
    sizes = [r.n_gx for r in v] + [r.n_gy for r in v]
    if record.obs_n is not None:
        sizes.append(record.obs_n)
    mean = np.concatenate([spec.mean, [spec.mean @ gx, spec.mean @ gy]])
    meta = {"source": "summary",
            "var_x_per_variant": var_x_each.tolist(),
            "var_y_per_variant": var_y_each.tolist()}
    return SufficientStats(mean, cov, int(min(sizes)), spec, meta)


def _check_psd(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    low = float(vals.min())
    if low < PSD_FLOOR:
        raise DataFormatError(
            f"reconstructed covariance is not positive semidefinite "
            f"(minimum eigenvalue {low:.3g})")
    if low < 0:
        warnings.warn(f"clipping slightly negative eigenvalue {low:.3g} to zero",
                      RuntimeWarning, stacklevel=3)
        cov = (vecs * np.maximum(vals, 0.0)) @ vecs.T
        cov = 0.5 * (cov + cov.T)
    return cov


# ---------------------------------------------------------------- file I/O


def write_individual(path, rows) -> None:
    rows = np.asarray(rows, dtype=float)
    J = rows.shape[1] - 2
    with open(path, "w") as fh:
        fh.write(INDIVIDUAL_TAG + "\n")
        fh.write(",".join(column_names(J)) + "\n")
        np.savetxt(fh, rows, delimiter=",", fmt="%.10g")


def read_individual(path) -> np.ndarray:
    """Read an individual-level table; empty cells and ``NA`` become NaN."""
    with open(path) as fh:
        first = fh.readline().strip()
        if first.startswith("#"):
            if first != INDIVIDUAL_TAG:
                raise DataFormatError(f"unsupported individual-data format line: {first!r}")
            header = fh.readline().strip()
        else:
            header = first
        names = [h.strip() for h in header.split(",")]
        J = len(names) - 2
        if J < 1 or names != column_names(J):
            raise DataFormatError(
                f"header must be G1..GJ,X,Y; got {','.join(names)}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty body is reported below
            rows = np.genfromtxt(fh, delimiter=",", missing_values=("", "NA"),
                                 filling_values=np.nan, dtype=float, ndmin=2)
    if rows.size == 0:
        raise DataFormatError("no data rows")
    if rows.shape[1] != J + 2:
        raise DataFormatError(f"expected {J + 2} columns, got {rows.shape[1]}")
    return rows


def _check_keys(doc: dict, allowed: set, required: set, what: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise DataFormatError(f"unknown field(s) in {what}: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise DataFormatError(f"missing field(s) in {what}: {sorted(missing)}")


def _check_header(doc: dict, schema: str) -> None:
    if doc.get("schema") != schema:
        raise DataFormatError(f"expected schema {schema!r}, got {doc.get('schema')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise DataFormatError(f"unsupported {schema} version {doc.get('version')!r}")


_VARIANT_KEYS = {f.name for f in fields(VariantSummary)}


def summary_from_dict(doc: dict) -> tuple[SummaryRecord, int]:
    _check_header(doc, SUMMARY_SCHEMA)
    _check_keys(doc, {"schema", "version", "allele_copies", "variants", "obs_assoc", "obs_n"},
                {"schema", "version", "variants", "obs_assoc"}, "summary document")
    variants = []
    for i, v in enumerate(doc["variants"]):
        _check_keys(v, _VARIANT_KEYS, _VARIANT_KEYS, f"variant {i}")
        variants.append(VariantSummary(**v))
    record = SummaryRecord(variants, doc["obs_assoc"], doc.get("obs_n"))
    return record, int(doc.get("allele_copies", 2))


def summary_to_dict(record: SummaryRecord, allele_copies: int = 2) -> dict:
    doc = {"schema": SUMMARY_SCHEMA, "version": FORMAT_VERSION,
           "allele_copies": allele_copies,
           "variants": [asdict(v) for v in record.variants],
           "obs_assoc": record.obs_assoc}
    if record.obs_n is not None:
        doc["obs_n"] = record.obs_n
    return doc


def read_summary(path) -> tuple[SummaryRecord, int]:
    with open(path) as fh:
        return summary_from_dict(json.load(fh))


def write_summary(path, record: SummaryRecord, allele_copies: int = 2) -> None:
    with open(path, "w") as fh:
        json.dump(summary_to_dict(record, allele_copies), fh, indent=2)


def stats_to_dict(stats: SufficientStats) -> dict:
    return {"schema": STATS_SCHEMA, "version": FORMAT_VERSION,
            "mean": stats.mean.tolist(), "cov": stats.cov.tolist(),
            "n_obs": stats.n_obs, "eaf": stats.genotype_spec.eaf.tolist(),
            "allele_copies": stats.genotype_spec.allele_copies,
            "meta": _jsonable(stats.meta)}


def stats_from_dict(doc: dict) -> SufficientStats:
    _check_header(doc, STATS_SCHEMA)
    keys = {"schema", "version", "mean", "cov", "n_obs", "eaf", "allele_copies", "meta"}
    _check_keys(doc, keys, keys - {"meta", "allele_copies"}, "suffstats document")
    spec = GenotypeSpec(doc["eaf"], doc.get("allele_copies", 2))
    return SufficientStats(np.asarray(doc["mean"], dtype=float),
                           np.asarray(doc["cov"], dtype=float), doc["n_obs"], spec,
                           dict(doc.get("meta", {})))


def write_stats(path, stats: SufficientStats) -> None:
    with open(path, "w") as fh:
        json.dump(stats_to_dict(stats), fh, indent=2)


def read_stats(path) -> SufficientStats:
    with open(path) as fh:
        return stats_from_dict(json.load(fh))


def load_stats(path) -> SufficientStats:
    """Sufficient statistics from a ``.json`` document or an individual-data file."""
    if Path(path).suffix.lower() == ".json":
        return read_stats(path)
    return stats_from_individual(read_individual(path))


def summary_from_individual(rows, allele_copies: int = 2) -> SummaryRecord:
    """Per-variant simple regressions and OLS standard errors of a complete table.

    Used to build synthetic summary records from simulated data.
    """
    data = check_rows(rows, allow_nan=False)
    N, p = data.shape
    J = p - 2
    c = np.cov(data, rowvar=False, bias=True)
    variants = []
    for j in range(J):
        var_g = c[j, j]
        est = []
        for col in (J, J + 1):
            slope = c[j, col] / var_g
            resid = (c[col, col] - slope * c[j, col]) * N / (N - 2)
            est.append((slope, float(np.sqrt(resid / (N * var_g)))))
        f = data[:, j].mean() / allele_copies
        variants.append(VariantSummary(float(f), float(est[0][0]), est[0][1], N,
                                       float(est[1][0]), est[1][1], N))
    obs = float(c[J, J + 1] / c[J, J])
    return SummaryRecord(variants, obs, N)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
