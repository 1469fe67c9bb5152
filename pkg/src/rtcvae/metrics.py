"""Disentanglement diagnostics on encoded latents.

Scores are computed per (factor, latent) pair and summarised by the gap
between the two best latents of each factor: SAP uses R^2 of a simple
linear fit, MIG uses entropy-normalised discrete mutual information.
"""
from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.metrics import mutual_info_score

from .errors import DegenerateDumpError, InvalidFactorError
from .gaussian import correlation_from_covariance, empirical_covariance, gaussian_tc

log = logging.getLogger(__name__)

DEFAULT_BINS = 20


@dataclass
class LatentDump:
    factors: np.ndarray
    means: np.ndarray
    stddevs: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        self.factors = np.atleast_2d(np.asarray(self.factors, dtype=float))
        self.means = np.asarray(self.means, dtype=float)
        self.stddevs = np.asarray(self.stddevs, dtype=float)
        self.samples = np.asarray(self.samples, dtype=float)
        n = self.means.shape[0]
        if self.factors.shape[0] != n:
            raise ValueError("factor and latent row counts differ")
        if self.stddevs.shape != self.means.shape or self.samples.shape != self.means.shape:
            raise ValueError("means, stddevs and samples must share one shape")
        if np.any(~(self.stddevs > 0)):
            raise ValueError("stddevs must be strictly positive")

    @property
    def n(self) -> int:
        return self.means.shape[0]

    def latents(self, use: str) -> np.ndarray:
        if use == "means":
            return self.means
        if use == "samples":
            return self.samples
        raise ValueError(f"use must be 'means' or 'samples', got {use!r}")


def latent_dump_csv(dump: LatentDump) -> str:
    """Dump as CSV text: ``factor_*``, ``mu_*``, ``sigma_*``, ``z_*`` columns."""
    K, D = dump.factors.shape[1], dump.means.shape[1]
    header = (
        [f"factor_{k}" for k in range(K)]
        + [f"mu_{d}" for d in range(D)]
        + [f"sigma_{d}" for d in range(D)]
        + [f"z_{d}" for d in range(D)]
    )
    rows = np.hstack([dump.factors, dump.means, dump.stddevs, dump.samples])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([repr(float(v)) for v in row] for row in rows)
    return buf.getvalue()


def write_latent_dump(path, dump: LatentDump) -> None:
    Path(path).write_text(latent_dump_csv(dump), encoding="utf-8", newline="")


def read_latent_dump(path) -> LatentDump:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    cols = {name: i for i, name in enumerate(header)}

    def block(prefix):
        idx = sorted((int(n[len(prefix):]), i) for n, i in cols.items() if n.startswith(prefix))
        return data[:, [i for _, i in idx]] if data.size else np.empty((0, len(idx)))

    return LatentDump(block("factor_"), block("mu_"), block("sigma_"), block("z_"))


def _tc_of_columns(x: np.ndarray, label: str) -> float:
    var = x.var(axis=0)
    keep = var > 0
    if not np.all(keep):
        warnings.warn(
            f"dropping zero-variance {label} columns {np.flatnonzero(~keep).tolist()} from TC",
            RuntimeWarning,
            stacklevel=3,
        )
    if keep.sum() < 2:
        raise DegenerateDumpError(f"fewer than 2 usable {label} columns")
    corr = correlation_from_covariance(empirical_covariance(x[:, keep]))
    return gaussian_tc(corr)


def tc_mean_and_sample(dump: LatentDump) -> tuple[float, float]:
    """Gaussian TC of the correlation matrices of means and of samples."""
    if dump.n < 2:
        raise DegenerateDumpError("need at least 2 rows")
    return _tc_of_columns(dump.means, "mean"), _tc_of_columns(dump.samples, "sample")


@dataclass
class MetricReport:
    kind: str
    scores: np.ndarray  # K x D
    top1: np.ndarray
    top2: np.ndarray
    gaps: np.ndarray
    aggregate: float

    def rows(self):
        for k, (a, b, g) in enumerate(zip(self.top1, self.top2, self.gaps)):
            yield {"factor": k, "top1": float(a), "top2": float(b), "gap": float(g)}


def _gap_report(scores, kind: str) -> MetricReport:
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    if s.shape[1] < 2:
        raise ValueError("need at least 2 latent dimensions")
    ordered = np.sort(s, axis=1)[:, ::-1]
    top1, top2 = ordered[:, 0], ordered[:, 1]
    gaps = top1 - top2
    return MetricReport(kind, s, top1, top2, gaps, float(np.mean(gaps)))


def r2_matrix(dump: LatentDump, use: str = "means") -> np.ndarray:
    """R^2 of the simple linear fit of each factor on each latent (= corr^2)."""
    if dump.n < 3:
        raise ValueError("need at least 3 rows")
    f = dump.factors - dump.factors.mean(axis=0)
    z = dump.latents(use) - dump.latents(use).mean(axis=0)
    fv = np.sum(f * f, axis=0)
    zv = np.sum(z * z, axis=0)
    if np.any(fv <= 0):
        raise InvalidFactorError(f"factor {int(np.flatnonzero(fv <= 0)[0])} has zero variance")
    cov = f.T @ z
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = cov**2 / (fv[:, None] * zv[None, :])
    r2[:, zv <= 0] = 0.0
    return np.clip(r2, 0.0, 1.0)


def sap_score(r2) -> MetricReport:
    return _gap_report(r2, "sap")


def discretize(x: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width histogram bin index per column over the column's range."""
    lo, hi = x.min(axis=0), x.max(axis=0)
    width = np.where(hi > lo, hi - lo, 1.0)
    idx = np.floor((x - lo) / width * bins).astype(int)
    return np.clip(idx, 0, bins - 1)


def mi_matrix(dump: LatentDump, use: str = "means", bins: int = DEFAULT_BINS) -> np.ndarray:
    """Plug-in mutual information between factors and binned latents,
    divided by each factor's entropy (nats)."""
    if bins < 2:
        raise ValueError("bins must be at least 2")
    z = dump.latents(use)
    codes = discretize(z, bins)
    constant = z.max(axis=0) <= z.min(axis=0)
    K, D = dump.factors.shape[1], z.shape[1]
    out = np.zeros((K, D))
    for k in range(K):
        f = np.unique(dump.factors[:, k], return_inverse=True)[1]  # integer level codes
        h = mutual_info_score(f, f)
        if h <= 0:
            raise InvalidFactorError(f"factor {k} is constant")
        for d in range(D):
            if not constant[d]:
                out[k, d] = mutual_info_score(f, codes[:, d]) / h
    return np.clip(out, 0.0, 1.0)


def mig_score(mi) -> MetricReport:
    return _gap_report(mi, "mig")


@dataclass
class PairSummary:
    i: int
    j: int
    corr: float
    dcor: float


def distance_correlation(x, y) -> float:
    import dcor

    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    return float(dcor.distance_correlation(x, y, method="avl"))


def pairplot_data(dump: LatentDump, use: str = "samples", pairs=None):
    """Scatter table and dependence statistics for latent pairs.

    Returns ``(points, summaries)``: ``points`` is an ``n x 2P`` array with
    columns ``(z_i, z_j)`` per pair, ``summaries`` one :class:`PairSummary`
    per pair holding the Pearson and distance correlation.
    """
    z = dump.latents(use)
    D = z.shape[1]
    if pairs is None:
        pairs = [(i, j) for i in range(D) for j in range(i + 1, D)]
    cols, summaries = [], []
    for i, j in pairs:
        if not (0 <= i < D and 0 <= j < D):
            raise IndexError(f"pair ({i}, {j}) out of range for {D} latents")
        a, b = z[:, i], z[:, j]
        corr = float(np.corrcoef(a, b)[0, 1]) if a.std() > 0 and b.std() > 0 else 0.0
        summaries.append(PairSummary(i, j, corr, distance_correlation(a, b)))
        cols.extend((a, b))
    points = np.column_stack(cols) if cols else np.empty((z.shape[0], 0))
    return points, summaries
