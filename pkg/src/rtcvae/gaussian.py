"""Multivariate normal utilities and the closed-form Gaussian total correlation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientDataError,
    InvalidCovarianceError,
    InvalidDistributionError,
    SingularCovarianceError,
    ZeroVarianceError,
)

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10
SINGULAR_TOL = 1e-12
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MultivariateNormal:
    """N(mean, covariance); covariance may be singular but must be PSD."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise InvalidDistributionError(
                f"mean shape {mean.shape} incompatible with covariance shape {cov.shape}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidDistributionError("non-finite parameters")
        scale = max(float(np.max(np.abs(cov))), np.finfo(float).tiny)
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL * scale:
            raise InvalidDistributionError("covariance is not symmetric")
        eig = np.linalg.eigvalsh(cov)
        if eig[0] < -PSD_TOL * max(eig[-1], 0.0):
            raise InvalidDistributionError(
                f"covariance is indefinite (smallest eigenvalue {eig[0]:.3g})"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def _symmetric_factor(cov: np.ndarray) -> np.ndarray:
    # eigen-clipped factor A with A A^T = cov; handles singular PSD input
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def mvn_sample(dist: MultivariateNormal, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows from ``dist``.

    Uses an eigen-clipped symmetric factorization, so singular covariances
    (e.g. perfectly correlated components) are sampled exactly on their
    support.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    factor = _symmetric_factor(dist.covariance)
    eps = rng.standard_normal((n, dist.dim))
    return dist.mean + eps @ factor.T


def mvn_logpdf(dist: MultivariateNormal, point) -> np.ndarray | float:
    """Exact log density at ``point`` (a vector, or a matrix of row vectors)."""
    try:
        chol = np.linalg.cholesky(dist.covariance)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance is not positive definite") from exc
    if np.any(np.diag(chol) <= 0):
        raise SingularCovarianceError("covariance is not positive definite")
    x = np.asarray(point, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    sol = np.linalg.solve(chol, (x - dist.mean).T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (maha + logdet + dist.dim * LOG_2PI)
    return float(out[0]) if single else out


def gaussian_tc(covariance, singular_tol: float = SINGULAR_TOL) -> float:
    """Total correlation of N(0, covariance).

    Evaluates ``0.5 * (sum(log diag) - log det)`` through the correlation
    matrix, so the result is scale-free. Returns ``inf`` when the
    determinant is at most ``singular_tol`` times the product of the
    diagonal entries.
    """
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    diag = np.diag(cov)
    if np.any(~(diag > 0)):
        raise InvalidCovarianceError("covariance diagonal must be strictly positive")
    if cov.shape[0] == 1:
        return 0.0
    inv_sd = 1.0 / np.sqrt(diag)
    corr = cov * inv_sd[:, None] * inv_sd[None, :]
    np.fill_diagonal(corr, 1.0)
    try:
        chol = np.linalg.cholesky(corr)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    except np.linalg.LinAlgError:
        return float("inf")
    if not np.isfinite(logdet) or logdet <= np.log(singular_tol):
        return float("inf")
    # correlation logdet is <= 0; clip rounding noise on (near) diagonal input
    return max(0.0, -0.5 * logdet)


def empirical_covariance(samples) -> np.ndarray:
    """Unbiased sample covariance (divisor n - 1) of row samples."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError("need at least 2 rows to estimate a covariance")
    centered = x - x.mean(axis=0)
    return centered.T @ centered / (x.shape[0] - 1)


def correlation_from_covariance(cov) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    diag = np.diag(cov)
    bad = np.flatnonzero(~(diag > 0))
    if bad.size:
        raise ZeroVarianceError(int(bad[0]))
    inv_sd = 1.0 / np.sqrt(diag)
    corr = cov * inv_sd[:, None] * inv_sd[None, :]
    np.fill_diagonal(corr, 1.0)
    return corr
