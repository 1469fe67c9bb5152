"""Constructive checks of the mean/sample TC disparity.

The disparity instances are two-dimensional: a Gaussian for the encoder
means plus independent Gaussian encoder noise with fixed per-dimension
standard deviations. Everything here is closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import gaussian_tc

# The singular mean covariance used for the infinite-TC instance.
SINGULAR_MEAN_COV = np.array([[1.0, 0.1], [0.1, 0.01]])


@dataclass(frozen=True)
class DisparityInstance:
    mean_cov: np.ndarray
    conditional_std: np.ndarray
    tc_mean: float
    tc_sample_gaussian: float

    @property
    def sample_cov(self) -> np.ndarray:
        return self.mean_cov + np.diag(self.conditional_std**2)


def theorem1_bound_shape(c1: float, c2: float, D: int) -> float:
    """Shape of the upper bound on TC(z) with the unknown constant set to 1.

    ``(c3/c1)**D * log(c2/c1) + (c3/c1)**(D+2)`` with ``c3 = max(c2, sqrt(D))``.
    Only the dependence on ``c1``, ``c2`` and ``D`` is meaningful.
    """
    if not 0 < c1 <= c2:
        raise ValueError("require 0 < c1 <= c2")
    c3 = max(c2, math.sqrt(D))
    ratio = c3 / c1
    return ratio**D * math.log(c2 / c1) + ratio ** (D + 2)


def gaussian_tc_cap(conditional_std, diag_variances) -> float:
    """Upper bound on TC(z) for z = mu + N(0, diag s^2), any mean correlation.

    ``det(Sigma + S) >= det(S)`` for PSD ``Sigma`` and diagonal ``S``, so
    TC(z) <= 0.5 * sum log((v_j + s_j^2) / s_j^2). ``conditional_std`` may be
    a scalar or one value per dimension. The bound is not tight for D >= 2.
    """
    v = np.asarray(diag_variances, dtype=float)
    s2 = np.broadcast_to(np.asarray(conditional_std, dtype=float) ** 2, v.shape)
    if np.any(s2 <= 0) or np.any(v <= 0):
        raise ValueError("conditional_std and diag_variances must be positive")
    return 0.5 * float(np.sum(np.log1p(v / s2)))


def disparity_construct(target_tc_mean: float, sigma_prime) -> DisparityInstance:
    """Build a 2-D mean covariance with the requested TC and add encoder noise.

    Finite targets use unit variances with correlation
    ``rho = sqrt(1 - exp(-2 T))``; ``tc_mean`` is then exactly ``T``. An
    infinite target returns the singular matrix ``[[1, .1], [.1, .01]]``.
    """
    sp = np.asarray(sigma_prime, dtype=float)
    if sp.shape != (2,) or np.any(sp <= 0):
        raise ValueError("sigma_prime must be two positive numbers")
    if target_tc_mean < 0 or math.isnan(target_tc_mean):
        raise ValueError("target must be non-negative")
    if math.isinf(target_tc_mean):
        mean_cov = SINGULAR_MEAN_COV.copy()
        tc_mean = float("inf")
    else:
        rho = math.sqrt(-math.expm1(-2.0 * target_tc_mean))
        mean_cov = np.array([[1.0, rho], [rho, 1.0]])
        # closed form; gaussian_tc of the rounded matrix loses digits once 1 - rho^2 ~ 1e-14
        tc_mean = float(target_tc_mean)
    tc_sample = gaussian_tc(mean_cov + np.diag(sp**2))
    return DisparityInstance(mean_cov, sp, tc_mean, tc_sample)


def close_probability(t: float) -> float:
    """Disk formula ``sqrt(1 - exp(-t^2 / 4))`` for P(|x| < t), x ~ N(0, 2).

    Squaring P(|x| < t) gives the mass of the square [-t, t]^2 under a 2-D
    isotropic Gaussian; this formula integrates over the inscribed disk
    instead, so it is a strict lower bound on the probability. Compare
    :func:`close_probability_exact`.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    return math.sqrt(-math.expm1(-t * t / 4.0))


def close_probability_exact(t: float) -> float:
    """P(|x| < t) for x ~ N(0, 2), which is erf(t / 2)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return math.erf(t / 2.0)
