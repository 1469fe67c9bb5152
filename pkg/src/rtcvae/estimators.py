"""Minibatch and classifier-based total correlation estimators.

All minibatch estimators share one computation: for a batch of encoder
outputs ``(mu_j, sigma_j)`` and samples ``z_i`` build

    L[i, j, k] = log N(z_ik; mu_jk, sigma_jk^2)

then estimate ``E[log q(z)]`` with a log-sum-exp over ``j`` of
``log_w[i, j] + sum_k L[i, j, k]`` and each marginal with a log-sum-exp of
``log_w[i, j] + L[i, j, k]``. The estimators differ only in ``log_w``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidConfigurationError, ShapeError, TrainingDivergedError
from .nn import Mlp, OptimizerState, logistic_loss, optimizer_step

METHODS = ("naive-mc", "mws", "mss0", "mss1", "density-ratio", "closed-form")
MINIBATCH_METHODS = ("naive-mc", "mws", "mss0", "mss1")
RATIO_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
# bound on chunk_rows * M * D for the (i, j, k) tensor
_CHUNK_ELEMENTS = 2_000_000


@dataclass
class LatentBatch:
    means: np.ndarray
    stddevs: np.ndarray
    samples: np.ndarray
    dataset_size: int

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.stddevs = np.asarray(self.stddevs, dtype=float)
        self.samples = np.asarray(self.samples, dtype=float)
        if self.means.ndim != 2:
            raise ShapeError("means must be an M x D matrix")
        if self.stddevs.shape != self.means.shape or self.samples.shape != self.means.shape:
            raise ShapeError("means, stddevs and samples must share one M x D shape")
        if np.any(~(self.stddevs > 0)):
            raise ValueError("stddevs must be strictly positive")
        if not self.dataset_size >= self.batch_size >= 2:
            raise InvalidConfigurationError(
                f"need dataset_size >= batch size >= 2, got N={self.dataset_size}, M={self.batch_size}"
            )

    @property
    def batch_size(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class TcEstimate:
    method: str
    value: float
    batch_size: int
    dimension: int
    seed: int | None = None


def log_importance_weight_matrix(M: int, N: int, variant: str = "mss1") -> np.ndarray:
    """Log stratified-sampling weights for a batch of ``M`` drawn from ``N``.

    Row ``i`` weights the kernels ``q(z_i | n_j)``. With ``m = M - 1``:

    ``mss1``: ``W[i, i] = 1/N``, ``W[i, (i+1) % M] = (N-m)/(N m)``, all
    other entries ``1/m``. Every row sums to one.

    ``mss0``: the placement of the original beta-TCVAE code, which writes
    through the flattened matrix with stride ``M``::

        W.view(-1)[::M] = 1/N          # column 0
        W.view(-1)[1::M] = (N-m)/(N m) # column 1
        W[M-2, 0] = (N-m)/(N m)

    so column 0 carries ``1/N``, column 1 the stratum weight, and row
    ``M-2`` has the stratum weight twice (that row does not sum to one).
    """
    if variant not in ("mss0", "mss1"):
        raise ValueError(f"unknown variant {variant!r}")
    if not 2 <= M <= N:
        raise InvalidConfigurationError(f"require 2 <= M <= N, got M={M}, N={N}")
    m = M - 1
    strat = (N - m) / (N * m)
    W = np.full((M, M), 1.0 / m)
    if variant == "mss1":
        idx = np.arange(M)
        W[idx, idx] = 1.0 / N
        W[idx, (idx + 1) % M] = strat
    else:
        flat = W.reshape(-1)
        flat[::M] = 1.0 / N
        flat[1::M] = strat
        W[m - 1, 0] = strat
    with np.errstate(divide="ignore"):
        return np.log(W)


def _log_weights(method: str, M: int, N: int):
    """(joint log-weights, marginal log-weights, additive offset)."""
    if method == "naive-mc":
        lw = np.full((M, M), -math.log(M))
        return lw, lw, 0.0
    if method == "mws":
        # -log(NM) on the joint mixture and once on the product of marginal
        # mixtures; the two offsets cancel, so both use zero log-weights
        lw = np.zeros((M, M))
        return lw, lw, 0.0
    if method in ("mss0", "mss1"):
        lw = log_importance_weight_matrix(M, N, method)
        return lw, lw, 0.0
    raise ValueError(f"unknown minibatch method {method!r}")


def minibatch_tc(batch: LatentBatch, method: str, with_grad: bool = False):
    """Shared minibatch estimator. Returns the value, or
    ``(value, dsamples, dmeans, dstddevs)`` when ``with_grad`` is set."""
    z, mu, s = batch.samples, batch.means, batch.stddevs
    M, D = z.shape
    lw_joint, lw_marg, offset = _log_weights(method, M, batch.dataset_size)
    chunk = max(1, _CHUNK_ELEMENTS // max(1, M * D))
    log_s = np.log(s)
    total = 0.0
    if with_grad:
        dz = np.zeros_like(z)
        dmu = np.zeros_like(mu)
        ds = np.zeros_like(s)
    for start in range(0, M, chunk):
        rows = slice(start, min(M, start + chunk))
        u = (z[rows, None, :] - mu[None, :, :]) / s[None, :, :]
        L = -0.5 * u * u - log_s[None, :, :] - _HALF_LOG_2PI
        a = lw_joint[rows] + L.sum(axis=2)
        b = lw_marg[rows, :, None] + L
        joint = logsumexp(a, axis=1)
        marg = logsumexp(b, axis=1)
        total += float(np.sum(joint) - np.sum(marg))
        if with_grad:
            P = np.exp(a - joint[:, None])
            Q = np.exp(b - marg[:, None, :])
            G = (P[:, :, None] - Q) / M
            Gu = G * u / s[None, :, :]
            dz[rows] -= Gu.sum(axis=1)
            dmu += Gu.sum(axis=0)
            ds += (G * (u * u - 1.0)).sum(axis=0) / s
    value = total / M + offset
    if with_grad:
        return value, dz, dmu, ds
    return value


def tc_naive_mc(batch: LatentBatch, seed: int | None = None) -> TcEstimate:
    """Uniform 1/M mixture for the joint and every marginal."""
    return TcEstimate("naive-mc", minibatch_tc(batch, "naive-mc"), batch.batch_size, batch.dim, seed)


def tc_mws(batch: LatentBatch, seed: int | None = None) -> TcEstimate:
    """Minibatch weighted sampling.

    The joint term is ``mean_i [log sum_j q(z_i|n_j) - log(NM)]``. The
    product of marginals is estimated as one mixture,
    ``mean_i [log prod_k sum_j q(z_ik|n_j) - log(NM)]``, so the ``log(NM)``
    terms cancel and the estimate equals the naive one minus
    ``(D - 1) log M``.
    """
    return TcEstimate("mws", minibatch_tc(batch, "mws"), batch.batch_size, batch.dim, seed)


def tc_mss(batch: LatentBatch, variant: str = "mss1", seed: int | None = None) -> TcEstimate:
    if variant not in ("mss0", "mss1"):
        raise ValueError(f"unknown variant {variant!r}")
    return TcEstimate(variant, minibatch_tc(batch, variant), batch.batch_size, batch.dim, seed)


def asymptotic_mss_prediction(D: int, M: int, shutdown_dims: int = 0) -> float:
    """Order-of-magnitude prediction ``(D - 1 - s) * ln M`` for near-zero true TC."""
    if D < 1 or M < 2 or not 0 <= shutdown_dims < max(D, 1):
        raise ValueError("require D >= 1, M >= 2, 0 <= shutdown_dims < D")
    return max(0.0, (D - 1 - shutdown_dims) * math.log(M))


def permute_dims(samples, rng: np.random.Generator) -> np.ndarray:
    """Shuffle every column independently (samples from the product of marginals)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError("samples must be a non-empty matrix")
    out = np.empty_like(x)
    for k in range(x.shape[1]):
        out[:, k] = x[rng.permutation(x.shape[0]), k]
    return out


@dataclass(frozen=True)
class DiscriminatorConfig:
    layers: int = 4
    hidden_width: int = 128
    slope: float = 0.2
    steps: int = 2000
    step_size: float = 1e-3
    batch_size: int = 256

    def __post_init__(self):
        if self.layers < 1 or self.hidden_width < 1 or self.step_size <= 0 or self.batch_size < 1:
            raise InvalidConfigurationError(f"invalid discriminator config {self}")

    @classmethod
    def large(cls, **overrides) -> "DiscriminatorConfig":
        """Six linear layers of 1000 units, the FactorVAE discriminator size."""
        return replace(cls(layers=6, hidden_width=1000), **overrides)

    def widths(self, dim: int) -> list[int]:
        return [dim] + [self.hidden_width] * (self.layers - 1) + [1]


class Discriminator:
    """Binary classifier: joint samples (label 1) vs. dimension-shuffled (label 0)."""

    def __init__(self, net: Mlp, config: DiscriminatorConfig):
        self.net = net
        self.config = config
        self.opt = OptimizerState.for_params(net.params, "adam", config.step_size)

    @classmethod
    def init(cls, dim: int, config: DiscriminatorConfig, rng: np.random.Generator) -> "Discriminator":
        return cls(Mlp.init(config.widths(dim), rng, config.slope), config)

    @property
    def dim(self) -> int:
        return self.net.widths[0]

    def logits(self, z) -> np.ndarray:
        out, _ = self.net.forward(np.atleast_2d(z))
        return out[:, 0]

    def probs(self, z) -> np.ndarray:
        return 0.5 * (1.0 + np.tanh(0.5 * self.logits(z)))

    def step(self, joint, shuffled) -> float:
        x = np.vstack([joint, shuffled])
        y = np.concatenate([np.ones(len(joint)), np.zeros(len(shuffled))])
        out, cache = self.net.forward(x)
        value, dout = logistic_loss(out, y[:, None])
        if not np.isfinite(value):
            raise TrainingDivergedError(self.opt.t, "discriminator loss is not finite")
        grads, _ = self.net.backward(cache, dout)
        optimizer_step(self.opt, self.net.params, grads)
        return value

    def accuracy(self, joint, shuffled) -> float:
        hits = np.sum(self.logits(joint) > 0) + np.sum(self.logits(shuffled) <= 0)
        return float(hits) / (len(joint) + len(shuffled))

    def log_ratio_and_grad(self, z):
        """Mean clamped log-ratio over rows of ``z`` and its gradient w.r.t. ``z``."""
        out, cache = self.net.forward(z)
        bound = math.log((1.0 - RATIO_EPS) / RATIO_EPS)
        logit = out[:, 0]
        inside = np.abs(logit) < bound
        value = float(np.mean(np.clip(logit, -bound, bound)))
        dout = (inside / len(z))[:, None].astype(float)
        _, dz = self.net.backward(cache, dout)
        return value, dz


def train_discriminator(joint, shuffled, config: DiscriminatorConfig, rng: np.random.Generator) -> Discriminator:
    joint = np.asarray(joint, dtype=float)
    shuffled = np.asarray(shuffled, dtype=float)
    if joint.shape != shuffled.shape or joint.ndim != 2:
        raise ShapeError("joint and shuffled must be matrices of one shape")
    disc = Discriminator.init(joint.shape[1], config, rng)
    n = joint.shape[0]
    bs = min(config.batch_size, n)
    for _ in range(config.steps):
        i = rng.integers(0, n, size=bs)
        j = rng.integers(0, n, size=bs)
        disc.step(joint[i], shuffled[j])
    return disc


def tc_density_ratio(samples, disc, seed: int | None = None) -> TcEstimate:
    """Mean of ``log(D(z) / (1 - D(z)))`` with ``D`` clamped to ``[eps, 1 - eps]``.

    ``disc`` is anything with a ``probs(z)`` method returning P(joint | z).
    """
    z = np.atleast_2d(np.asarray(samples, dtype=float))
    if getattr(disc, "dim", z.shape[1]) != z.shape[1]:
        raise ShapeError("discriminator input width does not match samples")
    p = np.clip(disc.probs(z), RATIO_EPS, 1.0 - RATIO_EPS)
    value = float(np.mean(np.log(p) - np.log1p(-p)))
    return TcEstimate("density-ratio", value, z.shape[0], z.shape[1], seed)
