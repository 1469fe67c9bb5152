"""Toy Gaussian-encoder VAE with TC, variance and covariance penalties.

The loss minimised per minibatch is

    recon + kl [+ beta * tc] [+ eta * variance_trace] [+ dip_penalty]

where ``recon`` is the batch mean of ``0.5 * ||x - x_hat||^2`` (unit
variance Gaussian likelihood without its constant) and ``kl`` the closed
form KL of ``N(mu, diag sigma^2)`` to ``N(0, I)``. Gradients are derived by
hand through the reparameterisation ``z = mu + sigma * eps``.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import InvalidConfigurationError, NumericError, TrainingDivergedError
from .estimators import (
    MINIBATCH_METHODS,
    Discriminator,
    DiscriminatorConfig,
    LatentBatch,
    minibatch_tc,
    permute_dims,
)
from .gaussian import empirical_covariance
from .metrics import LatentDump, tc_mean_and_sample
from .nn import Mlp, OptimizerState, optimizer_step, squared_loss

log = logging.getLogger(__name__)

OBJECTIVE_KINDS = ("plain-elbo", "beta-tc", "rtc", "dip-i", "dip-ii")
TC_ESTIMATORS = ("density-ratio",) + MINIBATCH_METHODS
DEGENERATE_TRACE = 1e-8


@dataclass
class FactorDataset:
    factor_values: np.ndarray
    observations: np.ndarray
    generator_seed: int

    @property
    def n(self) -> int:
        return self.observations.shape[0]


def make_synthetic_dataset(K: int, levels: int, P: int, seed: int, hidden: int = 32) -> FactorDataset:
    """Full grid of ``levels**K`` factor settings in [0, 1]^K pushed through a
    fixed random two-layer tanh map to ``P`` standardised coordinates."""
    if K < 1 or levels < 2 or P < K:
        raise InvalidConfigurationError("require K >= 1, levels >= 2, P >= K")
    rng = np.random.default_rng(seed)
    axis = np.linspace(0.0, 1.0, levels)
    factors = np.array(list(itertools.product(axis, repeat=K)), dtype=float)
    w1 = rng.normal(0.0, 3.0, size=(K, hidden))
    b1 = rng.uniform(-1.5, 1.5, size=hidden)
    w2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(hidden, P))
    obs = np.tanh(factors @ w1 + b1) @ w2
    sd = obs.std(axis=0)
    obs = (obs - obs.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    return FactorDataset(factors, obs, seed)


@dataclass
class VaeModel:
    encoder: Mlp
    decoder: Mlp
    latent_dim: int

    @classmethod
    def init(cls, obs_dim: int, latent_dim: int, rng: np.random.Generator, hidden=(64, 64), slope: float = 0.2):
        enc = Mlp.init([obs_dim, *hidden, 2 * latent_dim], rng, slope)
        dec = Mlp.init([latent_dim, *hidden, obs_dim], rng, slope)
        return cls(enc, dec, latent_dim)

    @property
    def params(self) -> list[np.ndarray]:
        return self.encoder.params + self.decoder.params

    def encode(self, x):
        """Return ``(mu, sigma)``."""
        out, _ = self.encoder.forward(np.atleast_2d(x))
        D = self.latent_dim
        return out[:, :D], np.exp(0.5 * out[:, D:])

    def decode(self, z):
        out, _ = self.decoder.forward(np.atleast_2d(z))
        return out


@dataclass
class ObjectiveConfig:
    kind: str = "rtc"
    beta: float = 6.0
    eta_init: float | None = None  # None: max(10, beta) for rtc, else 0
    eta_window: tuple[float, float] = (0.01, 0.04)
    eta_factor: float = 1.2
    tc_estimator: str = "density-ratio"
    lambda_od: float = 10.0
    lambda_d: float | None = None  # None: 10 * lambda_od for dip-i, lambda_od for dip-ii
    batch_size: int = 256
    step_size: float = 1e-3
    epochs: int = 100
    seed: int = 0
    latent_dim: int = 4
    hidden: int = 64
    eval_samples: int = 5000
    dataset_size: int | None = None  # N for mws/mss; None: dataset rows
    disc: DiscriminatorConfig = field(default_factory=lambda: DiscriminatorConfig(layers=3, hidden_width=64))

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise InvalidConfigurationError(f"kind must be one of {OBJECTIVE_KINDS}")
        if self.tc_estimator not in TC_ESTIMATORS:
            raise InvalidConfigurationError(f"tc_estimator must be one of {TC_ESTIMATORS}")
        lo, hi = self.eta_window
        if not lo < hi:
            raise InvalidConfigurationError("eta_window must satisfy low < high")
        if self.eta_factor <= 1:
            raise InvalidConfigurationError("eta_factor must exceed 1")
        if self.beta < 0 or self.lambda_od < 0 or self.batch_size < 2 or self.epochs < 0:
            raise InvalidConfigurationError("invalid objective configuration")
        self.eta_window = (float(lo), float(hi))

    @property
    def eta0(self) -> float:
        if self.eta_init is not None:
            return float(self.eta_init)
        return max(10.0, self.beta) if self.kind == "rtc" else 0.0

    @property
    def lambda_diag(self) -> float:
        if self.lambda_d is not None:
            return float(self.lambda_d)
        return 10.0 * self.lambda_od if self.kind == "dip-i" else self.lambda_od

    @property
    def uses_tc(self) -> bool:
        return self.kind in ("beta-tc", "rtc") and self.beta > 0


def kl_divergence(mu, sigma) -> float:
    """Batch mean of KL(N(mu, diag sigma^2) || N(0, I))."""
    mu = np.atleast_2d(mu)
    s2 = np.atleast_2d(sigma) ** 2
    return float(np.mean(0.5 * np.sum(mu * mu + s2 - 1.0 - np.log(s2), axis=1)))


def elbo_terms(model: VaeModel, x, rng: np.random.Generator) -> tuple[float, float]:
    """(reconstruction error, kl) for one reparameterised draw per row."""
    mu, sigma = model.encode(x)
    z = mu + sigma * rng.standard_normal(mu.shape)
    recon, _ = squared_loss(model.decode(z), x)
    return recon, kl_divergence(mu, sigma)


def variance_trace(stddevs) -> float:
    """Batch mean of ``sum_k sigma_k^2``: trace of the expected encoder covariance."""
    s = np.atleast_2d(stddevs)
    value = float(np.mean(np.sum(s * s, axis=1)))
    if value < DEGENERATE_TRACE:
        log.warning("encoder variance trace %.3g: model is effectively deterministic", value)
    return value


def eta_schedule(current_trace: float, eta: float, window, factor: float, restart: float = 0.0) -> float:
    """Multiply ``eta`` by ``factor`` above the window, zero it below.

    An ``eta`` already switched off restarts from ``restart`` when the trace
    climbs above the window again (``restart=0`` keeps it off).
    """
    low, high = window
    if not low < high or factor <= 1:
        raise ValueError("require window low < high and factor > 1")
    if current_trace > high:
        return (eta if eta > 0 else restart) * factor
    if current_trace < low:
        return 0.0
    return eta


def covariance_penalty(cov, lambda_od: float, lambda_d: float) -> float:
    c = np.atleast_2d(cov)
    off = c - np.diag(np.diag(c))
    return float(lambda_od * np.sum(off * off) + lambda_d * np.sum((np.diag(c) - 1.0) ** 2))


def _covariance_penalty_grad(x, lambda_od, lambda_d):
    """Penalty on the sample covariance of rows of ``x`` and its gradient."""
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (n - 1)
    g = 2.0 * lambda_od * cov
    np.fill_diagonal(g, 2.0 * lambda_d * (np.diag(cov) - 1.0))
    return covariance_penalty(cov, lambda_od, lambda_d), 2.0 * xc @ g / (n - 1)


def dip_penalty(means, samples, variant: str, lambda_od: float, lambda_d: float) -> float:
    """DIP covariance penalty on the batch covariance of means (``dip-i``)
    or of sampled latents (``dip-ii``)."""
    if variant == "dip-i":
        x = means
    elif variant == "dip-ii":
        x = samples
    else:
        raise ValueError(f"unknown DIP variant {variant!r}")
    return covariance_penalty(empirical_covariance(x), lambda_od, lambda_d)


@dataclass
class ObjectiveTerms:
    recon: float
    kl: float


def assemble_objective(
    terms: ObjectiveTerms,
    config: ObjectiveConfig,
    tc_estimate: float = 0.0,
    variance_trace_value: float = 0.0,
    dip_value: float = 0.0,
    eta: float | None = None,
) -> float:
    """Loss to minimise (the negated lower bound) for ``config.kind``."""
    loss = terms.recon + terms.kl
    if config.kind in ("beta-tc", "rtc"):
        loss += config.beta * tc_estimate
    if config.kind == "rtc":
        loss += (config.eta0 if eta is None else eta) * variance_trace_value
    if config.kind in ("dip-i", "dip-ii"):
        loss += dip_value
    return loss


@dataclass
class StepResult:
    loss: float
    recon: float
    kl: float
    tc: float
    trace: float
    dip: float
    grads: list
    z: np.ndarray


def loss_and_grads(model: VaeModel, x, eps, config: ObjectiveConfig, eta: float = 0.0,
                   disc: Discriminator | None = None, dataset_size: int | None = None) -> StepResult:
    """Composite loss on one minibatch with fixed noise ``eps`` and exact gradients
    with respect to ``model.params`` (encoder then decoder)."""
    x = np.atleast_2d(x)
    B, D = x.shape[0], model.latent_dim
    enc_out, enc_cache = model.encoder.forward(x)
    mu, logvar = enc_out[:, :D], enc_out[:, D:]
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * eps

    dec_out, dec_cache = model.decoder.forward(z)
    recon, drecon = squared_loss(dec_out, x)
    dec_grads, dz = model.decoder.backward(dec_cache, drecon)

    s2 = sigma * sigma
    kl = float(np.mean(0.5 * np.sum(mu * mu + s2 - 1.0 - logvar, axis=1)))
    dmu = mu / B
    dlogvar = 0.5 * (s2 - 1.0) / B
    dsigma = np.zeros_like(sigma)

    tc = 0.0
    if config.uses_tc:
        if config.tc_estimator == "density-ratio":
            if disc is None:
                raise ValueError("density-ratio estimator needs a discriminator")
            tc, dz_tc = disc.log_ratio_and_grad(z)
            dz = dz + config.beta * dz_tc
        else:
            batch = LatentBatch(mu, sigma, z, max(dataset_size or B, B))
            tc, dz_tc, dmu_tc, ds_tc = minibatch_tc(batch, config.tc_estimator, with_grad=True)
            dz = dz + config.beta * dz_tc
            dmu = dmu + config.beta * dmu_tc
            dsigma += config.beta * ds_tc

    trace = float(np.mean(np.sum(s2, axis=1)))
    if config.kind == "rtc":
        dlogvar = dlogvar + eta * s2 / B

    dip = 0.0
    if config.kind in ("dip-i", "dip-ii"):
        target = mu if config.kind == "dip-i" else z
        dip, dx = _covariance_penalty_grad(target, config.lambda_od, config.lambda_diag)
        if config.kind == "dip-i":
            dmu = dmu + dx
        else:
            dz = dz + dx

    loss = assemble_objective(ObjectiveTerms(recon, kl), config, tc, trace, dip, eta)

    dmu = dmu + dz
    dsigma += dz * eps
    dlogvar = dlogvar + 0.5 * dsigma * sigma
    enc_grads, _ = model.encoder.backward(enc_cache, np.hstack([dmu, dlogvar]))
    return StepResult(loss, recon, kl, tc, trace, dip, enc_grads + dec_grads, z)


@dataclass
class EpochRecord:
    epoch: int
    recon: float
    kl: float
    tc_sample: float
    tc_mean: float
    var_trace: float
    eta: float
    loss: float


TRAINLOG_COLUMNS = tuple(f.name for f in fields(EpochRecord))


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=TRAINLOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.records:
            w.writerow({k: (v if isinstance(v, int) else repr(float(v))) for k, v in asdict(r).items()})
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="")

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        recs = [
            EpochRecord(int(r["epoch"]), *(float(r[c]) for c in TRAINLOG_COLUMNS[1:]))
            for r in rows
        ]
        return cls(recs)


def encode_dump(model: VaeModel, dataset: FactorDataset, rng: np.random.Generator, rows=None) -> LatentDump:
    idx = np.arange(dataset.n) if rows is None else np.asarray(rows)
    mu, sigma = model.encode(dataset.observations[idx])
    z = mu + sigma * rng.standard_normal(mu.shape)
    return LatentDump(dataset.factor_values[idx], mu, sigma, z)


def _safe_tc(dump: LatentDump) -> tuple[float, float]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            return tc_mean_and_sample(dump)
        except ValueError:
            return float("nan"), float("nan")


def train(dataset: FactorDataset, config: ObjectiveConfig):
    """Train a VAE on ``dataset``. Returns ``(model, TrainLog)``.

    Per epoch: shuffle, one optimiser step per minibatch (plus one
    discriminator step when the density-ratio estimator is active), then one
    ``eta_schedule`` update from the epoch-mean variance trace (rtc only) and
    TC_mean / TC_sample on up to ``eval_samples`` encoded rows.
    """
    if dataset.n < 2:
        raise InvalidConfigurationError("dataset must have at least 2 rows")
    rng = np.random.default_rng(config.seed)
    model = VaeModel.init(dataset.observations.shape[1], config.latent_dim, rng, (config.hidden, config.hidden))
    opt = OptimizerState.for_params(model.params, "adam", config.step_size)
    disc = None
    if config.uses_tc and config.tc_estimator == "density-ratio":
        disc = Discriminator.init(config.latent_dim, config.disc, rng)
    eval_rows = np.sort(rng.permutation(dataset.n)[: min(config.eval_samples, dataset.n)])
    eval_rng = np.random.default_rng([config.seed, 1])
    n_data = config.dataset_size or dataset.n
    bs = min(config.batch_size, dataset.n)
    eta = config.eta0
    trainlog = TrainLog()

    for epoch in range(config.epochs):
        order = rng.permutation(dataset.n)
        sums = np.zeros(5)
        steps = 0
        for start in range(0, dataset.n, bs):
            idx = order[start:start + bs]
            if len(idx) < 2:
                continue
            x = dataset.observations[idx]
            eps = rng.standard_normal((len(idx), config.latent_dim))
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    res = loss_and_grads(model, x, eps, config, eta, disc, n_data)
            except NumericError as exc:
                raise TrainingDivergedError(epoch, "non-finite gradient") from exc
            if not np.isfinite(res.loss):
                raise TrainingDivergedError(epoch)
            optimizer_step(opt, model.params, res.grads)
            if disc is not None:
                try:
                    disc.step(res.z, permute_dims(res.z, rng))
                except TrainingDivergedError as exc:
                    raise TrainingDivergedError(epoch, "discriminator loss is not finite") from exc
            sums += (res.recon, res.kl, res.trace, res.loss, res.tc)
            steps += 1
        recon, kl, trace, loss, _ = sums / steps
        try:
            with np.errstate(over="ignore", under="ignore"):
                dump = encode_dump(model, dataset, eval_rng, eval_rows)
        except ValueError as exc:
            raise TrainingDivergedError(epoch, "encoder produced a non-positive scale") from exc
        tc_m, tc_s = _safe_tc(dump)
        trainlog.records.append(EpochRecord(epoch, recon, kl, tc_s, tc_m, trace, eta, loss))
        if config.kind == "rtc":
            eta = eta_schedule(trace, eta, config.eta_window, config.eta_factor, restart=config.eta0)
    return model, trainlog
