"""Acceptance criteria, one test each, at their stated tolerances.

Every test records a one-line verdict in ``RESULTS``; ``conftest.py`` prints
them at the end of the session. Run this file directly for just the verdicts:

    python tests/test_acceptance.py
"""
import math
import time

import numpy as np
import pytest

from rtcvae.cli import bench_batch, equicorrelation
from rtcvae.estimators import (
    Discriminator,
    DiscriminatorConfig,
    minibatch_tc,
    permute_dims,
    tc_density_ratio,
    train_discriminator,
)
from rtcvae.gaussian import MultivariateNormal, gaussian_tc, mvn_sample
from rtcvae.metrics import LatentDump, distance_correlation, pairplot_data, sap_score
from rtcvae.nn import Mlp, mlp_gradient
from rtcvae.theory import close_probability, disparity_construct
from rtcvae.vae import ObjectiveConfig, VaeModel, loss_and_grads, make_synthetic_dataset, train
from oracles import AnalyticRatioDiscriminator, central_difference, mc_gaussian_tc, radial_pair, random_spd

RESULTS: dict[str, str] = {}

SIGMA_PRIME = 0.1
BENCH_M = 512
BENCH_SEEDS = range(10)


def record(n: int, ok: bool, detail: str, elapsed: float, limit: float) -> None:
    ok = ok and elapsed < limit
    RESULTS[f"{n:02d}"] = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail}; {elapsed:.1f}s of {limit:g}s)"
    assert ok, RESULTS[f"{n:02d}"]


def bench_median(D, det, M, method, shutdown=0, sigma0=0.0):
    vals = [minibatch_tc(bench_batch(D, det, M, 4 * M, SIGMA_PRIME, s, shutdown, sigma0), method) for s in BENCH_SEEDS]
    return float(np.median(vals))


def bench_truth(D, det):
    return gaussian_tc(equicorrelation(D, det) + SIGMA_PRIME**2 * np.eye(D))


def test_gaussian_tc_matches_monte_carlo():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    ok = True
    for i in range(20):
        S = random_spd(2 + i % 3, rng)
        exact, mc = gaussian_tc(S), mc_gaussian_tc(S, 1_000_000, rng)
        err = abs(exact - mc)
        ok &= err <= max(0.02 * exact, 0.01)
        worst = max(worst, err)
    record(1, ok, f"20 covariances, worst |closed form - MC| = {worst:.4f}", time.perf_counter() - t0, 60)


def test_sample_tc_saturates():
    t0 = time.perf_counter()
    cap = math.log(101.0)
    pts = [disparity_construct(float(t), [SIGMA_PRIME, SIGMA_PRIME]) for t in (1, 2, 4, 8, 16)]
    ok = all(p.tc_sample_gaussian <= cap and p.tc_mean == t for p, t in zip(pts, (1, 2, 4, 8, 16)))
    top = max(p.tc_sample_gaussian for p in pts)
    record(2, ok, f"max sample TC {top:.4f} <= ln 101 = {cap:.4f}, mean TC exact", time.perf_counter() - t0, 1)


@pytest.mark.slow
def test_minibatch_estimator_bench():
    t0 = time.perf_counter()
    dets = [round(0.1 * i, 1) for i in range(1, 11)]
    errs = [abs(bench_median(2, d, BENCH_M, "mss1") - bench_truth(2, d)) for d in dets]
    ok_a = max(errs) <= 0.15

    low = [d for d in dets if bench_truth(10, d) <= 1.0]
    mss = [bench_median(10, d, BENCH_M, "mss1") for d in low]
    mws = [bench_median(10, d, BENCH_M, "mws") for d in low]
    ok_b = bool(low) and min(mss) >= 5 and all(w < s for w, s in zip(mws, mss))

    at_zero = [bench_median(D, 1.0, BENCH_M, "mss1") for D in (2, 3, 5, 10)]
    ok_c = all(a <= b for a, b in zip(at_zero, at_zero[1:]))
    detail = (
        f"(a) max err {max(errs):.3f}; (b) {len(low)} dets, min mss1 {min(mss):.2f}, mws below: {ok_b}; "
        f"(c) mss1 at truth 0 over D: {', '.join(f'{v:.2f}' for v in at_zero)}"
    )
    record(3, ok_a and ok_b and ok_c, detail, time.perf_counter() - t0, 600)


@pytest.mark.slow
def test_mss_asymptotics():
    t0 = time.perf_counter()
    D = 10
    Ms = (128, 512, 2048)
    meds = [bench_median(D, 1.0, M, "mss1") for M in Ms]
    slope = float(np.polyfit(np.log(Ms), meds, 1)[0])
    ok_slope = 0.5 * (D - 1) <= slope <= 1.5 * (D - 1)

    drop = bench_median(D, 1.0, BENCH_M, "mss1") - bench_median(D, 1.0, BENCH_M, "mss1", 1, 1e-3)
    lnM = math.log(BENCH_M)
    ok_drop = 0.5 * lnM <= drop <= 1.5 * lnM
    detail = (
        f"slope {slope:.3f} vs [{0.5 * (D - 1):g}, {1.5 * (D - 1):g}]; "
        f"shutdown drop {drop:.3f} vs [{0.5 * lnM:.3f}, {1.5 * lnM:.3f}]"
    )
    record(4, ok_slope and ok_drop, detail, time.perf_counter() - t0, 900)


def test_close_probability_formula():
    t0 = time.perf_counter()
    x = np.random.default_rng(0).normal(0.0, math.sqrt(2.0), 1_000_000)
    parts, ok = [], True
    for t in (0.1, 0.5, 1.0):
        emp, formula = float(np.mean(np.abs(x) < t)), close_probability(t)
        ok &= abs(emp - formula) <= 1e-2
        parts.append(f"t={t:g}: {emp:.4f} vs {formula:.4f}")
    record(5, ok, "; ".join(parts), time.perf_counter() - t0, 10)


DISPARITY_RUN = dict(epochs=500, batch_size=64)
DISPARITY_DATA = dict(K=2, levels=16, P=64, seed=0)


@pytest.mark.slow
def test_rtc_eliminates_disparity():
    t0 = time.perf_counter()
    ds = make_synthetic_dataset(**DISPARITY_DATA)

    def median_gap(kind, beta):
        gaps = []
        for seed in range(3):
            _, log = train(ds, ObjectiveConfig(kind=kind, beta=beta, seed=seed, latent_dim=4, **DISPARITY_RUN))
            last = log.records[-1]
            gaps.append(abs(last.tc_mean - last.tc_sample))
        return float(np.median(gaps))

    rtc = {b: median_gap("rtc", b) for b in (6.0, 20.0)}
    btc = {b: median_gap("beta-tc", b) for b in (6.0, 20.0, 50.0)}
    ok = all(rtc[b] < 0.1 and rtc[b] < btc[b] for b in rtc) and btc[50.0] > 0.3
    detail = (
        f"rtc gap {rtc[6.0]:.3f} / {rtc[20.0]:.3f} at beta 6 / 20; "
        f"beta-tc {btc[6.0]:.3f} / {btc[20.0]:.3f} / {btc[50.0]:.3f} at beta 6 / 20 / 50"
    )
    record(6, ok, detail, time.perf_counter() - t0, 1800)


def test_sap_worked_numbers():
    t0 = time.perf_counter()
    r = sap_score(np.array([[0.23, 0.17, 0.0, 0.0], [0.97, 1e-4, 0.0, 0.0]]))
    ok = abs(r.gaps[0] - 0.06) < 1e-12 and abs(r.gaps[1] - 0.9699) < 1e-12 and abs(r.aggregate - 0.515) < 1e-3
    detail = f"gaps {r.gaps[0]:.6f}, {r.gaps[1]:.6f}; aggregate {r.aggregate:.5f}"
    record(7, ok, detail, time.perf_counter() - t0, 1)


def test_density_ratio_estimate():
    t0 = time.perf_counter()
    rho = 0.8
    truth = -0.5 * math.log(1 - rho**2)
    C = np.array([[1.0, rho], [rho, 1.0]])
    dist = MultivariateNormal(np.zeros(2), C)
    rng = np.random.default_rng(0)
    oracle = tc_density_ratio(mvn_sample(dist, 100_000, rng), AnalyticRatioDiscriminator(C)).value
    x = mvn_sample(dist, 20_000, rng)
    disc = train_discriminator(x, permute_dims(x, rng), DiscriminatorConfig(), rng)
    trained = tc_density_ratio(mvn_sample(dist, 5_000, rng), disc).value
    ok = abs(oracle - truth) <= 0.02 and abs(trained - truth) <= 0.2
    detail = f"truth {truth:.4f}; analytic ratio {oracle:.4f}; trained {trained:.4f}"
    record(8, ok, detail, time.perf_counter() - t0, 120)


def test_gradients_match_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {}
    for loss in ("logistic", "squared"):
        net = Mlp.init([3, 16, 16, 1], rng)
        x = rng.normal(size=(32, 3))
        y = (rng.random((32, 1)) > 0.5).astype(float) if loss == "logistic" else rng.normal(size=(32, 1))
        _, g = mlp_gradient(net, x, y, loss)
        worst[loss] = central_difference(lambda: mlp_gradient(net, x, y, loss)[0], net.params, g, rng, n_coords=40)
    vae_worst = 0.0
    for kind in ("beta-tc", "rtc", "dip-i", "dip-ii"):
        model = VaeModel.init(6, 3, rng, (12, 12))
        disc = Discriminator.init(3, DiscriminatorConfig(layers=3, hidden_width=8), rng)
        x, eps = rng.normal(size=(8, 6)), rng.normal(size=(8, 3))
        cfg = ObjectiveConfig(kind=kind, beta=4.0, lambda_od=2.0)
        res = loss_and_grads(model, x, eps, cfg, 5.0, disc, 32)
        f = lambda: loss_and_grads(model, x, eps, cfg, 5.0, disc, 32).loss
        vae_worst = max(vae_worst, central_difference(f, model.params, res.grads, rng, n_coords=40, h=1e-6))
    worst["composite-vae"] = vae_worst
    ok = all(v < 1e-4 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(9, ok, f"worst relative error: {detail}", time.perf_counter() - t0, 30)


def test_uncorrelated_but_dependent_pair():
    # the first distance-correlation call JIT-compiles dcor; keep that out of the timing
    distance_correlation(np.arange(8.0), np.arange(8.0) ** 2)
    t0 = time.perf_counter()
    z = radial_pair(5000, np.random.default_rng(0))
    dump = LatentDump(np.zeros((5000, 1)), z, np.ones_like(z), z)
    _, (p,) = pairplot_data(dump, "samples")
    ok = abs(p.corr) <= 0.05 and p.dcor >= 0.2
    record(10, ok, f"corr {p.corr:+.4f}, distance correlation {p.dcor:.4f}", time.perf_counter() - t0, 10)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
