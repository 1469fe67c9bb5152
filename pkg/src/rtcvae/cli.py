"""Command-line experiment runner. Every subcommand writes CSV tables.

    rtcvae estimator-bench --dims 2,10 --dets 0.1,0.5,1 --seeds 0-9 --out bench.csv
    rtcvae disparity-demo --sigma-prime 0.1,1 --out disparity.csv
    rtcvae shutdown-demo --dims 10 --batch-size 512 --out shutdown.csv
    rtcvae train --objective rtc,beta-tc --beta 6 --seeds 0-2 --out runs/
    rtcvae metrics runs/dump_rtc_b6_s0.csv --out runs/metrics/

Table outputs go to ``--out`` (a file, stdout when omitted); ``train`` and
``metrics`` write several files into the ``--out`` directory. A ``--config``
file holds flat ``key = value`` lines named like the long flags; explicit
flags take precedence over it.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import bisect

from .errors import InfeasibleGridError, InvalidConfigurationError
from .estimators import MINIBATCH_METHODS, LatentBatch, asymptotic_mss_prediction, minibatch_tc
from .gaussian import MultivariateNormal, gaussian_tc, mvn_sample
from .metrics import (
    DEFAULT_BINS,
    latent_dump_csv,
    mi_matrix,
    mig_score,
    pairplot_data,
    r2_matrix,
    read_latent_dump,
    sap_score,
    tc_mean_and_sample,
)
from .theory import disparity_construct, gaussian_tc_cap
from .vae import ObjectiveConfig, encode_dump, make_synthetic_dataset, train

BENCH_COLUMNS = ("D", "det", "truth", "method", "median_estimate", "iqr")
DISPARITY_COLUMNS = (
    "target", "sigma_prime_0", "sigma_prime_1", "tc_mean", "tc_sample",
    "tc_mean_empirical", "tc_sample_empirical", "cap",
)
SHUTDOWN_COLUMNS = ("D", "batch_size", "sigma0", "shutdown_dims", "method", "median_estimate", "iqr", "prediction")
SUMMARY_COLUMNS = ("objective", "beta", "seed", "epochs", "tc_mean", "tc_sample", "gap", "final_eta", "final_var_trace")
METRIC_COLUMNS = ("metric", "factor", "top1", "top2", "gap")

DEFAULT_DETS = tuple(round(0.1 * i, 1) for i in range(1, 11))
DEFAULT_DIMS = (2, 3, 5, 10)
DEFAULT_TARGETS = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, math.inf)
DEFAULT_SIGMA0 = (0.001, 0.01, 0.1)


# ----------------------------------------------------------------- parsing


def parse_list(text, cast=float) -> list:
    if isinstance(text, (list, tuple)):
        return [cast(v) for v in text]
    return [cast(v) for v in str(text).replace(" ", "").split(",") if v]


def parse_seeds(text) -> list[int]:
    """``"0-9"``, ``"0,3,5"`` or a mix such as ``"0-2,7"``."""
    if isinstance(text, (list, tuple)):
        return [int(s) for s in text]
    seeds: list[int] = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise InvalidConfigurationError("seed list is empty")
    return seeds


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file. ``#`` starts a comment; keys may use ``-`` or ``_``."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


@dataclass
class ExperimentSpec:
    command: str
    params: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str | None = None

    def __post_init__(self):
        if not self.seeds:
            raise InvalidConfigurationError("seed list is empty")

    def get(self, key, default=None, cast=None):
        v = self.params.get(key)
        if v is None:
            return default
        return cast(v) if cast else v


# ----------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def emit(text: str, out) -> None:
    if out in (None, "", "-"):
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")


def _median_iqr(values) -> tuple[float, float]:
    q1, med, q3 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
    return float(med), float(q3 - q1)


# ----------------------------------------------------------------- benches


def equicorrelation(D: int, det: float) -> np.ndarray:
    """Unit-diagonal matrix with constant correlation ``rho >= 0`` and determinant ``det``.

    ``det(rho) = (1 - rho)^(D-1) (1 + (D-1) rho)`` falls from 1 at ``rho = 0``
    to 0 at ``rho = 1``; ``rho`` is found by bisection.
    """
    if D < 2:
        raise InfeasibleGridError(f"need D >= 2, got {D}")
    if not 0.0 < det <= 1.0:
        raise InfeasibleGridError(f"det {det} is outside the feasible range (0, 1] for D = {D}")
    if det == 1.0:
        return np.eye(D)
    f = lambda r: (1.0 - r) ** (D - 1) * (1.0 + (D - 1) * r) - det
    rho = bisect(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    S = np.full((D, D), rho)
    np.fill_diagonal(S, 1.0)
    return S


def bench_batch(D: int, det: float, M: int, N: int, sigma_prime: float, seed: int,
                shutdown: int = 0, sigma0: float = 0.0) -> LatentBatch:
    """Means ``mu ~ N(0, Sigma)``, constant ``sigma = sigma_prime``, ``z = mu + sigma eps``.

    The first ``shutdown`` mean dimensions are rescaled to standard deviation
    ``sigma0``. With ``shutdown = 0`` the batch is exactly the estimator-bench one.
    """
    if not 0 <= shutdown < D:
        raise InvalidConfigurationError("require 0 <= shutdown < D")
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(equicorrelation(D, det))
    mu = rng.standard_normal((M, D)) @ L.T
    mu[:, :shutdown] *= sigma0
    s = np.full((M, D), float(sigma_prime))
    z = mu + s * rng.standard_normal((M, D))
    return LatentBatch(mu, s, z, N)


def _methods(spec: ExperimentSpec) -> list[str]:
    methods = parse_list(spec.get("estimator", ",".join(MINIBATCH_METHODS)), str)
    bad = [m for m in methods if m not in MINIBATCH_METHODS]
    if bad:
        raise InvalidConfigurationError(f"unknown minibatch estimators {bad}; choose from {MINIBATCH_METHODS}")
    return methods


def cmd_estimator_bench(spec: ExperimentSpec) -> str:
    dims = parse_list(spec.get("dims", DEFAULT_DIMS), int)
    dets = parse_list(spec.get("dets", DEFAULT_DETS), float)
    M = spec.get("batch_size", 512, int)
    N = spec.get("dataset_size", 4 * M, int)
    sp = spec.get("sigma_prime", 0.1, float)
    methods = _methods(spec)
    for D in dims:
        for det in dets:
            equicorrelation(D, det)  # fail before any work
    rows = []
    for D in dims:
        for det in dets:
            S = equicorrelation(D, det)
            truth = gaussian_tc(S + sp * sp * np.eye(D))
            values = {m: [] for m in methods}
            for seed in spec.seeds:
                batch = bench_batch(D, det, M, N, sp, seed)
                for m in methods:
                    values[m].append(minibatch_tc(batch, m))
            for m in methods:
                med, iqr = _median_iqr(values[m])
                rows.append({"D": D, "det": det, "truth": truth, "method": m, "median_estimate": med, "iqr": iqr})
    return render_csv(BENCH_COLUMNS, rows)


def cmd_shutdown_demo(spec: ExperimentSpec) -> str:
    dims = parse_list(spec.get("dims", 10), int)
    M = spec.get("batch_size", 512, int)
    N = spec.get("dataset_size", 4 * M, int)
    sp = spec.get("sigma_prime", 0.1, float)
    sigma0s = parse_list(spec.get("sigma0", DEFAULT_SIGMA0), float)
    max_shut = spec.get("max_shutdown", 3, int)
    methods = _methods(spec)
    rows = []
    for D in dims:
        for s0 in sigma0s:
            for S in range(0, min(max_shut, D - 1) + 1):
                values = {m: [] for m in methods}
                for seed in spec.seeds:
                    batch = bench_batch(D, 1.0, M, N, sp, seed, S, s0)
                    for m in methods:
                        values[m].append(minibatch_tc(batch, m))
                for m in methods:
                    med, iqr = _median_iqr(values[m])
                    rows.append({
                        "D": D, "batch_size": M, "sigma0": s0, "shutdown_dims": S, "method": m,
                        "median_estimate": med, "iqr": iqr,
                        "prediction": asymptotic_mss_prediction(D, M, S),
                    })
    return render_csv(SHUTDOWN_COLUMNS, rows)


def cmd_disparity_demo(spec: ExperimentSpec) -> str:
    targets = parse_list(spec.get("targets", DEFAULT_TARGETS), float)
    sp = parse_list(spec.get("sigma_prime", 0.1), float)
    if len(sp) == 1:
        sp = sp * 2
    if len(sp) != 2:
        raise InvalidConfigurationError("--sigma-prime takes one or two values")
    n = spec.get("n", 100_000, int)
    sp = np.array(sp)
    rows = []
    for t in targets:
        inst = disparity_construct(t, sp)
        emp_m, emp_s = [], []
        for seed in spec.seeds:
            rng = np.random.default_rng(seed)
            mu = mvn_sample(MultivariateNormal(np.zeros(2), inst.mean_cov), n, rng)
            z = mu + sp * rng.standard_normal(mu.shape)
            emp_m.append(_empirical_tc(mu))
            emp_s.append(_empirical_tc(z))
        rows.append({
            "target": t, "sigma_prime_0": sp[0], "sigma_prime_1": sp[1],
            "tc_mean": inst.tc_mean, "tc_sample": inst.tc_sample_gaussian,
            "tc_mean_empirical": float(np.median(emp_m)), "tc_sample_empirical": float(np.median(emp_s)),
            "cap": gaussian_tc_cap(sp, np.diag(inst.mean_cov)),
        })
    return render_csv(DISPARITY_COLUMNS, rows)


def _empirical_tc(x) -> float:
    return gaussian_tc(np.cov(x, rowvar=False))


# ----------------------------------------------------------------- train / metrics


def _objective_config(spec: ExperimentSpec, kind: str, beta: float, seed: int) -> ObjectiveConfig:
    window = spec.get("eta_window")
    kw = dict(kind=kind, beta=beta, seed=seed)
    optional = {
        "eta_init": float, "eta_factor": float, "lambda_od": float, "lambda_d": float,
        "batch_size": int, "step_size": float, "epochs": int, "latent_dim": int,
        "hidden": int, "eval_samples": int, "dataset_size": int,
    }
    for key, cast in optional.items():
        if spec.get(key) is not None:
            kw[key] = cast(spec.get(key))
    if spec.get("estimator") is not None:
        kw["tc_estimator"] = spec.get("estimator")
    if window is not None:
        kw["eta_window"] = tuple(parse_list(window, float))
    return ObjectiveConfig(**kw)


def cmd_train(spec: ExperimentSpec) -> dict[str, str]:
    """Returns ``{file name: csv text}``: one TrainLog and one latent dump per
    (objective, beta, seed) plus ``summary.csv`` comparing final TC gaps."""
    K = spec.get("factors", 2, int)
    levels = spec.get("levels", 16, int)
    P = spec.get("obs_dim", 64, int)
    ds = make_synthetic_dataset(K, levels, P, spec.get("data_seed", 0, int))
    objectives = parse_list(spec.get("objective", "rtc"), str)
    betas = parse_list(spec.get("beta", 6.0), float)
    files: dict[str, str] = {}
    summary = []
    for kind in objectives:
        for beta in betas:
            for seed in spec.seeds:
                config = _objective_config(spec, kind, beta, seed)
                model, log = train(ds, config)
                tag = f"{kind}_b{beta:g}_s{seed}"
                files[f"trainlog_{tag}.csv"] = log.to_csv()
                dump = encode_dump(model, ds, np.random.default_rng([seed, 2]))
                files[f"dump_{tag}.csv"] = latent_dump_csv(dump)
                last = log.records[-1] if len(log) else None
                summary.append({
                    "objective": kind, "beta": beta, "seed": seed, "epochs": config.epochs,
                    "tc_mean": last.tc_mean if last else math.nan,
                    "tc_sample": last.tc_sample if last else math.nan,
                    "gap": abs(last.tc_mean - last.tc_sample) if last else math.nan,
                    "final_eta": last.eta if last else config.eta0,
                    "final_var_trace": last.var_trace if last else math.nan,
                })
    files["summary.csv"] = render_csv(SUMMARY_COLUMNS, summary)
    return files


def cmd_metrics(spec: ExperimentSpec) -> dict[str, str]:
    dump = read_latent_dump(spec.get("dump"))
    use = spec.get("use", "means")
    bins = spec.get("bins", DEFAULT_BINS, int)
    tc_m, tc_s = tc_mean_and_sample(dump)
    files = {"tc.csv": render_csv(("tc_mean", "tc_sample", "gap"), [{"tc_mean": tc_m, "tc_sample": tc_s, "gap": abs(tc_m - tc_s)}])}
    rows = []
    for report in (sap_score(r2_matrix(dump, use)), mig_score(mi_matrix(dump, use, bins))):
        for r in report.rows():
            rows.append({"metric": report.kind, **r})
        rows.append({"metric": report.kind, "factor": "all", "top1": math.nan, "top2": math.nan, "gap": report.aggregate})
    files["metrics.csv"] = render_csv(METRIC_COLUMNS, rows)
    points, pairs = pairplot_data(dump, "samples" if use == "samples" else "means")
    files["pairs.csv"] = render_csv(
        ("i", "j", "corr", "dcor"), [{"i": p.i, "j": p.j, "corr": p.corr, "dcor": p.dcor} for p in pairs]
    )
    cols = [f"p{p.i}_{p.j}_{side}" for p in pairs for side in ("x", "y")]
    files["pairplot.csv"] = render_csv(cols, [dict(zip(cols, row)) for row in points])
    return files


def _write_files(files: dict[str, str], out) -> None:
    if out in (None, "", "-"):
        for name, text in files.items():
            sys.stdout.write(f"# {name}\n{text}")
        return
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (root / name).write_text(text, encoding="utf-8", newline="")


# ----------------------------------------------------------------- entry point


COMMANDS = {
    "estimator-bench": cmd_estimator_bench,
    "disparity-demo": cmd_disparity_demo,
    "shutdown-demo": cmd_shutdown_demo,
    "train": cmd_train,
    "metrics": cmd_metrics,
}

DEFAULT_SEEDS = {"estimator-bench": "0-9", "shutdown-demo": "0-9", "disparity-demo": "0", "train": "0-2", "metrics": "0"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtcvae", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seeds", help="e.g. 0-9 or 0,3,5")
        sp.add_argument("--out", help="output file (tables) or directory (train, metrics)")
        sp.add_argument("--config", help="flat key = value file")
        sp.add_argument("--sigma-prime", dest="sigma_prime")
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--dataset-size", dest="dataset_size", type=int)
        sp.add_argument("--estimator")

    b = sub.add_parser("estimator-bench", help="minibatch TC estimators against the Gaussian truth")
    common(b)
    b.add_argument("--dims")
    b.add_argument("--dets")

    d = sub.add_parser("disparity-demo", help="mean/sample TC for constructed instances")
    common(d)
    d.add_argument("--targets")
    d.add_argument("--n", type=int)

    s = sub.add_parser("shutdown-demo", help="estimator drop per shut-down latent dimension")
    common(s)
    s.add_argument("--dims")
    s.add_argument("--sigma0")
    s.add_argument("--max-shutdown", dest="max_shutdown", type=int)

    t = sub.add_parser("train", help="train VAEs on the synthetic factor dataset")
    common(t)
    t.add_argument("--objective", help="comma list of plain-elbo, beta-tc, rtc, dip-i, dip-ii")
    t.add_argument("--beta", help="comma list")
    t.add_argument("--eta-init", dest="eta_init", type=float)
    t.add_argument("--eta-window", dest="eta_window", help="low,high")
    t.add_argument("--epochs", type=int)
    t.add_argument("--latent-dim", dest="latent_dim", type=int)
    t.add_argument("--lambda-od", dest="lambda_od", type=float)
    t.add_argument("--lambda-d", dest="lambda_d", type=float)
    t.add_argument("--obs-dim", dest="obs_dim", type=int)

    m = sub.add_parser("metrics", help="TC, SAP, MIG and pair dependence of a latent dump")
    common(m)
    m.add_argument("dump", nargs="?")
    m.add_argument("--bins", type=int)
    m.add_argument("--use", choices=("means", "samples"))
    return p


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    params = read_config(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        params[key] = value
    seeds = parse_seeds(params.pop("seeds", DEFAULT_SEEDS[args.command]))
    out = params.pop("out", None)
    if args.command == "metrics" and not params.get("dump"):
        raise InvalidConfigurationError("metrics needs a dump file")
    return ExperimentSpec(args.command, params, seeds, out)


def run(spec: ExperimentSpec):
    result = COMMANDS[spec.command](spec)
    if isinstance(result, dict):
        _write_files(result, spec.out)
    else:
        emit(result, spec.out)
    return result


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(spec_from_args(args))
    except ValueError as exc:
        print(f"rtcvae {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
