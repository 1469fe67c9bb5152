"""Paired rtc / beta-tc training runs on the synthetic factor dataset.

Uses the settings of the acceptance check (64 observed dimensions, 500
epochs, minibatch 64, seeds 0-2) and then scores every latent dump.
Takes roughly a minute per objective on a laptop core.

    python scripts/disparity_elimination.py [results/train]
"""
import sys
from pathlib import Path

from rtcvae.cli import main

out = Path(sys.argv[1] if len(sys.argv) > 1 else "results/train")
runs = [("rtc", "6,20"), ("beta-tc", "6,20,50")]
for kind, betas in runs:
    code = main([
        "train", "--objective", kind, "--beta", betas, "--seeds", "0-2",
        "--epochs", "500", "--batch-size", "64", "--obs-dim", "64", "--out", str(out / kind),
    ])
    if code:
        sys.exit(code)
for dump in sorted(out.glob("*/dump_*.csv")):
    main(["metrics", str(dump), "--out", str(dump.parent / dump.stem.replace("dump_", "metrics_"))])
for kind, _ in runs:
    print((out / kind / "summary.csv").read_text(), end="")
