"""Analytic and empirical mean/sample TC for constructed two-dimensional instances."""
import sys

from rtcvae.cli import main

out = sys.argv[1] if len(sys.argv) > 1 else "results/disparity"
for tag, sp in (("iso", "0.1"), ("mixed", "0.1,1")):
    code = main(["disparity-demo", "--sigma-prime", sp, "--out", f"{out}_{tag}.csv"])
    if code:
        sys.exit(code)
