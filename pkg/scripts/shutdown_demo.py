"""MSS estimate as latent dimensions are switched off, next to the asymptotic prediction."""
import sys

from rtcvae.cli import main

out = sys.argv[1] if len(sys.argv) > 1 else "results/shutdown.csv"
sys.exit(main(["shutdown-demo", "--dims", "10", "--batch-size", "512", "--estimator", "mss1,mws", "--out", out]))
