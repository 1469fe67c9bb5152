"""Total-correlation estimation, mean/sample TC disparity and a regularised TC-VAE."""
from .errors import *  # noqa: F401,F403
from .gaussian import MultivariateNormal, gaussian_tc, mvn_logpdf, mvn_sample
from .estimators import LatentBatch, TcEstimate, minibatch_tc, tc_mss, tc_mws, tc_naive_mc
from .metrics import LatentDump, tc_mean_and_sample
from .vae import ObjectiveConfig, make_synthetic_dataset, train

__version__ = "0.1.0"
