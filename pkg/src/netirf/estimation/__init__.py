from .benchmark import BenchmarkConfig, BenchmarkReport, run_benchmark
from .fit import BoundaryWarning, KfssiFit, SingularDesignError, kfssi_fit, nssi_fit
from .kalman import StateSpaceParams, kalman_filter, kalman_loglik, rts_smoother
from .mle import SnapshotMle, mle_series, mle_snapshot

__all__ = [
    "BenchmarkConfig",
    "BenchmarkReport",
    "BoundaryWarning",
    "KfssiFit",
    "SingularDesignError",
    "SnapshotMle",
    "StateSpaceParams",
    "kalman_filter",
    "kalman_loglik",
    "kfssi_fit",
    "mle_series",
    "mle_snapshot",
    "nssi_fit",
    "rts_smoother",
    "run_benchmark",
]
