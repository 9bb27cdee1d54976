"""Simulation study comparing direct regression and state-space estimation on mean-field networks."""
from __future__ import annotations

import csv
import io
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import FitnessState, MeanFieldParams, NumericalError, TemporalNetwork, ValidationError
from ..sampling import sample_network
from ..var_dynamics import require_stationary, simulate_var
from .fit import BoundaryWarning, kfssi_fit, nssi_fit
from .mle import mle_series

METHODS = ("N-SSI", "KF-SSI")
COLUMNS = ("theta", "a", "b", "mu", "sigma2")

# reference error levels at n_sim=100 (theta, a, b, mu, sigma2); compared directionally only
REFERENCE_ERRORS = {
    "N-SSI": {"theta": 0.57, "a": 0.605, "b": 0.009, "mu": 0.311, "sigma2": 0.375},
    "KF-SSI": {"theta": 0.404, "a": 0.124, "b": 0.023, "mu": 0.118, "sigma2": 0.144},
}


@dataclass(frozen=True)
class BenchmarkConfig:
    n_sim: int = 100
    n: int = 10
    T: int = 100
    a: float = 0.7
    b: float = 0.07
    sigma: float = 0.2
    mu: float = -0.07

    def __post_init__(self):
        if self.n_sim < 1 or self.n < 3 or self.T < 5:
            raise ValidationError("need n_sim >= 1, n >= 3 and T >= 5")
        if self.sigma < 0:
            raise ValidationError("sigma must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown benchmark keys {sorted(unknown)}")
        return cls(**d)

    @property
    def model(self) -> MeanFieldParams:
        # a zero-noise model is simulated with a negligible variance
        return MeanFieldParams(self.a, self.b, self.mu, max(self.sigma**2, 1e-300), self.n)


@dataclass
class BenchmarkReport:
    """Mean absolute relative errors per method and parameter.

    ``errors[method][column]``; the ``theta`` column is the relative fitness
    error, ``fitness_mae`` the absolute one. ``dropped`` counts replicates in
    which no snapshot had a converged estimate; ``failures`` lists replicate
    indices whose fits raised, with the message.
    """

    errors: dict
    fitness_mae: dict
    n: int
    T: int
    n_sim: int
    seed: int
    n_used: int
    dropped: int
    failures: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [{"method": m, **{c: self.errors[m][c] for c in COLUMNS}} for m in METHODS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["method", *COLUMNS], lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: (repr(float(v)) if k != "method" else v) for k, v in row.items()})
        return buf.getvalue()

    def metadata(self) -> dict:
        return {
            "n": self.n,
            "T": self.T,
            "n_sim": self.n_sim,
            "seed": self.seed,
            "n_used": self.n_used,
            "dropped": self.dropped,
            "failures": self.failures,
            "fitness_mae_absolute": self.fitness_mae,
            "fitness_mae_relative": {m: self.errors[m]["theta"] for m in METHODS},
            "reference_errors": REFERENCE_ERRORS,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n"


def _replicate(cfg: BenchmarkConfig, seed_seq: np.random.SeedSequence) -> dict | None:
    model = cfg.model
    s_state, s_dyn, s_net, s_opt = seed_seq.spawn(4)
    v = model.to_var()
    # start from a draw of the stationary law
    rng0 = np.random.default_rng(s_state)
    c, lam = model.lambda_perp, model.lambda1
    vc, vl = model.sigma2 / (1 - c * c), model.sigma2 / (1 - lam * lam)
    # variance vl along the all-ones direction, vc orthogonal to it
    z = rng0.standard_normal(cfg.n)
    zbar = z.mean()
    theta0 = model.theta_stationary + np.sqrt(vc) * (z - zbar) + np.sqrt(vl) * zbar
    truth = simulate_var(v, theta0, cfg.T, seed=s_dyn).values
    net_seeds = s_net.spawn(cfg.T)
    snaps = [sample_network(FitnessState(truth[t], False), seed=net_seeds[t], timestamp=t + 1) for t in range(cfg.T)]
    est, mask, fits = mle_series(TemporalNetwork(snaps))
    if not any(f.converged for f in fits):
        return None
    Y = est.values
    ns = nssi_fit(Y, "meanfield")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        kf = kfssi_fit(np.where(mask, np.nan, Y), "meanfield", seed=int(s_opt.generate_state(1)[0]))
    km = kf.params.latent
    true = {"a": cfg.a, "b": cfg.b, "mu": cfg.mu, "sigma2": cfg.sigma**2}

    def rel(p):
        return {k: abs(getattr(p, k) - t) / abs(t) if t != 0 else abs(getattr(p, k)) for k, t in true.items()}

    out = {"N-SSI": rel(ns), "KF-SSI": rel(km)}
    denom = np.abs(truth)
    for m, th in (("N-SSI", Y), ("KF-SSI", kf.filtered.values)):
        err = np.abs(th - truth)
        out[m]["theta"] = float(np.mean(err / denom))
        out[m]["theta_abs"] = float(np.mean(err))
    return out


def run_benchmark(config: BenchmarkConfig | dict | None = None, seed: int = 0, threads: int = 1) -> BenchmarkReport:
    """Simulate ``n_sim`` undirected mean-field network series and score both estimators.

    Each replicate simulates the latent fitnesses from the stationary law,
    samples one network per time step, estimates per-snapshot fitnesses and
    fits the VAR directly and by the state-space method. Replicates use
    seeds spawned from ``seed``; ``threads`` changes wall time only.

    Raises
    ------
    StationarityError
        The configured dynamics are not stationary.
    """
    cfg = BenchmarkConfig.from_dict(config) if isinstance(config, dict) else (config or BenchmarkConfig())
    require_stationary(cfg.model)
    seeds = np.random.SeedSequence(seed).spawn(cfg.n_sim)

    def job(k):
        try:
            return k, _replicate(cfg, seeds[k]), None
        except (NumericalError, ValidationError, ArithmeticError) as exc:
            return k, None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(job, range(cfg.n_sim)))
    else:
        results = [job(k) for k in range(cfg.n_sim)]
    good = [r for _, r, e in results if r is not None]
    failures = [{"replicate": k, "error": e} for k, _, e in results if e is not None]
    dropped = sum(1 for _, r, e in results if r is None and e is None)
    if not good:
        raise NumericalError(f"no usable replicates ({dropped} dropped, {len(failures)} failed)")
    errors = {m: {c: float(np.mean([g[m][c] for g in good])) for c in COLUMNS} for m in METHODS}
    fmae = {m: float(np.mean([g[m]["theta_abs"] for g in good])) for m in METHODS}
    return BenchmarkReport(errors, fmae, cfg.n, cfg.T, cfg.n_sim, seed, len(good), dropped, failures, asdict(cfg))
