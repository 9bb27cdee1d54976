"""Impulse response functions of latent fitnesses and of network metrics."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np
from scipy.optimize import brentq

from .core import (
    FitnessState,
    MeanFieldParams,
    ShockSpec,
    ValidationError,
    VarParams,
    psd_sqrt,
)
from .gaussian_logistic import logistic_normal
from .sampling import get_metric, metric_given_theta
from .var_dynamics import (
    conditional_moments_path,
    meanfield_conditional_moments,
    meanfield_matrix_power,
    require_stationary,
    shocked_means,
    sparse_expected_meanfield,
)

PATH_BLOCK = 50


@dataclass(frozen=True)
class IrfSeries:
    """IRF values indexed by horizon ``t``; optional MC error and percentile bands."""

    t: np.ndarray
    irf: np.ndarray
    stderr: np.ndarray | None = None
    p10: np.ndarray | None = None
    p90: np.ndarray | None = None
    metric: str = "density"

    def rows(self) -> list[dict]:
        out = []
        for k, t in enumerate(self.t):
            row = {"t": int(t), "irf": float(self.irf[k])}
            for name in ("stderr", "p10", "p90"):
                col = getattr(self, name)
                if col is not None:
                    row[name] = float(col[k])
            out.append(row)
        return out


# ---------------------------------------------------------------------------
# latent IRF
# ---------------------------------------------------------------------------


def irf_theta(B, delta, t: int) -> np.ndarray:
    """``B^t delta``; B may be a dense matrix or a MeanFieldParams."""
    if t < 0:
        raise ValidationError("t must be >= 0")
    if isinstance(B, MeanFieldParams):
        return meanfield_matrix_power(B, t) @ np.asarray(delta, dtype=float)
    B = np.asarray(B, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if B.shape != (delta.size, delta.size):
        raise ValidationError("B and delta dimensions disagree")
    return np.linalg.matrix_power(B, t) @ delta


# ---------------------------------------------------------------------------
# mean-field density IRF
# ---------------------------------------------------------------------------


def irf_density_meanfield(
    mf: MeanFieldParams,
    theta0: float,
    delta: float,
    t: int,
    exact_integral: bool = False,
) -> float:
    """Closed-form density IRF at horizon ``t >= 1`` for a shock ``delta`` on one node.

    Pairs involving the shocked node (2/n of all pairs) and pairs among the
    other nodes are integrated separately against the common pair variance
    ``2 var (1 + corr)``, and the unshocked density is subtracted. Sparse
    models (p < 1) use the averaged matrix.
    """
    if t < 1:
        raise ValidationError("density IRF is defined for horizons t >= 1")
    mf = sparse_expected_meanfield(mf) if mf.p < 1.0 else mf
    require_stationary(mf)
    n = mf.n
    mom = meanfield_conditional_moments(mf, theta0, t)
    mu1, muz = shocked_means(mf, theta0, delta, t)
    s2 = 2.0 * mom.var * (1.0 + mom.corr)
    I = lambda m: logistic_normal(m, s2, exact_integral)
    base = I(2.0 * mom.mean)
    return 2.0 / n * (I(mu1 + muz) - base) + (n - 2.0) / n * (I(2.0 * muz) - base)


def irf_density_meanfield_series(mf, theta0, delta, horizon, exact_integral=False) -> IrfSeries:
    t = np.arange(1, horizon + 1)
    vals = np.array([irf_density_meanfield(mf, theta0, delta, int(k), exact_integral) for k in t])
    return IrfSeries(t, vals)


# ---------------------------------------------------------------------------
# Monte Carlo IRF
# ---------------------------------------------------------------------------


def _shock_vector(shock, d: int) -> np.ndarray:
    delta = shock.delta if isinstance(shock, ShockSpec) else np.atleast_1d(np.asarray(shock, float))
    if delta.shape != (d,):
        raise ValidationError(f"shock has shape {delta.shape}, expected ({d},)")
    return delta


def irf_metric_mc(
    params: VarParams,
    theta_tau: FitnessState,
    shock: ShockSpec,
    metric: str = "density",
    horizon: int = 20,
    n_samples: int = 10_000,
    seed=None,
    rao_blackwell: bool = True,
) -> IrfSeries:
    """IRF of a network metric as a difference of two Gaussian expectations.

    At each horizon the shocked and unshocked laws share the covariance and
    differ in mean by ``B^t delta``, so both branches are evaluated on the same
    Gaussian draws (and, for sampled networks, the same uniforms).
    """
    m = get_metric(metric)
    d = params.d
    delta = _shock_vector(shock, d)
    directed = theta_tau.directed
    path = conditional_moments_path(params, theta_tau, horizon)
    streams = np.random.SeedSequence(seed).spawn(horizon)
    est, se = np.empty(horizon), np.empty(horizon)
    shift = delta.copy()
    for k, mom in enumerate(path):
        shift = params.B @ shift
        rng = np.random.default_rng(streams[k])
        L = psd_sqrt(mom.cov)
        diffs = np.empty(n_samples)
        for start in range(0, n_samples, 1024):
            c = min(1024, n_samples - start)
            theta = mom.mean + rng.standard_normal((c, d)) @ L.T
            U = None
            if not (rao_blackwell and m.conditional is not None):
                n = d // 2 if directed else d
                U = rng.random((c, n, n))
            base = metric_given_theta(m, theta, directed, rao_blackwell=rao_blackwell, uniforms=U)
            hit = metric_given_theta(m, theta + shift, directed, rao_blackwell=rao_blackwell, uniforms=U)
            diffs[start : start + c] = hit - base
        est[k] = diffs.mean()
        se[k] = diffs.std(ddof=1) / np.sqrt(n_samples) if n_samples > 1 else 0.0
    return IrfSeries(np.arange(1, horizon + 1), est, se, metric=metric)


def _path_block(params, x0, delta, metric, horizon, count, seed_seq, directed, rao_blackwell):
    rng = np.random.default_rng(seed_seq)
    d = params.d
    L = psd_sqrt(params.Sigma)
    n = d // 2 if directed else d
    x = np.tile(x0, (count, 1))
    xs = x + delta
    out = np.empty((count, horizon))
    for k in range(horizon):
        w = rng.standard_normal((count, d)) @ L.T
        x = params.mu + x @ params.B.T + w
        xs = params.mu + xs @ params.B.T + w
        U = None if (rao_blackwell and metric.conditional is not None) else rng.random((count, n, n))
        out[:, k] = metric_given_theta(metric, xs, directed, rao_blackwell=rao_blackwell, uniforms=U) - \
            metric_given_theta(metric, x, directed, rao_blackwell=rao_blackwell, uniforms=U)
    return out


def irf_paths_mc(
    params: VarParams,
    theta_tau: FitnessState,
    shock: ShockSpec,
    metric: str = "density",
    horizon: int = 20,
    n_paths: int = 500,
    seed=None,
    rao_blackwell: bool = True,
    threads: int = 1,
) -> tuple[IrfSeries, np.ndarray]:
    """Replicate IRF paths from pairs of trajectories driven by the same noise.

    Each replicate simulates the fitnesses forward from ``theta_tau`` with and
    without the shock and records the metric difference. Returns the mean
    series (with standard error and 10th/90th percentiles across replicates)
    and the ``(n_paths, horizon)`` replicate array. Paths are generated in
    fixed-size blocks with their own seeds, so ``threads`` only changes speed.
    """
    m = get_metric(metric)
    delta = _shock_vector(shock, params.d)
    sizes = [min(PATH_BLOCK, n_paths - s) for s in range(0, n_paths, PATH_BLOCK)]
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    args = [
        (params, theta_tau.values, delta, m, horizon, c, s, theta_tau.directed, rao_blackwell)
        for c, s in zip(sizes, seqs)
    ]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            blocks = list(ex.map(lambda a: _path_block(*a), args))
    else:
        blocks = [_path_block(*a) for a in args]
    paths = np.concatenate(blocks, axis=0)
    mean = paths.mean(axis=0)
    se = paths.std(axis=0, ddof=1) / np.sqrt(n_paths) if n_paths > 1 else np.zeros(horizon)
    p10, p90 = np.percentile(paths, [10, 90], axis=0)
    return IrfSeries(np.arange(1, horizon + 1), mean, se, p10, p90, metric), paths


# ---------------------------------------------------------------------------
# comparative statics
# ---------------------------------------------------------------------------


def load_sweep_config() -> dict:
    text = resources.files("netirf").joinpath("data/sweeps.json").read_text()
    return json.loads(text)


STUDIES = (
    "delta",
    "lambda_via_a",
    "lambda_via_b",
    "ab_fixed_lambda",
    "sigma2",
    "theta0",
    "sigma2_thresholds",
)


def _curve_setup(base: dict, mu: float, param: str, value):
    mf = MeanFieldParams(base["a"], base["b"], mu, base["sigma2"], base["n"])
    delta = base["delta"]
    theta0 = None
    if param == "delta":
        delta = float(value)
    elif param == "a":
        mf = replace(mf, a=float(value))
    elif param == "b":
        mf = replace(mf, b=float(value))
    elif param == "ab":
        mf = replace(mf, a=float(value[0]), b=float(value[1]))
    elif param == "sigma2":
        mf = replace(mf, sigma2=float(value))
    elif param == "theta0":
        theta0 = float(value)
    else:
        raise ValidationError(f"unknown sweep parameter {param!r}")
    return mf, delta, theta0


def _value_label(value) -> str:
    if isinstance(value, (list, tuple)):
        return "|".join(repr(float(v)) for v in value)
    return repr(float(value))


def comparative_statics(study: str, config: dict | None = None, horizon: int | None = None,
                        exact_integral: bool = False) -> list[dict]:
    """Long-format figure data for one comparative-statics study.

    One row per (mu, parameter value, t). Grid points whose model is not
    stationary are emitted once with ``status = "skipped_nonstationary"``.
    """
    config = config or load_sweep_config()
    if study not in config["studies"]:
        raise ValidationError(f"unknown study {study!r}; choose from {sorted(config['studies'])}")
    base = config["baseline"]
    spec = config["studies"][study]
    if study == "sigma2_thresholds":
        return sigma2_threshold_rows(config, exact_integral)[0]
    horizon = horizon or base["horizon"]
    rows = []
    for mu in base["mus"]:
        for value in spec["values"]:
            mf, delta, theta0 = _curve_setup(base, mu, spec["param"], value)
            common = {"study": study, "mu": float(mu), "param": spec["param"], "value": _value_label(value)}
            if not mf.stationary:
                rows.append({**common, "t": "", "irf": "", "status": "skipped_nonstationary"})
                continue
            th = mf.theta_stationary if theta0 is None else theta0
            for t in range(1, horizon + 1):
                v = irf_density_meanfield(mf, th, delta, t, exact_integral)
                rows.append({**common, "t": t, "irf": v, "status": "ok"})
    return rows


def _irf1(base, mu, sigma2, exact):
    mf = MeanFieldParams(base["a"], base["b"], mu, sigma2, base["n"])
    return irf_density_meanfield(mf, mf.theta_stationary, base["delta"], 1, exact)


def sigma2_threshold_rows(config: dict | None = None, exact_integral: bool = False):
    """IRF(1) against mu for several noise levels, plus located sign-change thresholds.

    The thresholds are the zeros of ``d IRF(1) / d sigma2`` (central difference
    at ``derivative_at``) nearest to mu = 0 on each side.
    """
    config = config or load_sweep_config()
    base = config["baseline"]
    spec = config["studies"]["sigma2_thresholds"]
    g = spec["mu_grid"]
    mus = np.linspace(g["start"], g["stop"], g["num"])
    rows = []
    for s2 in spec["values"]:
        for mu in mus:
            rows.append({
                "study": "sigma2_thresholds", "mu": float(mu), "param": "sigma2",
                "value": repr(float(s2)), "t": 1, "irf": _irf1(base, mu, s2, exact_integral), "status": "ok",
            })
    s0, h = spec["derivative_at"], 1e-4

    def slope(mu):
        return (_irf1(base, mu, s0 + h, exact_integral) - _irf1(base, mu, s0 - h, exact_integral)) / (2 * h)

    vals = np.array([slope(mu) for mu in mus])
    roots = []
    for k in range(len(mus) - 1):
        if vals[k] == 0.0:
            roots.append(float(mus[k]))
        elif vals[k] * vals[k + 1] < 0:
            roots.append(float(brentq(slope, mus[k], mus[k + 1], xtol=1e-10)))
    neg = [r for r in roots if r < 0]
    pos = [r for r in roots if r > 0]
    thresholds = {
        "mu_lower": max(neg) if neg else None,
        "mu_upper": min(pos) if pos else None,
        "all_roots": roots,
        "derivative_at_sigma2": s0,
    }
    return rows, thresholds
