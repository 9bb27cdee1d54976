"""Latent VAR(1) simulation, conditional moments and mean-field closed forms."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    FitnessSeries,
    FitnessState,
    GaussianMoments,
    MeanFieldParams,
    StationarityError,
    ValidationError,
    VarParams,
    psd_sqrt,
)

GEOM_EPS = 1e-12


def _as_vector(theta, d: int) -> np.ndarray:
    v = theta.values if isinstance(theta, FitnessState) else np.atleast_1d(np.asarray(theta, float))
    if v.shape != (d,):
        raise ValidationError(f"state has shape {v.shape}, expected ({d},)")
    return v


def simulate_var(
    params: VarParams,
    theta0,
    T: int,
    seed=None,
    directed: bool | None = None,
) -> FitnessSeries:
    """Simulate ``theta_t = mu + B theta_{t-1} + w_t`` for ``t = 1..T``.

    The noise is generated through the symmetric square root of Sigma, so the
    output is a deterministic function of ``seed``.
    """
    d = params.d
    x = _as_vector(theta0, d)
    if directed is None:
        directed = theta0.directed if isinstance(theta0, FitnessState) else False
    L = psd_sqrt(params.Sigma)
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((T, d))
    W = Z @ L.T
    out = np.empty((T, d))
    mu, B = params.mu, params.B
    for t in range(T):
        x = mu + B @ x + W[t]
        out[t] = x
    return FitnessSeries(out, directed)


def conditional_moments(params: VarParams, theta_tau, h: int) -> GaussianMoments:
    """Law of ``theta_{tau+h}`` given ``theta_tau``.

    mean = sum_{k<h} B^k mu + B^h theta_tau, cov = sum_{k<h} B^k Sigma B^k'.
    """
    if h < 0:
        raise ValidationError("horizon must be >= 0")
    x = _as_vector(theta_tau, params.d).copy()
    P = np.zeros((params.d, params.d))
    for _ in range(h):
        x = params.mu + params.B @ x
        P = params.B @ P @ params.B.T + params.Sigma
    return GaussianMoments(x, 0.5 * (P + P.T))


def conditional_moments_path(params: VarParams, theta_tau, horizon: int) -> list[GaussianMoments]:
    """Conditional moments for ``h = 1..horizon`` in one pass."""
    x = _as_vector(theta_tau, params.d).copy()
    P = np.zeros((params.d, params.d))
    out = []
    for _ in range(horizon):
        x = params.mu + params.B @ x
        P = params.B @ P @ params.B.T + params.Sigma
        out.append(GaussianMoments(x, 0.5 * (P + P.T)))
    return out


# ---------------------------------------------------------------------------
# mean-field closed forms
# ---------------------------------------------------------------------------


def geometric_sum(x: float, t: int) -> float:
    """``sum_{k=0}^{t-1} x^k``; the ratio form is replaced by ``t`` when ``x`` is within 1e-12 of 1."""
    if t <= 0:
        return 0.0
    if abs(1.0 - x) < GEOM_EPS:
        return float(t)
    return (1.0 - x**t) / (1.0 - x)


def _dense(mf: MeanFieldParams) -> MeanFieldParams:
    return sparse_expected_meanfield(mf) if mf.p < 1.0 else mf


def meanfield_matrix_power(mf: MeanFieldParams, t: int) -> np.ndarray:
    """``B^t = (a-b)^t I + (lambda1^t - (a-b)^t)/n * ones``."""
    if t < 0:
        raise ValidationError("power must be >= 0")
    mf = _dense(mf)
    c, lam, n = mf.lambda_perp, mf.lambda1, mf.n
    return c**t * np.eye(n) + (lam**t - c**t) / n * np.ones((n, n))


def meanfield_power_sum(mf: MeanFieldParams, t: int, squared: bool = False) -> np.ndarray:
    """``sum_{k<t} B^k`` (or ``sum_{k<t} B^{2k}`` when ``squared``) in closed form."""
    mf = _dense(mf)
    c, lam, n = mf.lambda_perp, mf.lambda1, mf.n
    if squared:
        c, lam = c * c, lam * lam
    gc, gl = geometric_sum(c, t), geometric_sum(lam, t)
    return gc * np.eye(n) + (gl - gc) / n * np.ones((n, n))


@dataclass(frozen=True)
class HomogeneousMoments:
    """Per-node mean and variance plus the common pairwise correlation."""

    mean: float
    var: float
    corr: float

    @property
    def cov(self) -> float:
        return self.var * self.corr


def meanfield_conditional_moments(mf: MeanFieldParams, theta0: float, t: int) -> HomogeneousMoments:
    """Closed-form conditional moments after ``t`` steps from the homogeneous state ``theta0``.

    The all-ones vector is an eigenvector of B with eigenvalue lambda1, so the
    mean collapses to ``mu * g(lambda1) + theta0 * lambda1^t``; the covariance is
    ``sigma2 * sum_{k<t} B^{2k}``.
    """
    if t < 0:
        raise ValidationError("t must be >= 0")
    mf = _dense(mf)
    c, lam, n = mf.lambda_perp, mf.lambda1, mf.n
    mean = mf.mu * geometric_sum(lam, t) + theta0 * lam**t
    gc, gl = geometric_sum(c * c, t), geometric_sum(lam * lam, t)
    off = mf.sigma2 * (gl - gc) / n
    var = mf.sigma2 * gc + off
    corr = off / var if var > 0 else 0.0
    return HomogeneousMoments(float(mean), float(var), float(corr))


def meanfield_moments_matrix(mf: MeanFieldParams, theta0, t: int) -> GaussianMoments:
    """Full conditional moments of the mean-field model from the closed forms.

    ``theta0`` may be a scalar (homogeneous state) or an n-vector.
    """
    mf = _dense(mf)
    n = mf.n
    th = np.broadcast_to(np.asarray(theta0, dtype=float), (n,))
    mean = meanfield_power_sum(mf, t) @ np.full(n, mf.mu) + meanfield_matrix_power(mf, t) @ th
    cov = mf.sigma2 * meanfield_power_sum(mf, t, squared=True)
    return GaussianMoments(mean, cov)


def shocked_means(mf: MeanFieldParams, theta0: float, delta: float, t: int) -> tuple[float, float]:
    """Conditional means at ``t`` of the shocked node and of any other node.

    Node 1 receives ``delta`` at time 0 on top of the homogeneous state
    ``theta0``. The two means differ by exactly ``delta * (a-b)^t``.
    """
    mf = _dense(mf)
    c, lam, n = mf.lambda_perp, mf.lambda1, mf.n
    base = mf.mu * geometric_sum(lam, t) + theta0 * lam**t
    muz = base + delta * (lam**t - c**t) / n
    mu1 = muz + delta * c**t
    return float(mu1), float(muz)


def sparse_expected_meanfield(mf: MeanFieldParams) -> MeanFieldParams:
    """Dense model whose matrix powers equal the expected powers of the sparse one (b -> b p)."""
    return replace(mf, b=mf.b * mf.p, p=1.0)


def sample_sparse_B(mf: MeanFieldParams, seed=None) -> np.ndarray:
    """One quenched realization of the sparse mean-field matrix (Bernoulli(p) off-diagonal mask)."""
    rng = np.random.default_rng(seed)
    n = mf.n
    mask = rng.random((n, n)) < mf.p
    B = np.where(mask, mf.b, 0.0)
    np.fill_diagonal(B, mf.a)
    return B


def require_stationary(mf: MeanFieldParams) -> None:
    if not mf.stationary:
        raise StationarityError(
            f"mean-field model not stationary: lambda1={mf.lambda1:.6g}, a-b={mf.lambda_perp:.6g}"
        )
