"""Linear-Gaussian state space: observed = gamma + latent + noise, latent follows a VAR(1).

Missing observations are encoded as NaN and skipped coordinate-wise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from ..core import (
    FitnessSeries,
    GaussianMoments,
    MeanFieldParams,
    NumericalError,
    StationarityError,
    ValidationError,
    VarParams,
    stationary_cov,
    stationary_mean,
)

LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class StateSpaceParams:
    """Observation bias ``gamma``, diagonal observation noise and latent dynamics.

    ``obs_noise_cov`` is stored as the vector of diagonal entries of R; a full
    matrix is accepted if it is diagonal.
    """

    gamma: np.ndarray
    obs_noise_cov: np.ndarray
    latent: VarParams | MeanFieldParams

    def __post_init__(self):
        d = self.var.d
        g = np.broadcast_to(np.asarray(self.gamma, dtype=float), (d,)).copy()
        R = np.asarray(self.obs_noise_cov, dtype=float)
        if R.ndim == 2:
            if np.any(R - np.diag(np.diag(R))):
                raise ValidationError("observation noise covariance must be diagonal")
            R = np.diag(R)
        R = np.broadcast_to(R, (d,)).copy()
        if not np.all(np.isfinite(g)):
            raise ValidationError("gamma must be finite")
        if not np.all(R > 0) or not np.all(np.isfinite(R)):
            raise ValidationError("observation noise variances must be positive")
        g.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "obs_noise_cov", R)

    @property
    def var(self) -> VarParams:
        return self.latent.to_var() if isinstance(self.latent, MeanFieldParams) else self.latent

    @property
    def d(self) -> int:
        return self.var.d

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.obs_noise_cov)


class FilterResult(NamedTuple):
    filtered: list  # GaussianMoments of theta_t given observations up to t
    loglik: float
    predicted: list  # GaussianMoments of theta_t given observations up to t-1


def _obs_matrix(observations) -> np.ndarray:
    Y = observations.values if isinstance(observations, FitnessSeries) else np.asarray(observations, dtype=float)
    if Y.ndim != 2:
        raise ValidationError("observations must be a (T, d) array")
    return Y


def initial_moments(var: VarParams) -> tuple[np.ndarray, np.ndarray]:
    """Stationary mean and covariance used as the prior of the first latent state."""
    if not var.stationary:
        raise StationarityError(f"latent VAR not stationary (spectral radius {var.spectral_radius:.6g})")
    return stationary_mean(var), stationary_cov(var)


def _filter_arrays(mu, B, Sigma, gamma, r, Y, x, P, store: bool = True):
    T, d = Y.shape
    xf = np.empty((T, d)) if store else None
    Pf = np.empty((T, d, d)) if store else None
    xp = np.empty((T, d)) if store else None
    Ppred = np.empty((T, d, d)) if store else None
    ll = 0.0
    for t in range(T):
        if t > 0:
            x = mu + B @ x
            P = B @ P @ B.T + Sigma
            P = 0.5 * (P + P.T)
        if store:
            xp[t], Ppred[t] = x, P
        obs = ~np.isnan(Y[t])
        if obs.all():
            e = Y[t] - gamma - x
            F = P + np.diag(r)
            PH = P
        elif obs.any():
            e = Y[t, obs] - gamma[obs] - x[obs]
            F = P[np.ix_(obs, obs)] + np.diag(r[obs])
            PH = P[:, obs]
        else:
            e = None
        if e is not None:
            try:
                cf = cho_factor(F, lower=True, check_finite=False)
            except LinAlgError:
                raise NumericalError(f"innovation covariance not positive definite at t={t + 1}") from None
            K = cho_solve(cf, PH.T, check_finite=False).T
            x = x + K @ e
            P = P - K @ PH.T
            P = 0.5 * (P + P.T)
            logdet = 2.0 * np.log(np.diag(cf[0])).sum()
            ll -= 0.5 * (e.size * LOG2PI + logdet + e @ cho_solve(cf, e, check_finite=False))
        if store:
            xf[t], Pf[t] = x, P
    return float(ll), xf, Pf, xp, Ppred


def _run(ssp: StateSpaceParams, observations, store: bool):
    Y = _obs_matrix(observations)
    var = ssp.var
    if Y.shape[1] != var.d:
        raise ValidationError(f"observations have dimension {Y.shape[1]}, parameters {var.d}")
    x, P = initial_moments(var)
    return _filter_arrays(var.mu, var.B, var.Sigma, ssp.gamma, ssp.obs_noise_cov, Y, x, P, store)


def kalman_filter(ssp: StateSpaceParams, observations) -> FilterResult:
    """Predict/update recursion with identity observation matrix.

    Returns filtered and one-step predicted moments at every t and the
    log-likelihood from the prediction-error decomposition.
    """
    ll, xf, Pf, xp, Pp = _run(ssp, observations, True)
    filtered = [GaussianMoments(m, c) for m, c in zip(xf, Pf)]
    predicted = [GaussianMoments(m, c) for m, c in zip(xp, Pp)]
    return FilterResult(filtered, ll, predicted)


def kalman_loglik(ssp: StateSpaceParams, observations) -> float:
    """Log-likelihood only; skips storing the moments."""
    return _run(ssp, observations, False)[0]


class SmootherResult(NamedTuple):
    means: np.ndarray  # (T, d)
    covs: np.ndarray  # (T, d, d)
    lag1: np.ndarray  # (T-1, d, d): Cov(theta_{t+1}, theta_t | all)
    loglik: float
    predicted_means: np.ndarray  # (T, d)


def rts_smoother(ssp: StateSpaceParams, observations) -> SmootherResult:
    """Rauch-Tung-Striebel smoother with lag-one cross covariances."""
    ll, xf, Pf, xpred, Ppred = _run(ssp, observations, True)
    B = ssp.var.B
    T, d = xf.shape
    xs = np.empty((T, d))
    Ps = np.empty((T, d, d))
    lag1 = np.empty((max(T - 1, 0), d, d))
    xs[-1] = xf[-1]
    Ps[-1] = Pf[-1]
    for t in range(T - 2, -1, -1):
        J = np.linalg.solve(Ppred[t + 1], B @ Pf[t]).T  # Pf B' Pp^{-1}
        xs[t] = xf[t] + J @ (xs[t + 1] - xpred[t + 1])
        P = Pf[t] + J @ (Ps[t + 1] - Ppred[t + 1]) @ J.T
        Ps[t] = 0.5 * (P + P.T)
        lag1[t] = Ps[t + 1] @ J.T
    return SmootherResult(xs, Ps, lag1, ll, xpred)


# ---------------------------------------------------------------------------
# mean-field fast path
# ---------------------------------------------------------------------------


def ones_basis(n: int) -> np.ndarray:
    """Orthonormal basis whose first column is the normalized all-ones vector."""
    M = np.eye(n)
    M[:, 0] = 1.0
    Q, _ = np.linalg.qr(M)
    return Q * np.sign(Q[0, 0])


def _prior_variances(phi: float, q: float, r: float, T: int) -> np.ndarray:
    """One-step predicted variances of a scalar AR(1) observed with noise r, from its stationary law."""
    Pp = np.empty(T)
    P = q / (1.0 - phi * phi)
    for t in range(T):
        if t > 0:
            P = phi * phi * P + q
        Pp[t] = P
        P = P * r / (P + r)
    return Pp


def _scalar_ar_loglik(Y: np.ndarray, drift, phi, q: float, bias, r: float) -> float:
    """Log-likelihood of independent scalar series y = bias + z + v, z = drift + phi z_{-1} + w.

    ``Y`` has shape (T, k). ``drift``, ``phi`` and ``bias`` may be scalars or
    length-k arrays; ``phi`` may take at most a few distinct values, since
    the variance recursion (which does not depend on the data) is run once
    per distinct root.
    """
    T, k = Y.shape
    drift, phi, bias = (np.broadcast_to(np.asarray(v, dtype=float), (k,)) for v in (drift, phi, bias))
    Pp = np.empty((T, k))
    for root in np.unique(phi):
        Pp[:, phi == root] = _prior_variances(root, q, r, T)[:, None]
    F = Pp + r
    K = Pp / F
    E = np.empty((T, k))
    x = drift / (1.0 - phi)
    y = Y - bias
    for t in range(T):
        if t > 0:
            x = drift + phi * (x + K[t - 1] * E[t - 1])
        E[t] = y[t] - x
    return float(-0.5 * (T * k * LOG2PI + np.log(F).sum() + (E * E / F).sum()))


def meanfield_loglik(mf: MeanFieldParams, gamma: float, r: float, Y: np.ndarray, Q: np.ndarray | None = None) -> float:
    """Kalman log-likelihood of the isotropic mean-field state space model.

    With no missing data the model decouples after rotating onto a basis whose
    first vector is proportional to the all-ones vector: one AR(1) with root
    lambda1 and n-1 independent AR(1)s with root a-b. The rotation is
    orthonormal, so the likelihood is unchanged. Falls back to the general
    filter when ``Y`` contains NaN.
    """
    if np.isnan(Y).any():
        return meanfield_loglik_missing(mf, gamma, r, Y)
    if not mf.stationary:
        raise StationarityError("mean-field model not stationary")
    n = mf.n
    Q = ones_basis(n) if Q is None else Q
    root_n = np.sqrt(n)
    drift = np.zeros(n)
    drift[0] = mf.mu * root_n
    bias = np.zeros(n)
    bias[0] = gamma * root_n
    phi = np.full(n, mf.lambda_perp)
    phi[0] = mf.lambda1
    return _scalar_ar_loglik(Y @ Q, drift, phi, mf.sigma2, bias, r)


def meanfield_loglik_missing(mf: MeanFieldParams, gamma: float, r: float, Y: np.ndarray) -> float:
    """General-filter log-likelihood of the mean-field model, for data with NaN entries."""
    if not mf.stationary:
        raise StationarityError("mean-field model not stationary")
    n = mf.n
    B = mf.matrix()
    x = np.full(n, mf.theta_stationary)
    # stationary covariance from the two eigenvalues
    c, lam = mf.lambda_perp, mf.lambda1
    vc, vl = mf.sigma2 / (1.0 - c * c), mf.sigma2 / (1.0 - lam * lam)
    P = vc * np.eye(n) + (vl - vc) / n * np.ones((n, n))
    return _filter_arrays(np.full(n, mf.mu), B, mf.sigma2 * np.eye(n), np.full(n, float(gamma)), np.full(n, float(r)), Y, x, P, False)[0]
