"""VAR fitting on per-snapshot fitness estimates: direct regression and state-space estimation."""
from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize

from ..core import (
    FitnessSeries,
    MeanFieldParams,
    NumericalError,
    StationarityError,
    ValidationError,
    VarParams,
    spectral_radius,
)
from .kalman import StateSpaceParams, kalman_filter, meanfield_loglik, ones_basis, rts_smoother

BOUNDARY = 0.999
N_RESTARTS = 5
FATOL = 1e-8
EM_TOL = 1e-6
EM_MAX_ITER = 2000
VAR_FLOOR = 1e-10


class SingularDesignError(NumericalError):
    """Rank-deficient regression design; ``coords`` lists the offending latent coordinates."""

    def __init__(self, message: str, coords=()):
        super().__init__(message)
        self.coords = tuple(int(c) for c in coords)


class BoundaryWarning(UserWarning):
    pass


def _values(series) -> tuple[np.ndarray, bool]:
    if isinstance(series, FitnessSeries):
        return np.asarray(series.values, dtype=float), series.directed
    return np.asarray(series, dtype=float), False


def _offending(X: np.ndarray, lag_cols: np.ndarray) -> list[int]:
    """Lagged coordinates that take part in a linear dependency of the design."""
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    tol = s.max() * max(X.shape) * np.finfo(float).eps
    null = Vt[s <= tol]
    if null.size == 0:
        return []
    hit = np.abs(null).max(axis=0) > 1e-8
    return [int(c) for c in lag_cols[hit[1:]]] if hit.size > 1 else []


# ---------------------------------------------------------------------------
# direct regression
# ---------------------------------------------------------------------------


def nssi_fit(theta_hats, mode: str = "full"):
    """Fit the VAR(1) directly on a fitness series.

    ``full``: per-equation least squares of each coordinate on ``(1, theta_{t-1})``;
    Sigma is the residual covariance. ``meanfield``: pooled least squares of
    ``theta_{i,t}`` on ``(1, theta_{i,t-1}, sum_{j!=i} theta_{j,t-1})`` giving
    ``(mu, a, b)``, with sigma2 the residual variance. Time steps with missing
    (NaN) values are dropped from the regressions.

    Raises
    ------
    SingularDesignError
        The design is rank deficient, e.g. a coordinate is constant.
    """
    Y, _ = _values(theta_hats)
    T, d = Y.shape
    if T < 3:
        raise ValidationError("need at least 3 time points")
    cur, lag = Y[1:], Y[:-1]
    if mode == "full":
        keep = ~(np.isnan(cur).any(axis=1) | np.isnan(lag).any(axis=1))
        cur, lag = cur[keep], lag[keep]
        X = np.column_stack([np.ones(len(lag)), lag])
        if len(X) <= X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
            bad = _offending(X, np.arange(d)) if len(X) else list(range(d))
            raise SingularDesignError(f"singular design; offending coordinates {bad}", bad)
        coef, *_ = np.linalg.lstsq(X, cur, rcond=None)
        resid = cur - X @ coef
        dof = len(X) - X.shape[1]
        Sigma = resid.T @ resid / dof
        return VarParams(coef[0], coef[1:].T, 0.5 * (Sigma + Sigma.T))
    if mode == "meanfield":
        n = d
        others = lag.sum(axis=1, keepdims=True) - lag
        rows = np.column_stack([np.ones(cur.size), lag.ravel(), others.ravel()])
        y = cur.ravel()
        keep = ~(np.isnan(y) | np.isnan(rows).any(axis=1))
        rows, y = rows[keep], y[keep]
        if len(rows) <= 3 or np.linalg.matrix_rank(rows) < 3:
            raise SingularDesignError("singular pooled design", list(range(d)))
        coef, *_ = np.linalg.lstsq(rows, y, rcond=None)
        resid = y - rows @ coef
        sigma2 = max(float(resid @ resid) / (len(y) - 3), VAR_FLOOR)
        return MeanFieldParams(a=coef[1], b=coef[2], mu=coef[0], sigma2=sigma2, n=n)
    raise ValidationError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# state-space estimation
# ---------------------------------------------------------------------------


class KfssiFit(NamedTuple):
    params: StateSpaceParams
    filtered: FitnessSeries
    loglik: float
    initial_loglik: float
    at_boundary: bool
    iterations: int


def _filtered_series(ssp: StateSpaceParams, Y: np.ndarray, directed: bool, times) -> FitnessSeries:
    fr = kalman_filter(ssp, Y)
    return FitnessSeries(np.stack([m.mean for m in fr.filtered]), directed, times)


def _project_B(B: np.ndarray) -> tuple[np.ndarray, bool]:
    rho = spectral_radius(B)
    if rho < BOUNDARY:
        return B, False
    return B * (BOUNDARY / rho), True


# mean-field: (atanh lambda1, atanh(a-b), mu, log sigma2, log r)


def _mf_unpack(x: np.ndarray, n: int) -> tuple[MeanFieldParams, float]:
    lam, c = np.tanh(x[0]), np.tanh(x[1])
    b = (lam - c) / n
    return MeanFieldParams(a=c + b, b=b, mu=x[2], sigma2=np.exp(x[3]), n=n), float(np.exp(x[4]))


def _mf_pack(mf: MeanFieldParams, r: float) -> np.ndarray:
    lam = np.clip(mf.lambda1, -BOUNDARY, BOUNDARY)
    c = np.clip(mf.lambda_perp, -BOUNDARY, BOUNDARY)
    return np.array([np.arctanh(lam), np.arctanh(c), mf.mu, np.log(mf.sigma2), np.log(r)])


def _kfssi_meanfield(Y: np.ndarray, start: MeanFieldParams, r0: float, seed) -> tuple:
    n = Y.shape[1]
    Q = ones_basis(n)

    def nll(x):
        if not np.all(np.isfinite(x)) or np.abs(x[3:]).max() > 60:
            return np.inf
        mf, r = _mf_unpack(x, n)
        try:
            val = -meanfield_loglik(mf, 0.0, r, Y, Q)
        except (NumericalError, StationarityError):
            return np.inf
        return val if np.isfinite(val) else np.inf

    x0 = _mf_pack(start, r0)
    init_ll = -nll(x0)
    rng = np.random.default_rng(seed)
    starts = [x0] + [x0 + rng.normal(0.0, 0.2, x0.size) for _ in range(N_RESTARTS)]
    best = None
    iters = 0
    opts = {"fatol": FATOL, "xatol": 1e-8, "maxiter": 20000, "maxfev": 40000}
    for s in starts:
        res = minimize(nll, s, method="Nelder-Mead", options=opts)
        iters += res.nit
        if best is None or res.fun < best.fun:
            best = res
    # polish: restart from the optimum until the likelihood stops improving
    while True:
        again = minimize(nll, best.x, method="Nelder-Mead", options=opts)
        iters += again.nit
        if not again.fun < best.fun - FATOL:
            break
        best = again
    mf, r = _mf_unpack(best.x, n)
    return mf, r, -best.fun, init_ll, iters


def _project_meanfield(mf: MeanFieldParams) -> tuple[MeanFieldParams, bool]:
    lam, c = mf.lambda1, mf.lambda_perp
    if max(abs(lam), abs(c)) < BOUNDARY:
        return mf, False
    lam = float(np.clip(lam, -BOUNDARY, BOUNDARY))
    c = float(np.clip(c, -BOUNDARY, BOUNDARY))
    b = (lam - c) / mf.n
    return MeanFieldParams(a=c + b, b=b, mu=mf.mu, sigma2=mf.sigma2, n=mf.n), True


def _em_full(Y: np.ndarray, ssp: StateSpaceParams, tol: float, max_iter: int):
    T, d = Y.shape
    obs = ~np.isnan(Y)
    ll_old = -np.inf
    hit_boundary = False
    init_ll = None
    it = 0
    for it in range(1, max_iter + 1):
        sm = rts_smoother(ssp, Y)
        if init_ll is None:
            init_ll = sm.loglik
        if abs(sm.loglik - ll_old) < tol:
            break
        ll_old = sm.loglik
        xs, Ps, L1 = sm.means, sm.covs, sm.lag1
        # second moments over transitions t = 2..T
        Exx = Ps + xs[:, :, None] * xs[:, None, :]
        S11 = Exx[1:].sum(axis=0)
        S00 = Exx[:-1].sum(axis=0)
        S10 = (L1 + xs[1:, :, None] * xs[:-1, None, :]).sum(axis=0)
        s1, s0 = xs[1:].sum(axis=0), xs[:-1].sum(axis=0)
        m = T - 1
        Ezz = np.block([[np.array([[m]]), s0[None, :]], [s0[:, None], S00]])
        Exz = np.column_stack([s1, S10])
        A = np.linalg.solve(Ezz, Exz.T).T
        mu, B = A[:, 0], A[:, 1:]
        Sigma = (S11 - A @ Exz.T) / m
        Sigma = 0.5 * (Sigma + Sigma.T) + VAR_FLOOR * np.eye(d)
        B, proj = _project_B(B)
        hit_boundary |= proj
        # gamma is not identified jointly with mu and stays at its anchor
        gamma = ssp.gamma
        cnt = np.maximum(obs.sum(axis=0), 1)
        resid = np.where(obs, (Y - gamma - xs) ** 2 + np.diagonal(Ps, axis1=1, axis2=2), 0.0)
        R = np.maximum(resid.sum(axis=0) / cnt, VAR_FLOOR)
        ssp = StateSpaceParams(gamma, R, VarParams(mu, B, Sigma))
    else:
        sm = rts_smoother(ssp, Y)
    return ssp, sm.loglik, init_ll, hit_boundary, it


def kfssi_fit(theta_hats, mode: str = "meanfield", seed: int = 0, tol: float | None = None, max_iter: int = EM_MAX_ITER) -> KfssiFit:
    """State-space estimation treating the fitness series as noisy observations of a latent VAR.

    ``meanfield``: maximizes the Kalman log-likelihood over ``(a, b, mu, sigma2, r)``
    with ``R = r I`` by Nelder-Mead from the direct-regression estimate plus 5
    jittered restarts; the observation bias is held at 0 because it is not
    identified jointly with ``mu``. ``full``: EM with the smoother in the E-step,
    updating ``(mu, B, Sigma, R)`` with ``R`` diagonal; the bias again stays at 0.

    NaN entries of the series (e.g. saturated estimates) are treated as missing.
    A transition matrix reaching spectral radius 0.999 is projected there and
    a ``BoundaryWarning`` is issued.
    """
    Y, directed = _values(theta_hats)
    times = theta_hats.times if isinstance(theta_hats, FitnessSeries) else None
    T, d = Y.shape
    if T < 3:
        raise ValidationError("need at least 3 time points")
    if np.isnan(Y).all(axis=0).any():
        bad = np.flatnonzero(np.isnan(Y).all(axis=0))
        raise SingularDesignError(f"coordinates never observed: {bad.tolist()}", bad)
    filled = _fill_missing(Y)
    if mode == "meanfield":
        start = nssi_fit(filled, "meanfield")
        start, _ = _project_meanfield(start)
        r0 = max(0.5 * start.sigma2, 1e-6)
        start = MeanFieldParams(start.a, start.b, start.mu, max(0.5 * start.sigma2, 1e-6), start.n)
        mf, r, ll, init_ll, iters = _kfssi_meanfield(Y, start, r0, seed)
        mf, boundary = _project_meanfield(mf)
        ssp = StateSpaceParams(np.zeros(d), np.full(d, r), mf)
        if boundary:
            ll = kalman_filter(ssp, Y).loglik
    elif mode == "full":
        try:
            start = nssi_fit(filled, "full")
            B, _ = _project_B(start.B)
            Sigma = 0.5 * start.Sigma + VAR_FLOOR * np.eye(d)
            R = np.maximum(0.5 * np.diag(start.Sigma), 1e-6)
            mu = start.mu
        except SingularDesignError:
            B, Sigma = 0.5 * np.eye(d), 0.5 * np.diag(np.nanvar(Y, axis=0)) + 1e-6 * np.eye(d)
            R = np.diag(Sigma).copy()
            mu = 0.5 * np.nanmean(Y, axis=0)
        ssp0 = StateSpaceParams(np.zeros(d), R, VarParams(mu, B, Sigma))
        ssp, ll, init_ll, boundary, iters = _em_full(Y, ssp0, EM_TOL if tol is None else tol, max_iter)
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    if boundary:
        warnings.warn(f"transition matrix projected to spectral radius {BOUNDARY}", BoundaryWarning, stacklevel=2)
    return KfssiFit(ssp, _filtered_series(ssp, Y, directed, times), float(ll), float(init_ll), bool(boundary), int(iters))


def _fill_missing(Y: np.ndarray) -> np.ndarray:
    """Column means in place of NaN, for starting values only."""
    if not np.isnan(Y).any():
        return Y
    return np.where(np.isnan(Y), np.nanmean(Y, axis=0), Y)
