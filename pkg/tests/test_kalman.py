import numpy as np
import pytest
from scipy.stats import multivariate_normal

from conftest import random_cov, random_stationary_B
from netirf.core import MeanFieldParams, NumericalError, StationarityError, ValidationError, VarParams, stationary_cov, stationary_mean
from netirf.estimation.kalman import (
    StateSpaceParams,
    kalman_filter,
    kalman_loglik,
    meanfield_loglik,
    meanfield_loglik_missing,
    ones_basis,
    rts_smoother,
)


def joint_law(ssp, T):
    """Mean and covariance of the stacked (theta_1..theta_T, y_1..y_T)."""
    v = ssp.var
    d = v.d
    m0, P0 = stationary_mean(v), stationary_cov(v)
    # stationary start: every theta_t has the stationary law
    mean_th = np.tile(m0, T)
    C = np.zeros((T * d, T * d))
    for s in range(T):
        for t in range(s, T):
            block = np.linalg.matrix_power(v.B, t - s) @ P0
            C[t * d:(t + 1) * d, s * d:(s + 1) * d] = block
            C[s * d:(s + 1) * d, t * d:(t + 1) * d] = block.T
    R = np.kron(np.eye(T), np.diag(ssp.obs_noise_cov))
    mean = np.concatenate([mean_th, mean_th + np.tile(ssp.gamma, T)])
    cov = np.block([[C, C], [C, C + R]])
    return mean, cov


def condition(mean, cov, keep, given, values):
    S_kg = cov[np.ix_(keep, given)]
    S_gg = cov[np.ix_(given, given)]
    m = mean[keep] + S_kg @ np.linalg.solve(S_gg, values - mean[given])
    c = cov[np.ix_(keep, keep)] - S_kg @ np.linalg.solve(S_gg, S_kg.T)
    return m, c


def random_model(seed, d):
    rng = np.random.default_rng(seed)
    var = VarParams(rng.normal(size=d), random_stationary_B(rng, d, 0.8), random_cov(rng, d, 0.5))
    return StateSpaceParams(rng.normal(0, 0.3, d), rng.uniform(0.1, 0.5, d), var), rng


class TestJointGaussianOracle:
    @pytest.mark.parametrize("d, T, seed", [(2, 3, 0), (3, 4, 1), (3, 4, 2)])
    def test_filter(self, d, T, seed):
        ssp, rng = random_model(seed, d)
        Y = rng.normal(size=(T, d))
        mean, cov = joint_law(ssp, T)
        res = kalman_filter(ssp, Y)
        for t in range(T):
            keep = np.arange(t * d, (t + 1) * d)
            given = T * d + np.arange((t + 1) * d)
            m, c = condition(mean, cov, keep, given, Y[: t + 1].ravel())
            np.testing.assert_allclose(res.filtered[t].mean, m, atol=1e-10)
            np.testing.assert_allclose(res.filtered[t].cov, c, atol=1e-10)
        y_idx = T * d + np.arange(T * d)
        ll = multivariate_normal(mean[y_idx], cov[np.ix_(y_idx, y_idx)]).logpdf(Y.ravel())
        assert res.loglik == pytest.approx(ll, abs=1e-10)
        assert kalman_loglik(ssp, Y) == pytest.approx(ll, abs=1e-10)

    @pytest.mark.parametrize("d, T, seed", [(2, 3, 3), (3, 4, 4)])
    def test_smoother(self, d, T, seed):
        ssp, rng = random_model(seed, d)
        Y = rng.normal(size=(T, d))
        mean, cov = joint_law(ssp, T)
        sm = rts_smoother(ssp, Y)
        m, c = condition(mean, cov, np.arange(T * d), T * d + np.arange(T * d), Y.ravel())
        for t in range(T):
            sl = slice(t * d, (t + 1) * d)
            np.testing.assert_allclose(sm.means[t], m[sl], atol=1e-10)
            np.testing.assert_allclose(sm.covs[t], c[sl, sl], atol=1e-10)
            if t < T - 1:
                nxt = slice((t + 1) * d, (t + 2) * d)
                np.testing.assert_allclose(sm.lag1[t], c[nxt, sl], atol=1e-10)

    def test_missing_entries(self):
        ssp, rng = random_model(5, 3)
        T, d = 4, 3
        Y = rng.normal(size=(T, d))
        Y[1, 0] = Y[2, :] = np.nan
        mean, cov = joint_law(ssp, T)
        seen = np.flatnonzero(~np.isnan(Y.ravel()))
        res = kalman_filter(ssp, Y)
        for t in range(T):
            given = T * d + seen[seen < (t + 1) * d]
            m, c = condition(mean, cov, np.arange(t * d, (t + 1) * d), given, Y.ravel()[given - T * d])
            np.testing.assert_allclose(res.filtered[t].mean, m, atol=1e-10)
            np.testing.assert_allclose(res.filtered[t].cov, c, atol=1e-10)
        y_idx = T * d + seen
        ll = multivariate_normal(mean[y_idx], cov[np.ix_(y_idx, y_idx)]).logpdf(Y.ravel()[seen])
        assert res.loglik == pytest.approx(ll, abs=1e-10)


class TestLimits:
    def test_tiny_observation_noise_tracks_data(self):
        ssp, rng = random_model(6, 3)
        ssp = StateSpaceParams(ssp.gamma, np.full(3, 1e-12), ssp.latent)
        Y = rng.normal(size=(5, 3))
        res = kalman_filter(ssp, Y)
        for t in range(5):
            np.testing.assert_allclose(res.filtered[t].mean, Y[t] - ssp.gamma, atol=1e-8)

    def test_no_latent_noise_memoryless(self):
        # B = 0 and Sigma -> 0: the latent state is mu, observations are pure noise
        mu = np.array([0.3, -0.2])
        var = VarParams(mu, np.zeros((2, 2)), 1e-14 * np.eye(2))
        ssp = StateSpaceParams(np.zeros(2), np.full(2, 0.5), var)
        Y = np.random.default_rng(7).normal(size=(6, 2))
        res = kalman_filter(ssp, Y)
        for m in res.filtered:
            np.testing.assert_allclose(m.mean, mu, atol=1e-10)
        ll = multivariate_normal(mu, 0.5 * np.eye(2)).logpdf(Y).sum()
        assert res.loglik == pytest.approx(ll, abs=1e-8)

    def test_all_missing_is_prior(self):
        ssp, _ = random_model(8, 2)
        res = kalman_filter(ssp, np.full((3, 2), np.nan))
        assert res.loglik == 0.0
        np.testing.assert_allclose(res.filtered[0].mean, stationary_mean(ssp.var), atol=1e-12)

    def test_nonstationary_prior_rejected(self):
        var = VarParams(np.zeros(2), 1.05 * np.eye(2), np.eye(2))
        with pytest.raises(StationarityError):
            kalman_filter(StateSpaceParams(np.zeros(2), np.ones(2), var), np.zeros((2, 2)))

    def test_indefinite_innovation_raises(self):
        # round-off sized negative variance passes validation but breaks Cholesky
        var = VarParams(np.zeros(2), np.zeros((2, 2)), np.diag([-1e-13, 1.0]))
        ssp = StateSpaceParams(np.zeros(2), np.array([1e-300, 1e-300]), var)
        with pytest.raises(NumericalError, match="t=1"):
            kalman_filter(ssp, np.zeros((2, 2)))

    def test_validation(self):
        var = VarParams(np.zeros(2), np.zeros((2, 2)), np.eye(2))
        with pytest.raises(ValidationError):
            StateSpaceParams(np.zeros(2), np.array([1.0, 0.0]), var)
        with pytest.raises(ValidationError):
            StateSpaceParams(np.zeros(2), np.array([[1.0, 0.1], [0.1, 1.0]]), var)
        with pytest.raises(ValidationError):
            kalman_filter(StateSpaceParams(np.zeros(2), np.ones(2), var), np.zeros((3, 5)))


class TestMeanFieldFastPath:
    def test_basis_orthonormal(self):
        Q = ones_basis(6)
        np.testing.assert_allclose(Q.T @ Q, np.eye(6), atol=1e-12)
        np.testing.assert_allclose(Q[:, 0], 1 / np.sqrt(6), atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_general_filter(self, seed):
        rng = np.random.default_rng(seed)
        mf = MeanFieldParams(0.5, 0.04, -0.1, 0.06, 6)
        Y = rng.normal(size=(12, 6))
        ssp = StateSpaceParams(np.full(6, 0.2), np.full(6, 0.3), mf)
        ref = kalman_loglik(ssp, Y)
        assert meanfield_loglik(mf, 0.2, 0.3, Y) == pytest.approx(ref, abs=1e-9)
        assert meanfield_loglik_missing(mf, 0.2, 0.3, Y) == pytest.approx(ref, abs=1e-9)
        Y[3, 2] = np.nan
        assert meanfield_loglik(mf, 0.2, 0.3, Y) == pytest.approx(kalman_loglik(ssp, Y), abs=1e-9)


class TestShiftInvariance:
    @pytest.mark.parametrize("seed", range(4))
    def test_joint_shift_leaves_loglik(self, seed):
        ssp, rng = random_model(10 + seed, 3)
        v, c = ssp.var, rng.normal(size=3)
        shifted = StateSpaceParams(
            ssp.gamma - c, ssp.obs_noise_cov, VarParams(v.mu + (np.eye(3) - v.B) @ c, v.B, v.Sigma)
        )
        Y = rng.normal(size=(6, 3))
        assert kalman_loglik(shifted, Y) == pytest.approx(kalman_loglik(ssp, Y), abs=1e-10)
