import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from netirf.core import AdjacencySnapshot, FitnessState, TemporalNetwork
from netirf.estimation.mle import THETA_MAX, degree_sequence_interior, expected_degrees, mle_series, mle_snapshot
from netirf.sampling import sample_network

PATH = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def path_loglik(t1, t3):
    # middle node clipped at +THETA_MAX; arcs (1,2), (2,3) present, (1,3) absent
    return (
        np.log(expit(t1 + THETA_MAX)) + np.log(expit(t3 + THETA_MAX)) + np.log(1.0 - expit(t1 + t3))
    )


def grid_argmax(lo, hi, step):
    g = np.arange(lo, hi + step / 2, step)
    L = path_loglik(g[:, None], g[None, :])
    i, j = np.unravel_index(np.argmax(L), L.shape)
    return g[i], g[j]


def admissible_snapshot(rng, n, directed=False):
    while True:
        theta = rng.normal(0.0, 1.0, 2 * n if directed else n)
        A = sample_network(FitnessState(theta, directed), seed=rng)
        if directed:
            return A
        if degree_sequence_interior(A.entries.sum(axis=1)):
            return A


class TestUndirected:
    def test_regular_graph(self):
        C4 = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]])
        fit = mle_snapshot(AdjacencySnapshot(C4))
        assert fit.converged
        np.testing.assert_allclose(fit.theta_hat.values, 0.5 * logit(2 / 3), atol=1e-8)
        assert 0.5 * logit(2 / 3) == pytest.approx(0.3466, abs=1e-4)

    def test_path_grid_oracle(self):
        # coarse grid, then a fine grid around the coarse optimum
        c1, c3 = grid_argmax(-15.0, 0.0, 0.01)
        lo = min(c1, c3) - 0.02
        g = np.arange(lo, lo + 0.04, 1e-5)
        L = path_loglik(g[:, None], g[None, :])
        i, j = np.unravel_index(np.argmax(L), L.shape)
        fit = mle_snapshot(AdjacencySnapshot(PATH))
        assert fit.clipped_coords == (1,)
        assert fit.theta_hat.values[1] == THETA_MAX
        assert fit.theta_hat.values[0] == pytest.approx(g[i], abs=1e-4)
        assert fit.theta_hat.values[2] == pytest.approx(g[j], abs=1e-4)
        assert fit.theta_hat.values[0] == pytest.approx(-THETA_MAX / 3, abs=1e-4)

    def test_empty_graph(self):
        fit = mle_snapshot(AdjacencySnapshot(np.zeros((5, 5), dtype=int)))
        assert not fit.converged
        assert np.all(fit.theta_hat.values == -THETA_MAX)
        assert fit.clipped_nodes == (0, 1, 2, 3, 4)

    def test_complete_graph(self):
        fit = mle_snapshot(AdjacencySnapshot(1 - np.eye(5, dtype=int)))
        assert np.all(fit.theta_hat.values == THETA_MAX)

    def test_degree_residuals(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(100):
            A = admissible_snapshot(rng, 10)
            fit = mle_snapshot(A)
            assert fit.converged and not fit.clipped_coords
            res = expected_degrees(fit.theta_hat) - A.entries.sum(axis=1)
            worst = max(worst, np.abs(res).max())
        assert worst < 1e-6

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6))
    def test_relabel_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        A = admissible_snapshot(rng, 8)
        perm = rng.permutation(8)
        fit = mle_snapshot(A).theta_hat.values
        fit_p = mle_snapshot(AdjacencySnapshot(A.entries[np.ix_(perm, perm)])).theta_hat.values
        np.testing.assert_allclose(fit_p, fit[perm], atol=1e-7)

    def test_interior_check(self):
        assert degree_sequence_interior([2, 2, 2, 2])
        assert not degree_sequence_interior([1, 2, 1])
        assert not degree_sequence_interior([0, 1, 1, 2])
        # star on four nodes: leaves have degree 1 but the hub has n-1
        assert not degree_sequence_interior([3, 1, 1, 1])


class TestDirected:
    def test_strongly_connected_has_exact_degrees(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(30):
            A = admissible_snapshot(rng, 10, directed=True)
            fit = mle_snapshot(A)
            if fit.clipped_coords:
                continue
            M = A.entries
            res = expected_degrees(fit.theta_hat) - np.concatenate([M.sum(axis=0), M.sum(axis=1)])
            worst = max(worst, np.abs(res).max())
            th = fit.theta_hat
            assert th.theta_in.mean() == pytest.approx(th.theta_out.mean(), abs=1e-9)
        assert worst < 1e-6

    def test_sink_and_source_are_clipped(self):
        rng = np.random.default_rng(2)
        A = sample_network(FitnessState(np.zeros(16), True), seed=rng).entries.copy()
        A[0, :] = 0  # node 0 never lends
        A[:, 1] = 0  # node 1 never borrows
        fit = mle_snapshot(AdjacencySnapshot(A, directed=True))
        th = fit.theta_hat
        assert th.theta_out[0] == -THETA_MAX
        assert th.theta_in[1] == -THETA_MAX
        assert 8 + 0 in fit.clipped_coords and 1 in fit.clipped_coords

    def test_empty_and_complete(self):
        e = mle_snapshot(AdjacencySnapshot(np.zeros((4, 4), dtype=int), directed=True))
        assert not e.converged and np.all(e.theta_hat.values == -THETA_MAX)
        c = mle_snapshot(AdjacencySnapshot(1 - np.eye(4, dtype=int), directed=True))
        assert np.all(c.theta_hat.values == THETA_MAX)

    def test_link_probabilities_invariant_to_gauge(self):
        rng = np.random.default_rng(3)
        A = admissible_snapshot(rng, 6, directed=True)
        th = mle_snapshot(A).theta_hat
        shifted = FitnessState.from_in_out(th.theta_in + 1.3, th.theta_out - 1.3)
        np.testing.assert_allclose(expected_degrees(th), expected_degrees(shifted), atol=1e-12)


class TestSeries:
    def test_mask_marks_clipped(self):
        snaps = (
            AdjacencySnapshot(PATH, timestamp=1),
            AdjacencySnapshot(np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]]), timestamp=2),
        )
        series, mask, fits = mle_series(TemporalNetwork(snaps))
        assert mask.tolist() == [[False, True, False], [True, False, False]]
        assert series.values.shape == (2, 3)
        assert series.times.tolist() == [1, 2]
        assert len(fits) == 2
