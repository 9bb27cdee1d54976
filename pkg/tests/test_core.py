import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_stationary_B
from netirf.core import (
    AdjacencySnapshot,
    FitnessSeries,
    FitnessState,
    GaussianMoments,
    MeanFieldParams,
    ShockSpec,
    StationarityError,
    TemporalNetwork,
    ValidationError,
    VarParams,
    fitness_from_text,
    fitness_to_text,
    meanfield_matrix,
    network_from_text,
    network_to_text,
    psd_sqrt,
    read_network,
    spectral_radius,
    stationary_cov,
    stationary_mean,
    write_network,
)


class TestAdjacencySnapshot:
    def test_rejects_self_loop(self):
        A = np.zeros((3, 3), dtype=int)
        A[1, 1] = 1
        with pytest.raises(ValidationError):
            AdjacencySnapshot(A)

    def test_rejects_asymmetric_undirected(self):
        A = np.zeros((3, 3), dtype=int)
        A[0, 1] = 1
        with pytest.raises(ValidationError):
            AdjacencySnapshot(A, directed=False)
        AdjacencySnapshot(A, directed=True)

    def test_rejects_non_binary(self):
        A = np.zeros((3, 3))
        A[0, 1] = A[1, 0] = 2
        with pytest.raises(ValidationError):
            AdjacencySnapshot(A)

    def test_immutable(self):
        s = AdjacencySnapshot(np.zeros((3, 3), dtype=int))
        with pytest.raises(ValueError):
            s.entries[0, 1] = 1

    def test_arcs_undirected_listed_once(self):
        A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        assert AdjacencySnapshot(A).arcs().tolist() == [[0, 1], [1, 2]]


class TestTemporalNetwork:
    def test_timestamps_must_increase(self):
        s1 = AdjacencySnapshot(np.zeros((3, 3), dtype=int), timestamp=2)
        s2 = AdjacencySnapshot(np.zeros((3, 3), dtype=int), timestamp=2)
        with pytest.raises(ValidationError):
            TemporalNetwork((s1, s2))

    def test_mixed_directedness_rejected(self):
        s1 = AdjacencySnapshot(np.zeros((3, 3), dtype=int), False, 1)
        s2 = AdjacencySnapshot(np.zeros((3, 3), dtype=int), True, 2)
        with pytest.raises(ValidationError):
            TemporalNetwork((s1, s2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 6), st.integers(1, 5), st.booleans(), st.integers(0, 2**31 - 1))
    def test_text_round_trip(self, n, T, directed, seed):
        rng = np.random.default_rng(seed)
        snaps = []
        for t in range(T):
            A = (rng.random((n, n)) < 0.4).astype(int)
            if not directed:
                A = np.triu(A, 1)
                A = A + A.T
            np.fill_diagonal(A, 0)
            snaps.append(AdjacencySnapshot(A, directed, 3 * t + 1))
        net = TemporalNetwork(tuple(snaps), tuple(f"node{i}" for i in range(n)))
        body, header = network_to_text(net)
        back = network_from_text(body, header)
        assert np.array_equal(back.stacked(), net.stacked())
        assert back.timestamps == net.timestamps
        assert back.node_labels == net.node_labels
        assert network_to_text(back) == (body, header)

    def test_file_round_trip_is_bit_exact(self, tmp_path):
        A = np.array([[0, 1, 1], [0, 0, 1], [1, 0, 0]])
        net = TemporalNetwork((AdjacencySnapshot(A, True, 1), AdjacencySnapshot(A.T.copy(), True, 2)))
        c, j = write_network(net, tmp_path / "net.csv")
        back = read_network(j)
        c2, j2 = write_network(back, tmp_path / "again.csv")
        assert c.read_bytes() == c2.read_bytes()
        assert j.read_bytes() == j2.read_bytes()
        assert b"\r\n" not in c.read_bytes()


class TestFitness:
    def test_directed_ordering_in_then_out(self):
        s = FitnessState.from_in_out([1.0, 2.0], [3.0, 4.0])
        assert s.theta_in.tolist() == [1.0, 2.0]
        assert s.theta_out.tolist() == [3.0, 4.0]
        assert s.n == 2 and s.d == 4

    def test_non_finite_state_rejected(self):
        with pytest.raises(ValidationError):
            FitnessState([0.0, np.inf])

    def test_directed_needs_even_length(self):
        with pytest.raises(ValidationError):
            FitnessState([0.0, 1.0, 2.0], directed=True)

    @pytest.mark.parametrize("directed", [False, True])
    def test_csv_round_trip(self, directed):
        rng = np.random.default_rng(3)
        values = rng.normal(size=(4, 6))
        values[1, 2] = np.nan  # missing entries survive
        series = FitnessSeries(values, directed, np.array([2, 3, 5, 8]))
        text = fitness_to_text(series)
        back = fitness_from_text(text)
        np.testing.assert_array_equal(back.values, series.values)
        assert back.times.tolist() == [2, 3, 5, 8]
        assert back.directed == directed
        assert fitness_to_text(back) == text

    def test_coordinate_kinds(self):
        text = fitness_to_text(FitnessSeries(np.zeros((1, 4)), True))
        kinds = [line.split(",")[2] for line in text.splitlines()[1:]]
        assert kinds == ["in", "in", "out", "out"]


class TestParams:
    def test_sigma_must_be_psd(self):
        with pytest.raises(ValidationError):
            VarParams(np.zeros(2), np.zeros((2, 2)), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            VarParams(np.zeros(3), np.zeros((2, 2)), np.eye(2))

    def test_meanfield_validation(self):
        with pytest.raises(ValidationError):
            MeanFieldParams(0.3, 0.01, 0.0, 0.0, 10)
        with pytest.raises(ValidationError):
            MeanFieldParams(0.3, 0.01, 0.0, 0.1, 1)
        with pytest.raises(ValidationError):
            MeanFieldParams(0.3, 0.01, 0.0, 0.1, 10, p=1.5)

    def test_meanfield_eigenvalues(self, baseline):
        assert baseline.lambda1 == pytest.approx(0.79)
        assert baseline.lambda_perp == pytest.approx(0.29)
        ev = np.sort(np.linalg.eigvalsh(baseline.matrix()))
        assert ev[-1] == pytest.approx(0.79)
        np.testing.assert_allclose(ev[:-1], 0.29, atol=1e-12)

    def test_shock_single(self):
        s = ShockSpec.single(4, 2, -0.3)
        assert s.delta.tolist() == [0.0, 0.0, -0.3, 0.0]

    def test_gaussian_moments_psd_tolerance(self):
        GaussianMoments(np.zeros(2), np.diag([1.0, -1e-12]))
        with pytest.raises(ValidationError):
            GaussianMoments(np.zeros(2), np.diag([1.0, -1e-3]))


class TestSpectralRadius:
    def test_baseline_meanfield(self):
        assert spectral_radius(meanfield_matrix(0.3, 0.01, 50)) == pytest.approx(0.79, abs=1e-12)

    def test_zero_matrix(self):
        assert spectral_radius(np.zeros((4, 4))) == 0.0

    def test_against_dense_eigensolver(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            B = rng.normal(size=(4, 4))
            oracle = max(abs(np.roots(np.poly(B))))
            assert spectral_radius(B) == pytest.approx(oracle, abs=1e-10)

    def test_rejects_bad_input(self):
        with pytest.raises(ValidationError):
            spectral_radius(np.zeros((2, 3)))
        with pytest.raises(ValidationError):
            spectral_radius(np.array([[np.nan, 0.0], [0.0, 0.0]]))

    @given(st.floats(-3, 3), st.integers(0, 1000))
    def test_homogeneous_in_scalar(self, c, seed):
        B = np.random.default_rng(seed).normal(size=(3, 3))
        assert spectral_radius(c * B) == pytest.approx(abs(c) * spectral_radius(B), rel=1e-9, abs=1e-12)

    @given(st.floats(-0.5, 0.5), st.floats(-0.1, 0.1), st.integers(2, 30))
    def test_meanfield_closed_form(self, a, b, n):
        expected = max(abs(a + b * (n - 1)), abs(a - b))
        assert spectral_radius(meanfield_matrix(a, b, n)) == pytest.approx(expected, abs=1e-10)


class TestStationaryMoments:
    def test_katz_value(self):
        mf = MeanFieldParams(0.3, 0.01, 0.3, 0.1, 50)
        np.testing.assert_allclose(stationary_mean(mf.to_var()), 0.3 / 0.21, atol=1e-12)
        assert 0.3 / 0.21 == pytest.approx(1.4286, abs=1e-4)

    def test_zero_intercept(self):
        v = VarParams(np.zeros(3), 0.5 * np.eye(3), np.eye(3))
        assert np.all(stationary_mean(v) == 0.0)

    def test_neumann_series_oracle(self):
        rng = np.random.default_rng(5)
        B = random_stationary_B(rng, 5, 0.8)
        mu = rng.normal(size=5)
        acc, term = np.zeros(5), mu.copy()
        for _ in range(201):
            acc += term
            term = B @ term
        v = VarParams(mu, B, np.eye(5))
        np.testing.assert_allclose(stationary_mean(v), acc, atol=1e-8)

    def test_non_stationary_raises(self):
        with pytest.raises(StationarityError):
            stationary_mean(VarParams(np.ones(2), 1.1 * np.eye(2), np.eye(2)))

    @given(st.floats(-0.9, 0.9), st.floats(-0.05, 0.05), st.floats(-1, 1), st.integers(2, 40))
    def test_homogeneous_mean_is_katz(self, a, b, mu, n):
        mf = MeanFieldParams(a, b, mu, 0.1, n)
        if abs(mf.lambda1) >= 0.99 or abs(mf.lambda_perp) >= 0.99:
            return
        np.testing.assert_allclose(stationary_mean(mf.to_var()), mu / (1 - mf.lambda1), atol=1e-12, rtol=1e-9)

    def test_stationary_cov_solves_lyapunov(self):
        rng = np.random.default_rng(2)
        B = random_stationary_B(rng, 4, 0.7)
        S = np.eye(4) * 0.3
        P = stationary_cov(VarParams(np.zeros(4), B, S))
        np.testing.assert_allclose(B @ P @ B.T + S, P, atol=1e-12)

    def test_psd_sqrt(self):
        rng = np.random.default_rng(0)
        L = rng.normal(size=(4, 2))
        S = L @ L.T  # rank 2
        R = psd_sqrt(S)
        np.testing.assert_allclose(R @ R.T, S, atol=1e-10)
        np.testing.assert_allclose(R, R.T, atol=1e-12)
