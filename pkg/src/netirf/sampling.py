"""Network generation from fitnesses, network metrics and Monte Carlo expectations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .core import AdjacencySnapshot, FitnessState, GaussianMoments, ValidationError, psd_sqrt

CHUNK = 1024


def link_probability(theta_out_i, theta_in_j):
    """Logistic link ``1 / (1 + exp(-theta_out_i - theta_in_j))``."""
    return expit(np.add(theta_out_i, theta_in_j))


def link_matrix(values: np.ndarray, directed: bool) -> np.ndarray:
    """Link probabilities for a batch of states.

    ``values`` has shape ``(..., d)``; returns ``(..., n, n)`` with zero diagonal.
    """
    values = np.asarray(values, dtype=float)
    if directed:
        n = values.shape[-1] // 2
        th_in, th_out = values[..., :n], values[..., n:]
    else:
        n = values.shape[-1]
        th_in = th_out = values
    P = expit(th_out[..., :, None] + th_in[..., None, :])
    idx = np.arange(n)
    P[..., idx, idx] = 0.0
    return P


def sample_network(state: FitnessState, directed: bool | None = None, seed=None, timestamp: int = 0) -> AdjacencySnapshot:
    """Draw one snapshot; arcs are independent Bernoulli(link probability).

    Undirected graphs draw each pair ``i < j`` once and mirror it.
    """
    directed = state.directed if directed is None else directed
    rng = np.random.default_rng(seed)
    P = link_matrix(state.values, directed)
    U = rng.random(P.shape)
    A = (U < P).astype(np.int8)
    if not directed:
        A = np.triu(A, 1)
        A = A + A.T
    return AdjacencySnapshot(A, directed, timestamp)


def sample_networks(values: np.ndarray, directed: bool, rng: np.random.Generator) -> np.ndarray:
    """Vectorized sampling for a ``(k, d)`` batch; returns ``(k, n, n)`` int8 arrays."""
    P = link_matrix(values, directed)
    A = (rng.random(P.shape) < P).astype(np.int8)
    if not directed:
        A = np.triu(A, 1)
        A = A + np.swapaxes(A, -1, -2)
    return A


def density(A) -> float:
    """Fraction of ordered pairs ``i != j`` that carry an arc."""
    M = A.entries if isinstance(A, AdjacencySnapshot) else np.asarray(A)
    n = M.shape[-1]
    if n < 2:
        raise ValidationError("density needs at least two nodes")
    return float(M.sum()) / (n * (n - 1))


def degrees(A: AdjacencySnapshot):
    """``(d_in, d_out)`` for directed snapshots, the degree vector otherwise."""
    M = A.entries.astype(np.int64)
    if A.directed:
        return M.sum(axis=0), M.sum(axis=1)
    return M.sum(axis=1)


def mean_degree(A) -> float:
    M = A.entries if isinstance(A, AdjacencySnapshot) else np.asarray(A)
    return float(M.sum()) / M.shape[-1]


# ---------------------------------------------------------------------------
# metric registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Metric:
    """A named network metric.

    ``batch`` maps a ``(k, n, n)`` stack of adjacency matrices to k values.
    ``conditional`` (optional) maps ``(k, n, n)`` link probabilities to
    ``E[f(A) | theta]`` exactly, enabling Rao-Blackwellized estimation.
    """

    name: str
    batch: Callable[[np.ndarray], np.ndarray]
    conditional: Callable[[np.ndarray], np.ndarray] | None = None


def _density_batch(A: np.ndarray) -> np.ndarray:
    n = A.shape[-1]
    return A.sum(axis=(-1, -2)) / (n * (n - 1))


def _mean_degree_batch(A: np.ndarray) -> np.ndarray:
    return A.sum(axis=(-1, -2)) / A.shape[-1]


METRICS: dict[str, Metric] = {}


def register_metric(metric: Metric) -> None:
    METRICS[metric.name] = metric


def get_metric(name: str) -> Metric:
    try:
        return METRICS[name]
    except KeyError:
        raise ValidationError(f"unknown metric {name!r}; known: {sorted(METRICS)}") from None


register_metric(Metric("density", _density_batch, _density_batch))
register_metric(Metric("mean_degree", _mean_degree_batch, _mean_degree_batch))


def metric_given_theta(
    metric: Metric,
    values: np.ndarray,
    directed: bool,
    rng: np.random.Generator | None = None,
    rao_blackwell: bool = True,
    uniforms: np.ndarray | None = None,
) -> np.ndarray:
    """Metric values for a batch of fitness states.

    With ``rao_blackwell`` and a metric that provides ``conditional`` the exact
    conditional mean is returned; otherwise one network is sampled per state,
    from ``uniforms`` when given (common random numbers) or from ``rng``.
    """
    P = link_matrix(values, directed)
    if rao_blackwell and metric.conditional is not None:
        return metric.conditional(P)
    U = rng.random(P.shape) if uniforms is None else uniforms
    A = (U < P).astype(np.int8)
    if not directed:
        A = np.triu(A, 1)
        A = A + np.swapaxes(A, -1, -2)
    return metric.batch(A)


def draw_gaussian(moments: GaussianMoments, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    L = psd_sqrt(moments.cov)
    return moments.mean + rng.standard_normal((n_samples, moments.d)) @ L.T


def mc_expected_metric(
    metric: str,
    moments: GaussianMoments,
    n_samples: int,
    seed=None,
    directed: bool = False,
    rao_blackwell: bool = True,
) -> tuple[float, float]:
    """Monte Carlo ``E[f(A)]`` for ``theta ~ N(moments)`` and ``A | theta`` from the link model.

    Returns the estimate and the standard error of the mean.
    """
    if n_samples < 2:
        raise ValidationError("n_samples must be >= 2")
    m = get_metric(metric)
    rng = np.random.default_rng(seed)
    vals = np.empty(n_samples)
    for start in range(0, n_samples, CHUNK):
        k = min(CHUNK, n_samples - start)
        theta = draw_gaussian(moments, k, rng)
        vals[start : start + k] = metric_given_theta(m, theta, directed, rng, rao_blackwell)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples))
