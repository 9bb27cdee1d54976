"""Per-snapshot maximum likelihood fitnesses from the degree equations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.special import expit, logit

from ..core import AdjacencySnapshot, FitnessSeries, FitnessState, TemporalNetwork

THETA_MAX = 20.0
TOL = 1e-8
MAX_ITER = 5000
ETA = 0.5
WARMUP = 20
_EPS = 1e-15


@dataclass(frozen=True)
class SnapshotMle:
    """MLE of one snapshot.

    ``clipped_coords`` are latent coordinates (directed ordering: in, then out)
    whose degree is 0 or n-1, so that no finite estimate exists; they are set to
    -/+ THETA_MAX. ``converged`` is True when the degree equations of the
    remaining coordinates hold to TOL; it is False when every coordinate is
    clipped.
    """

    theta_hat: FitnessState
    converged: bool
    clipped_coords: tuple = ()
    max_residual: float = 0.0
    iterations: int = 0
    clipped_nodes: tuple = field(init=False)

    def __post_init__(self):
        n = self.theta_hat.n
        object.__setattr__(self, "clipped_nodes", tuple(sorted({int(k) % n for k in self.clipped_coords})))


def _logit_ratio(x, m):
    return logit(np.clip(x / m, _EPS, 1.0 - _EPS))


def _init(deg, m):
    theta = np.where(deg <= 0, -THETA_MAX, np.where(deg >= m, THETA_MAX, 0.0))
    free = (deg > 0) & (deg < m)
    theta[free] = 0.5 * _logit_ratio(deg[free], m)
    return theta, free


def _newton_step(J: np.ndarray, res: np.ndarray) -> np.ndarray:
    step, *_ = np.linalg.lstsq(J, -res, rcond=None)
    return step


def _solve(theta, free, residual, jacobian, fixed_point, tol, max_iter, gauge=None):
    """Damped fixed-point warm-up, then Newton with backtracking on the residual norm.

    Falls back to fixed-point steps whenever a Newton step does not reduce
    the residual; ``max_iter`` caps the total number of steps.
    """
    res = residual(theta)
    it = 0
    for it in range(1, max_iter + 1):
        if not free.any() or np.abs(res[free]).max() < tol:
            break
        cand = None
        if it > WARMUP:
            step = _newton_step(jacobian(theta), res[free])
            norm0 = np.linalg.norm(res[free])
            lam = 1.0
            while lam > 1e-4:
                trial = theta.copy()
                trial[free] += lam * step
                if gauge is not None:
                    gauge(trial)
                r = residual(trial)
                if np.linalg.norm(r[free]) < norm0:
                    cand, res = trial, r
                    break
                lam *= 0.5
        if cand is None:
            cand = fixed_point(theta)
            if gauge is not None:
                gauge(cand)
            res = residual(cand)
        theta = cand
    maxres = float(np.abs(res[free]).max()) if free.any() else 0.0
    return theta, maxres, it


def _undirected(deg: np.ndarray, tol, max_iter, eta):
    n = deg.size
    m = n - 1
    deg = deg.astype(float)
    theta, free = _init(deg, m)
    target = _logit_ratio(deg[free], m)

    def probs(th):
        P = expit(th[:, None] + th[None, :])
        np.fill_diagonal(P, 0.0)
        return P

    def residual(th):
        return probs(th).sum(axis=1) - deg

    def jacobian(th):
        P = probs(th)
        W = P * (1.0 - P)
        J = W + np.diag(W.sum(axis=1))
        return J[np.ix_(free, free)]

    def fixed_point(th):
        E = probs(th).sum(axis=1)
        out = th.copy()
        out[free] += eta * (target - _logit_ratio(E[free], m))
        return out

    theta, maxres, it = _solve(theta, free, residual, jacobian, fixed_point, tol, max_iter)
    return theta, free, maxres, it


def _saturate(M: np.ndarray):
    """Free in/out masks and clip signs of a directed snapshot.

    Each ordered pair i != j gives an edge out_i -> in_j when the arc is
    present and in_j -> out_i when it is absent. A finite estimate exists
    exactly when this graph is strongly connected. Otherwise the pairs
    between strong components are determined (probability 0 or 1) in the
    limit, so only the largest component is solved; components upstream of
    it are clipped to (out +, in -), downstream ones to (out -, in +).
    Degree 0 and n-1 are the singleton cases.
    """
    n = M.shape[0]
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    arc = M[i, j] > 0
    # vertices: in_j -> j, out_i -> n + i
    src = np.where(arc, n + i, j)
    dst = np.where(arc, j, n + i)
    G = csr_matrix((np.ones(src.size), (src, dst)), shape=(2 * n, 2 * n))
    ncomp, labels = connected_components(G, directed=True, connection="strong")
    main = np.bincount(labels).argmax()
    free = labels == main
    sign = np.zeros(2 * n)
    if ncomp > 1:
        root = int(np.flatnonzero(free)[0])
        down = np.zeros(2 * n, dtype=bool)
        down[breadth_first_order(G, root, directed=True, return_predecessors=False)] = True
        up = np.zeros(2 * n, dtype=bool)
        up[breadth_first_order(G.T.tocsr(), root, directed=True, return_predecessors=False)] = True
        is_out = np.arange(2 * n) >= n
        # unrelated components follow the majority of their own pairs
        dens = np.concatenate([M.sum(axis=0), M.sum(axis=1)]) / max(n - 1, 1)
        sign = np.where(
            up & ~down,
            np.where(is_out, 1.0, -1.0),
            np.where(down & ~up, np.where(is_out, -1.0, 1.0), np.where(dens >= 0.5, 1.0, -1.0)),
        )
        sign[free] = 0.0
    if free.sum() < 2:
        free[:] = False
        sign = np.where(sign == 0.0, np.where(np.concatenate([M.sum(axis=0), M.sum(axis=1)]) > 0, 1.0, -1.0), sign)
    f_in, f_out = free[:n], free[n:]
    active = f_out[:, None] & f_in[None, :] & ~np.eye(n, dtype=bool)
    return f_in, f_out, active, sign


def _directed(M: np.ndarray, tol, max_iter, eta):
    n = M.shape[0]
    f_in, f_out, active, sign = _saturate(M)
    free = np.concatenate([f_in, f_out])
    theta = THETA_MAX * sign
    # equations of the free coordinates only involve arcs between free coordinates
    k = np.concatenate([active.sum(axis=0), active.sum(axis=1)]).astype(float)
    deg = np.concatenate([(M * active).sum(axis=0), (M * active).sum(axis=1)]).astype(float)
    theta[free] = 0.5 * _logit_ratio(deg[free], k[free])
    target = _logit_ratio(deg[free], k[free])
    mask = active.astype(float)

    def probs(th):
        return expit(th[n:, None] + th[None, :n]) * mask  # P[i, j]: arc i -> j

    def expected(th):
        P = probs(th)
        return np.concatenate([P.sum(axis=0), P.sum(axis=1)])

    def residual(th):
        return expected(th) - deg

    def jacobian(th):
        P = probs(th)
        W = P * (1.0 - P)
        J = np.zeros((2 * n, 2 * n))
        J[:n, :n] = np.diag(W.sum(axis=0))  # d E_in / d theta_in
        J[:n, n:] = W.T                      # d E_in_i / d theta_out_j = W[j, i]
        J[n:, n:] = np.diag(W.sum(axis=1))
        J[n:, :n] = W
        return J[np.ix_(free, free)]

    def fixed_point(th):
        E = expected(th)
        out = th.copy()
        out[free] += eta * (target - _logit_ratio(E[free], k[free]))
        return out

    def gauge(th):
        # (in + c, out - c) leaves every free probability unchanged
        c = 0.5 * (th[n:][f_out].mean() - th[:n][f_in].mean())
        th[:n][f_in] += c
        th[n:][f_out] -= c

    if not free.any():
        return theta, free, 0.0, 0
    theta, maxres, it = _solve(theta, free, residual, jacobian, fixed_point, tol, max_iter, gauge)
    return theta, free, maxres, it


def mle_snapshot(A: AdjacencySnapshot, tol: float = TOL, max_iter: int = MAX_ITER, eta: float = ETA) -> SnapshotMle:
    """Solve the degree equations for one snapshot.

    A few damped fixed-point steps, each moving a free coordinate by
    ``eta * (logit(d/(n-1)) - logit(E/(n-1)))`` with E its expected degree,
    are followed by Newton iterations with backtracking. Coordinates with
    degree 0 or n-1 are clipped at -20 or +20. In directed snapshots every
    coordinate without a finite estimate is clipped (see ``_saturate``),
    which covers degree 0 and n-1 and also groups of nodes that saturate
    jointly; the remaining coordinates solve their own equations exactly and
    are reported in the gauge where free in- and out-fitnesses have equal
    means.
    """
    M = A.entries.astype(np.int64)
    if A.directed:
        theta, free, maxres, it = _directed(M, tol, max_iter, eta)
    else:
        theta, free, maxres, it = _undirected(M.sum(axis=1), tol, max_iter, eta)
    clipped = tuple(int(k) for k in np.flatnonzero(~free))
    converged = bool(free.any() and maxres < tol)
    return SnapshotMle(FitnessState(theta, A.directed), converged, clipped, maxres, it)


def mle_series(net: TemporalNetwork, **kw) -> tuple[FitnessSeries, np.ndarray, list[SnapshotMle]]:
    """MLE of every snapshot.

    Returns the fitness series (clipped entries at -/+ THETA_MAX), a boolean
    ``(T, d)`` mask of clipped entries, and the per-snapshot results.
    """
    fits = [mle_snapshot(s, **kw) for s in net]
    values = np.stack([f.theta_hat.values for f in fits])
    mask = np.zeros_like(values, dtype=bool)
    for k, f in enumerate(fits):
        mask[k, list(f.clipped_coords)] = True
    return FitnessSeries(values, net.directed, np.array(net.timestamps)), mask, fits


def expected_degrees(theta: FitnessState) -> np.ndarray:
    """Expected degrees under the link model (directed: in-degrees then out-degrees)."""
    v = theta.values
    if theta.directed:
        n = theta.n
        P = expit(v[n:, None] + v[None, :n])
        np.fill_diagonal(P, 0.0)
        return np.concatenate([P.sum(axis=0), P.sum(axis=1)])
    P = expit(v[:, None] + v[None, :])
    np.fill_diagonal(P, 0.0)
    return P.sum(axis=1)


def degree_sequence_interior(deg) -> bool:
    """Whether an undirected degree sequence admits a finite MLE.

    That is the case exactly when it lies in the interior of the polytope of
    degree sequences, i.e. ``0 < d_i < n - 1`` and every Erdos-Gallai inequality
    holds strictly.
    """
    d = np.sort(np.asarray(deg, dtype=int))[::-1]
    n = d.size
    if n < 3 or d.min() <= 0 or d.max() >= n - 1:
        return False
    for k in range(1, n):
        lhs = d[:k].sum()
        rhs = k * (k - 1) + np.minimum(d[k:], k).sum()
        if lhs >= rhs:
            return False
    return True
