"""Domain types and shared linear algebra.

Latent coordinates in directed mode are ordered ``[theta_in (n), theta_out (n)]``:
coordinates ``0..n-1`` hold in-fitnesses and ``n..2n-1`` out-fitnesses. Every
module relies on this convention.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.linalg

COND_WARN = 1e12
PSD_TOL = 1e-10


class ValidationError(ValueError):
    """Input violates a type invariant."""


class StationarityError(ValueError):
    """Operation needs a stationary VAR (spectral radius < 1)."""


class NumericalError(ArithmeticError):
    """A numerical procedure broke down (e.g. a non positive-definite matrix)."""


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")


def _check_square(name: str, M: np.ndarray) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {M.shape}")


def _check_psd(name: str, M: np.ndarray, tol: float = PSD_TOL) -> None:
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max(initial=0.0))):
        raise ValidationError(f"{name} is not symmetric")
    if M.size and np.linalg.eigvalsh(M).min() < -tol * max(1.0, np.abs(M).max()):
        raise ValidationError(f"{name} is not positive semidefinite")


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdjacencySnapshot:
    """One unweighted graph observed at an ordinal time index."""

    entries: np.ndarray
    directed: bool = False
    timestamp: int = 0

    def __post_init__(self):
        A = np.asarray(self.entries)
        _check_square("adjacency matrix", A)
        if not np.isin(A, (0, 1)).all():
            raise ValidationError("adjacency entries must be 0 or 1")
        A = _frozen(A, dtype=np.int8)
        if np.any(np.diag(A)):
            raise ValidationError("self-loops are not allowed (nonzero diagonal)")
        if not self.directed and not np.array_equal(A, A.T):
            raise ValidationError("undirected snapshot must be symmetric")
        object.__setattr__(self, "entries", A)
        object.__setattr__(self, "directed", bool(self.directed))
        object.__setattr__(self, "timestamp", int(self.timestamp))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def arcs(self) -> np.ndarray:
        """Existing arcs as an ``(m, 2)`` array; undirected edges listed once with i < j."""
        A = self.entries if self.directed else np.triu(self.entries)
        return np.argwhere(A)

    def induced(self, keep: Sequence[int]) -> "AdjacencySnapshot":
        idx = np.asarray(keep, dtype=int)
        return AdjacencySnapshot(self.entries[np.ix_(idx, idx)], self.directed, self.timestamp)


@dataclass(frozen=True)
class TemporalNetwork:
    snapshots: tuple
    node_labels: tuple = ()

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        if not snaps:
            raise ValidationError("a temporal network needs at least one snapshot")
        n, directed = snaps[0].n, snaps[0].directed
        for s in snaps:
            if s.n != n or s.directed != directed:
                raise ValidationError("all snapshots must share n and directedness")
        ts = [s.timestamp for s in snaps]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("timestamps must be strictly increasing")
        labels = tuple(str(x) for x in self.node_labels) if self.node_labels else tuple(
            str(i) for i in range(n)
        )
        if len(labels) != n:
            raise ValidationError(f"expected {n} node labels, got {len(labels)}")
        object.__setattr__(self, "snapshots", snaps)
        object.__setattr__(self, "node_labels", labels)

    @property
    def n(self) -> int:
        return self.snapshots[0].n

    @property
    def directed(self) -> bool:
        return self.snapshots[0].directed

    @property
    def T(self) -> int:
        return len(self.snapshots)

    @property
    def timestamps(self) -> list[int]:
        return [s.timestamp for s in self.snapshots]

    def __iter__(self) -> Iterator[AdjacencySnapshot]:
        return iter(self.snapshots)

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, k) -> AdjacencySnapshot:
        return self.snapshots[k]

    def induced(self, keep: Sequence[int]) -> "TemporalNetwork":
        keep = list(keep)
        return TemporalNetwork(
            tuple(s.induced(keep) for s in self.snapshots),
            tuple(self.node_labels[i] for i in keep),
        )

    def stacked(self) -> np.ndarray:
        """All snapshots as a ``(T, n, n)`` integer array."""
        return np.stack([s.entries for s in self.snapshots])


# ---------------------------------------------------------------------------
# latent fitnesses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitnessState:
    """Latent fitness vector at one time.

    ``values`` has length n (undirected) or 2n (directed, in-fitnesses first).
    """

    values: np.ndarray
    directed: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValidationError("fitness state must be a vector")
        _check_finite("fitness state", v)
        if self.directed and v.size % 2:
            raise ValidationError("directed fitness state needs an even length (in, out)")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "directed", bool(self.directed))

    @classmethod
    def from_in_out(cls, theta_in, theta_out) -> "FitnessState":
        return cls(np.concatenate([np.ravel(theta_in), np.ravel(theta_out)]), directed=True)

    @property
    def d(self) -> int:
        return self.values.size

    @property
    def n(self) -> int:
        return self.d // 2 if self.directed else self.d

    @property
    def theta_in(self) -> np.ndarray:
        return self.values[: self.n] if self.directed else self.values

    @property
    def theta_out(self) -> np.ndarray:
        return self.values[self.n :] if self.directed else self.values


@dataclass(frozen=True)
class FitnessSeries:
    """Time-ordered fitness states stored as a ``(T, d)`` array."""

    values: np.ndarray
    directed: bool = False
    times: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValidationError("fitness series must be a (T, d) array")
        if self.directed and v.shape[1] % 2:
            raise ValidationError("directed series needs an even dimension")
        times = np.arange(1, v.shape[0] + 1) if self.times is None else np.asarray(self.times)
        if times.shape != (v.shape[0],):
            raise ValidationError("times must have one entry per state")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "times", _frozen(times, dtype=np.int64))
        object.__setattr__(self, "directed", bool(self.directed))

    @classmethod
    def from_states(cls, states: Sequence[FitnessState], times=None) -> "FitnessSeries":
        if not states:
            raise ValidationError("empty series")
        dims = {s.d for s in states}
        if len(dims) != 1:
            raise ValidationError("fitness states must share one dimension")
        return cls(np.stack([s.values for s in states]), states[0].directed, times)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.d // 2 if self.directed else self.d

    def __len__(self) -> int:
        return self.T

    def __getitem__(self, k) -> FitnessState:
        return FitnessState(self.values[k], self.directed)

    def __iter__(self) -> Iterator[FitnessState]:
        for k in range(self.T):
            yield self[k]


# ---------------------------------------------------------------------------
# dynamics parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarParams:
    """Intercept ``mu``, transition ``B`` and noise covariance ``Sigma`` of a VAR(1)."""

    mu: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        _check_square("B", B)
        _check_square("Sigma", S)
        d = mu.size
        if B.shape != (d, d) or S.shape != (d, d):
            raise ValidationError(f"dimension mismatch: mu {mu.shape}, B {B.shape}, Sigma {S.shape}")
        for name, arr in (("mu", mu), ("B", B), ("Sigma", S)):
            _check_finite(name, arr)
        _check_psd("Sigma", S)
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "Sigma", _frozen(S))

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.B)

    @property
    def stationary(self) -> bool:
        return self.spectral_radius < 1.0


@dataclass(frozen=True)
class MeanFieldParams:
    """Homogeneous VAR: diagonal ``a``, off-diagonal ``b``, intercept ``mu``, noise ``sigma2``.

    ``p`` is the probability that an off-diagonal coupling is present (sparse variant).
    """

    a: float
    b: float
    mu: float
    sigma2: float
    n: int
    p: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "mu", "sigma2", "p"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.sigma2 <= 0:
            raise ValidationError("sigma2 must be positive")
        if int(self.n) != self.n or self.n < 2:
            raise ValidationError("n must be an integer >= 2")
        object.__setattr__(self, "n", int(self.n))
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError("p must lie in [0, 1]")

    @property
    def lambda1(self) -> float:
        """Eigenvalue on the all-ones direction (of the averaged matrix when p < 1)."""
        return self.a + self.b * self.p * (self.n - 1)

    @property
    def lambda_perp(self) -> float:
        """Eigenvalue shared by the n-1 directions orthogonal to the all-ones vector."""
        return self.a - self.b * self.p

    @property
    def stationary(self) -> bool:
        return abs(self.lambda1) < 1.0 and abs(self.lambda_perp) < 1.0

    @property
    def theta_stationary(self) -> float:
        if not self.stationary:
            raise StationarityError(f"mean-field model not stationary (lambda1={self.lambda1:.4g})")
        return self.mu / (1.0 - self.lambda1)

    def matrix(self) -> np.ndarray:
        """Dense (averaged, if sparse) transition matrix."""
        return meanfield_matrix(self.a, self.b * self.p, self.n)

    def to_var(self) -> VarParams:
        return VarParams(np.full(self.n, self.mu), self.matrix(), self.sigma2 * np.eye(self.n))


def meanfield_matrix(a: float, b: float, n: int) -> np.ndarray:
    return (a - b) * np.eye(n) + b * np.ones((n, n))


@dataclass(frozen=True)
class ShockSpec:
    tau: int
    delta: np.ndarray

    def __post_init__(self):
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        _check_finite("shock", delta)
        object.__setattr__(self, "delta", _frozen(delta))
        object.__setattr__(self, "tau", int(self.tau))

    @classmethod
    def single(cls, d: int, coord: int, size: float, tau: int = 0) -> "ShockSpec":
        delta = np.zeros(d)
        delta[coord] = size
        return cls(tau, delta)


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        C = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if C.shape != (m.size, m.size):
            raise ValidationError("covariance shape does not match mean")
        _check_finite("mean", m)
        _check_finite("cov", C)
        _check_psd("cov", C)
        object.__setattr__(self, "mean", _frozen(m))
        object.__setattr__(self, "cov", _frozen(C))

    @property
    def d(self) -> int:
        return self.mean.size


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def spectral_radius(B) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    _check_square("B", B)
    _check_finite("B", B)
    if B.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(B)).max())


def solve(A, b) -> np.ndarray:
    """LU solve with a condition-number warning; never forms an explicit inverse."""
    A = np.asarray(A, dtype=float)
    lu, piv = scipy.linalg.lu_factor(A)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_WARN:
        warnings.warn(f"ill-conditioned system (cond={cond:.3g})", RuntimeWarning, stacklevel=2)
    return scipy.linalg.lu_solve((lu, piv), np.asarray(b, dtype=float))


def stationary_mean(params: VarParams) -> np.ndarray:
    """Equilibrium fitness ``(I - B)^{-1} mu`` (a Katz centrality of B for homogeneous mu)."""
    rho = params.spectral_radius
    if rho >= 1.0:
        raise StationarityError(f"spectral radius {rho:.6g} >= 1")
    return solve(np.eye(params.d) - params.B, params.mu)


def stationary_cov(params: VarParams) -> np.ndarray:
    """Stationary covariance P solving ``P = B P B' + Sigma``."""
    rho = params.spectral_radius
    if rho >= 1.0:
        raise StationarityError(f"spectral radius {rho:.6g} >= 1")
    P = scipy.linalg.solve_discrete_lyapunov(params.B, params.Sigma)
    return 0.5 * (P + P.T)


def psd_sqrt(S, clip: float = PSD_TOL) -> np.ndarray:
    """Symmetric square root via eigendecomposition; eigenvalues at round-off level are set to 0."""
    S = np.asarray(S, dtype=float)
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    scale = max(1.0, np.abs(S).max(initial=0.0))
    if w.size and w.min() < -clip * scale:
        raise ValidationError("covariance is not positive semidefinite")
    w = np.where(w > clip * scale, w, 0.0)
    return (V * np.sqrt(w)) @ V.T


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def network_to_text(net: TemporalNetwork) -> tuple[str, str]:
    """Render a temporal network as (arc CSV, JSON header)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "i", "j"])
    for snap in net:
        for i, j in snap.arcs():
            w.writerow([snap.timestamp, int(i), int(j)])
    header = {
        "n": net.n,
        "directed": net.directed,
        "T": net.T,
        "node_labels": list(net.node_labels),
        "timestamps": net.timestamps,
    }
    return buf.getvalue(), json.dumps(header, indent=2, sort_keys=True) + "\n"


def network_from_text(csv_text: str, header_text: str) -> TemporalNetwork:
    header = json.loads(header_text)
    n, directed, T = int(header["n"]), bool(header["directed"]), int(header["T"])
    timestamps = header.get("timestamps") or list(range(1, T + 1))
    if len(timestamps) != T:
        raise ValidationError("header T does not match timestamps")
    pos = {int(t): k for k, t in enumerate(timestamps)}
    mats = np.zeros((T, n, n), dtype=np.int8)
    reader = csv.DictReader(io.StringIO(csv_text))
    for row in reader:
        t, i, j = int(row["t"]), int(row["i"]), int(row["j"])
        if t not in pos:
            raise ValidationError(f"arc at unknown time {t}")
        mats[pos[t], i, j] = 1
        if not directed:
            mats[pos[t], j, i] = 1
    snaps = tuple(AdjacencySnapshot(mats[k], directed, timestamps[k]) for k in range(T))
    return TemporalNetwork(snaps, tuple(header.get("node_labels") or ()))


def write_network(net: TemporalNetwork, csv_path, json_path=None) -> tuple[Path, Path]:
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
    body, header = network_to_text(net)
    csv_path.write_text(body, newline="")
    json_path.write_text(header, newline="")
    return csv_path, json_path


def read_network(json_path, csv_path=None) -> TemporalNetwork:
    json_path = Path(json_path)
    csv_path = Path(csv_path) if csv_path else json_path.with_suffix(".csv")
    return network_from_text(csv_path.read_text(), json_path.read_text())


def _coordinate_kinds(series: FitnessSeries) -> list[tuple[int, str]]:
    if series.directed:
        n = series.n
        return [(k % n, "in" if k < n else "out") for k in range(series.d)]
    return [(k, "undirected") for k in range(series.d)]


def fitness_to_text(series: FitnessSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "node", "coordinate_kind", "value"])
    kinds = _coordinate_kinds(series)
    for t, row in zip(series.times, series.values):
        for (node, kind), v in zip(kinds, row):
            w.writerow([int(t), node, kind, repr(float(v))])
    return buf.getvalue()


def fitness_from_text(text: str) -> FitnessSeries:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValidationError("empty fitness CSV")
    directed = rows[0]["coordinate_kind"] != "undirected"
    times = sorted({int(r["t"]) for r in rows})
    n = max(int(r["node"]) for r in rows) + 1
    d = 2 * n if directed else n
    values = np.full((len(times), d), np.nan)
    seen = np.zeros(values.shape, dtype=bool)
    tpos = {t: k for k, t in enumerate(times)}
    for r in rows:
        node, kind = int(r["node"]), r["coordinate_kind"]
        col = node + (n if kind == "out" else 0)
        values[tpos[int(r["t"])], col] = float(r["value"])
        seen[tpos[int(r["t"])], col] = True
    if not seen.all():
        raise ValidationError("fitness CSV is missing entries")
    return FitnessSeries(values, directed, np.array(times))


def write_fitness(series: FitnessSeries, path) -> Path:
    path = Path(path)
    path.write_text(fitness_to_text(series), newline="")
    return path


def read_fitness(path) -> FitnessSeries:
    return fitness_from_text(Path(path).read_text())
