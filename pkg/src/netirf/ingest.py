"""Weekly aggregation of transaction logs, node filtering and a synthetic interbank generator."""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .core import AdjacencySnapshot, FitnessState, TemporalNetwork, ValidationError, VarParams, stationary_mean
from .estimation.kalman import StateSpaceParams
from .sampling import sample_network
from .var_dynamics import simulate_var


class EmptyResultError(ValidationError):
    pass


@dataclass
class Reject:
    line: int
    row: object
    reason: str


@dataclass
class AggregationResult:
    network: TemporalNetwork | None
    rejects: list = field(default_factory=list)
    week_starts: list = field(default_factory=list)


def week_start(day: dt.date) -> dt.date:
    """Monday of the ISO week containing ``day``."""
    return day - dt.timedelta(days=day.weekday())


def _parse(row, line: int):
    if not isinstance(row, (tuple, list)) or len(row) < 3:
        return None, Reject(line, row, "expected (date, lender, borrower)")
    date, lender, borrower = row[0], row[1], row[2]
    try:
        day = date if isinstance(date, dt.date) else dt.date.fromisoformat(str(date).strip()[:10])
        if not isinstance(date, dt.date) and len(str(date).strip()) > 10:
            dt.datetime.fromisoformat(str(date).strip())
    except ValueError:
        return None, Reject(line, row, f"unparseable date {date!r}")
    lender, borrower = str(lender or "").strip(), str(borrower or "").strip()
    if not lender or not borrower:
        return None, Reject(line, row, "empty lender or borrower id")
    if lender == borrower:
        return None, Reject(line, row, "lender equals borrower")
    return (week_start(day), lender, borrower), None


def aggregate_weekly(transactions: Iterable) -> AggregationResult:
    """One directed snapshot per calendar week (Monday start) with at least one valid transaction.

    An arc lender -> borrower is present when the pair traded at least once
    that week. Nodes are every id seen in a valid row, sorted; timestamps are
    consecutive week indices counted from the first week (1-based), so empty
    weeks leave gaps. Malformed rows are returned in ``rejects``.
    """
    rejects, arcs = [], {}
    ids = set()
    for line, row in enumerate(transactions, start=1):
        rec, bad = _parse(row, line)
        if bad is not None:
            rejects.append(bad)
            continue
        wk, lender, borrower = rec
        arcs.setdefault(wk, set()).add((lender, borrower))
        ids.update((lender, borrower))
    if not arcs:
        return AggregationResult(None, rejects, [])
    labels = sorted(ids)
    pos = {x: k for k, x in enumerate(labels)}
    weeks = sorted(arcs)
    first = weeks[0]
    snaps = []
    for wk in weeks:
        A = np.zeros((len(labels), len(labels)), dtype=np.int8)
        for lender, borrower in arcs[wk]:
            A[pos[lender], pos[borrower]] = 1
        snaps.append(AdjacencySnapshot(A, True, (wk - first).days // 7 + 1))
    return AggregationResult(TemporalNetwork(tuple(snaps), tuple(labels)), rejects, weeks)


def read_transactions_csv(path) -> list:
    """Rows of a ``date,lender,borrower[,amount]`` CSV as (date, lender, borrower); amount is ignored."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"date", "lender", "borrower"} - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"transaction CSV lacks columns {sorted(missing)}")
        return [(r["date"], r["lender"], r["borrower"]) for r in reader]


def _isolated(net: TemporalNetwork, keep: list[int]) -> set[int]:
    M = net.stacked()[:, keep][:, :, keep]
    touch = M.sum(axis=1) + M.sum(axis=2)  # (T, k)
    return {keep[k] for k in np.flatnonzero((touch == 0).any(axis=0))}


def filter_nodes(net: TemporalNetwork, degree_threshold: int = 100, drop_isolated: bool = True) -> TemporalNetwork:
    """Keep nodes whose cumulative in- and out-degree both exceed ``degree_threshold``.

    With ``drop_isolated``, nodes isolated in some snapshot of the induced
    subgraph are then removed, repeatedly, until no snapshot has an isolated
    node. Undirected networks use the degree for both tests.

    Raises
    ------
    EmptyResultError
        Every node was removed.
    """
    M = net.stacked().astype(np.int64)
    cin, cout = M.sum(axis=(0, 1)), M.sum(axis=(0, 2))
    keep = [i for i in range(net.n) if cin[i] > degree_threshold and cout[i] > degree_threshold]
    if drop_isolated:
        while keep:
            bad = _isolated(net, keep)
            if not bad:
                break
            keep = [i for i in keep if i not in bad]
    if not keep:
        raise EmptyResultError("all nodes removed by the filter")
    if len(keep) == net.n:
        return net
    return net.induced(keep)


# ---------------------------------------------------------------------------
# synthetic interbank data
# ---------------------------------------------------------------------------

SYNTH_N = 8
SYNTH_T = 40
SYNTH_THRESHOLD = 100
SYNTH_RHO = 0.8
SYNTH_LEVEL = 0.35
SYNTH_NOISE = 0.5
SYNTH_DIAG = 0.5
SYNTH_LINKS = 3
SYNTH_COUPLING = 0.3


class SynthEmid(NamedTuple):
    network: TemporalNetwork
    truth: StateSpaceParams
    latent: np.ndarray  # (T, 2n) latent fitnesses, in-fitnesses first
    attempts: int


def gauge_projector(n: int) -> np.ndarray:
    """Orthogonal projector removing the (in - out) direction.

    Adding c to every in-fitness and subtracting it from every out-fitness
    leaves all link probabilities unchanged, so states are only identified
    up to that direction.
    """
    u = np.concatenate([np.ones(n), -np.ones(n)]) / np.sqrt(2 * n)
    return np.eye(2 * n) - np.outer(u, u)


def _synth_params(rng: np.random.Generator, n: int) -> VarParams:
    d = 2 * n
    B = rng.normal(0.0, 0.02, (d, d))
    np.fill_diagonal(B, SYNTH_DIAG)
    for i in range(d):
        others = np.delete(np.arange(d), i)
        js = rng.choice(others, SYNTH_LINKS, replace=False)
        B[i, js] = rng.choice([-1.0, 1.0], SYNTH_LINKS) * SYNTH_COUPLING * rng.uniform(0.8, 1.2, SYNTH_LINKS)
    # keep the dynamics inside the gauge where mean in- and out-fitness agree
    M = gauge_projector(n)
    B = M @ B @ M
    rho = np.max(np.abs(np.linalg.eigvals(B)))
    if rho >= SYNTH_RHO:
        B *= SYNTH_RHO / rho
    target = M @ (SYNTH_LEVEL + rng.normal(0.0, 0.1, d))
    mu = (np.eye(d) - B) @ target
    return VarParams(mu, B, SYNTH_NOISE * M)


def synth_emid(seed: int = 0, n: int = SYNTH_N, T: int = SYNTH_T, degree_threshold: int = SYNTH_THRESHOLD) -> SynthEmid:
    """Directed weekly interbank-style network from a heterogeneous full-B latent VAR.

    The transition matrix has a positive diagonal, three strong couplings of
    random sign per row and small random entries elsewhere (about half of all
    entries positive), and spectral radius at most 0.8. Dynamics, noise and
    stationary mean are confined to the subspace where mean in- and
    out-fitness agree, which is the normalization of the per-snapshot
    estimates. Stationary fitnesses sit near 0.35, so each bank trades with
    about two thirds of the others. Draws are repeated with seeds derived from ``seed``
    until the result passes ``filter_nodes(degree_threshold, drop_isolated=True)``
    unchanged. The observation part of the truth is gamma = 0 with R reported
    as 1e-12 (the latent fitnesses are observed only through the networks).
    """
    root = np.random.SeedSequence(seed)
    for attempt in range(1, 1001):
        s_par, s_init, s_dyn, s_net = np.random.SeedSequence(root.entropy, spawn_key=(attempt,)).spawn(4)
        var = _synth_params(np.random.default_rng(s_par), n)
        theta0 = stationary_mean(var) + gauge_projector(n) @ np.random.default_rng(s_init).normal(0.0, np.sqrt(SYNTH_NOISE), 2 * n)
        latent = simulate_var(var, theta0, T, seed=s_dyn).values
        seeds = s_net.spawn(T)
        snaps = tuple(
            sample_network(FitnessState(latent[t], True), seed=seeds[t], timestamp=t + 1) for t in range(T)
        )
        net = TemporalNetwork(snaps, tuple(f"bank{i:02d}" for i in range(n)))
        try:
            kept = filter_nodes(net, degree_threshold, drop_isolated=True)
        except EmptyResultError:
            continue
        if kept.n == n:
            truth = StateSpaceParams(np.zeros(2 * n), np.full(2 * n, 1e-12), var)
            return SynthEmid(net, truth, latent, attempt)
    raise ValidationError("could not draw a network passing the filter")


def synth_transactions(net: TemporalNetwork, start: dt.date = dt.date(2014, 1, 6), seed: int = 0) -> list:
    """Daily transaction rows whose weekly aggregation reproduces ``net``.

    Each arc becomes one to three trades on random weekdays of its week.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for snap in net:
        monday = start + dt.timedelta(weeks=snap.timestamp - 1)
        for i, j in snap.arcs():
            for _ in range(rng.integers(1, 4)):
                day = monday + dt.timedelta(days=int(rng.integers(0, 5)))
                rows.append((day.isoformat(), net.node_labels[i], net.node_labels[j]))
    rows.sort()
    return rows
