"""Logistic-normal integral I(m, s2) = E[sigmoid(X)], X ~ N(m, s2), and density formulas."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import expit, roots_hermite

TOL = 1e-12
MAX_NODES = 512
SATURATION = 36.0


class DomainError(ValueError):
    pass


@lru_cache(maxsize=None)
def _hermgauss(k: int) -> tuple[np.ndarray, np.ndarray]:
    # numpy's hermgauss overflows above ~400 nodes; scipy's rule stays finite
    x, w = roots_hermite(k)
    return x, w / np.sqrt(np.pi)


def _check(m: float, s2: float) -> None:
    if not np.isfinite(m):
        raise DomainError("m must be finite")
    if not s2 >= 0 or not np.isfinite(s2):
        raise DomainError(f"variance must be finite and nonnegative, got {s2}")


def _gh(m: float, s2: float, k: int) -> float:
    x, w = _hermgauss(k)
    return float(w @ expit(m + np.sqrt(2.0 * s2) * x))


def logistic_normal_exact(m: float, s2: float) -> float:
    """Logistic-normal integral by Gauss-Hermite quadrature with node doubling.

    Doubles the node count from 8 until successive estimates agree to 1e-12
    (max 512 nodes); falls back to adaptive quadrature when that fails, which
    only happens for very wide distributions.
    """
    m, s2 = float(m), float(s2)
    _check(m, s2)
    if s2 == 0.0:
        return float(expit(m))
    s = np.sqrt(s2)
    # whole effective support beyond the double-precision saturation point
    if abs(m) - 38.0 * s > SATURATION:
        return float(expit(m))
    prev = _gh(m, s2, 8)
    k = 16
    while k <= MAX_NODES:
        cur = _gh(m, s2, k)
        if abs(cur - prev) < TOL:
            return cur
        prev, k = cur, 2 * k
    f = lambda z: expit(m + s * z) * np.exp(-0.5 * z * z)
    val, _ = integrate.quad(f, -40.0, 40.0, epsabs=1e-13, epsrel=1e-13, limit=500, points=[-m / s])
    return float(val / np.sqrt(2.0 * np.pi))


def logistic_normal_approx2(m, s2):
    """Second-order approximation of the logistic-normal integral.

    ``sigmoid(m) * (1 + s2 e^m/(1+e^m)^2)^(-1/2) * exp(s2 / (2((1+e^m)^2 + s2 e^m)))``,
    rewritten in terms of ``q = sigmoid(m)`` so it does not overflow for large ``|m|``.
    Vectorized over array inputs.
    """
    m = np.asarray(m, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if np.any(~np.isfinite(m)):
        raise DomainError("m must be finite")
    if np.any(s2 < 0) or np.any(~np.isfinite(s2)):
        raise DomainError("variance must be finite and nonnegative")
    q = expit(m)
    v = q * (1.0 - q)  # e^m / (1 + e^m)^2
    out = q / np.sqrt(1.0 + s2 * v) * np.exp(s2 * (1.0 - q) ** 2 / (2.0 * (1.0 + s2 * v)))
    return out if out.ndim else float(out)


def logistic_normal(m: float, s2: float, exact: bool = True) -> float:
    return logistic_normal_exact(m, s2) if exact else float(logistic_normal_approx2(m, s2))


def expected_density_homogeneous(m: float, s2: float, r: float, exact: bool = True) -> float:
    """Expected density when all fitnesses are N(m, s2) with pairwise correlation r.

    Equals ``I(2m, 2 s2 (1 + r))``.
    """
    if not -1.0 <= r <= 1.0:
        raise DomainError(f"correlation must lie in [-1, 1], got {r}")
    _check(m, s2)
    return logistic_normal(2.0 * m, 2.0 * s2 * (1.0 + r), exact)


def taylor_density(m, s2, r):
    """Expansion of the homogeneous expected density to first order in s2."""
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) > 1.0):
        raise DomainError("correlation must lie in [-1, 1]")
    q = expit(2.0 * np.asarray(m, dtype=float))
    # e^{2m}(1 - e^{2m}) / (1 + e^{2m})^3 written with q = sigmoid(2m)
    coef = q * (1.0 - q) * (1.0 - 2.0 * q)
    out = q + (1.0 + r) * coef * np.asarray(s2, dtype=float)
    return out if out.ndim else float(out)


def taylor_coefficient(m: float) -> float:
    q = expit(2.0 * m)
    return float(q * (1.0 - q) * (1.0 - 2.0 * q))


def density_grid(ms, s2s, rs) -> list[dict]:
    """Evaluate exact, second-order and Taylor densities on a parameter grid.

    Each row holds ``m, s2, r`` and the three values of ``E[density]`` for
    fitnesses N(m, s2) with correlation r.
    """
    rows = []
    for m in ms:
        for s2 in s2s:
            for r in rs:
                rows.append(
                    {
                        "m": float(m),
                        "s2": float(s2),
                        "r": float(r),
                        "exact": expected_density_homogeneous(m, s2, r, exact=True),
                        "approx2": expected_density_homogeneous(m, s2, r, exact=False),
                        "taylor": taylor_density(m, s2, r),
                    }
                )
    return rows
