"""Scalar return-law math on fixed quantile grids.

A quantile vector is a plain 1-D float array of length K holding return
values at the midpoint levels ``tau_k = (k - 1/2) / K``. Everything here
works on sorted vectors; the empirical lift of such a vector puts mass 1/K
on each entry, so 1-D optimal transport between two lifts pairs equal
indices.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

# Slack used when counting quantile levels inside a tail, so that
# alpha * K products such as 0.29 * 100 are not floored one short.
_LEVEL_EPS = 1e-9
_WEIGHT_TOL = 1e-12
_ORACLE_MAX_SUPPORT = 12


@dataclass(frozen=True)
class QuantileLevels:
    K: int

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K!r}")

    @property
    def tau(self) -> np.ndarray:
        return midpoint_levels(self.K)


def midpoint_levels(K: int) -> np.ndarray:
    return (np.arange(K, dtype=float) + 0.5) / K


@dataclass(frozen=True)
class EmpiricalLaw:
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if atoms.size == 0:
            raise ValueError("empirical law needs at least one atom")
        if atoms.shape != weights.shape:
            raise ValueError("atoms and weights must have equal length")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    def cdf(self, x: float) -> float:
        return float(self.weights[self.atoms <= x].sum())


@dataclass(frozen=True)
class RiskWeights:
    beta: np.ndarray
    lambda_temp: float = field(default=0.0)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        if beta.size == 0 or np.any(beta < 0) or abs(beta.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError("risk weights must be nonnegative and sum to 1")
        object.__setattr__(self, "beta", beta)

    def __len__(self) -> int:
        return self.beta.size


def as_quantile_vector(values, check_monotone: bool = True) -> np.ndarray:
    q = np.asarray(values, dtype=float)
    if q.ndim != 1 or q.size == 0:
        raise ValueError("quantile vector must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(q)):
        raise ValueError("quantile vector has non-finite entries")
    if check_monotone and np.any(np.diff(q) < 0):
        raise ValueError("quantile vector must be nondecreasing")
    return q


def lift(values: Sequence[float]) -> EmpiricalLaw:
    """Uniform empirical measure with mass 1/K on each value."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("cannot lift an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot lift non-finite values")
    return EmpiricalLaw(v.copy(), np.full(v.size, 1.0 / v.size))


def _check_same_k(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"quantile count mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def w1_quantile(a, b) -> float:
    """W1 between the lifts of two sorted quantile vectors (index-paired)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_same_k(a, b)
    return float(np.mean(np.abs(a - b)))


def w1_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise ``w1_quantile`` over the last axis."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_same_k(a, b)
    return np.mean(np.abs(a - b), axis=-1)


def wp_bruteforce(a: EmpiricalLaw, b: EmpiricalLaw, p: float = 1.0) -> float:
    """Exact W_p on small discrete supports, without using quantile pairing.

    p == 1 integrates |F_a - F_b| over the merged support; any other p
    solves the transport linear program directly (small supports only).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if p != 1 and a.atoms.size + b.atoms.size > _ORACLE_MAX_SUPPORT:
        raise ValueError(
            f"LP oracle supports at most {_ORACLE_MAX_SUPPORT} atoms in total, "
            f"got {a.atoms.size + b.atoms.size}"
        )
    if p == 1:
        xs = np.unique(np.concatenate([a.atoms, b.atoms]))
        total = 0.0
        for left, right in zip(xs[:-1], xs[1:]):
            total += abs(a.cdf(left) - b.cdf(left)) * (right - left)
        return float(total)
    return _wp_linprog(a, b, p)


def _wp_linprog(a: EmpiricalLaw, b: EmpiricalLaw, p: float) -> float:
    from scipy.optimize import linprog

    n, m = a.atoms.size, b.atoms.size
    cost = np.abs(a.atoms[:, None] - b.atoms[None, :]) ** p
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([a.weights, b.weights])
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(max(res.fun, 0.0) ** (1.0 / p))


def tail_count(K: int, alpha: float) -> int:
    """Number of lowest quantiles averaged by the lower-tail CVaR."""
    return max(1, int(math.floor(alpha * K + _LEVEL_EPS)))


def cvar_lower(q, alpha: float, tail_weights: Sequence[float] | None = None):
    """Lower-tail CVaR of a quantile vector (or of each row of a batch).

    Averages the ``max(1, floor(alpha K))`` lowest quantiles. ``tail_weights``
    replaces the uniform average with a custom convex combination over those
    same levels.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    q = np.asarray(q, dtype=float)
    L = tail_count(q.shape[-1], alpha)
    tail = q[..., :L]
    if tail_weights is None:
        out = tail.mean(axis=-1)
    else:
        w = np.asarray(tail_weights, dtype=float)
        if w.shape != (L,) or np.any(w < 0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"tail_weights must be {L} nonnegative reals summing to 1")
        out = tail @ w
    return float(out) if np.ndim(out) == 0 else out


def softmax_weights(scores: np.ndarray, lambda_temp: float, axis: int = 0) -> np.ndarray:
    """Softmax of ``lambda_temp * scores`` along ``axis`` with max-shift."""
    scores = np.asarray(scores, dtype=float)
    if lambda_temp < 0:
        raise ValueError("lambda_temp must be nonnegative")
    if lambda_temp == 0:
        return np.full(scores.shape, 1.0 / scores.shape[axis])
    z = lambda_temp * scores
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def risk_weights(scores: Sequence[float], lambda_temp: float) -> RiskWeights:
    """Barycenter weights from tail-risk scores; ``lambda_temp=0`` is uniform."""
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("need at least one score")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    beta = softmax_weights(s, lambda_temp)
    # renormalise so the sum-to-one check survives rounding for large n
    return RiskWeights(beta / beta.sum(), float(lambda_temp))


def weighted_median_along(points: np.ndarray, weights: np.ndarray, axis: int = 0) -> np.ndarray:
    """Lowest weighted median along ``axis``.

    ``weights`` is either 1-D (one weight per point along ``axis``) or
    broadcastable to ``points``; it must sum to one along ``axis``. The result
    is the smallest point whose cumulative weight reaches one half, i.e. the
    lowest minimiser of ``sum_m w_m |q - x_m|``.
    """
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1 and points.ndim > 1:
        if weights.size != points.shape[axis]:
            raise ValueError("1-D weights must match the number of points")
        shape = [1] * points.ndim
        shape[axis] = -1
        weights = weights.reshape(shape)
    weights = np.broadcast_to(weights, points.shape)
    points = np.moveaxis(points, axis, 0)
    weights = np.moveaxis(weights, axis, 0)
    order = np.argsort(points, axis=0, kind="stable")
    sorted_pts = np.take_along_axis(points, order, axis=0)
    cum = np.cumsum(np.take_along_axis(weights, order, axis=0), axis=0)
    half = 0.5 * cum[-1:]
    idx = np.argmax(cum >= half - _WEIGHT_TOL, axis=0)
    return np.take_along_axis(sorted_pts, idx[None], axis=0)[0]


def weighted_median(points: Sequence[float], weights) -> float:
    pts = np.asarray(points, dtype=float).ravel()
    beta = weights.beta if isinstance(weights, RiskWeights) else np.asarray(weights, dtype=float)
    if beta.shape != pts.shape:
        raise ValueError("points and weights must have equal length")
    return float(weighted_median_along(pts, beta))


def w1_barycenter(laws, weights) -> np.ndarray:
    """Weighted W1 barycenter of quantile vectors via per-level weighted medians.

    ``laws`` has shape (n, ..., K); ``weights`` has shape (n,) or (n, ...)
    for per-point weights shared across levels.
    """
    laws = np.asarray(laws, dtype=float)
    if laws.ndim < 2:
        raise ValueError("laws must be stacked as (n, ..., K)")
    beta = weights.beta if isinstance(weights, RiskWeights) else np.asarray(weights, dtype=float)
    if beta.shape[0] != laws.shape[0]:
        raise ValueError("one weight per law is required")
    beta = beta.reshape(beta.shape + (1,) * (laws.ndim - beta.ndim))
    beta = np.broadcast_to(beta, laws.shape)
    out = weighted_median_along(laws, beta, axis=0)
    # per-level medians of monotone inputs are already monotone
    return np.sort(out, axis=-1)


def cvar_weighted_barycenter(laws, alpha: float, lambda_temp: float) -> np.ndarray:
    """Barycenter that up-weights laws with a worse lower tail.

    Works on a stack (n, K) or a batch (n, P, K); in the batch case the
    weights are computed independently for every point P.
    """
    laws = np.asarray(laws, dtype=float)
    if laws.ndim < 2:
        raise ValueError("laws must be stacked as (n, ..., K)")
    scores = -cvar_lower(laws, alpha)
    beta = softmax_weights(np.atleast_1d(scores), lambda_temp, axis=0)
    return w1_barycenter(laws, beta)


def objective_w1(candidate, laws, weights) -> float:
    """``sum_m beta_m W1(candidate, law_m)`` for quantile vectors."""
    laws = np.asarray(laws, dtype=float)
    beta = weights.beta if isinstance(weights, RiskWeights) else np.asarray(weights, dtype=float)
    return float(np.dot(beta, w1_rows(laws, np.asarray(candidate, dtype=float)[None, :])))


def write_quantile_csv(path, rows: Mapping[str, np.ndarray], K: int | None = None) -> None:
    """Dump labelled quantile vectors; the header row carries the levels."""
    rows = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
    if K is None:
        K = next(iter(rows.values())).size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [repr(float(t)) for t in midpoint_levels(K)])
        for label, vec in rows.items():
            if vec.size != K:
                raise ValueError(f"row {label!r} has {vec.size} entries, expected {K}")
            w.writerow([label] + [repr(float(x)) for x in vec])


def read_quantile_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with open(Path(path), newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        levels = np.array([float(x) for x in header[1:]])
        rows = {row[0]: np.array([float(x) for x in row[1:]]) for row in r}
    return levels, rows
