"""Probe-set distances, output drift, mode counting and the seed sign test."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from ..distlaw import w1_rows


@dataclass(frozen=True)
class ProbeSet:
    """Frozen states (as critic inputs) on which critics are compared."""

    points: np.ndarray
    seed: int

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValueError("probe set must be nonempty")

    def __len__(self) -> int:
        return len(self.points)


def sample_probe(visited, size: int, seed: int) -> ProbeSet:
    """Uniform sample (without replacement when possible) of distinct visited inputs."""
    arr = np.asarray(visited)
    uniq = np.unique(arr, axis=0)
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(uniq), size=size, replace=len(uniq) < size)
    return ProbeSet(uniq[np.sort(pick)], seed)


def _aligned(q_a, q_b):
    q_a = np.atleast_2d(np.asarray(q_a, dtype=float))
    q_b = np.atleast_2d(np.asarray(q_b, dtype=float))
    if q_a.shape != q_b.shape:
        raise ValueError(f"probe outputs do not align: {q_a.shape} vs {q_b.shape}")
    return q_a, q_b


def probe_metric_d(q_a, q_b) -> float:
    """Max over probe points of the quantile W1 distance."""
    q_a, q_b = _aligned(q_a, q_b)
    return float(np.max(w1_rows(q_a, q_b)))


def output_drift(q_now, q_prev) -> float:
    """Mean over probe points of the L1 norm of the full output change (not divided by K)."""
    q_now, q_prev = _aligned(q_now, q_prev)
    return float(np.mean(np.sum(np.abs(q_now - q_prev), axis=1)))


def count_modes(q, gap_factor: float = 4.0, min_gap: float = 0.5, min_points: int = 2) -> int:
    """Modes of a quantile vector via gap detection.

    The sorted quantiles are cut at gaps exceeding both ``min_gap`` and
    ``gap_factor`` times the median spacing. Clusters holding fewer than
    ``min_points`` quantiles are transition points between modes and are
    not counted (at least one mode is always reported).
    """
    q = np.sort(np.asarray(q, dtype=float))
    if q.size < 2:
        return 1
    gaps = np.diff(q)
    typical = max(float(np.median(gaps)), 1e-12)
    cuts = np.flatnonzero((gaps > min_gap) & (gaps > gap_factor * typical))
    sizes = np.diff(np.concatenate([[0], cuts + 1, [q.size]]))
    return max(1, int(np.sum(sizes >= min_points)))


@dataclass(frozen=True)
class SignTest:
    wins: int
    n: int
    p_value: float


def sign_test(better, worse) -> SignTest:
    """One-sided paired sign test of ``better < worse``; ties are dropped."""
    better = np.asarray(better, dtype=float)
    worse = np.asarray(worse, dtype=float)
    diff = worse - better
    wins = int(np.sum(diff > 0))
    n = int(np.sum(diff != 0))
    if n == 0:
        return SignTest(0, 0, 1.0)
    return SignTest(wins, n, float(binomtest(wins, n, 0.5, alternative="greater").pvalue))
