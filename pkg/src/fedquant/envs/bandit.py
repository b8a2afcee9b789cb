"""Single-state bandits with Gaussian-mixture rewards (gamma = 0 return laws)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm


@dataclass(frozen=True)
class Component:
    mean: float
    std: float
    weight: float


class BanditEnv:
    def __init__(self, components: Sequence[Component | tuple], seed: int = 0):
        comps = [c if isinstance(c, Component) else Component(*map(float, c)) for c in components]
        if not comps:
            raise ValueError("need at least one mixture component")
        w = np.array([c.weight for c in comps])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if any(c.std <= 0 for c in comps):
            raise ValueError("component std must be positive")
        self.components = comps
        self.means = np.array([c.mean for c in comps])
        self.stds = np.array([c.std for c in comps])
        self.weights = w / w.sum()
        self.rng = np.random.default_rng(seed)

    def sample(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = self.rng if rng is None else rng
        idx = rng.choice(len(self.components), size=n, p=self.weights)
        return self.means[idx] + self.stds[idx] * rng.standard_normal(n)

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def cdf(self, x: float) -> float:
        return float(self.weights @ norm.cdf((x - self.means) / self.stds))

    def quantile(self, u: float) -> float:
        lo = float(np.min(self.means - 12 * self.stds))
        hi = float(np.max(self.means + 12 * self.stds))
        return brentq(lambda x: self.cdf(x) - u, lo, hi, xtol=1e-12)

    def quantiles(self, levels: Sequence[float]) -> np.ndarray:
        return np.array([self.quantile(float(u)) for u in levels])


def default_bandit_family() -> list[list[tuple[float, float, float]]]:
    """Three bimodal clients with disjoint dominant modes."""
    return [
        [(-1.0, 0.3, 0.35), (4.0, 0.4, 0.65)],
        [(1.5, 0.3, 0.5), (7.0, 0.4, 0.5)],
        [(-4.0, 0.4, 0.3), (3.0, 0.3, 0.7)],
    ]
