"""Client-local distributional trust region.

The reference is a CVaR-weighted W1 barycenter of the client's own recent
critic snapshots. A Bellman backup is first shrunk toward the reference and
then squashed into an asymmetric tube around it:

    shrink:  q~ = ref + alpha (backup - ref)
    squash:  ref_k + d_k tanh(beta_k (x_k - ref_k) / d_k),  d_k = d+ or d-
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import critic as cr
from .distlaw import cvar_weighted_barycenter

PIN_RADIUS = 1e-9


@dataclass
class TubeSpec:
    delta_minus: np.ndarray
    delta_plus: np.ndarray
    beta_slope: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=float)
        K = self.reference.shape[-1]
        self.delta_minus = np.broadcast_to(np.asarray(self.delta_minus, dtype=float), self.reference.shape)
        self.delta_plus = np.broadcast_to(np.asarray(self.delta_plus, dtype=float), self.reference.shape)
        self.beta_slope = np.broadcast_to(np.asarray(self.beta_slope, dtype=float), (K,))
        if np.any(self.delta_minus <= 0) or np.any(self.delta_plus <= 0):
            raise ValueError("tube radii must be positive")
        if np.any(self.beta_slope <= 0):
            raise ValueError("tube slopes must be positive")

    @classmethod
    def symmetric(cls, reference, radius, beta=1.0) -> "TubeSpec":
        return cls(radius, radius, beta, reference)

    @property
    def K(self) -> int:
        return self.reference.shape[-1]

    @property
    def beta_max(self) -> float:
        return float(self.beta_slope.max())

    def delta_tube(self, p: float = 1.0):
        """``((1/K) sum_k max(d-_k, d+_k)^p)^(1/p)``, per row for batched tubes."""
        d = np.maximum(self.delta_minus, self.delta_plus)
        out = np.mean(d ** p, axis=-1) ** (1.0 / p)
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ShrinkConfig:
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("shrink alpha must lie in (0, 1]")


def _squash_raw(x: np.ndarray, tube: TubeSpec) -> np.ndarray:
    ref = tube.reference
    dev = x - ref
    radius = np.where(dev >= 0, tube.delta_plus, tube.delta_minus)
    beta = tube.beta_slope
    with np.errstate(invalid="ignore", divide="ignore"):
        bounded = ref + radius * np.tanh(beta * dev / radius)
    out = np.where(np.isinf(radius), ref + beta * dev, bounded)
    out = np.where(np.isinf(radius) & (beta == 1.0), x, out)
    out = np.where(radius < PIN_RADIUS, ref, out)
    # at saturation ref + radius can round one ulp past the cap; step back inside
    for _ in range(4):
        hi, lo = out - ref > tube.delta_plus, ref - out > tube.delta_minus
        if not (hi.any() or lo.any()):
            break
        out = np.where(hi, np.nextafter(out, -np.inf), np.where(lo, np.nextafter(out, np.inf), out))
    return out


def tube_squash(x, tube: TubeSpec) -> np.ndarray:
    """Apply the tube squash coordinatewise; rows are re-sorted if the
    per-level radii broke their ordering."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != tube.K:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {tube.K}")
    return np.sort(_squash_raw(x, tube), axis=-1)


def count_reorders(x, tube: TubeSpec) -> int:
    """Rows whose raw squash output is not monotone."""
    raw = _squash_raw(np.asarray(x, dtype=float), tube)
    return int(np.sum(np.any(np.diff(np.atleast_2d(raw), axis=-1) < 0, axis=-1)))


def shrink(backup, reference, cfg: ShrinkConfig | float) -> np.ndarray:
    alpha = cfg.alpha if isinstance(cfg, ShrinkConfig) else float(cfg)
    if not 0.0 < alpha <= 1.0:
        raise ValueError("shrink alpha must lie in (0, 1]")
    backup = np.asarray(backup, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if backup.shape[-1] != reference.shape[-1]:
        raise ValueError("backup and reference must share K")
    if alpha == 1.0:
        return backup.copy()
    return reference + alpha * (backup - reference)


def constrained_update(backup, tube: TubeSpec, cfg: ShrinkConfig | float) -> np.ndarray:
    return tube_squash(shrink(backup, tube.reference, cfg), tube)


class ReferenceBuffer:
    """Ring buffer of the last ``capacity`` critic snapshots.

    Each entry keeps a frozen copy of the critic (so the reference can be
    evaluated at any state) and, optionally, its outputs on the probe set.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("buffer capacity must be positive")
        self.capacity = int(capacity)
        self.models: deque = deque(maxlen=self.capacity)
        self.probe_outputs: deque = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.models)

    def push(self, model: cr.CriticModel, probe_outputs=None) -> None:
        self.models.append(model.clone())
        self.probe_outputs.append(None if probe_outputs is None else np.array(probe_outputs, dtype=float))

    def laws_at(self, states) -> np.ndarray:
        """Snapshot outputs stacked as (n_snapshots, B, K)."""
        if not self.models:
            raise ValueError("reference buffer is empty")
        return np.stack([m.forward(states) for m in self.models])

    def probe_laws(self) -> np.ndarray:
        if not self.models:
            raise ValueError("reference buffer is empty")
        if any(p is None for p in self.probe_outputs):
            raise ValueError("some snapshots were pushed without probe outputs")
        return np.stack(list(self.probe_outputs))


def build_reference(buffer: ReferenceBuffer, alpha_cvar: float, lambda_temp: float,
                    states=None) -> np.ndarray:
    """CVaR-weighted barycenter of the buffered laws, weights chosen per point.

    Without ``states`` the buffered probe outputs are used, giving one
    reference row per probe point; otherwise the snapshot critics are
    evaluated at ``states``.
    """
    laws = buffer.probe_laws() if states is None else buffer.laws_at(states)
    return cvar_weighted_barycenter(laws, alpha_cvar, lambda_temp)


@dataclass
class TrustRegionConfig:
    shrink_alpha: float = 0.5
    beta_slope: float = 1.0
    c_plus: float = 2.0
    c_minus: float = 2.0
    radius_floor: float = 1e-3
    buffer_capacity: int = 5
    alpha_cvar: float = 0.1
    lambda_temp: float = 1.0
    min_snapshots: int = 2
    snapshot: str = "pre_broadcast"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        ShrinkConfig(self.shrink_alpha)
        if self.beta_slope <= 0 or self.c_plus <= 0 or self.c_minus <= 0 or self.radius_floor <= 0:
            raise ValueError("tube slope, scale factors and floor must be positive")
        if self.buffer_capacity < 1 or self.min_snapshots < 1:
            raise ValueError("buffer capacity and min_snapshots must be positive")
        if self.snapshot not in ("pre_broadcast", "post_broadcast"):
            raise ValueError("snapshot must be 'pre_broadcast' or 'post_broadcast'")


def tube_from_buffer(laws: np.ndarray, reference: np.ndarray, cfg: TrustRegionConfig) -> TubeSpec:
    """Scale-adaptive tube: radii are ``c * std over snapshots + floor`` per level."""
    spread = laws.std(axis=0)
    return TubeSpec(cfg.c_minus * spread + cfg.radius_floor,
                    cfg.c_plus * spread + cfg.radius_floor,
                    cfg.beta_slope, reference)


@dataclass
class TrustRegionStats:
    applied: bool = False
    reorders: int = 0
    delta_tube: float = float("nan")
    beta_max: float = float("nan")
    target_shift: float = 0.0


def constrain_targets(buffer: ReferenceBuffer, states, targets, cfg: TrustRegionConfig):
    """Replace raw Bellman targets by their trust-region images.

    Returns ``(new_targets, stats)``; targets pass through untouched while the
    buffer holds fewer than ``cfg.min_snapshots`` snapshots.
    """
    targets = np.asarray(targets, dtype=float)
    stats = TrustRegionStats()
    if len(buffer) < cfg.min_snapshots:
        return targets, stats
    laws = buffer.laws_at(states)
    ref = cvar_weighted_barycenter(laws, cfg.alpha_cvar, cfg.lambda_temp)
    tube = tube_from_buffer(laws, ref, cfg)
    shrunk = shrink(targets, ref, cfg.shrink_alpha)
    out = tube_squash(shrunk, tube)
    stats.applied = True
    stats.reorders = count_reorders(shrunk, tube)
    stats.delta_tube = float(np.max(tube.delta_tube()))
    stats.beta_max = tube.beta_max
    stats.target_shift = float(np.mean(np.abs(out - targets)))
    return out, stats


def apply_trust_region_to_training(model: cr.CriticModel, buffer: ReferenceBuffer, states, targets,
                                   cfg: TrustRegionConfig, lr: float, kappa: float = 1.0):
    """Quantile-Huber SGD step toward tube-feasible targets; mutates ``model``."""
    new_targets, stats = constrain_targets(buffer, states, targets, cfg)
    loss = cr.sgd_step(model, states, new_targets, lr, kappa)
    return loss, stats
