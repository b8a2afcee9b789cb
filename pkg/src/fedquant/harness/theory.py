"""Numerical checks of the trust-region tracking bound on small tabular MDPs.

A fixed-policy MDP is a transition matrix ``P[s, s']`` with rewards
``R[s, s']``. The exact distributional backup of a quantile table ``q`` at
state ``s`` is the mixture of ``R[s, s'] + gamma * q[s']`` over ``s'``; it is
projected back onto K quantiles either by reading the midpoint levels or by
averaging the quantile function over each of the K equal-mass bins.

``verify_tracking`` iterates the exact trust-region update

    q_{n+1} = squash(shrink(T q_n, ref_n); ref_n)

with a reference rebuilt from a buffer of iterates, and checks the per-round
recursion

    e_{n+1} <= alpha beta_n (gamma e_n + eps_n + xi_n) + r_n + eta_n

plus the geometric bound ``e_n <= rho^n e_0 + (1 - rho^n) d_bar / (1 - rho)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import trust_region as tr
from ..distlaw import cvar_weighted_barycenter, midpoint_levels, w1_rows

PROJECTIONS = ("midpoint", "bin_mean")


@dataclass
class TabularMDP:
    P: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        S = self.P.shape[0]
        if self.P.shape != (S, S) or self.R.shape != (S, S):
            raise ValueError("P and R must both be S x S")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("rows of P must be probability vectors")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]


def random_mdp(rng: np.random.Generator, n_states: int, gamma: float, sparsity: float = 0.0,
               reward_scale: float = 1.0) -> TabularMDP:
    """Dirichlet transition rows (optionally sparsified) with Gaussian transition rewards."""
    P = rng.dirichlet(np.ones(n_states), size=n_states)
    if sparsity > 0:
        mask = rng.random(P.shape) >= sparsity
        mask[np.arange(n_states), rng.integers(n_states, size=n_states)] = True
        P = P * mask
        P /= P.sum(axis=1, keepdims=True)
    return TabularMDP(P, rng.normal(size=(n_states, n_states)) * reward_scale, gamma)


def chain_mdp(rng: np.random.Generator, n_states: int, gamma: float) -> TabularMDP:
    """Random walk on a ring with stay/forward/back moves and random rewards."""
    P = np.zeros((n_states, n_states))
    for s in range(n_states):
        p = rng.dirichlet(np.ones(3))
        for step, w in zip((0, 1, -1), p):
            P[s, (s + step) % n_states] += w
    return TabularMDP(P, rng.normal(size=(n_states, n_states)), gamma)


def _project_midpoint(atoms: np.ndarray, weights: np.ndarray, K: int) -> np.ndarray:
    order = np.argsort(atoms, axis=1, kind="stable")
    a = np.take_along_axis(atoms, order, axis=1)
    c = np.cumsum(np.take_along_axis(weights, order, axis=1), axis=1)
    tau = midpoint_levels(K)
    out = np.empty((atoms.shape[0], K))
    for s in range(atoms.shape[0]):
        idx = np.searchsorted(c[s], tau - 1e-12, side="left")
        out[s] = a[s, np.minimum(idx, a.shape[1] - 1)]
    return out


def _project_bin_mean(atoms: np.ndarray, weights: np.ndarray, K: int) -> np.ndarray:
    order = np.argsort(atoms, axis=1, kind="stable")
    a = np.take_along_axis(atoms, order, axis=1)
    c = np.cumsum(np.take_along_axis(weights, order, axis=1), axis=1)
    c[:, -1] = 1.0
    lo_c = np.concatenate([np.zeros((c.shape[0], 1)), c[:, :-1]], axis=1)
    edges = np.arange(K + 1) / K
    # mass of atom j inside bin k, per state: (S, K, n_atoms)
    overlap = np.clip(np.minimum(c[:, None, :], edges[None, 1:, None])
                      - np.maximum(lo_c[:, None, :], edges[None, :-1, None]), 0.0, None)
    return K * np.einsum("skj,sj->sk", overlap, a)


def projected_backup(q: np.ndarray, mdp: TabularMDP, projection: str = "midpoint") -> np.ndarray:
    """Exact distributional backup of a quantile table, projected onto K quantiles."""
    q = np.asarray(q, dtype=float)
    S, K = q.shape
    if S != mdp.n_states:
        raise ValueError("quantile table does not match the MDP")
    atoms = (mdp.R[:, :, None] + mdp.gamma * q[None, :, :]).reshape(S, S * K)
    weights = np.repeat(mdp.P / K, K, axis=1)
    if projection == "midpoint":
        return _project_midpoint(atoms, weights, K)
    if projection == "bin_mean":
        return _project_bin_mean(atoms, weights, K)
    raise ValueError(f"unknown projection {projection!r}; expected one of {PROJECTIONS}")


def d_max(q_a: np.ndarray, q_b: np.ndarray) -> float:
    """Max over states of the quantile W1 distance (every state is a probe point)."""
    return float(np.max(w1_rows(q_a, q_b)))


def contraction_ratios(mdp: TabularMDP, K: int, n_pairs: int, rng: np.random.Generator,
                       projection: str = "midpoint", scale: float = 3.0) -> np.ndarray:
    """``d(Tq, Tq') / d(q, q')`` over random monotone critic pairs."""
    out = np.empty(n_pairs)
    S = mdp.n_states
    for i in range(n_pairs):
        q = np.sort(rng.normal(size=(S, K)) * scale, axis=1)
        q2 = np.sort(rng.normal(size=(S, K)) * scale, axis=1)
        out[i] = d_max(projected_backup(q, mdp, projection), projected_backup(q2, mdp, projection)) / d_max(q, q2)
    return out


def fixed_point(mdp: TabularMDP, K: int, projection: str = "midpoint", tol: float = 1e-13,
                max_iter: int = 20_000) -> np.ndarray:
    q = np.zeros((mdp.n_states, K))
    for _ in range(max_iter):
        nxt = projected_backup(q, mdp, projection)
        if np.max(np.abs(nxt - q)) <= tol:
            return nxt
        q = nxt
    return q


@dataclass
class TrackingConfig:
    shrink_alpha: float
    delta_minus: np.ndarray
    delta_plus: np.ndarray
    beta_slope: np.ndarray
    K: int
    rounds: int = 50
    buffer_capacity: int = 3
    alpha_cvar: float = 0.1
    lambda_temp: float = 1.0
    reference: str = "buffer"  # or "frozen"
    projection: str = "midpoint"
    tol: float = 1e-9

    def __post_init__(self):
        if self.reference not in ("buffer", "frozen"):
            raise ValueError("reference must be 'buffer' or 'frozen'")
        if self.projection not in PROJECTIONS:
            raise ValueError(f"projection must be one of {PROJECTIONS}")

    @property
    def beta_bar(self) -> float:
        return float(np.max(self.beta_slope))


@dataclass
class TrackingDiagnostics:
    n: int
    e: float
    epsilon: float
    xi: float
    r: float
    eta: float
    beta_max: float
    delta_tube: float
    rho: float
    d_bar: float = float("nan")
    e_next: float = float("nan")
    recursion_bound: float = float("nan")
    capped_bound: float = float("nan")
    geometric_bound: float = float("nan")

    def row(self) -> dict:
        return asdict(self)


@dataclass
class TrackingResult:
    diagnostics: list[TrackingDiagnostics]
    recursion_violations: list[int] = field(default_factory=list)
    geometric_violations: list[int] = field(default_factory=list)
    capped_violations: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not (self.recursion_violations or self.geometric_violations or self.capped_violations)

    def summary(self) -> str:
        if self.passed:
            return f"pass ({len(self.diagnostics)} rounds)"
        parts = []
        for name, rounds in (("recursion", self.recursion_violations), ("capped", self.capped_violations),
                             ("geometric", self.geometric_violations)):
            if rounds:
                parts.append(f"{name} violated at round(s) {rounds[:5]}")
        return "fail: " + "; ".join(parts)


def _reference(buffer: list[np.ndarray], cfg: TrackingConfig) -> np.ndarray:
    return cvar_weighted_barycenter(np.stack(buffer), cfg.alpha_cvar, cfg.lambda_temp)


def verify_tracking(mdp: TabularMDP, cfg: TrackingConfig, q0: np.ndarray, ref0: np.ndarray) -> TrackingResult:
    """Run exact trust-region rounds and check the tracking recursion every round.

    In exact mode the backup is computed from the known kernel and the
    update is applied in closed form, so xi_n = eta_n = 0.
    """
    q = np.asarray(q0, dtype=float).copy()
    ref = np.asarray(ref0, dtype=float).copy()
    buffer = [ref.copy()]
    tube_kw = dict(delta_minus=cfg.delta_minus, delta_plus=cfg.delta_plus, beta_slope=cfg.beta_slope)
    diags: list[TrackingDiagnostics] = []
    rho = cfg.shrink_alpha * cfg.beta_bar * mdp.gamma
    e0 = d_max(q, ref)
    for n in range(cfg.rounds):
        tube = tr.TubeSpec(reference=ref, **tube_kw)
        backup = projected_backup(q, mdp, cfg.projection)
        q_next = tr.constrained_update(backup, tube, cfg.shrink_alpha)
        if cfg.reference == "buffer":
            buffer.append(q_next.copy())
            buffer = buffer[-cfg.buffer_capacity:]
            ref_next = _reference(buffer, cfg)
        else:
            ref_next = ref
        diag = TrackingDiagnostics(
            n=n, e=d_max(q, ref), epsilon=d_max(ref, projected_backup(ref, mdp, cfg.projection)),
            xi=0.0, r=d_max(ref_next, ref), eta=0.0, beta_max=tube.beta_max,
            delta_tube=float(np.max(tube.delta_tube())), rho=rho)
        diag.e_next = d_max(q_next, ref_next)
        core = cfg.shrink_alpha * diag.beta_max * (mdp.gamma * diag.e + diag.epsilon + diag.xi)
        diag.recursion_bound = core + diag.r + diag.eta
        diag.capped_bound = min(core, diag.delta_tube) + diag.r + diag.eta
        diags.append(diag)
        q, ref = q_next, ref_next

    result = TrackingResult(diags)
    d_n = [cfg.shrink_alpha * cfg.beta_bar * (g.epsilon + g.xi) + g.r + g.eta for g in diags]
    d_bar = float(max(d_n)) if d_n else 0.0
    for g in diags:
        g.d_bar = d_bar
        if g.e_next > g.recursion_bound + cfg.tol:
            result.recursion_violations.append(g.n)
        if g.e_next > g.capped_bound + cfg.tol:
            result.capped_violations.append(g.n)
    if rho < 1:
        # e_n for n = 1..rounds is the e_next of round n-1
        for g in diags:
            m = g.n + 1
            g.geometric_bound = rho ** m * e0 + (1 - rho ** m) / (1 - rho) * d_bar
            if g.e_next > g.geometric_bound + cfg.tol:
                result.geometric_violations.append(g.n)
    return result


def random_tracking_case(rng: np.random.Generator, rounds: int = 50, projection: str = "midpoint",
                         max_states: int = 8, max_K: int = 8, gammas=(0.5, 0.9)):
    """Random (MDP, tube, shrink) configuration with rho < 1 plus initial critic/reference."""
    S = int(rng.integers(2, max_states + 1))
    K = int(rng.integers(1, max_K + 1))
    gamma = float(rng.choice(gammas))
    mdp = random_mdp(rng, S, gamma)
    while True:
        alpha = float(rng.uniform(0.1, 1.0))
        beta = rng.uniform(0.3, 1.8, size=K)
        if alpha * beta.max() * gamma < 1:
            break
    cfg = TrackingConfig(
        shrink_alpha=alpha,
        delta_minus=rng.uniform(0.05, 3.0, size=(S, K)),
        delta_plus=rng.uniform(0.05, 3.0, size=(S, K)),
        beta_slope=beta, K=K, rounds=rounds,
        buffer_capacity=int(rng.integers(1, 5)),
        lambda_temp=float(rng.uniform(0.0, 3.0)),
        projection=projection)
    q0 = np.sort(rng.normal(size=(S, K)) * 3, axis=1)
    ref0 = np.sort(rng.normal(size=(S, K)) * 3, axis=1)
    return mdp, cfg, q0, ref0
