"""In-process federated rounds over critic parameters.

Each round: every client trains locally, snapshots its own critic into its
reference buffer, then (except in ``local`` mode) the server averages the
critic parameters and broadcasts them back. Policies never leave a client.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import critic as cr
from . import learner as ln
from . import trust_region as tr
from .envs.grid import GridConfig, GridEnv
from .harness import metrics

MODES = ("local", "fedavg", "cvar", "cvar_tr")
MODE_LABELS = {"local": "Local", "fedavg": "FedAvg", "cvar": "FedAvg (CVaR)", "cvar_tr": "FedAvg (CVaR + TR)"}


def canonical_mode(mode: str) -> str:
    key = mode.lower().replace(" ", "").replace("(", "").replace(")", "").replace("+", "_")
    aliases = {"local": "local", "fedavg": "fedavg", "cvar": "cvar", "fedavgcvar": "cvar",
               "cvar_tr": "cvar_tr", "fedavgcvar_tr": "cvar_tr", "fedavgcvartr": "cvar_tr"}
    if key not in aliases:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return aliases[key]


@dataclass
class FedConfig:
    client_count: int
    rounds: int
    local_steps_per_round: int = 4
    client_weights: Sequence[float] | None = None
    eval_episodes: int = 16

    def __post_init__(self):
        if self.client_count < 1:
            raise ValueError("need at least one client")
        if self.rounds < 1 or self.local_steps_per_round < 1 or self.eval_episodes < 1:
            raise ValueError("rounds, local_steps_per_round and eval_episodes must be positive")
        if self.client_weights is None:
            self.client_weights = [1.0 / self.client_count] * self.client_count
        w = np.asarray(self.client_weights, dtype=float)
        if w.shape != (self.client_count,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("client_weights must be N nonnegative reals summing to 1")
        self.client_weights = [float(v) for v in w]


def aggregate(params: Sequence[np.ndarray], weights: Sequence[float], ids: Sequence[int] | None = None) -> np.ndarray:
    """Weighted parameter average, summed in ascending client-id order."""
    if len(params) == 0 or len(params) != len(weights):
        raise ValueError("need one weight per parameter vector")
    vecs = [np.asarray(p, dtype=float) for p in params]
    if any(v.shape != vecs[0].shape for v in vecs):
        raise ValueError("parameter vectors differ in length")
    if abs(float(np.sum(weights)) - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    order = np.argsort(np.arange(len(vecs)) if ids is None else np.asarray(ids), kind="stable")
    if all(np.array_equal(v, vecs[0]) for v in vecs[1:]):
        return vecs[0].copy()
    out = np.zeros_like(vecs[0])
    for i in order:
        out += float(weights[i]) * vecs[i]
    return out


def _seed_for(*parts) -> int:
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class ClientState:
    id: int
    env: GridEnv
    eval_env: GridEnv
    policy: ln.SoftmaxPolicy
    critic: cr.CriticModel
    buffer: tr.ReferenceBuffer
    rng: np.random.Generator
    eval_rng: np.random.Generator
    seed: int
    prev_probe: np.ndarray | None = None

    def policy_hash(self) -> str:
        return hashlib.sha256(self.policy.params.tobytes()).hexdigest()


def make_clients(env_cfgs: Sequence[GridConfig], seed: int, K: int = 21, critic_backend: str = "tabular",
                 policy_backend: str = "tabular", hidden: int = 32, buffer_capacity: int = 5) -> list[ClientState]:
    """One client per env config; all critics start from the same parameters."""
    clients = []
    for i, cfg in enumerate(env_cfgs):
        env = GridEnv(cfg, seed=_seed_for(seed, i, "env"))
        if critic_backend == "tabular":
            critic = cr.TabularCritic(env.n_states, K)
        elif critic_backend == "tinynet":
            critic = cr.TinyNetCritic(env.feature_dim, K, hidden=hidden, seed=_seed_for(seed, "critic") % 2**32)
        else:
            raise ValueError(f"unknown critic backend {critic_backend!r}")
        if policy_backend == "tabular":
            policy = ln.SoftmaxPolicy(env.n_actions, n_states=env.n_states)
        else:
            policy = ln.SoftmaxPolicy(env.n_actions, feature_dim=env.feature_dim)
        clients.append(ClientState(
            id=i, env=env, eval_env=GridEnv(cfg, seed=_seed_for(seed, i, "eval")),
            policy=policy, critic=critic, buffer=tr.ReferenceBuffer(buffer_capacity),
            rng=np.random.default_rng(_seed_for(seed, i, "learner")),
            eval_rng=np.random.default_rng(_seed_for(seed, i, "eval_policy")), seed=seed))
    if len({c.critic.n_params for c in clients}) != 1:
        raise ValueError("client critics must share one architecture")
    return clients


@dataclass
class ClientRoundStats:
    client: int
    eval_return: float
    catastrophes: int
    episodes: int
    critic_loss: float
    actor_loss: float
    approx_kl: float
    drift: float | None = None
    probe_d: float | None = None
    tracking_error: float | None = None
    tr_applied: bool = False
    tr_shift: float = 0.0


@dataclass
class RoundLog:
    round: int
    mode: str
    clients: list[ClientRoundStats] = field(default_factory=list)

    def mean(self, attr: str) -> float | None:
        vals = [getattr(c, attr) for c in self.clients]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    @property
    def catastrophe_rate(self) -> float:
        return sum(c.catastrophes for c in self.clients) / sum(c.episodes for c in self.clients)


@dataclass
class RoundContext:
    ppo: ln.PPOConfig
    risk: ln.RiskConfig
    tr_cfg: tr.TrustRegionConfig
    probe: metrics.ProbeSet | None = None
    probe_size: int = 32
    probe_seed: int = 0
    round_index: int = 0


def _local_training(client: ClientState, mode: str, cfg: FedConfig, ctx: RoundContext):
    risk = ctx.risk if mode in ("cvar", "cvar_tr") else ln.RiskConfig(ctx.risk.alpha_cvar, 0.0, ctx.risk.tau_cvar)
    hook = ln.TrustRegionHook(client.buffer, ctx.tr_cfg) if mode == "cvar_tr" else None
    stats, visited = [], []
    for _ in range(cfg.local_steps_per_round):
        batch = ln.collect_episodes(client.env, client.policy, ctx.ppo.episodes_per_update, client.rng,
                                    client.critic.backend, ctx.ppo.gamma)
        visited.append(batch.critic_obs)
        stats.append(ln.ppo_update(client.policy, client.critic, batch, ctx.ppo, risk, client.rng, hook))
    return stats, np.concatenate(visited)


def _evaluate(client: ClientState, episodes: int, gamma: float):
    batch = ln.collect_episodes(client.eval_env, client.policy, episodes, client.eval_rng,
                                client.critic.backend, gamma)
    return float(batch.episode_returns.mean()), batch.catastrophes


def run_round(clients: Sequence[ClientState], cfg: FedConfig, mode: str, ctx: RoundContext) -> RoundLog:
    """One federated round; mutates the clients and ``ctx`` (probe set, round index)."""
    mode = canonical_mode(mode)
    if len(clients) != cfg.client_count:
        raise ValueError("client count does not match the config")
    log = RoundLog(ctx.round_index, mode)
    local_stats, visited = [], []
    for c in clients:
        s, v = _local_training(c, mode, cfg, ctx)
        local_stats.append(s)
        visited.append(v)

    pre_broadcast = ctx.tr_cfg.snapshot == "pre_broadcast"
    if pre_broadcast:
        for c in clients:
            c.buffer.push(c.critic)
    if mode != "local":
        hashes = [c.policy_hash() for c in clients]
        avg = aggregate([c.critic.get_params() for c in clients], cfg.client_weights, [c.id for c in clients])
        for c in clients:
            c.critic.set_params(avg)
        if hashes != [c.policy_hash() for c in clients]:
            raise RuntimeError("broadcast touched a policy")
    if not pre_broadcast:
        for c in clients:
            c.buffer.push(c.critic)

    if ctx.probe is None:
        ctx.probe = metrics.sample_probe(np.concatenate(visited), ctx.probe_size, ctx.probe_seed)
    for c, stats in zip(clients, local_stats):
        ret, cats = _evaluate(c, cfg.eval_episodes, ctx.ppo.gamma)
        out = c.critic.forward(ctx.probe.points)
        drift = probe_d = tracking = None
        if c.prev_probe is not None:
            drift = metrics.output_drift(out, c.prev_probe)
            probe_d = metrics.probe_metric_d(out, c.prev_probe)
        if len(c.buffer) >= ctx.tr_cfg.min_snapshots:
            ref = tr.build_reference(c.buffer, ctx.tr_cfg.alpha_cvar, ctx.tr_cfg.lambda_temp,
                                     states=ctx.probe.points)
            tracking = metrics.probe_metric_d(out, ref)
        c.prev_probe = out
        applied = [s.tr for s in stats if s.tr is not None and s.tr.applied]
        log.clients.append(ClientRoundStats(
            client=c.id, eval_return=ret, catastrophes=cats, episodes=cfg.eval_episodes,
            critic_loss=float(np.mean([s.critic_loss for s in stats])),
            actor_loss=float(np.mean([s.actor_loss for s in stats])),
            approx_kl=float(np.mean([s.approx_kl for s in stats])),
            drift=drift, probe_d=probe_d, tracking_error=tracking,
            tr_applied=bool(applied),
            tr_shift=float(np.mean([s.target_shift for s in applied])) if applied else 0.0))
    ctx.round_index += 1
    return log
