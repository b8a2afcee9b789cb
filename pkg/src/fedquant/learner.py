"""Local learners: QR regression for bandits and risk-aware PPO for the gridworld.

The PPO actor ascends the clipped surrogate with exact softmax gradients.
Advantages combine a mean-value GAE with a CVaR-value GAE,

    A_comb = A_mean + (lambda_cvar / tau_cvar) * A_cvar,

normalised once after combining. The critic regresses onto one-step
quantile Bellman targets, optionally passed through the trust region.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from . import critic as cr
from . import trust_region as tr


@dataclass(frozen=True)
class RiskConfig:
    alpha_cvar: float = 0.1
    lambda_cvar: float = 0.5
    tau_cvar: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha_cvar <= 1.0:
            raise ValueError("alpha_cvar must lie in (0, 1]")
        if self.lambda_cvar < 0 or self.tau_cvar <= 0:
            raise ValueError("lambda_cvar must be >= 0 and tau_cvar > 0")

    @property
    def cvar_coef(self) -> float:
        return self.lambda_cvar / self.tau_cvar


@dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    epochs: int = 4
    minibatch_size: int = 256
    lr_actor: float = 1.0
    lr_critic: float = 10.0
    kappa: float = 1.0
    episodes_per_update: int = 16
    # tabular backends: each visited state takes its own mean gradient
    state_normalized: bool = True

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if not (0.0 <= self.gae_lambda <= 1.0 and 0.0 <= self.gamma <= 1.0):
            raise ValueError("gae_lambda and gamma must lie in [0, 1]")
        if self.epochs < 1 or self.minibatch_size < 1 or self.episodes_per_update < 1:
            raise ValueError("epochs, minibatch_size and episodes_per_update must be positive")
        if self.lr_actor <= 0 or self.lr_critic <= 0 or self.kappa <= 0:
            raise ValueError("learning rates and kappa must be positive")


# -- policy -------------------------------------------------------------------------

class SoftmaxPolicy:
    """Softmax over logits; tabular (state index) or linear-feature backend."""

    def __init__(self, n_actions: int, n_states: int | None = None, feature_dim: int | None = None):
        if (n_states is None) == (feature_dim is None):
            raise ValueError("give exactly one of n_states (tabular) or feature_dim (linear)")
        self.n_actions = int(n_actions)
        if n_states is not None:
            self.backend = "tabular"
            self.n_states = int(n_states)
            self.params = np.zeros(self.n_states * self.n_actions)
        else:
            self.backend = "linear"
            self.feature_dim = int(feature_dim)
            self.params = np.zeros((self.feature_dim + 1) * self.n_actions)

    def clone(self) -> "SoftmaxPolicy":
        other = SoftmaxPolicy.__new__(SoftmaxPolicy)
        other.__dict__.update(self.__dict__)
        other.params = self.params.copy()
        return other

    def _weights(self) -> np.ndarray:
        if self.backend == "tabular":
            return self.params.reshape(self.n_states, self.n_actions)
        return self.params.reshape(self.feature_dim + 1, self.n_actions)

    def _design(self, obs) -> np.ndarray:
        x = np.atleast_2d(np.asarray(obs, dtype=float))
        return np.hstack([x, np.ones((x.shape[0], 1))])

    def logits(self, obs) -> np.ndarray:
        if self.backend == "tabular":
            return self._weights()[np.asarray(obs, dtype=int)]
        return self._design(obs) @ self._weights()

    def probs(self, obs) -> np.ndarray:
        return softmax(self.logits(obs), axis=-1)

    def log_prob(self, obs, actions) -> np.ndarray:
        lp = log_softmax(self.logits(obs), axis=-1)
        return np.take_along_axis(lp, np.asarray(actions)[:, None], axis=-1)[:, 0]

    def backward(self, obs, grad_logits: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. params of ``sum(grad_logits * logits(obs))``."""
        if self.backend == "tabular":
            g = np.zeros((self.n_states, self.n_actions))
            np.add.at(g, np.asarray(obs, dtype=int), grad_logits)
            return g.ravel()
        return (self._design(obs).T @ grad_logits).ravel()

    def table(self) -> np.ndarray:
        """Action probabilities for every tabular state."""
        if self.backend != "tabular":
            raise ValueError("table() needs the tabular backend")
        return softmax(self._weights(), axis=-1)


def clipped_surrogate(policy: SoftmaxPolicy, obs, actions, old_logp, adv, clip: float,
                      sample_weight=None):
    """Clipped surrogate and its exact gradient w.r.t. policy params.

    Samples are averaged uniformly unless ``sample_weight`` is given.
    """
    actions = np.asarray(actions)
    adv = np.asarray(adv, dtype=float)
    w = np.full(len(adv), 1.0 / len(adv)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    logits = policy.logits(obs)
    logp_all = log_softmax(logits, axis=-1)
    logp = np.take_along_axis(logp_all, actions[:, None], axis=-1)[:, 0]
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    value = w @ np.minimum(ratio * adv, clipped * adv)
    # gradient flows only where the unclipped branch is the strict minimum or the band is inactive
    active = ~(((adv > 0) & (ratio > 1.0 + clip)) | ((adv < 0) & (ratio < 1.0 - clip)))
    coef = np.where(active, ratio * adv, 0.0) * w
    onehot = np.zeros_like(logits)
    onehot[np.arange(len(actions)), actions] = 1.0
    grad_logits = coef[:, None] * (onehot - np.exp(logp_all))
    return float(value), policy.backward(obs, grad_logits)


# -- rollouts -----------------------------------------------------------------------

@dataclass
class Batch:
    policy_obs: np.ndarray
    critic_obs: np.ndarray
    next_critic_obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray
    done: np.ndarray
    old_logp: np.ndarray
    episode_returns: np.ndarray
    catastrophes: int
    states: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def episodes(self) -> int:
        return len(self.episode_returns)


def encoder(env, backend: str):
    if backend == "tabular":
        return env.encode
    if backend in ("linear", "tinynet"):
        return env.features
    raise ValueError(f"unknown backend {backend!r}")


def collect_episodes(env, policy: SoftmaxPolicy, n_episodes: int, rng: np.random.Generator,
                     critic_backend: str = "tabular", gamma: float = 1.0) -> Batch:
    """Run ``n_episodes`` full episodes; returns are discounted by ``gamma``."""
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    enc_pi = encoder(env, policy.backend)
    enc_v = encoder(env, critic_backend)
    table = np.cumsum(policy.table(), axis=1) if policy.backend == "tabular" else None
    cols = {k: [] for k in ("po", "co", "nco", "a", "r", "term", "done", "lp")}
    returns, cats, states = [], 0, []
    for _ in range(n_episodes):
        s = env.reset()
        ret, disc = 0.0, 1.0
        while True:
            po = enc_pi(s)
            if table is not None:
                cum = table[po]
            else:
                cum = np.cumsum(policy.probs(po)[0])
            a = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), policy.n_actions - 1)
            t = env.step(s, a)
            cols["po"].append(po)
            cols["co"].append(enc_v(s))
            cols["nco"].append(enc_v(t.next_state))
            cols["a"].append(a)
            cols["r"].append(t.reward)
            cols["term"].append(t.terminal)
            cols["done"].append(t.done)
            states.append(s)
            ret += disc * t.reward
            disc *= gamma
            s = t.next_state
            if t.done:
                cats += int(t.catastrophe)
                break
        returns.append(ret)
    actions = np.array(cols["a"])
    po = np.array(cols["po"])
    return Batch(po, np.array(cols["co"]), np.array(cols["nco"]), actions, np.array(cols["r"]),
                 np.array(cols["term"], dtype=bool), np.array(cols["done"], dtype=bool),
                 policy.log_prob(po, actions), np.array(returns), cats, states)


# -- advantages ---------------------------------------------------------------------

def gae(rewards, values, next_values, terminal, done, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantage estimates over a flat batch of consecutive episodes.

    Bootstraps from ``next_values`` unless the step is terminal; the
    recursion restarts at every episode end (terminal or truncated).
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise ValueError("empty trajectory")
    keep = 1.0 - np.asarray(terminal, dtype=float)
    cont = 1.0 - np.asarray(done, dtype=float)
    delta = rewards + gamma * keep * np.asarray(next_values) - np.asarray(values)
    adv = np.empty_like(delta)
    running = 0.0
    for t in range(len(delta) - 1, -1, -1):
        running = delta[t] + gamma * lam * cont[t] * running
        adv[t] = running
    return adv


def normalize(x: np.ndarray) -> np.ndarray:
    std = x.std()
    return (x - x.mean()) / (std + 1e-8)


@dataclass
class Advantages:
    combined: np.ndarray
    mean: np.ndarray
    cvar: np.ndarray
    raw_combined: np.ndarray


def combined_advantage(batch: Batch, critic: cr.CriticModel, risk: RiskConfig, ppo: PPOConfig,
                       q=None, next_q=None) -> Advantages:
    """Mean-GAE plus weighted CVaR-GAE; ``combined`` is normalised, the parts are raw."""
    if len(batch) == 0:
        raise ValueError("empty trajectory")
    q = critic.forward(batch.critic_obs) if q is None else q
    next_q = critic.forward(batch.next_critic_obs) if next_q is None else next_q
    a_mean = gae(batch.rewards, cr.q_mean(q), cr.q_mean(next_q), batch.terminal, batch.done,
                 ppo.gamma, ppo.gae_lambda)
    if risk.lambda_cvar == 0.0:
        a_cvar = np.zeros_like(a_mean)
        raw = a_mean.copy()
    else:
        a_cvar = gae(batch.rewards, cr.q_cvar(q, risk.alpha_cvar), cr.q_cvar(next_q, risk.alpha_cvar),
                     batch.terminal, batch.done, ppo.gamma, ppo.gae_lambda)
        raw = a_mean + risk.cvar_coef * a_cvar
    return Advantages(normalize(raw), a_mean, a_cvar, raw)


# -- update -------------------------------------------------------------------------

@dataclass
class UpdateStats:
    actor_loss: float
    critic_loss: float
    approx_kl: float
    tr: tr.TrustRegionStats | None = None


@dataclass
class TrustRegionHook:
    buffer: tr.ReferenceBuffer
    cfg: tr.TrustRegionConfig


def per_state_weights(obs) -> np.ndarray:
    """1 / (visits of the row's state in the batch); tabular indices only."""
    _, inverse, counts = np.unique(np.asarray(obs), return_inverse=True, return_counts=True)
    return 1.0 / counts[inverse.ravel()]


def critic_targets(batch: Batch, critic: cr.CriticModel, ppo: PPOConfig, next_q=None) -> np.ndarray:
    next_q = critic.forward(batch.next_critic_obs) if next_q is None else next_q
    gamma = min(ppo.gamma, 1.0 - 1e-12)
    return cr.bellman_target(batch.rewards, batch.terminal, gamma, next_q)


def ppo_update(policy: SoftmaxPolicy, critic: cr.CriticModel, batch: Batch, ppo: PPOConfig,
               risk: RiskConfig, rng: np.random.Generator,
               trust_region: TrustRegionHook | None = None) -> UpdateStats:
    """Clipped-surrogate actor ascent plus quantile-Huber critic descent; mutates both."""
    q = critic.forward(batch.critic_obs)
    next_q = critic.forward(batch.next_critic_obs)
    adv = combined_advantage(batch, critic, risk, ppo, q, next_q).combined
    targets = critic_targets(batch, critic, ppo, next_q)
    tr_stats = None
    if trust_region is not None:
        targets, tr_stats = tr.constrain_targets(trust_region.buffer, batch.critic_obs, targets,
                                                 trust_region.cfg)
    n = len(batch)
    actor_losses, critic_losses = [], []
    for _ in range(ppo.epochs):
        order = rng.permutation(n)
        for start in range(0, n, ppo.minibatch_size):
            idx = order[start:start + ppo.minibatch_size]
            obs = batch.policy_obs[idx]
            cobs = batch.critic_obs[idx]
            w_pi = per_state_weights(obs) if ppo.state_normalized and policy.backend == "tabular" else None
            w_v = per_state_weights(cobs) if ppo.state_normalized and critic.backend == "tabular" else None
            value, grad = clipped_surrogate(policy, obs, batch.actions[idx], batch.old_logp[idx],
                                            adv[idx], ppo.clip, w_pi)
            policy.params += ppo.lr_actor * grad
            closs = cr.sgd_step(critic, cobs, targets[idx], ppo.lr_critic, ppo.kappa, w_v)
            actor_losses.append(-value)
            critic_losses.append(closs)
    log_ratio = policy.log_prob(batch.policy_obs, batch.actions) - batch.old_logp
    kl = float(np.mean(np.expm1(log_ratio) - log_ratio))
    stats = UpdateStats(float(np.mean(actor_losses)), float(np.mean(critic_losses)), kl, tr_stats)
    if not (np.isfinite(stats.actor_loss) and np.isfinite(stats.critic_loss)
            and np.all(np.isfinite(policy.params)) and np.all(np.isfinite(critic.params))):
        raise FloatingPointError(
            f"non-finite update: actor_loss={stats.actor_loss}, critic_loss={stats.critic_loss}, "
            f"max|adv|={np.max(np.abs(adv)):.3g}, max|target|={np.max(np.abs(targets)):.3g}")
    return stats


# -- bandit -------------------------------------------------------------------------

def qr_bandit_train(critic: cr.CriticModel, env, steps: int, lr: float, batch_size: int = 64,
                    kappa: float = 0.1, lr_final: float | None = None, state=None,
                    rng: np.random.Generator | None = None) -> cr.CriticModel:
    """Single-state quantile regression onto sampled rewards (the gamma = 0 Bellman target).

    The step size decays geometrically from ``lr`` to ``lr_final`` (constant
    when ``lr_final`` is None). ``state`` defaults to index 0 for tabular
    critics and the input ``[1.0]`` otherwise.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    if state is None:
        state = 0 if critic.backend == "tabular" else np.ones(critic.in_dim)
    if critic.backend == "tabular":
        inputs = np.full(batch_size, state, dtype=int)
    else:
        inputs = np.tile(np.asarray(state, dtype=float), (batch_size, 1))
    rates = np.full(steps, lr) if lr_final is None else np.geomspace(lr, lr_final, steps)
    K = critic.K
    for step_lr in rates:
        r = env.sample(batch_size, rng)
        cr.sgd_step(critic, inputs, np.repeat(r[:, None], K, axis=1), float(step_lr), kappa)
    return critic
