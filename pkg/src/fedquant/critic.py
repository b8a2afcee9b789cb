"""Quantile critics with flat parameter access and exact quantile-Huber gradients.

Two backends share one interface:

* ``TabularCritic``: one sorted row of K quantiles per discrete state.
* ``TinyNetCritic``: one tanh hidden layer feeding a base value plus K-1
  softplus increments, so outputs are monotone by construction.

Critics are state-valued: ``forward(states)`` returns an array (B, K).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.special import expit

from .distlaw import QuantileLevels, cvar_lower

SNAPSHOT_VERSION = 1


class CriticModel:
    """Shared plumbing; subclasses implement ``forward`` and ``backward``."""

    backend = "abstract"

    def __init__(self, K: int):
        self.levels = QuantileLevels(K)
        self.params = np.zeros(0)

    @property
    def K(self) -> int:
        return self.levels.K

    @property
    def n_params(self) -> int:
        return self.params.size

    def get_params(self) -> np.ndarray:
        return self.params.copy()

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.size} parameters, got {flat.size}")
        self.params[...] = flat

    def clone(self) -> "CriticModel":
        raise NotImplementedError

    def forward(self, states) -> np.ndarray:
        raise NotImplementedError

    def backward(self, states, grad_q: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the flat params of ``sum(grad_q * forward(states))``."""
        raise NotImplementedError

    def project(self, states=None) -> None:
        """Restore monotone outputs after a raw parameter update (no-op by default)."""

    def header(self) -> dict:
        raise NotImplementedError


class TabularCritic(CriticModel):
    backend = "tabular"

    def __init__(self, n_states: int, K: int):
        super().__init__(K)
        if n_states < 1:
            raise ValueError("n_states must be positive")
        self.n_states = int(n_states)
        self.params = np.zeros(self.n_states * K)

    @property
    def table(self) -> np.ndarray:
        return self.params.reshape(self.n_states, self.K)

    def _index(self, states) -> np.ndarray:
        s = np.asarray(states)
        if s.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(s, 1), 0)):
                raise ValueError("tabular states must be integers")
            s = s.astype(np.int64)
        if s.size and (s.min() < 0 or s.max() >= self.n_states):
            raise IndexError(f"state out of range [0, {self.n_states})")
        return s

    def forward(self, states) -> np.ndarray:
        return self.table[self._index(states)].copy()

    def backward(self, states, grad_q):
        s = self._index(states)
        g = np.zeros((self.n_states, self.K))
        np.add.at(g, s, np.asarray(grad_q, dtype=float))
        return g.ravel()

    def project(self, states=None) -> None:
        table = self.table
        if states is None:
            table.sort(axis=1)
        else:
            rows = np.unique(self._index(states))
            table[rows] = np.sort(table[rows], axis=1)

    def assign(self, states, values) -> None:
        """Exact write of quantile rows (used where SGD error must be zero)."""
        s = self._index(states)
        self.table[s] = np.sort(np.asarray(values, dtype=float), axis=-1)

    def clone(self) -> "TabularCritic":
        other = TabularCritic(self.n_states, self.K)
        other.params[:] = self.params
        return other

    def header(self) -> dict:
        return {"backend": self.backend, "K": self.K, "n_states": self.n_states}


class TinyNetCritic(CriticModel):
    backend = "tinynet"

    def __init__(self, in_dim: int, K: int, hidden: int = 32, seed: int = 0,
                 init_increment: float = -2.0):
        super().__init__(K)
        self.in_dim = int(in_dim)
        self.hidden = int(hidden)
        H, D, J = self.hidden, self.in_dim, K - 1
        self._shapes = [("W1", (H, D)), ("b1", (H,)), ("wb", (H,)), ("cb", (1,)),
                        ("Wi", (J, H)), ("ci", (J,))]
        self.params = np.zeros(sum(int(np.prod(s)) for _, s in self._shapes))
        rng = np.random.default_rng(seed)
        p = self.unpack()
        p["W1"][...] = rng.normal(size=(H, D)) / np.sqrt(max(D, 1))
        p["b1"][...] = rng.normal(size=H) * 0.1
        p["wb"][...] = rng.normal(size=H) * 0.1 / np.sqrt(H)
        p["Wi"][...] = rng.normal(size=(J, H)) * 0.1 / np.sqrt(H)
        p["ci"][...] = init_increment

    def unpack(self, flat=None) -> dict[str, np.ndarray]:
        """Named views into ``flat`` (default: the live parameters)."""
        flat = self.params if flat is None else flat
        out, i = {}, 0
        for name, shape in self._shapes:
            n = int(np.prod(shape))
            out[name] = flat[i:i + n].reshape(shape)
            i += n
        return out

    def _inputs(self, states) -> np.ndarray:
        x = np.asarray(states, dtype=float)
        if x.ndim == 1:
            x = x[None, :] if x.size == self.in_dim else x[:, None]
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected inputs of width {self.in_dim}, got {x.shape}")
        return x

    def _layers(self, x):
        p = self.unpack()
        h = np.tanh(x @ p["W1"].T + p["b1"])
        base = h @ p["wb"] + p["cb"][0]
        pre = h @ p["Wi"].T + p["ci"]
        return p, h, base, pre

    def forward(self, states) -> np.ndarray:
        x = self._inputs(states)
        _, _, base, pre = self._layers(x)
        inc = np.logaddexp(0.0, pre)
        q = np.empty((x.shape[0], self.K))
        q[:, 0] = base
        q[:, 1:] = base[:, None] + np.cumsum(inc, axis=1)
        return q

    def backward(self, states, grad_q):
        x = self._inputs(states)
        p, h, _, pre = self._layers(x)
        G = np.asarray(grad_q, dtype=float).reshape(x.shape[0], self.K)
        g_base = G.sum(axis=1)
        # increment j feeds quantiles j+1..K-1
        tail = np.cumsum(G[:, ::-1], axis=1)[:, ::-1]
        g_pre = tail[:, 1:] * expit(pre)
        grad = np.zeros_like(self.params)
        g = self.unpack(grad)
        g["wb"][...] = h.T @ g_base
        g["cb"][...] = g_base.sum()
        g["Wi"][...] = g_pre.T @ h
        g["ci"][...] = g_pre.sum(axis=0)
        g_h = g_base[:, None] * p["wb"] + g_pre @ p["Wi"]
        g_hpre = g_h * (1.0 - h * h)
        g["W1"][...] = g_hpre.T @ x
        g["b1"][...] = g_hpre.sum(axis=0)
        return grad

    def clone(self) -> "TinyNetCritic":
        other = TinyNetCritic.__new__(TinyNetCritic)
        other.levels = self.levels
        other.in_dim, other.hidden, other._shapes = self.in_dim, self.hidden, self._shapes
        other.params = self.params.copy()
        return other

    def header(self) -> dict:
        return {"backend": self.backend, "K": self.K, "in_dim": self.in_dim, "hidden": self.hidden}


def bellman_target(r, done, gamma: float, next_q) -> np.ndarray:
    """Vector Bellman target ``r + gamma (1 - done) next_q``, row-wise."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    next_q = np.asarray(next_q, dtype=float)
    r = np.asarray(r, dtype=float)
    keep = gamma * (1.0 - np.asarray(done, dtype=float))
    if next_q.ndim == 1:
        return r + keep * next_q
    return r[:, None] + keep[:, None] * next_q


def quantile_huber_loss(pred, target, kappa: float = 1.0):
    """Pairwise quantile Huber loss and its gradient w.r.t. ``pred``.

    Accepts single vectors (K,) or batches (B, K); a batch returns per-row
    losses (B,) and gradients (B, K).
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    single = pred.ndim == 1
    P = np.atleast_2d(pred)
    T = np.atleast_2d(target)
    if P.shape != T.shape:
        raise ValueError(f"pred/target shape mismatch: {P.shape} vs {T.shape}")
    K = P.shape[1]
    tau = QuantileLevels(K).tau
    u = T[:, None, :] - P[:, :, None]            # (B, i, j): target_j - pred_i
    absu = np.abs(u)
    small = absu <= kappa
    huber = np.where(small, 0.5 * u * u, kappa * (absu - 0.5 * kappa))
    dhuber = np.where(small, u, kappa * np.sign(u))
    w = np.abs(tau[None, :, None] - (u < 0))
    loss = (w * huber).sum(axis=(1, 2)) / (kappa * K * K)
    grad = -(w * dhuber).sum(axis=2) / (kappa * K * K)
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def sgd_step(model: CriticModel, states, targets, lr: float, kappa: float = 1.0,
             sample_weight=None) -> float:
    """One SGD step on the batch-mean quantile Huber loss; mutates ``model``.

    ``sample_weight`` (B,) replaces the uniform 1/B weighting of the rows.
    Returns the batch-mean loss evaluated before the step.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    pred = model.forward(states)
    loss, g = quantile_huber_loss(pred, targets, kappa)
    if sample_weight is None:
        g = g / pred.shape[0]
    else:
        g = g * np.asarray(sample_weight, dtype=float)[:, None]
    model.params -= lr * model.backward(states, g)
    model.project(states)
    return float(loss.mean())


def q_mean(q):
    q = np.asarray(q, dtype=float)
    m = q.mean(axis=-1)
    return float(m) if m.ndim == 0 else m


def q_cvar(q, alpha: float):
    return cvar_lower(q, alpha)


def save_snapshot(path, model: CriticModel) -> None:
    """One JSON header line, then one parameter per line (exact repr)."""
    header = dict(model.header(), version=SNAPSHOT_VERSION, n_params=model.n_params)
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.writelines(repr(float(v)) + "\n" for v in model.params)


def load_snapshot(path) -> CriticModel:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    if header.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {header.get('version')!r}")
    params = np.array([float(v) for v in lines[1:]])
    if header["backend"] == "tabular":
        model = TabularCritic(header["n_states"], header["K"])
    elif header["backend"] == "tinynet":
        model = TinyNetCritic(header["in_dim"], header["K"], header["hidden"])
    else:
        raise ValueError(f"unknown backend {header['backend']!r}")
    model.set_params(params)
    return model
