"""Bandit study: how parameter averaging smears multimodal return laws.

Each client fits a TinyNet quantile critic to its own Gaussian-mixture
reward. Four aggregates are then compared: the parameter-averaged critic,
the unweighted W1 barycenter of the client laws, and the CVaR-weighted
barycenter (plus the client laws themselves).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import critic as cr
from .. import learner as ln
from ..distlaw import cvar_lower, cvar_weighted_barycenter, midpoint_levels, w1_barycenter, w1_quantile, write_quantile_csv
from ..envs.bandit import BanditEnv
from ..federation import aggregate
from .config import BanditStudyConfig
from .metrics import count_modes


@dataclass
class BanditStudyResult:
    client_laws: np.ndarray
    true_laws: np.ndarray
    param_average: np.ndarray
    barycenter: np.ndarray
    cvar_barycenter: np.ndarray
    summary: list[dict]

    def aggregates(self) -> dict[str, np.ndarray]:
        return {"param_average": self.param_average, "barycenter": self.barycenter,
                "cvar_barycenter": self.cvar_barycenter}


def train_clients(cfg: BanditStudyConfig):
    """Per-client QR critics from one shared initialisation."""
    laws, params, truth = [], [], []
    x = np.ones((1, 1))
    for i, comps in enumerate(cfg.clients):
        env = BanditEnv([tuple(c) for c in comps], seed=cfg.seed * 1000 + i)
        critic = cr.TinyNetCritic(1, cfg.K, hidden=cfg.hidden, seed=cfg.seed)
        ln.qr_bandit_train(critic, env, cfg.steps, cfg.lr, batch_size=cfg.batch_size, kappa=cfg.kappa,
                           lr_final=cfg.lr_final, rng=np.random.default_rng([cfg.seed, i]))
        laws.append(critic.forward(x)[0])
        params.append(critic.get_params())
        truth.append(env.quantiles(midpoint_levels(cfg.K)))
    return np.array(laws), params, np.array(truth)


def run_case_study_1(cfg: BanditStudyConfig, out_dir=None) -> BanditStudyResult:
    laws, params, truth = train_clients(cfg)
    n = len(laws)
    avg_critic = cr.TinyNetCritic(1, cfg.K, hidden=cfg.hidden, seed=cfg.seed)
    avg_critic.set_params(aggregate(params, [1.0 / n] * n))
    param_avg = avg_critic.forward(np.ones((1, 1)))[0]
    bary = w1_barycenter(laws, np.full(n, 1.0 / n))
    cvar_bary = cvar_weighted_barycenter(laws[:, None, :], cfg.alpha_cvar, cfg.lambda_temp)[0]

    rows = []
    named = [(f"client_{i}", q) for i, q in enumerate(laws)]
    named += [("param_average", param_avg), ("barycenter", bary), ("cvar_barycenter", cvar_bary)]
    for name, q in named:
        row = {"law": name, "cvar": float(cvar_lower(q, cfg.alpha_cvar)), "modes": count_modes(q),
               "w1_to_barycenter": w1_quantile(q, bary)}
        for i, c in enumerate(laws):
            row[f"w1_client_{i}"] = w1_quantile(q, c)
        rows.append(row)
    result = BanditStudyResult(laws, truth, param_avg, bary, cvar_bary, rows)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: BanditStudyResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_quantile_csv(out / "quantiles_clients.csv",
                       {f"client_{i}": q for i, q in enumerate(result.client_laws)})
    write_quantile_csv(out / "quantiles_true.csv",
                       {f"client_{i}": q for i, q in enumerate(result.true_laws)})
    write_quantile_csv(out / "quantiles_aggregates.csv", result.aggregates())
    with open(out / "bandit_summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(result.summary[0]))
        writer.writeheader()
        for row in result.summary:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def render_summary(result: BanditStudyResult) -> str:
    lines = [f"{'law':<16}{'CVaR':>10}{'modes':>7}{'W1->bary':>10}"]
    for row in result.summary:
        lines.append(f"{row['law']:<16}{row['cvar']:>10.3f}{row['modes']:>7d}{row['w1_to_barycenter']:>10.3f}")
    return "\n".join(lines)
