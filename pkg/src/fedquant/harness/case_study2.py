"""Gridworld study: Local / FedAvg / FedAvg (CVaR) / FedAvg (CVaR + TR) over seeds."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import federation as fd
from ..envs.grid import make_heterogeneous_family
from .config import GridStudyConfig
from .metrics import sign_test

ROUND_FIELDS = ["mode", "seed", "round", "client", "eval_return", "catastrophes", "episodes",
                "drift", "probe_d", "tracking_error", "critic_loss", "actor_loss", "approx_kl",
                "tr_applied", "tr_shift"]


@dataclass
class SeedSummary:
    mode: str
    seed: int
    ret: float
    drift: float
    catastrophe: float
    client_catastrophe: list[float]


def run_single(cfg: GridStudyConfig, mode: str, seed: int) -> tuple[list[fd.RoundLog], SeedSummary]:
    family = make_heterogeneous_family(cfg.grid_config(), cfg.clients, cfg.family_seed, cfg.hetero_ranges())
    tr_cfg = cfg.tr_config()
    clients = fd.make_clients(family, seed, K=cfg.K, critic_backend=cfg.critic_backend,
                              policy_backend=cfg.policy_backend, hidden=cfg.hidden,
                              buffer_capacity=tr_cfg.buffer_capacity)
    fed = fd.FedConfig(cfg.clients, cfg.rounds, cfg.local_steps_per_round, eval_episodes=cfg.eval_episodes)
    ctx = fd.RoundContext(cfg.ppo_config(), cfg.risk_config(), tr_cfg, probe_size=cfg.probe_size, probe_seed=seed)
    logs = [fd.run_round(clients, fed, mode, ctx) for _ in range(cfg.rounds)]
    return logs, summarize(mode, seed, logs, cfg.clients)


def summarize(mode: str, seed: int, logs: Sequence[fd.RoundLog], n_clients: int) -> SeedSummary:
    """Seed-level metrics: returns and drift averaged over rounds and clients,
    catastrophe rate pooled over all evaluation episodes."""
    ret = float(np.mean([c.eval_return for log in logs for c in log.clients]))
    drifts = [c.drift for log in logs for c in log.clients if c.drift is not None]
    drift = float(np.mean(drifts)) if drifts else float("nan")
    cats = sum(c.catastrophes for log in logs for c in log.clients)
    eps = sum(c.episodes for log in logs for c in log.clients)
    per_client = []
    for i in range(n_clients):
        ci = [c for log in logs for c in log.clients if c.client == i]
        per_client.append(sum(c.catastrophes for c in ci) / sum(c.episodes for c in ci))
    return SeedSummary(mode, seed, ret, drift, cats / eps, per_client)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _std(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1)) if x.size > 1 else 0.0


def table_rows(summaries: Sequence[SeedSummary], modes: Sequence[str]) -> list[dict]:
    rows = []
    for mode in modes:
        s = [x for x in summaries if x.mode == mode]
        if not s:
            continue
        rows.append({
            "method": fd.MODE_LABELS[mode], "mode": mode, "seeds": len(s),
            "return_mean": float(np.mean([x.ret for x in s])), "return_std": _std([x.ret for x in s]),
            "drift_mean": float(np.mean([x.drift for x in s])), "drift_std": _std([x.drift for x in s]),
            "catastrophe_mean": float(np.mean([x.catastrophe for x in s])),
            "catastrophe_std": _std([x.catastrophe for x in s]),
        })
    return rows


def catastrophe_change_rows(summaries: Sequence[SeedSummary], modes: Sequence[str]) -> list[dict]:
    """Per-client catastrophe %-change vs Local: ratio per seed, then mean and std over seeds."""
    local = {x.seed: x for x in summaries if x.mode == "local"}
    rows = []
    if not local:
        return rows
    for mode in modes:
        if mode == "local":
            continue
        per_seed = [x for x in summaries if x.mode == mode and x.seed in local]
        if not per_seed:
            continue
        for i in range(len(per_seed[0].client_catastrophe)):
            changes = []
            for x in per_seed:
                base = local[x.seed].client_catastrophe[i]
                if base > 0:
                    changes.append(100.0 * (x.client_catastrophe[i] - base) / base)
            rows.append({"method": fd.MODE_LABELS[mode], "mode": mode, "client": i, "seeds_used": len(changes),
                         "pct_change_mean": float(np.mean(changes)) if changes else float("nan"),
                         "pct_change_std": _std(changes) if changes else float("nan")})
    return rows


def sign_tests(summaries: Sequence[SeedSummary], better: str = "cvar_tr", worse: str = "fedavg") -> dict:
    a = {x.seed: x for x in summaries if x.mode == better}
    b = {x.seed: x for x in summaries if x.mode == worse}
    seeds = sorted(set(a) & set(b))
    if not seeds:
        return {}
    return {
        "drift": sign_test([a[s].drift for s in seeds], [b[s].drift for s in seeds]),
        "catastrophe": sign_test([a[s].catastrophe for s in seeds], [b[s].catastrophe for s in seeds]),
    }


def _write_csv(path: Path, rows: list[dict], fields: list[str] | None = None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fields})


def run_case_study_2(cfg: GridStudyConfig, seeds: Sequence[int], out_dir=None, modes: Sequence[str] | None = None,
                     progress: Callable[[str], None] | None = None):
    """Run every (mode, seed) pair in sorted order; returns (summaries, table rows)."""
    modes = [fd.canonical_mode(m) for m in (modes or cfg.modes)]
    summaries: list[SeedSummary] = []
    round_rows: list[dict] = []
    for mode in modes:
        for seed in sorted(seeds):
            logs, summary = run_single(cfg, mode, seed)
            summaries.append(summary)
            for log in logs:
                for c in log.clients:
                    round_rows.append(dict(asdict(c), mode=mode, seed=seed, round=log.round))
            if progress:
                progress(f"{fd.MODE_LABELS[mode]:<20} seed {seed:>3}: return {summary.ret:7.3f}  "
                         f"drift {summary.drift:8.4f}  catastrophe {summary.catastrophe:.4f}")
    table = table_rows(summaries, modes)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "rounds.csv", round_rows, ROUND_FIELDS)
        _write_csv(out / "table1.csv", table)
        seed_rows = [{"mode": s.mode, "seed": s.seed, "return": s.ret, "drift": s.drift,
                      "catastrophe": s.catastrophe} for s in summaries]
        _write_csv(out / "seeds.csv", seed_rows)
        change = catastrophe_change_rows(summaries, modes)
        if change:
            _write_csv(out / "catastrophe_change.csv", change)
        (out / "table1.txt").write_text(render_table(table) + "\n")
    return summaries, table


def render_table(rows: Sequence[dict]) -> str:
    lines = [f"{'Method':<20}{'Return':>20}{'Output Drift':>22}{'Catastrophe':>22}"]
    for r in rows:
        lines.append(f"{r['method']:<20}{r['return_mean']:>10.3f} +/- {r['return_std']:<6.3f}"
                     f"{r['drift_mean']:>12.4f} +/- {r['drift_std']:<6.4f}"
                     f"{r['catastrophe_mean']:>12.4f} +/- {r['catastrophe_std']:<6.4f}")
    return "\n".join(lines)
