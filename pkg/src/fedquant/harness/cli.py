"""Command-line entry point: ``fedquant run | verify-theory | bandit``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..federation import canonical_mode
from . import case_study1, case_study2, theory
from .config import ConfigError, TheoryConfig, load_config

log = logging.getLogger("fedquant")


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seeds = args.seeds or cfg.seeds
    modes = [canonical_mode(args.mode)] if args.mode else cfg.grid_study.modes
    out = Path(args.out or cfg.out_dir)
    summaries, table = case_study2.run_case_study_2(cfg.grid_study, seeds, out, modes, progress=log.info)
    print(case_study2.render_table(table))
    tests = case_study2.sign_tests(summaries)
    for name, t in tests.items():
        print(f"sign test CVaR+TR < FedAvg ({name}): {t.wins}/{t.n} seeds, p = {t.p_value:.4f}")
    print(f"outputs written to {out}")
    return 0


def run_theory(cfg: TheoryConfig, out_dir=None):
    """Contraction measurements and tracking checks on random MDPs.

    Returns ``(contraction_rows, tracking_rows, diagnostics_rows, all_passed)``.
    """
    rng = np.random.default_rng(cfg.seed)
    contraction, tracking, diag_rows = [], [], []
    for m in range(cfg.n_mdps):
        gamma = float(cfg.gammas[m % len(cfg.gammas)])
        S = int(rng.integers(2, cfg.max_states + 1))
        K = int(rng.integers(1, cfg.max_K + 1))
        mdp = theory.random_mdp(rng, S, gamma)
        ratios = theory.contraction_ratios(mdp, K, cfg.pairs, rng, cfg.projection)
        contraction.append({"mdp": m, "states": S, "K": K, "gamma": gamma, "max_ratio": float(ratios.max()),
                            "violations": int(np.sum(ratios > gamma + 1e-9))})
    for m in range(cfg.n_mdps):
        mdp, tcfg, q0, ref0 = theory.random_tracking_case(rng, cfg.rounds, cfg.projection, cfg.max_states,
                                                          cfg.max_K, tuple(cfg.gammas))
        res = theory.verify_tracking(mdp, tcfg, q0, ref0)
        tracking.append({"case": m, "states": mdp.n_states, "K": tcfg.K, "gamma": mdp.gamma,
                         "rho": res.diagnostics[0].rho, "passed": res.passed, "detail": res.summary()})
        for g in res.diagnostics:
            diag_rows.append(dict(case=m, **g.row()))
    ok = all(r["violations"] == 0 for r in contraction) and all(r["passed"] for r in tracking)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in (("contraction.csv", contraction), ("tracking.csv", tracking),
                           ("diagnostics.csv", diag_rows)):
            with open(out / name, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return contraction, tracking, diag_rows, ok


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    tcfg = cfg.theory if args.projection is None else replace(cfg.theory, projection=args.projection)
    out = Path(args.out or cfg.out_dir)
    contraction, tracking, _, ok = run_theory(tcfg, out)
    bad_c = [r for r in contraction if r["violations"]]
    bad_t = [r for r in tracking if not r["passed"]]
    worst = max(r["max_ratio"] / r["gamma"] for r in contraction)
    print(f"projection: {tcfg.projection}")
    print(f"contraction: {len(contraction) - len(bad_c)}/{len(contraction)} MDPs within gamma "
          f"(worst ratio / gamma = {worst:.4f})")
    for r in bad_c:
        print(f"  MDP {r['mdp']}: {r['violations']}/{tcfg.pairs} pairs exceed gamma={r['gamma']}, "
              f"max ratio {r['max_ratio']:.4f}")
    print(f"tracking: {len(tracking) - len(bad_t)}/{len(tracking)} configurations pass")
    for r in bad_t:
        print(f"  case {r['case']}: {r['detail']}")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_bandit(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.out_dir)
    result = case_study1.run_case_study_1(cfg.bandit, out)
    print(case_study1.render_summary(result))
    print(f"outputs written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedquant", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-run progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="gridworld federated study: summary table over modes and seeds")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (default: config out_dir)")
    run.add_argument("--seeds", type=_seeds, help="comma-separated seeds, overrides the config")
    run.add_argument("--mode", choices=["local", "fedavg", "cvar", "cvar_tr"], help="run a single method")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify-theory", help="check contraction and the tracking bound on random MDPs")
    ver.add_argument("--config", required=True)
    ver.add_argument("--out", help="output directory (default: config out_dir)")
    ver.add_argument("--projection", choices=["midpoint", "bin_mean"], help="override the config projection")
    ver.set_defaults(func=cmd_verify)

    ban = sub.add_parser("bandit", help="bandit aggregation study")
    ban.add_argument("--config", required=True)
    ban.add_argument("--out", help="output directory (default: config out_dir)")
    ban.set_defaults(func=cmd_bandit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
