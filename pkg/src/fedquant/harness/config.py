"""Versioned YAML experiment configuration.

One file may hold sections for the bandit study (``bandit``), the gridworld
study (``grid_study``) and the theory check (``theory``); each command reads
only its own section. Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .. import learner as ln
from .. import trust_region as tr
from ..envs.bandit import default_bandit_family
from ..envs.grid import GridConfig, HeteroRanges
from ..federation import MODES, canonical_mode

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _build(cls, data: dict | None, where: str):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(names)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


@dataclass
class BanditStudyConfig:
    clients: list = field(default_factory=default_bandit_family)
    K: int = 21
    hidden: int = 32
    steps: int = 3000
    lr: float = 1.0
    lr_final: float = 0.01
    batch_size: int = 64
    kappa: float = 0.1
    alpha_cvar: float = 0.1
    lambda_temp: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.clients:
            raise ValueError("need at least one bandit client")
        if self.K < 2 or self.steps < 1 or self.batch_size < 1:
            raise ValueError("K >= 2, steps >= 1 and batch_size >= 1 required")


@dataclass
class GridStudyConfig:
    modes: list = field(default_factory=lambda: list(MODES))
    clients: int = 3
    family_seed: int = 0
    rounds: int = 30
    local_steps_per_round: int = 4
    eval_episodes: int = 16
    K: int = 21
    critic_backend: str = "tabular"
    policy_backend: str = "tabular"
    hidden: int = 32
    probe_size: int = 32
    grid: dict = field(default_factory=dict)
    hetero: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)
    risk: dict = field(default_factory=dict)
    trust_region: dict = field(default_factory=dict)

    def __post_init__(self):
        self.modes = [canonical_mode(m) for m in self.modes]
        if self.critic_backend not in ("tabular", "tinynet"):
            raise ValueError("critic_backend must be 'tabular' or 'tinynet'")
        if self.policy_backend not in ("tabular", "linear"):
            raise ValueError("policy_backend must be 'tabular' or 'linear'")
        if self.clients < 1 or self.rounds < 1 or self.probe_size < 1:
            raise ValueError("clients, rounds and probe_size must be positive")
        # build once so nested errors surface at load time
        self.grid_config()
        self.hetero_ranges()
        self.ppo_config()
        self.risk_config()
        self.tr_config()

    def grid_config(self) -> GridConfig:
        return _build(GridConfig, {k: _tuplify(v) for k, v in self.grid.items()}, "grid_study.grid")

    def hetero_ranges(self) -> HeteroRanges:
        return _build(HeteroRanges, {k: _tuplify(v) for k, v in self.hetero.items()}, "grid_study.hetero")

    def ppo_config(self) -> ln.PPOConfig:
        return _build(ln.PPOConfig, self.ppo, "grid_study.ppo")

    def risk_config(self) -> ln.RiskConfig:
        return _build(ln.RiskConfig, self.risk, "grid_study.risk")

    def tr_config(self) -> tr.TrustRegionConfig:
        return _build(tr.TrustRegionConfig, self.trust_region, "grid_study.trust_region")


@dataclass
class TheoryConfig:
    n_mdps: int = 20
    rounds: int = 50
    pairs: int = 100
    max_states: int = 8
    max_K: int = 8
    gammas: list = field(default_factory=lambda: [0.5, 0.9])
    projection: str = "midpoint"
    seed: int = 0

    def __post_init__(self):
        if self.projection not in ("midpoint", "bin_mean"):
            raise ValueError("projection must be 'midpoint' or 'bin_mean'")
        if any(not 0 <= g < 1 for g in self.gammas):
            raise ValueError("gammas must lie in [0, 1)")
        if self.n_mdps < 1 or self.rounds < 1 or self.pairs < 1 or self.max_states < 2 or self.max_K < 1:
            raise ValueError("counts must be positive and max_states >= 2")


@dataclass
class ExperimentConfig:
    version: int = SCHEMA_VERSION
    seeds: list = field(default_factory=lambda: list(range(10)))
    out_dir: str = "out"
    bandit: BanditStudyConfig = field(default_factory=BanditStudyConfig)
    grid_study: GridStudyConfig = field(default_factory=GridStudyConfig)
    theory: TheoryConfig = field(default_factory=TheoryConfig)


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    data = dict(data or {})
    version = data.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {SCHEMA_VERSION})")
    allowed = {"version", "seeds", "out_dir", "bandit", "grid_study", "theory"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}; allowed: {sorted(allowed)}")
    seeds = data.get("seeds", list(range(10)))
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a nonempty list of integers")
    return ExperimentConfig(
        version=version, seeds=seeds, out_dir=str(data.get("out_dir", "out")),
        bandit=_build(BanditStudyConfig, data.get("bandit"), "bandit"),
        grid_study=_build(GridStudyConfig, data.get("grid_study"), "grid_study"),
        theory=_build(TheoryConfig, data.get("theory"), "theory"))


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data or {})
