"""Source pretraining, agent assembly, seeded runs and agent checkpoints."""

from __future__ import annotations

import logging
import re
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..adapter import SourceEntry, SourceLibrary
from ..diffcore import Mlp, MlpSpec
from ..envs import Env, EnvSpec, parse_env
from ..errors import ConfigError
from ..oracle import optimal_return
from ..trainer import Agent, AgentVariant, Hyperparams, RunRngs, train_episode
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, parse_config
from .metrics import evaluate, write_metrics_csv

log = logging.getLogger(__name__)

PRETRAIN_EVAL_EVERY = 50
PRETRAIN_EVAL_EPISODES = 10


def source_checkpoint_path(source_dir, spec: EnvSpec) -> Path:
    slug = re.sub(r"[^A-Za-z0-9]+", "_", spec.name).strip("_")
    return Path(source_dir) / f"{slug}.json"


def pretrain_source(spec: EnvSpec, hp: Hyperparams, max_episodes: int,
                    threshold: float, seed: int = 0):
    """Train dqn-scratch on ``spec`` until its greedy return clears the threshold.

    ``threshold`` is a fraction of the way from R_min to the oracle-optimal
    return.  Returns ``(agent, normalized_score, episodes_used)``.
    """
    hp = replace(hp, seed=seed, episodes=max_episodes)
    agent = Agent(AgentVariant.named("dqn-scratch"), spec, hp)
    env = Env(spec)
    rngs = RunRngs.from_seed(seed)
    r_min = spec.return_bounds[0]
    r_opt = optimal_return(spec)
    score, used = 0.0, 0
    for ep in range(max_episodes):
        train_episode(agent, env, ep, rngs)
        used = ep + 1
        if used % PRETRAIN_EVAL_EVERY == 0 or used == max_episodes:
            ret = evaluate(agent, spec, PRETRAIN_EVAL_EPISODES, rng=np.random.default_rng(seed))
            score = (ret - r_min) / (r_opt - r_min)
            if score >= threshold:
                break
    log.info("pretrained %s: normalized return %.3f after %d episodes", spec.name, score, used)
    return agent, score, used


def pretrain_sources(config: ExperimentConfig, force: bool = False) -> list[Path]:
    """Pretrain (or reuse) a frozen solution for every configured source env."""
    out_dir = config.resolve(config.source_dir)
    paths = []
    for spec in config.sources:
        path = source_checkpoint_path(out_dir, spec)
        paths.append(path)
        if path.exists() and not force:
            continue
        agent, score, used = pretrain_source(
            spec, config.hp, config.pretrain_episodes, config.pretrain_threshold, config.hp.seed
        )
        if score < config.pretrain_threshold:
            log.warning("source %s reached only %.3f of optimal (threshold %.3f)",
                        spec.name, score, config.pretrain_threshold)
        save_checkpoint(
            path, [agent.base.params],
            meta={"env": spec.name, "widths": agent.base.spec.widths,
                  "activations": agent.base.spec.activations,
                  "normalized_return": score, "episodes": used},
        )
    return paths


def load_source_net(path) -> tuple[EnvSpec, Mlp]:
    payload = load_checkpoint(path)
    meta = payload["meta"]
    spec = MlpSpec(meta["widths"], meta["activations"])
    return parse_env(meta["env"]), Mlp(spec, "source", payload["groups"]["base"])


def build_library(config: ExperimentConfig) -> SourceLibrary:
    entries = []
    src_dir = config.resolve(config.source_dir)
    for i, spec in enumerate(config.sources):
        path = source_checkpoint_path(src_dir, spec)
        if not path.exists():
            raise ConfigError(
                f"source checkpoint {path} for {spec.name} not found; run pretrain-sources first"
            )
        env_spec, net = load_source_net(path)
        if env_spec.name != spec.name:
            raise ConfigError(f"{path} holds {env_spec.name}, expected {spec.name}")
        net.params.name = f"source.{i}"
        entries.append(SourceEntry(spec.name, net, config.mapper(i), config.aligner(i)))
    return SourceLibrary(entries)


def build_agent(config: ExperimentConfig, library: SourceLibrary | None = None) -> Agent:
    if config.variant.uses_sources and library is None:
        library = build_library(config)
    return Agent(config.variant, config.target, config.hp, library, config.sources)


def train_run(config: ExperimentConfig, seed: int | None = None, out_dir=None,
              library: SourceLibrary | None = None, episodes: int | None = None):
    """One seeded run; returns ``(rows, agent)``.

    With ``out_dir`` the metrics CSV and final checkpoint are written there;
    metrics collected so far are flushed even if training aborts.
    """
    if seed is not None:
        config = config.with_seed(seed)
    hp = config.hp
    n_episodes = hp.episodes if episodes is None else episodes
    agent = build_agent(config, library)
    env = Env(config.target)
    agent.check_env(env)
    rngs = RunRngs.from_seed(hp.seed)
    agent.pretrain_vae(rngs.vae)
    rows = []
    try:
        for ep in range(n_episodes):
            rows.append(train_episode(agent, env, ep, rngs))
    finally:
        if out_dir is not None:
            write_metrics_csv(rows, Path(out_dir) / f"metrics_seed{hp.seed}.csv")
    if out_dir is not None:
        save_agent(agent, config, Path(out_dir) / f"checkpoint_seed{hp.seed}.json", rngs)
    return rows, agent


def save_agent(agent: Agent, config: ExperimentConfig, path, rngs: RunRngs | None = None):
    groups = agent.trainable_groups() + agent.frozen_groups()
    rng_state = None
    if rngs is not None:
        rng_state = {"seed": config.hp.seed,
                     "env": rngs.env.bit_generator.state,
                     "explore": rngs.explore.bit_generator.state}
    meta = {
        "config": config.text,
        "seed": config.hp.seed,
        "sched_baseline": agent.scheduler.baseline if agent.scheduler else None,
    }
    save_checkpoint(path, groups, config.config_hash, rng_state, meta)


def load_agent(path) -> tuple[Agent, ExperimentConfig]:
    """Rebuild an agent (sources included) from a run checkpoint."""
    payload = load_checkpoint(path)
    meta = payload["meta"]
    config = parse_config(meta["config"], base_dir=Path(path).parent).with_seed(meta["seed"])
    groups = payload["groups"]
    entries = []
    for i in range(len(config.sources)):
        g = groups[f"source.{i}"]
        widths = [g.shapes[0][0]] + [c for _, c in g.shapes]
        acts = ["tanh"] * (len(widths) - 2) + ["identity"]
        entries.append(SourceEntry(config.sources[i].name, Mlp(MlpSpec(widths, acts), g.name, g),
                                   config.mapper(i), config.aligner(i)))
    agent = Agent(config.variant, config.target, config.hp,
                  SourceLibrary(entries) if entries else None, config.sources)
    for g in agent.trainable_groups():
        if g.name not in groups:
            raise ConfigError(f"checkpoint {path} lacks parameter group {g.name!r}")
        if groups[g.name].shapes != g.shapes:
            raise ConfigError(f"checkpoint group {g.name!r} has shapes {groups[g.name].shapes}, expected {g.shapes}")
        g.assign(groups[g.name].values)
    if agent.scheduler is not None:
        agent.scheduler.baseline = meta.get("sched_baseline")
    return agent, config
