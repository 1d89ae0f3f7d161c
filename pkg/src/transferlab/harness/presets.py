"""Shipped experiment presets (config text) and their comparison drivers."""

from __future__ import annotations

import math

import numpy as np

from ..envs import PerturbationConfig
from ..errors import ConfigError
from .config import ExperimentConfig, parse_config
from .metrics import compute_cost_report, robustness_score
from .runner import build_library, pretrain_sources, train_run

CROSS = """\
# grid-world(6,6) target helped by a smaller grid and a line world
env.target = grid-world(6,6)
env.sources = line-world(10), grid-world(4,4)
env.mapper.0 = truncate
env.aligner.0 = 3,2
env.mapper.1 = grid-rescale
agent.variant = gatn
train.episodes = 200
"""

ROBUST = """\
# intent-world target, sources with a different feature width
env.target = intent-world(4,8)
env.sources = intent-world(4,6), intent-world(4,10)
agent.variant = gatn
train.episodes = 300
robust.sigma = 0.1
robust.lambda = 0.1
eval.episodes = 200
eval.perturb = obs=0.1,drift=0.39269908169872414
"""

EFFIC = """\
# four intent-world sources, two scheduled per episode
env.target = intent-world(4,8)
env.sources = intent-world(4,8), intent-world(4,6), intent-world(4,10), intent-world(4,12)
agent.variant = gatn
sched.M = 2
train.episodes = 100
"""

NEGATIVE = """\
# one helpful source and one trained on the reward-negated target
env.target = intent-world(4,8)
env.sources = intent-world(4,8), negated:intent-world(4,8)
agent.variant = gatn
train.episodes = 300
"""

PRESETS = {"CROSS": CROSS, "ROBUST": ROBUST, "EFFIC": EFFIC, "NEGATIVE": NEGATIVE}


def preset_config(name: str, source_dir=None, **overrides) -> ExperimentConfig:
    """Parse a preset, optionally overriding keys (``"sched.M": 4`` style)."""
    try:
        text = PRESETS[name.upper()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    lines = [ln for ln in text.splitlines()
             if ln.split("=", 1)[0].strip() not in overrides]
    lines += [f"{k} = {v}" for k, v in overrides.items()]
    if source_dir is not None and "env.source_dir" not in overrides:
        lines.append(f"env.source_dir = {source_dir}")
    return parse_config("\n".join(lines) + "\n")


def run_variants(cfg: ExperimentConfig, variants: dict, seeds, out_dir=None):
    """``variants`` maps a label to config overrides; returns label -> [rows per seed]."""
    pretrain_sources(cfg)
    results = {}
    for label, over in variants.items():
        vcfg = _override(cfg, over)
        library = build_library(vcfg) if vcfg.variant.uses_sources else None
        results[label] = []
        for seed in seeds:
            if library is not None:
                library.forward_passes = 0
            sub = None if out_dir is None else f"{out_dir}/{label}"
            rows, agent = train_run(vcfg, seed=seed, out_dir=sub, library=library)
            results[label].append((rows, agent))
    return results


def _override(cfg: ExperimentConfig, over: dict) -> ExperimentConfig:
    if not over:
        return cfg
    lines = [ln for ln in cfg.text.splitlines() if ln.split("=", 1)[0].strip() not in over]
    lines += [f"{k} = {v}" for k, v in over.items()]
    return parse_config("\n".join(lines) + "\n", base_dir=cfg.base_dir)


def cross_experiment(seeds, source_dir, episodes: int = 200, out_dir=None) -> dict:
    cfg = preset_config("CROSS", source_dir, **{"train.episodes": episodes})
    res = run_variants(cfg, {"gatn": {}, "dqn-scratch": {"agent.variant": "dqn-scratch"}},
                       seeds, out_dir)
    means = {k: [float(np.mean([r.ret for r in rows])) for rows, _ in v] for k, v in res.items()}
    wins = sum(g >= d for g, d in zip(means["gatn"], means["dqn-scratch"]))
    return {"mean_return": means, "wins": wins, "seeds": list(seeds)}


def negative_experiment(seeds, source_dir, episodes: int = 300, out_dir=None) -> dict:
    cfg = preset_config("NEGATIVE", source_dir, **{"train.episodes": episodes})
    res = run_variants(cfg, {"gatn": {}}, seeds, out_dir)
    bad = next(i for i, s in enumerate(cfg.sources) if s.negated)
    weights = [float(np.mean([r.gate_weights[bad] for r in rows[-50:]])) for rows, _ in res["gatn"]]
    limit = 1.0 / (cfg.hp.m + 1)
    return {"negated_weight": weights, "limit": limit,
            "passes": sum(w < limit for w in weights), "seeds": list(seeds)}


def robust_experiment(seeds, source_dir, episodes: int = 300, out_dir=None) -> dict:
    cfg = preset_config("ROBUST", source_dir, **{"train.episodes": episodes})
    res = run_variants(cfg, {"robust": {}, "plain": {"robust.lambda": 0.0}}, seeds, out_dir)
    pert = cfg.eval_perturbation
    scores = {}
    for label, runs in res.items():
        scores[label] = [robustness_score(agent, cfg.target, pert, cfg.eval_episodes, seed=1000 + s)
                         for (rows, agent), s in zip(runs, seeds)]
    wins = sum(a >= b for a, b in zip(scores["robust"], scores["plain"]))
    return {"robustness": scores, "wins": wins, "seeds": list(seeds)}


def effic_experiment(seeds, source_dir, episodes: int = 100, out_dir=None) -> dict:
    cfg = preset_config("EFFIC", source_dir, **{"train.episodes": episodes})
    res = run_variants(cfg, {"gatn": {}, "a2t-like": {"agent.variant": "a2t-like"}}, seeds, out_dir)
    ratios = [compute_cost_report(g[0], a[0]) for g, a in zip(res["gatn"], res["a2t-like"])]
    return {"ratio": ratios, "m": cfg.hp.m, "n": len(cfg.sources), "seeds": list(seeds)}


EXPERIMENTS = {
    "CROSS": cross_experiment,
    "NEGATIVE": negative_experiment,
    "ROBUST": robust_experiment,
    "EFFIC": effic_experiment,
}

DRIFT_PI_8 = math.pi / 8
ROBUST_PERTURBATION = PerturbationConfig(obs_sigma=0.1, drift=DRIFT_PI_8)
