"""Per-episode metrics tables and the evaluation metrics built on them."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..envs import Env, EnvSpec, PerturbationConfig, apply_perturbation, run_episode
from ..errors import ConfigError

CSV_HEADER = [
    "seed", "episode", "return", "epsilon", "td_loss", "vae_loss", "robust_loss",
    "selected_sources", "gate_weights", "source_forward_passes",
]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def metrics_lines(rows) -> list[list[str]]:
    out = []
    prev_ep, prev_fp = None, 0
    for r in rows:
        if prev_ep is not None and r.episode <= prev_ep:
            raise ValueError(f"metrics rows out of order at episode {r.episode}")
        if r.source_forward_passes < prev_fp:
            raise ValueError("forward-pass counter decreased")
        prev_ep, prev_fp = r.episode, r.source_forward_passes
        out.append([
            str(r.seed), str(r.episode), fmt(r.ret), fmt(r.epsilon), fmt(r.td_loss),
            fmt(r.vae_loss), fmt(r.robust_loss),
            ";".join(str(i) for i in r.selected),
            ";".join(fmt(w) for w in r.gate_weights),
            str(r.source_forward_passes),
        ])
    return out


def write_metrics_csv(rows, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(metrics_lines(rows))
    except OSError as exc:
        raise OSError(f"cannot write metrics {path}: {exc.strerror}") from exc


def read_metrics_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def evaluate(agent, spec: EnvSpec, episodes: int, start: str = "train",
             perturbation: PerturbationConfig | None = None, rng=None) -> float:
    """Mean greedy return; the source selection is fixed per episode."""
    if episodes <= 0:
        raise ConfigError("empty evaluation")
    if perturbation is not None:
        spec = apply_perturbation(spec, perturbation)
    env = Env(spec)
    agent.check_env(env)
    if start == "heldout" and not spec.has_heldout:
        raise ConfigError(f"{spec.name} defines no heldout start distribution")
    rng = np.random.default_rng(0) if rng is None else rng
    total = 0.0
    for _ in range(episodes):
        total += _greedy_episode(agent, env, rng, start)
    return total / episodes


def _greedy_episode(agent, env, rng, start):
    s = env.reset(rng, start)
    selection, _ = agent.choose_sources(s)
    ret, done = 0.0, False
    while not done:
        a = int(np.argmax(agent.q_values(s, selection)))
        tr = env.step(a, rng)
        ret += tr.reward
        s, done = tr.next_state, tr.done
    return ret


def evaluate_policy(policy, spec: EnvSpec, episodes: int, start: str = "train", rng=None) -> float:
    """Mean return of a plain ``state -> action`` callable."""
    if episodes <= 0:
        raise ConfigError("empty evaluation")
    env = Env(spec)
    rng = np.random.default_rng(0) if rng is None else rng
    return float(np.mean([run_episode(env, policy, rng, start)[0] for _ in range(episodes)]))


def generalization_gap(agent, spec: EnvSpec, episodes: int, seed: int = 0) -> float:
    """Mean return from training starts minus mean return from heldout starts."""
    if not spec.has_heldout:
        raise ConfigError(f"{spec.name} defines no heldout start distribution")
    train = evaluate(agent, spec, episodes, "train", rng=np.random.default_rng(seed))
    held = evaluate(agent, spec, episodes, "heldout", rng=np.random.default_rng(seed))
    return train - held


def normalized_robustness(r_pert: float, r_clean: float, r_min: float,
                          denom_eps: float = 1e-9) -> float:
    score = (r_pert - r_min) / (max(r_clean, r_min + denom_eps) - r_min)
    return float(min(1.0, max(0.0, score)))


def robustness_score(agent, spec: EnvSpec, perturbation: PerturbationConfig,
                     episodes: int, seed: int = 0) -> float:
    """Clamped perturbed/clean return ratio anchored at the env's R_min."""
    r_clean = evaluate(agent, spec, episodes, rng=np.random.default_rng(seed))
    r_pert = evaluate(agent, spec, episodes, perturbation=perturbation,
                      rng=np.random.default_rng(seed))
    return normalized_robustness(r_pert, r_clean, spec.return_bounds[0])


def total_forward_passes(rows) -> int:
    rows = list(rows)
    if not rows:
        return 0
    last = rows[-1]
    return int(last.source_forward_passes if hasattr(last, "source_forward_passes")
               else last["source_forward_passes"])


def compute_cost_report(numerator_rows, comparator_rows) -> float:
    """Ratio of total source forward passes (numerator / comparator)."""
    num = total_forward_passes(numerator_rows)
    den = total_forward_passes(comparator_rows)
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return num / den
