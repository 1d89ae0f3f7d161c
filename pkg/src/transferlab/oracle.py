"""Independent reference solutions used to check learned agents.

Nothing here shares code with the learning path: line and grid worlds are
solved by finite-horizon value iteration over their tabulated dynamics, and
intent-world by the nearest-prototype (Bayes) classifier.
"""

from __future__ import annotations

import numpy as np

from .envs import Env, EnvSpec, INTENT_EPISODE, INTENT_NOISE


def _cells(spec: EnvSpec):
    if spec.kind == "line-world":
        return list(range(spec.size[0]))
    w, h = spec.size
    return [(x, y) for y in range(h) for x in range(w)]


def value_iteration(spec: EnvSpec):
    """Optimal undiscounted values ``V[t][cell]`` with ``t`` steps remaining.

    Honors slip and reward shift; returns ``(values, greedy_policy)`` where the
    policy maps a cell to the optimal first action with the full horizon left.
    """
    if spec.kind == "intent-world":
        raise ValueError("value iteration is defined for line and grid worlds only")
    env = Env(spec)
    cells = _cells(spec)
    n_act = spec.n_actions
    slip = spec.perturbation.slip
    goal_r, step_r = spec._reward_values()
    v = {c: 0.0 for c in cells}
    policy = {}
    for _ in range(spec.cap):
        new = {}
        for c in cells:
            if env.is_goal(c):
                new[c] = 0.0
                continue
            best, best_a = -np.inf, 0
            for a in range(n_act):
                outcomes = [(1.0 - slip if slip else 1.0, a)]
                if slip:
                    others = [b for b in range(n_act) if b != a]
                    outcomes += [(slip / len(others), b) for b in others]
                q = 0.0
                for p, b in outcomes:
                    nxt = env.move(c, b)
                    r = goal_r if env.is_goal(nxt) else step_r
                    q += p * (r + (0.0 if env.is_goal(nxt) else v[nxt]))
                if q > best + 1e-12:
                    best, best_a = q, a
            new[c] = best
            policy[c] = best_a
        v = new
    return v, policy


def optimal_return(spec: EnvSpec, start: str = "train") -> float:
    """Expected optimal return from the given start distribution."""
    if spec.kind == "intent-world":
        acc = bayes_accuracy(spec)
        correct, wrong = spec._reward_values()
        return INTENT_EPISODE * (acc * correct + (1.0 - acc) * wrong)
    v, _ = value_iteration(spec)
    starts = Env(spec).start_positions(start)
    return float(np.mean([v[c] for c in starts]))


def bayes_accuracy(spec: EnvSpec, samples: int = 200_000, seed: int = 12345) -> float:
    """Monte-Carlo accuracy of the nearest-prototype classifier."""
    env = Env(spec)
    rng = np.random.default_rng(seed)
    k = spec.size[0]
    labels = rng.integers(k, size=samples)
    noise_sd = np.hypot(INTENT_NOISE, spec.perturbation.obs_sigma)
    x = env.prototypes[labels] + noise_sd * rng.standard_normal((samples, spec.state_dim))
    d = ((x[:, None, :] - env.prototypes[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d, axis=1) == labels))
