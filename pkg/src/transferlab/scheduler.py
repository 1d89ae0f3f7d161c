"""Source-task scheduler: relevance scores, M-of-N sampling, REINFORCE update."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .diffcore import Mlp, sgd_step

log = logging.getLogger(__name__)

EPS_FLOOR = 1e-6


@dataclass
class Selection:
    indices: list
    log_prob: float


def relevance_scores(net: Mlp, z) -> np.ndarray:
    return sigmoid(net.predict(z))


def selection_log_prob(scores, indices, eps_floor: float = EPS_FLOOR) -> float:
    """Exact log-probability of the ordered without-replacement draw ``indices``."""
    weights = np.asarray(scores, dtype=np.float64) + eps_floor
    remaining = np.ones(weights.size, dtype=bool)
    total = 0.0
    for j in indices:
        total += np.log(weights[j]) - np.log(weights[remaining].sum())
        remaining[j] = False
    return float(total)


def sample_subset(scores, m: int, rng, eps_floor: float = EPS_FLOOR) -> Selection:
    """Draw ``min(m, N)`` distinct sources sequentially, each draw proportional to score."""
    if m < 1:
        raise ValueError(f"M must be >= 1, got {m}")
    weights = np.asarray(scores, dtype=np.float64) + eps_floor
    n = weights.size
    if m > n:
        log.warning("M=%d exceeds N=%d sources; selecting all of them", m, n)
        m = n
    remaining = list(range(n))
    picked = []
    logp = 0.0
    for _ in range(m):
        w = weights[remaining]
        total = w.sum()
        u = rng.random() * total
        k = int(np.searchsorted(np.cumsum(w), u, side="right"))
        k = min(k, len(remaining) - 1)
        logp += np.log(w[k]) - np.log(total)
        picked.append(remaining.pop(k))
    return Selection(picked, float(logp))


def log_prob_backward(net: Mlp, z, indices, scale: float = 1.0,
                      eps_floor: float = EPS_FLOOR) -> float:
    """Accumulate ``scale * d log p(indices) / d theta`` into the net's grads."""
    logits, tape = net(z)
    r = sigmoid(logits)
    weights = r + eps_floor
    remaining = np.ones(r.size, dtype=bool)
    dr = np.zeros_like(r)
    logp = 0.0
    for j in indices:
        total = weights[remaining].sum()
        logp += np.log(weights[j]) - np.log(total)
        dr[j] += 1.0 / weights[j]
        dr[remaining] -= 1.0 / total
        remaining[j] = False
    tape.backward(scale * dr * r * (1.0 - r))
    return float(logp)


class Scheduler:
    """Scheduler network plus the EMA return baseline."""

    def __init__(self, net: Mlp, m: int, eps_floor: float = EPS_FLOOR, decay: float = 0.99):
        self.net = net
        self.m = m
        self.eps_floor = eps_floor
        self.decay = decay
        self.baseline = None

    def select(self, z, rng) -> Selection:
        return sample_subset(relevance_scores(self.net, z), self.m, rng, self.eps_floor)

    def update(self, episodes, ret: float, lr: float):
        """REINFORCE step for one finished episode.

        ``episodes`` is a list of ``(z, indices)`` selections made during the
        episode.  The baseline starts at the first return and is updated after
        the step.
        """
        if self.baseline is None:
            self.baseline = ret
        advantage = ret - self.baseline
        self.net.params.zero_grad()
        if advantage != 0.0:
            for z, indices in episodes:
                # descend on -(G - b) log p
                log_prob_backward(self.net, z, indices, scale=-advantage, eps_floor=self.eps_floor)
        sgd_step(self.net.params, lr)
        self.baseline = self.decay * self.baseline + (1.0 - self.decay) * ret
        return advantage
