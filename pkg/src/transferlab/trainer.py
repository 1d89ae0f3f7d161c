"""Online training loop for the gated transfer agent and its baselines.

One episode runs, per step: encode the state, act epsilon-greedily on the
mixture Q-values, observe the transition, update the gate with TD plus the
robustness penalty, and update the base network on its own TD error.  The
VAE takes one minibatch step per episode from a rolling buffer of recent
states, and the scheduler takes one REINFORCE step at episode end.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass

import numpy as np

from .adapter import AdapterModel, SourceLibrary, gate_weights, update_adapter
from .diffcore import Mlp, MlpSpec, sgd_step
from .envs import Env, EnvSpec, Transition, pad_to, sample_states
from .errors import ConfigError, NumericalError
from .representation import Vae, VaeConfig, update_rep
from .scheduler import Scheduler, relevance_scores

VARIANTS = ("gatn", "a2t-like", "dqn-scratch")


@dataclass
class Hyperparams:
    gamma: float = 0.99
    lr_rep: float = 0.0005
    lr_adapt: float = 0.0005
    lr_base: float = 0.0025
    lr_sched: float = 0.01
    latent_dim: int = 8
    m: int = 2
    eps_floor: float = 1e-6
    baseline_decay: float = 0.99
    sigma: float = 0.1
    lam: float = 0.1
    robust_space: str = "latent"
    eps_start: float = 1.0
    eps_end: float = 0.05
    decay_frac: float = 0.5
    episodes: int = 500
    seed: int = 0
    hidden: tuple = (64, 64)
    aux_hidden: tuple = (32,)
    vae_buffer: int = 256
    vae_batch: int = 32
    vae_pretrain_states: int = 1000
    vae_pretrain_steps: int = 200

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        for name in ("lr_rep", "lr_adapt", "lr_base", "lr_sched"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.m < 1:
            raise ConfigError("M must be ≥ 1")
        if self.latent_dim < 1:
            raise ConfigError("latent dim must be ≥ 1")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigError("need 0 <= eps_end <= eps_start <= 1")
        if not 0.0 < self.decay_frac <= 1.0:
            raise ConfigError("explore.decay_frac must lie in (0, 1]")
        if self.sigma < 0.0 or self.lam < 0.0:
            raise ConfigError("robust sigma and lambda must be nonnegative")
        if self.robust_space not in ("latent", "state"):
            raise ConfigError(f"robust space must be latent or state, got {self.robust_space!r}")
        if self.episodes < 0:
            raise ConfigError("episode count must be nonnegative")

    def epsilon(self, episode: int) -> float:
        horizon = self.decay_frac * self.episodes
        frac = 1.0 if horizon <= 0 else min(1.0, episode / horizon)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


@dataclass(frozen=True)
class AgentVariant:
    kind: str
    vae: bool
    scheduler: bool
    robust: bool

    @classmethod
    def named(cls, kind: str, robust: bool = True) -> "AgentVariant":
        if kind == "gatn":
            return cls(kind, True, True, robust)
        if kind == "a2t-like":
            return cls(kind, False, False, False)
        if kind == "dqn-scratch":
            return cls(kind, False, False, False)
        raise ConfigError(f"unknown agent variant {kind!r}; expected one of {VARIANTS}")

    @property
    def uses_sources(self):
        return self.kind != "dqn-scratch"


@dataclass
class EpisodeRow:
    seed: int
    episode: int
    ret: float
    epsilon: float
    td_loss: float
    vae_loss: float
    robust_loss: float
    selected: list
    gate_weights: list
    source_forward_passes: int
    steps: int = 0


def td_error(transition: Transition, q_fn, gamma: float) -> float:
    """r + gamma * max Q(s') - Q(s, a); terminal transitions do not bootstrap."""
    q_sa = float(q_fn(transition.state)[transition.action])
    if transition.done:
        return transition.reward - q_sa
    return transition.reward + gamma * float(np.max(q_fn(transition.next_state))) - q_sa


def select_action(q_values, eps: float, rng) -> int:
    """Epsilon-greedy; greedy ties go to the lowest index."""
    q_values = np.asarray(q_values)
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(q_values.size))
    return int(np.argmax(q_values))


def base_td_backward(base: Mlp, transition: Transition, gamma: float) -> float:
    """Squared TD error of the base network alone; gradients into ``base``."""
    tr = transition
    target = tr.reward
    if not tr.done:
        target += gamma * float(np.max(base.predict(tr.next_state)))
    q, tape = base(tr.state)
    delta = target - q[tr.action]
    g = np.zeros_like(q)
    g[tr.action] = -2.0 * delta
    tape.backward(g)
    return float(delta * delta)


def update_base(transition: Transition, base: Mlp, lr: float, gamma: float) -> float:
    """SGD step on the base network's own squared TD error; returns it."""
    base.params.zero_grad()
    loss = base_td_backward(base, transition, gamma)
    if not np.isfinite(loss):
        base.params.zero_grad()
        raise NumericalError(f"non-finite base TD loss {loss}")
    sgd_step(base.params, lr)
    return loss


def _seeds(seed: int, n: int):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


class Agent:
    """Everything trainable in one run, plus the frozen source library."""

    def __init__(self, variant: AgentVariant, target: EnvSpec, hp: Hyperparams,
                 library: SourceLibrary | None = None, source_specs=()):
        self.variant = variant
        self.target = target
        self.hp = hp
        self.source_specs = list(source_specs)
        self.library = library if library is not None else SourceLibrary([])
        if variant.uses_sources and self.library.n == 0:
            raise ConfigError(f"{variant.kind} needs at least one source")
        if not variant.uses_sources:
            self.library = SourceLibrary([])
        init = _seeds(hp.seed, 6)
        n_act = target.n_actions
        self.base = Mlp(MlpSpec.hidden(target.state_dim, hp.hidden, n_act, init[0]), "base")
        self.d_max = max([target.state_dim] + [s.state_dim for s in self.source_specs])
        self.vae = None
        self.model = None
        self.scheduler = None
        if variant.vae:
            self.vae = Vae(VaeConfig(self.d_max, hp.latent_dim, hp.aux_hidden, init[1]))
        if variant.uses_sources:
            gate_in = hp.latent_dim if variant.vae else target.state_dim
            gate = Mlp(MlpSpec.hidden(gate_in, hp.aux_hidden, self.library.n + 1, init[3]), "gate")
            self.model = AdapterModel(gate, self.base, self.library)
        if variant.scheduler:
            sched_in = hp.latent_dim if variant.vae else target.state_dim
            net = Mlp(MlpSpec.hidden(sched_in, hp.aux_hidden, self.library.n, init[4]), "sched")
            self.scheduler = Scheduler(net, hp.m, hp.eps_floor, hp.baseline_decay)
        self.buffer = deque(maxlen=hp.vae_buffer)

    # -- parameter access ------------------------------------------------------

    def trainable_groups(self):
        groups = []
        if self.vae is not None:
            groups += self.vae.groups
        if self.model is not None:
            groups.append(self.model.gate.params)
        groups.append(self.base.params)
        if self.scheduler is not None:
            groups.append(self.scheduler.net.params)
        return groups

    def frozen_groups(self):
        return [e.net.params for e in self.library.entries]

    def clone(self) -> "Agent":
        return copy.deepcopy(self)

    # -- representation -------------------------------------------------------

    def gate_input(self, state, eta=None):
        """Latent code (sampled when ``eta`` is given) or the raw state."""
        if self.vae is None:
            return np.asarray(state, dtype=np.float64)
        return self.vae.encode(pad_to(state, self.d_max), eta).z

    def _eta(self, rng):
        return rng.standard_normal(self.hp.latent_dim)

    # -- acting --------------------------------------------------------------

    def choose_sources(self, state, rng=None) -> tuple[list, object]:
        """Selection for an episode starting in ``state``.

        With ``rng`` the scheduler samples; without it (evaluation) the top-M
        scored sources are taken.  Returns (indices, scheduler input).
        """
        if not self.variant.uses_sources:
            return [], None
        if self.scheduler is None:
            return list(range(self.library.n)), None
        z0 = self.gate_input(state)
        if rng is not None:
            return self.scheduler.select(z0, rng).indices, z0
        scores = relevance_scores(self.scheduler.net, z0)
        order = np.argsort(-scores, kind="stable")[: min(self.hp.m, self.library.n)]
        return sorted(int(i) for i in order), z0

    def q_values(self, state, selection, gate_input=None, experts=None):
        if self.model is None:
            return self.base.predict(state)
        if gate_input is None:
            gate_input = self.gate_input(state)
        return self.model.predict(state, gate_input, selection, experts)

    def policy(self, selection):
        return lambda s: int(np.argmax(self.q_values(s, selection)))

    def check_env(self, env: Env):
        if env.state_dim != self.target.state_dim or env.n_actions != self.target.n_actions:
            raise ConfigError(
                f"agent built for {self.target.name} (state {self.target.state_dim}, "
                f"{self.target.n_actions} actions) cannot run on {env.spec.name} "
                f"(state {env.state_dim}, {env.n_actions} actions)"
            )

    # -- representation pretraining ---------------------------------------------

    def pretrain_vae(self, rng, steps: int | None = None):
        """Equal-quota minibatch training on random-policy states of every task."""
        if self.vae is None:
            return []
        steps = self.hp.vae_pretrain_steps if steps is None else steps
        corpora = []
        for spec in [self.target] + self.source_specs:
            states = sample_states(Env(spec), self.hp.vae_pretrain_states, rng)
            corpora.append(np.array([pad_to(s, self.d_max) for s in states]))
        quota = max(1, self.hp.vae_batch // len(corpora))
        losses = []
        for _ in range(steps):
            batch = np.vstack([c[rng.integers(len(c), size=quota)] for c in corpora])
            losses.append(update_rep(self.vae, batch, self.hp.lr_rep, rng))
        return losses


@dataclass
class RunRngs:
    env: np.random.Generator
    explore: np.random.Generator
    latent: np.random.Generator
    robust: np.random.Generator
    sched: np.random.Generator
    vae: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RunRngs":
        kids = np.random.SeedSequence(seed).spawn(6)
        return cls(*(np.random.default_rng(k) for k in kids))


def train_episode(agent: Agent, env: Env, episode: int, rngs: RunRngs,
                  max_steps: int | None = None) -> EpisodeRow:
    hp, var = agent.hp, agent.variant
    agent.check_env(env)
    eps = hp.epsilon(episode)
    cap = env.cap if max_steps is None else min(env.cap, max_steps)
    lib = agent.library
    n_src = lib.n
    if cap <= 0:
        return EpisodeRow(hp.seed, episode, 0.0, eps, 0.0, 0.0, 0.0, [], [0.0] * (n_src + 1 if n_src else 0),
                          lib.forward_passes, 0)

    s = env.reset(rngs.env)
    selection, z0 = agent.choose_sources(s, rngs.sched)
    if agent.vae is not None:
        agent.buffer.append(pad_to(s, agent.d_max))
    g_in = agent.gate_input(s, agent._eta(rngs.latent)) if agent.vae else agent.gate_input(s)
    experts = lib.evaluate(s, selection) if var.uses_sources else None

    total = td_sum = rob_sum = 0.0
    weight_sum = np.zeros(n_src + 1) if n_src else None
    steps = 0
    done = False
    lam = hp.lam if var.robust else 0.0
    gate_fn = (lambda x: agent.gate_input(x)) if hp.robust_space == "state" else None
    while not done and steps < cap:
        if agent.model is not None:
            logits = agent.model.gate.predict(g_in)
            gw = gate_weights(logits, selection)
            q = gw.weights @ np.vstack([experts, agent.base.predict(s)[None, :]])
            weight_sum += gw.full(n_src)
        else:
            q = agent.base.predict(s)
        a = select_action(q, eps, rngs.explore)
        tr = env.step(a, rngs.env)
        steps += 1
        if steps >= cap:
            tr.done = True
        total += tr.reward
        s2 = tr.next_state
        if agent.vae is not None:
            agent.buffer.append(pad_to(s2, agent.d_max))

        if agent.model is not None:
            next_experts = None
            next_mean = None
            if not tr.done:
                next_experts = lib.evaluate(s2, selection)
                next_mean = agent.gate_input(s2)
            td, rob = update_adapter(
                agent.model, tr, selection, g_in, next_mean, hp.gamma, hp.lr_adapt,
                lam, hp.sigma, rngs.robust, experts=experts, next_experts=next_experts,
                space=hp.robust_space, gate_input_fn=gate_fn,
            )
            td_sum += td
            rob_sum += rob
            update_base(tr, agent.base, hp.lr_base, hp.gamma)
            experts = next_experts
            if not tr.done:
                g_in = agent.gate_input(s2, agent._eta(rngs.latent)) if agent.vae else next_mean
        else:
            td_sum += update_base(tr, agent.base, hp.lr_base, hp.gamma)
        s = s2
        done = tr.done

    vae_loss = 0.0
    if agent.vae is not None and agent.buffer:
        buf = np.array(agent.buffer)
        idx = rngs.vae.integers(len(buf), size=min(hp.vae_batch, len(buf)))
        vae_loss = update_rep(agent.vae, buf[idx], hp.lr_rep, rngs.vae)
    if agent.scheduler is not None:
        agent.scheduler.update([(z0, selection)], total, hp.lr_sched)

    return EpisodeRow(
        seed=hp.seed,
        episode=episode,
        ret=total,
        epsilon=eps,
        td_loss=td_sum / steps,
        vae_loss=vae_loss,
        robust_loss=rob_sum / steps,
        selected=list(selection),
        gate_weights=list(weight_sum / steps) if weight_sum is not None else [],
        source_forward_passes=lib.forward_passes,
        steps=steps,
    )


def train_agent(agent: Agent, env: Env, episodes: int, rngs: RunRngs, callback=None):
    rows = []
    for ep in range(episodes):
        row = train_episode(agent, env, ep, rngs)
        rows.append(row)
        if callback is not None:
            callback(row)
    return rows
