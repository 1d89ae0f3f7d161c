"""Gated mixture of frozen source Q-functions and a base network.

The gate network maps the gate input (the latent code, or the raw state for
the A2T-style baseline) to N+1 logits.  Logits of unselected sources are
masked out, the rest go through a softmax, and the target Q-vector is the
weight-averaged stack of aligned source Q-vectors plus the base network's
Q-vector (always the last expert).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Mlp, sgd_step
from .envs import StateMapper, map_state
from .errors import ConfigError, NumericalError


@dataclass
class GateWeights:
    weights: np.ndarray
    logits: np.ndarray
    selection: list

    def full(self, n_sources: int) -> np.ndarray:
        """Weights over all N sources plus base; unselected entries are 0."""
        out = np.zeros(n_sources + 1)
        out[self.selection] = self.weights[:-1]
        out[-1] = self.weights[-1]
        return out


def softmax(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()


def gate_weights(logits, selection) -> GateWeights:
    """Softmax over the selected sources' logits and the base logit (last)."""
    logits = np.asarray(logits, dtype=np.float64)
    sel = [int(i) for i in selection]
    n = logits.size - 1
    if len(set(sel)) != len(sel) or any(not 0 <= i < n for i in sel):
        raise ConfigError(f"invalid selection {sel} for {n} sources")
    e = logits[sel + [n]]
    return GateWeights(softmax(e), e, sel)


def softmax_backward(w, dw):
    return w * (dw - np.dot(w, dw))


@dataclass(frozen=True)
class ActionAligner:
    """``table[j]`` is the target action fed by source action ``j`` (-1 drops it)."""

    table: tuple
    n_target: int

    def __post_init__(self):
        used = [t for t in self.table if t >= 0]
        if len(set(used)) != len(used):
            raise ConfigError(f"aligner {self.table} maps two source actions to one target action")
        if any(t >= self.n_target or t < -1 for t in self.table):
            raise ConfigError(f"aligner {self.table} references actions outside [0, {self.n_target})")

    @classmethod
    def identity(cls, n: int) -> "ActionAligner":
        return cls(tuple(range(n)), n)

    @classmethod
    def parse(cls, text: str, n_target: int) -> "ActionAligner":
        entries = []
        for tok in text.split(","):
            tok = tok.strip()
            if tok in ("-", "-1"):
                entries.append(-1)
            else:
                try:
                    entries.append(int(tok))
                except ValueError:
                    raise ConfigError(f"aligner entry {tok!r} is not an action index") from None
        return cls(tuple(entries), n_target)

    def __call__(self, q_source):
        q_source = np.asarray(q_source)
        if q_source.size != len(self.table):
            raise ConfigError(
                f"aligner expects {len(self.table)} source actions, got {q_source.size}"
            )
        out = np.full(self.n_target, q_source.mean())
        for j, t in enumerate(self.table):
            if t >= 0:
                out[t] = q_source[j]
        return out


@dataclass
class SourceEntry:
    name: str
    net: Mlp
    mapper: StateMapper
    aligner: ActionAligner

    def __post_init__(self):
        if self.mapper.source_dim != self.net.n_in:
            raise ConfigError(
                f"source {self.name}: mapper output {self.mapper.source_dim} != network input {self.net.n_in}"
            )
        if len(self.aligner.table) != self.net.n_out:
            raise ConfigError(
                f"source {self.name}: aligner covers {len(self.aligner.table)} actions, "
                f"network has {self.net.n_out}"
            )


@dataclass
class SourceLibrary:
    entries: list
    forward_passes: int = 0

    @property
    def n(self):
        return len(self.entries)

    def evaluate(self, state, selection) -> np.ndarray:
        """Aligned Q-vectors of the selected sources, one row each."""
        rows = []
        for i in selection:
            e = self.entries[i]
            rows.append(e.aligner(e.net.predict(map_state(e.mapper, state))))
            self.forward_passes += 1
        if not rows:
            return np.zeros((0, self.entries[0].aligner.n_target if self.entries else 0))
        return np.vstack(rows)


@dataclass
class Forward:
    q: np.ndarray
    gate: GateWeights
    experts: np.ndarray
    gate_tape: object
    base_tape: object
    full_logits: np.ndarray = field(repr=False, default=None)


class AdapterModel:
    """Gate network + base network over a frozen source library."""

    def __init__(self, gate: Mlp, base: Mlp, library: SourceLibrary):
        if gate.n_out != library.n + 1:
            raise ConfigError(f"gate emits {gate.n_out} logits, need {library.n + 1}")
        for e in library.entries:
            if e.aligner.n_target != base.n_out:
                raise ConfigError(f"source {e.name} aligns to {e.aligner.n_target} actions, target has {base.n_out}")
        self.gate = gate
        self.base = base
        self.library = library

    @property
    def n_sources(self):
        return self.library.n

    def forward(self, state, gate_input, selection, experts=None) -> Forward:
        if experts is None:
            experts = self.library.evaluate(state, selection)
        q_base, base_tape = self.base(state)
        logits, gate_tape = self.gate(gate_input)
        gw = gate_weights(logits, selection)
        stack = np.vstack([experts, q_base[None, :]])
        return Forward(gw.weights @ stack, gw, stack, gate_tape, base_tape, logits)

    def predict(self, state, gate_input, selection, experts=None) -> np.ndarray:
        if experts is None:
            experts = self.library.evaluate(state, selection)
        gw = gate_weights(self.gate.predict(gate_input), selection)
        return gw.weights @ np.vstack([experts, self.base.predict(state)[None, :]])

    def backward(self, fwd: Forward, dq, into_base: bool = True):
        """Push d(loss)/d(K_T) through the mixture into gate (and base) grads."""
        w = fwd.gate.weights
        dw = fwd.experts @ dq
        self._gate_backward(fwd, softmax_backward(w, dw))
        if into_base:
            fwd.base_tape.backward(w[-1] * dq)

    def _gate_backward(self, fwd: Forward, de):
        full = np.zeros(self.n_sources + 1)
        full[fwd.gate.selection] = de[:-1]
        full[-1] = de[-1]
        fwd.gate_tape.backward(full)


def compose(model: AdapterModel, state, gate_input, selection) -> np.ndarray:
    """Target Q-vector; counts one forward pass per selected source."""
    return model.predict(state, gate_input, selection)


def td_loss_backward(model: AdapterModel, fwd: Forward, action: int, target: float,
                     into_base: bool = True) -> float:
    """Squared TD residual of the mixture at ``action`` with a fixed target."""
    delta = target - fwd.q[action]
    dq = np.zeros_like(fwd.q)
    dq[action] = -2.0 * delta
    model.backward(fwd, dq, into_base=into_base)
    return float(delta * delta)


def robust_loss(model: AdapterModel, state, gate_input, selection, sigma: float, rng,
                experts=None, space: str = "latent", gate_input_fn=None,
                grad_scale: float = 1.0, into_base: bool = True) -> float:
    """||K_T(perturbed) - K_T(clean)||^2 from a single Gaussian draw.

    ``space="latent"`` perturbs the gate input; ``space="state"`` perturbs the
    raw state and derives both gate inputs with ``gate_input_fn``.  Gradients
    of ``grad_scale * loss`` are accumulated unless ``grad_scale`` is 0.
    """
    if sigma < 0:
        raise ConfigError(f"robust sigma must be >= 0, got {sigma}")
    if space == "state":
        if gate_input_fn is None:
            raise ConfigError("state-space robustness needs a gate input function")
        # reference and perturbed pass must derive the gate input the same way
        gate_input = gate_input_fn(np.asarray(state))
    clean = model.forward(state, gate_input, selection, experts)
    if space == "latent":
        eps = sigma * rng.standard_normal(np.shape(gate_input))
        logits_p, tape_p = model.gate(np.asarray(gate_input) + eps)
        gw_p = gate_weights(logits_p, selection)
        # the base network sees the clean state, so both mixtures share one expert stack
        pert = Forward(gw_p.weights @ clean.experts, gw_p, clean.experts, tape_p, None)
    elif space == "state":
        s_p = np.asarray(state) + sigma * rng.standard_normal(np.shape(state))
        pert = model.forward(s_p, gate_input_fn(s_p), selection)
    else:
        raise ConfigError(f"unknown robustness space {space!r}")
    diff = pert.q - clean.q
    loss = float(diff @ diff)
    if grad_scale and loss > 0.0:
        d = 2.0 * grad_scale * diff
        if pert.base_tape is None:
            model.backward(pert, d, into_base=False)
            if into_base:
                clean.base_tape.backward(pert.gate.weights[-1] * d)
        else:
            model.backward(pert, d, into_base=into_base)
        model.backward(clean, -d, into_base=into_base)
    return loss


def update_adapter(model: AdapterModel, transition, selection, gate_input, next_gate_input,
                   gamma: float, lr: float, lam: float, sigma: float, rng,
                   experts=None, next_experts=None, space: str = "latent",
                   gate_input_fn=None) -> tuple[float, float]:
    """One SGD step on delta^2 + lam * L_robust w.r.t. the gate parameters only.

    Returns the pre-step (td loss, robust loss).  Neither the base network
    nor the frozen sources receive gradient here.
    """
    tr = transition
    if tr.done:
        target = tr.reward
    else:
        q_next = model.predict(tr.next_state, next_gate_input, selection, next_experts)
        target = tr.reward + gamma * float(np.max(q_next))
    model.gate.params.zero_grad()
    fwd = model.forward(tr.state, gate_input, selection, experts)
    td = td_loss_backward(model, fwd, tr.action, target, into_base=False)
    rob = 0.0
    if lam > 0.0:
        rob = robust_loss(model, tr.state, gate_input, selection, sigma, rng,
                          experts=fwd.experts[:-1], space=space, gate_input_fn=gate_input_fn,
                          grad_scale=lam, into_base=False)
    if not np.isfinite(td + rob):
        model.gate.params.zero_grad()
        raise NumericalError(f"non-finite adapter loss (td={td}, robust={rob})")
    sgd_step(model.gate.params, lr)
    return td, rob
