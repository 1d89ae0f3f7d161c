"""Small reverse-mode differentiation core for dense networks.

Every network in the package is a multilayer perceptron whose parameters
live in one flat float64 array (a :class:`ParamGroup`).  A forward pass
returns the output together with a :class:`Tape`; calling
:meth:`Tape.backward` with an upstream gradient accumulates parameter
gradients into the group and returns the gradient with respect to the
input.  Losses composed on top of network outputs (softmax gates, VAE
terms, TD residuals) are differentiated by hand in the modules that own
them and pushed through the tapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericalError, UsageError

ACTIVATIONS = ("tanh", "relu", "identity")


class ParamGroup:
    """Named flat parameter vector with a matching gradient slot.

    ``shapes`` holds one ``(rows, cols)`` pair per layer, where ``rows`` is
    the fan-in and ``cols`` the fan-out.  Each layer occupies
    ``rows * cols`` weights followed by ``cols`` biases.
    """

    def __init__(self, name: str, shapes: Sequence[tuple[int, int]], values=None):
        self.name = name
        self.shapes = [(int(r), int(c)) for r, c in shapes]
        size = sum(r * c + c for r, c in self.shapes)
        if values is None:
            self.values = np.zeros(size)
        else:
            self.values = np.array(values, dtype=np.float64).reshape(-1)
            if self.values.size != size:
                raise ConfigError(
                    f"group {name!r}: expected {size} values, got {self.values.size}"
                )
        self.grads = np.zeros(size)
        # bumped whenever grads are reset; tapes from an older version are stale
        self.version = 0
        self._bind_layers()

    def _bind_layers(self):
        self._layers = []
        offset = 0
        for r, c in self.shapes:
            w = self.values[offset:offset + r * c].reshape(r, c)
            gw = self.grads[offset:offset + r * c].reshape(r, c)
            offset += r * c
            b = self.values[offset:offset + c]
            gb = self.grads[offset:offset + c]
            offset += c
            self._layers.append((w, b, gw, gb))

    def __len__(self):
        return self.values.size

    # copies and pickles must re-derive the layer views from the flat arrays
    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_layers"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._bind_layers()

    def layer(self, i):
        """Views ``(W, b, dW, db)`` into the flat arrays for layer ``i``."""
        return self._layers[i]

    def zero_grad(self):
        self.grads[:] = 0.0
        self.version += 1

    def copy(self, name: str | None = None) -> "ParamGroup":
        return ParamGroup(name or self.name, self.shapes, self.values.copy())

    def assign(self, values):
        self.values[:] = values


@dataclass
class MlpSpec:
    widths: list[int]
    activations: list[str]
    seed: int = 0

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError("an MLP needs at least input and output widths")
        if any(int(w) < 1 for w in self.widths):
            raise ConfigError(f"widths must be positive, got {self.widths}")
        if len(self.activations) != len(self.widths) - 1:
            raise ConfigError(
                f"{len(self.widths) - 1} layers but {len(self.activations)} activations"
            )
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")

    @classmethod
    def hidden(cls, n_in: int, hidden: Sequence[int], n_out: int, seed: int = 0,
               activation: str = "tanh") -> "MlpSpec":
        """Tanh hidden layers and an identity output layer."""
        widths = [n_in, *hidden, n_out]
        acts = [activation] * len(hidden) + ["identity"]
        return cls(widths, acts, seed)

    @property
    def layer_shapes(self):
        return list(zip(self.widths[:-1], self.widths[1:]))


def init_params(spec: MlpSpec, name: str) -> ParamGroup:
    """Glorot-uniform weights, zero biases, seeded by ``spec.seed``."""
    group = ParamGroup(name, spec.layer_shapes)
    rng = np.random.default_rng(spec.seed)
    for i, (fan_in, fan_out) in enumerate(spec.layer_shapes):
        w, _, _, _ = group.layer(i)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[:] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return group


@dataclass
class Tape:
    """Trace of one forward pass through an MLP."""

    spec: MlpSpec
    params: ParamGroup
    version: int
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    def backward(self, grad_out, accumulate_params: bool = True):
        """Accumulate parameter gradients and return d(output)/d(input)^T g."""
        if self.version != self.params.version:
            raise UsageError(
                f"stale tape for group {self.params.name!r}: gradients were reset "
                "after this forward pass"
            )
        g = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.inputs) - 1, -1, -1):
            act = self.spec.activations[i]
            y = self.outputs[i]
            if act == "tanh":
                g = g * (1.0 - y * y)
            elif act == "relu":
                g = g * (y > 0.0)
            w, _, gw, gb = self.params.layer(i)
            x = self.inputs[i]
            if accumulate_params:
                if x.ndim == 1:
                    gw += np.outer(x, g)
                    gb += g
                else:
                    gw += x.T @ g
                    gb += g.sum(axis=0)
            g = g @ w.T
        return g


def _check_input(spec: MlpSpec, x):
    if x.shape[-1] != spec.widths[0]:
        raise ConfigError(
            f"layer 0: input width {x.shape[-1]} does not match expected {spec.widths[0]}"
        )


def mlp_forward(spec: MlpSpec, params: ParamGroup, x) -> tuple[np.ndarray, Tape]:
    """Run the network on a vector or a batch (rows) and record a tape."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(spec, x)
    tape = Tape(spec, params, params.version)
    h = x
    for i, act in enumerate(spec.activations):
        w, b, _, _ = params.layer(i)
        tape.inputs.append(h)
        h = h @ w + b
        if act == "tanh":
            h = np.tanh(h)
        elif act == "relu":
            h = np.maximum(h, 0.0)
        tape.outputs.append(h)
    return h, tape


def mlp_predict(spec: MlpSpec, params: ParamGroup, x) -> np.ndarray:
    """Forward pass without a tape (frozen networks, evaluation)."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(spec, x)
    h = x
    for i, act in enumerate(spec.activations):
        w, b, _, _ = params.layer(i)
        h = h @ w + b
        if act == "tanh":
            h = np.tanh(h)
        elif act == "relu":
            h = np.maximum(h, 0.0)
    return h


class Mlp:
    """An :class:`MlpSpec` bound to its parameters."""

    def __init__(self, spec: MlpSpec, name: str, params: ParamGroup | None = None):
        self.spec = spec
        self.params = params if params is not None else init_params(spec, name)
        if self.params.shapes != spec.layer_shapes:
            raise ConfigError(
                f"group {self.params.name!r} shapes {self.params.shapes} do not "
                f"match network {spec.layer_shapes}"
            )

    @property
    def n_in(self):
        return self.spec.widths[0]

    @property
    def n_out(self):
        return self.spec.widths[-1]

    def __call__(self, x):
        return mlp_forward(self.spec, self.params, x)

    def predict(self, x):
        return mlp_predict(self.spec, self.params, x)


def sgd_step(params: ParamGroup, lr: float):
    """``values -= lr * grads`` followed by a gradient reset."""
    if not lr >= 0.0:
        raise ConfigError(f"learning rate must be nonnegative, got {lr}")
    if not np.all(np.isfinite(params.grads)):
        bad = int(np.count_nonzero(~np.isfinite(params.grads)))
        params.zero_grad()
        raise NumericalError(f"non-finite gradient in group {params.name!r} ({bad} entries)")
    if lr > 0.0:
        params.values -= lr * params.grads
    params.zero_grad()


def grad_check(loss_fn: Callable[[], float], params, probes: int = 50,
               h: float = 1e-5, rng=None) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn`` must run a forward and backward pass, accumulating into the
    groups in ``params``, and return the scalar loss.  Any stochastic nodes
    inside it must draw from a substream that is re-seeded on every call.
    """
    groups = [params] if isinstance(params, ParamGroup) else list(params)
    rng = np.random.default_rng(0) if rng is None else rng

    for g in groups:
        g.zero_grad()
    base = loss_fn()
    analytic = [g.grads.copy() for g in groups]
    for g in groups:
        g.zero_grad()
    if loss_fn() != base:
        for g in groups:
            g.zero_grad()
        raise UsageError("grad check invalid: loss evaluator is not deterministic")

    index = [(gi, j) for gi, g in enumerate(groups) for j in range(len(g))]
    picks = rng.choice(len(index), size=min(probes, len(index)), replace=False)
    worst = 0.0
    for p in picks:
        gi, j = index[p]
        vals = groups[gi].values
        orig = vals[j]
        vals[j] = orig + h
        up = loss_fn()
        vals[j] = orig - h
        down = loss_fn()
        vals[j] = orig
        numeric = (up - down) / (2.0 * h)
        a = analytic[gi][j]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    for g in groups:
        g.zero_grad()
    return worst
