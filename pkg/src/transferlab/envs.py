"""Toy MDPs with mismatched state spaces, perturbation hooks and state mappers.

Three kinds are provided:

* ``line-world(L)``: one-hot position on a line, actions left/right, goal at
  the right end.
* ``grid-world(W,H)``: one-hot cell index ``y * W + x``, actions
  up/down/right/left, goal at the top-left corner ``(0, H-1)``, inside the
  training (left-half) start region.
* ``intent-world(K,V)``: a noisy V-dimensional feature vector of one of K
  intents; the agent answers with an intent index for 8 steps.

``negated:<name>`` flips the sign of every reward of the base env.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, UsageError

STEP_PENALTY = -0.01
GOAL_REWARD = 1.0
INTENT_CORRECT = 1.0
INTENT_WRONG = -0.1
INTENT_EPISODE = 8
INTENT_NOISE = 0.3

LINE_ACTIONS = ("left", "right")
GRID_ACTIONS = ("up", "down", "right", "left")
_GRID_MOVES = ((0, 1), (0, -1), (1, 0), (-1, 0))


@dataclass(frozen=True)
class PerturbationConfig:
    obs_sigma: float = 0.0
    slip: float = 0.0
    drift: float = 0.0
    reward_shift: float = 0.0

    def __post_init__(self):
        if not self.obs_sigma >= 0.0:
            raise ConfigError(f"observation sigma must be >= 0, got {self.obs_sigma}")
        if not 0.0 <= self.slip <= 1.0:
            raise ConfigError(f"slip probability must lie in [0, 1], got {self.slip}")
        for name in ("drift", "reward_shift"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")

    @property
    def is_zero(self):
        return not (self.obs_sigma or self.slip or self.drift or self.reward_shift)

    @classmethod
    def parse(cls, text: str) -> "PerturbationConfig":
        """Parse ``obs=0.1,slip=0.2,drift=0.39,reward=0`` (any subset)."""
        keys = {"obs": "obs_sigma", "slip": "slip", "drift": "drift", "reward": "reward_shift"}
        kwargs = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            if "=" not in part:
                raise ConfigError(f"perturbation entry {part!r} is not key=value")
            k, v = (s.strip() for s in part.split("=", 1))
            if k not in keys:
                raise ConfigError(f"unknown perturbation key {k!r}; expected one of {sorted(keys)}")
            try:
                kwargs[keys[k]] = float(v)
            except ValueError:
                raise ConfigError(f"perturbation {k}: {v!r} is not a number") from None
        return cls(**kwargs)


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    size: tuple
    negated: bool = False
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)

    def __post_init__(self):
        arity = {"line-world": 1, "grid-world": 2, "intent-world": 2}
        if self.kind not in arity:
            raise ConfigError(f"unknown env kind {self.kind!r}")
        if len(self.size) != arity[self.kind] or any(int(s) < 1 for s in self.size):
            raise ConfigError(f"{self.kind} needs {arity[self.kind]} positive size parameter(s)")
        if self.kind == "line-world" and self.size[0] < 2:
            raise ConfigError("line-world needs at least 2 cells")
        if self.kind == "grid-world" and self.size[0] * self.size[1] < 2:
            raise ConfigError("grid-world needs at least 2 cells")
        if self.kind == "intent-world" and not (2 <= self.size[0] <= self.size[1]):
            raise ConfigError("intent-world needs 2 <= K <= V")
        if self.perturbation.drift and self.kind != "intent-world":
            raise ConfigError(f"intent drift is only defined for intent-world, not {self.kind}")

    @property
    def name(self):
        base = f"{self.kind}({','.join(str(s) for s in self.size)})"
        return "negated:" + base if self.negated else base

    @property
    def state_dim(self):
        if self.kind == "line-world":
            return self.size[0]
        if self.kind == "grid-world":
            return self.size[0] * self.size[1]
        return self.size[1]

    @property
    def n_actions(self):
        return {"line-world": 2, "grid-world": 4}.get(self.kind) or self.size[0]

    @property
    def cap(self):
        if self.kind == "line-world":
            return 4 * self.size[0]
        if self.kind == "grid-world":
            return 4 * self.size[0] * self.size[1]
        return INTENT_EPISODE

    @property
    def has_heldout(self):
        return self.kind != "intent-world"

    def _reward_values(self):
        sign = -1.0 if self.negated else 1.0
        shift = self.perturbation.reward_shift
        if self.kind == "intent-world":
            return sign * INTENT_CORRECT + shift, sign * INTENT_WRONG + shift
        return sign * GOAL_REWARD + shift, sign * STEP_PENALTY + shift

    @property
    def return_bounds(self) -> tuple[float, float]:
        """(R_min, R_max) over every possible episode."""
        a, b = self._reward_values()
        if self.kind == "intent-world":
            return INTENT_EPISODE * min(a, b), INTENT_EPISODE * max(a, b)
        goal, step = a, b
        totals = []
        for n in range(1, self.cap + 1):
            totals.append((n - 1) * step + goal)
            totals.append(n * step)
        return min(totals), max(totals)


_NAME = re.compile(r"^(negated:)?(line-world|grid-world|intent-world)\(([\d,\s]+)\)$")


def parse_env(name: str) -> EnvSpec:
    m = _NAME.match(name.strip())
    if not m:
        raise ConfigError(f"cannot parse env name {name!r}")
    size = tuple(int(s) for s in m.group(3).split(",") if s.strip())
    return EnvSpec(m.group(2), size, negated=bool(m.group(1)))


def apply_perturbation(spec: EnvSpec, config: PerturbationConfig) -> EnvSpec:
    """A copy of ``spec`` with ``config`` applied; ``spec`` itself is untouched."""
    return replace(spec, perturbation=config)


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


def _intent_prototypes(k: int, v: int) -> np.ndarray:
    # rows of a fixed orthogonal matrix: all prototypes pairwise sqrt(2) apart
    rng = np.random.default_rng(1000 * v + k)
    q, r = np.linalg.qr(rng.standard_normal((v, v)))
    q = q * np.sign(np.diag(r))
    return q[:k].copy()


def drift_rotation(v: int, angle: float) -> np.ndarray:
    """Rotate every coordinate pair (0,1), (2,3), ... by ``angle``."""
    rot = np.eye(v)
    c, s = math.cos(angle), math.sin(angle)
    for i in range(0, v - 1, 2):
        rot[i:i + 2, i:i + 2] = [[c, -s], [s, c]]
    return rot


class Env:
    """Runtime instance of an :class:`EnvSpec` holding the true state."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.state_dim = spec.state_dim
        self.n_actions = spec.n_actions
        self.cap = spec.cap
        self.t = 0
        self.pos = None
        self.last_obs = None
        if spec.kind == "intent-world":
            k, v = spec.size
            protos = _intent_prototypes(k, v)
            if spec.perturbation.drift:
                protos = protos @ drift_rotation(v, spec.perturbation.drift).T
            self.prototypes = protos

    # -- start distributions -------------------------------------------------

    def start_positions(self, start: str = "train"):
        """Finite start support for line/grid worlds."""
        kind, size = self.spec.kind, self.spec.size
        if start not in ("train", "heldout"):
            raise ConfigError(f"unknown start distribution {start!r}")
        if kind == "intent-world":
            if start == "heldout":
                raise ConfigError("intent-world defines no heldout start distribution")
            return None
        if kind == "line-world":
            n = size[0]
            if start == "train":
                return [0]
            cells = list(range(1, n - 1))
        else:
            w, h = size
            goal = grid_goal(size)
            if start == "train":
                cells = [(x, y) for y in range(h) for x in range(w) if x < w // 2]
            else:
                cells = [(x, y) for y in range(h) for x in range(w) if x >= w // 2]
            cells = [c for c in cells if c != goal]
        if not cells:
            raise ConfigError(f"{self.spec.name} has no {start} start cells")
        return cells

    def reset(self, rng, start: str = "train") -> np.ndarray:
        self.t = 0
        if self.spec.kind == "intent-world":
            self.start_positions(start)
            self.pos = int(rng.integers(self.spec.size[0]))
        else:
            cells = self.start_positions(start)
            self.pos = cells[int(rng.integers(len(cells)))] if len(cells) > 1 else cells[0]
        self.last_obs = self.observe(rng)
        return self.last_obs

    # -- observation -----------------------------------------------------------

    def clean_observation(self, pos=None, rng=None) -> np.ndarray:
        pos = self.pos if pos is None else pos
        kind = self.spec.kind
        if kind == "line-world":
            s = np.zeros(self.state_dim)
            s[pos] = 1.0
            return s
        if kind == "grid-world":
            s = np.zeros(self.state_dim)
            s[pos[1] * self.spec.size[0] + pos[0]] = 1.0
            return s
        return self.prototypes[pos] + INTENT_NOISE * rng.standard_normal(self.state_dim)

    def observe(self, rng) -> np.ndarray:
        s = self.clean_observation(rng=rng)
        sigma = self.spec.perturbation.obs_sigma
        if sigma:
            s = s + sigma * rng.standard_normal(self.state_dim)
        return s

    # -- dynamics ------------------------------------------------------------

    def is_goal(self, pos) -> bool:
        kind, size = self.spec.kind, self.spec.size
        if kind == "line-world":
            return pos == size[0] - 1
        if kind == "grid-world":
            return pos == grid_goal(size)
        return False

    def move(self, pos, action: int):
        """Deterministic successor of ``pos`` under ``action`` (walls block)."""
        kind, size = self.spec.kind, self.spec.size
        if kind == "line-world":
            return min(max(pos + (1 if action == 1 else -1), 0), size[0] - 1)
        dx, dy = _GRID_MOVES[action]
        return (min(max(pos[0] + dx, 0), size[0] - 1), min(max(pos[1] + dy, 0), size[1] - 1))

    def step(self, action: int, rng) -> Transition:
        if not 0 <= action < self.n_actions:
            raise UsageError(f"action {action} out of range [0, {self.n_actions})")
        if self.pos is None:
            raise UsageError("step called before reset")
        state = self.last_obs
        executed = action
        slip = self.spec.perturbation.slip
        if slip and rng.random() < slip:
            others = [a for a in range(self.n_actions) if a != action]
            executed = others[int(rng.integers(len(others)))]
        goal_r, step_r = self.spec._reward_values()
        self.t += 1
        if self.spec.kind == "intent-world":
            reward = goal_r if executed == self.pos else step_r
            self.pos = int(rng.integers(self.spec.size[0]))
            done = self.t >= self.cap
        else:
            self.pos = self.move(self.pos, executed)
            reached = self.is_goal(self.pos)
            reward = goal_r if reached else step_r
            done = reached or self.t >= self.cap
        next_state = self.observe(rng)
        self.last_obs = next_state
        return Transition(state, int(action), float(reward), next_state, bool(done))


def make_env(spec: EnvSpec) -> Env:
    return Env(spec)


def run_episode(env: Env, policy, rng, start: str = "train"):
    """Roll out ``policy(state) -> action``; returns (return, transitions)."""
    s = env.reset(rng, start)
    total, path = 0.0, []
    done = env.cap < 1
    while not done:
        a = policy(s)
        tr = env.step(a, rng)
        path.append(tr)
        total += tr.reward
        s, done = tr.next_state, tr.done
    return total, path


def sample_states(env: Env, count: int, rng) -> list:
    """States visited by a uniform-random policy (start and successor states)."""
    out = []
    if count <= 0:
        return out
    s = env.reset(rng)
    out.append(s)
    while len(out) < count:
        tr = env.step(int(rng.integers(env.n_actions)), rng)
        out.append(tr.next_state)
        if tr.done:
            if len(out) < count:
                out.append(env.reset(rng))
    return out[:count]


# -- state mappers -----------------------------------------------------------


@dataclass(frozen=True)
class StateMapper:
    mode: str
    source_dim: int
    source_grid: tuple | None = None
    target_grid: tuple | None = None

    def __post_init__(self):
        if self.mode not in ("pad", "truncate", "grid-rescale"):
            raise ConfigError(f"unknown mapper mode {self.mode!r}")
        if self.source_dim < 1:
            raise ConfigError("mapper source dimension must be positive")
        if self.mode == "grid-rescale":
            if self.source_grid is None or self.target_grid is None:
                raise ConfigError("grid-rescale needs source and target grid sizes")
            if self.source_grid[0] * self.source_grid[1] != self.source_dim:
                raise ConfigError("grid-rescale source grid does not match source dimension")


def map_state(mapper: StateMapper, state) -> np.ndarray:
    s = np.asarray(state, dtype=np.float64)
    n = mapper.source_dim
    if mapper.mode == "pad":
        if s.size > n:
            raise ConfigError(f"pad mapper: input length {s.size} exceeds source dim {n}")
        return s.copy() if s.size == n else np.concatenate([s, np.zeros(n - s.size)])
    if mapper.mode == "truncate":
        if s.size < n:
            raise ConfigError(f"truncate mapper: input length {s.size} below source dim {n}")
        return s[:n].copy()
    tw, th = mapper.target_grid
    sw, sh = mapper.source_grid
    if s.size != tw * th:
        raise ConfigError(
            f"grid-rescale expects a {tw}x{th} grid state (length {tw * th}), got length {s.size}"
        )
    idx = int(np.argmax(s))
    x, y = idx % tw, idx // tw
    out = np.zeros(n)
    out[(y * sh // th) * sw + x * sw // tw] = 1.0
    return out


def pad_to(state, dim: int) -> np.ndarray:
    s = np.asarray(state, dtype=np.float64)
    if s.size > dim:
        raise ConfigError(f"state length {s.size} exceeds padded width {dim}")
    return s if s.size == dim else np.concatenate([s, np.zeros(dim - s.size)])


def grid_goal(size) -> tuple[int, int]:
    return (0, size[1] - 1)


def default_mapper(target: EnvSpec, source: EnvSpec, mode: str | None = None) -> StateMapper:
    """Mapper from target states to ``source`` states; picks a mode if none given."""
    if mode is None:
        if target.kind == source.kind == "grid-world":
            mode = "grid-rescale"
        elif target.state_dim <= source.state_dim:
            mode = "pad"
        else:
            mode = "truncate"
    if mode == "grid-rescale":
        if not (target.kind == source.kind == "grid-world"):
            raise ConfigError("grid-rescale mapper requires grid-world target and source")
        return StateMapper(mode, source.state_dim, tuple(source.size), tuple(target.size))
    return StateMapper(mode, source.state_dim)
