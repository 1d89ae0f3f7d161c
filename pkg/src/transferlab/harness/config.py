"""Flat ``key = value`` experiment configuration.

Lines are ``dotted.key = value``; blank lines and ``#`` comments are
ignored.  Unknown and duplicate keys are rejected with the offending line
number.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..adapter import ActionAligner
from ..envs import EnvSpec, PerturbationConfig, default_mapper, parse_env
from ..errors import ConfigError
from ..trainer import VARIANTS, AgentVariant, Hyperparams


class ConfigParseError(ConfigError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _bool(v):
    low = v.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"{v!r} is not a boolean")


def _widths(v):
    return tuple(int(x) for x in v.split(",") if x.strip())


def split_top_level(text: str, sep: str = ",") -> list[str]:
    """Split on ``sep`` outside parentheses."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        parts.append(tail)
    return [p for p in parts if p]


# key -> (parser, Hyperparams field or None)
SCALAR_KEYS = {
    "env.target": (str, None),
    "env.sources": (str, None),
    "env.source_dir": (str, None),
    "agent.variant": (str, None),
    "train.episodes": (_int, "episodes"),
    "train.gamma": (_float, "gamma"),
    "lr.rep": (_float, "lr_rep"),
    "lr.adapt": (_float, "lr_adapt"),
    "lr.base": (_float, "lr_base"),
    "lr.sched": (_float, "lr_sched"),
    "vae.latent_dim": (_int, "latent_dim"),
    "vae.pretrain_steps": (_int, "vae_pretrain_steps"),
    "sched.M": (_int, "m"),
    "sched.eps_floor": (_float, "eps_floor"),
    "sched.baseline_decay": (_float, "baseline_decay"),
    "robust.sigma": (_float, "sigma"),
    "robust.lambda": (_float, "lam"),
    "robust.space": (str, "robust_space"),
    "explore.eps_start": (_float, "eps_start"),
    "explore.eps_end": (_float, "eps_end"),
    "explore.decay_frac": (_float, "decay_frac"),
    "net.hidden": (_widths, "hidden"),
    "net.aux_hidden": (_widths, "aux_hidden"),
    "seed": (_int, "seed"),
    "seeds": (_widths, None),
    "pretrain.episodes": (_int, None),
    "pretrain.threshold": (_float, None),
    "eval.episodes": (_int, None),
    "eval.perturb": (str, None),
    "eval.heldout": (_bool, None),
    "out.dir": (str, None),
}
INDEXED_KEYS = ("env.mapper.", "env.aligner.")
REQUIRED = ("env.target", "agent.variant")


@dataclass
class ExperimentConfig:
    target: EnvSpec
    variant: AgentVariant
    hp: Hyperparams
    sources: list = field(default_factory=list)
    mappers: dict = field(default_factory=dict)
    aligners: dict = field(default_factory=dict)
    source_dir: str = "sources"
    pretrain_episodes: int = 1500
    pretrain_threshold: float = 0.9
    eval_episodes: int = 20
    eval_perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    eval_heldout: bool = False
    out_dir: str = "runs"
    seeds: tuple = (0,)
    text: str = ""
    base_dir: Path = field(default_factory=Path)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def mapper(self, i: int):
        return default_mapper(self.target, self.sources[i], self.mappers.get(i))

    def aligner(self, i: int) -> ActionAligner:
        return self.aligners[i]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, hp=replace(self.hp, seed=seed))


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    """Parse and validate a config document, applying defaults."""
    raw: dict[str, tuple[str, int]] = {}
    last_line = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        last_line = lineno
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigParseError(f"expected 'key = value', got {stripped!r}", lineno)
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not key:
            raise ConfigParseError("empty key", lineno)
        known = key in SCALAR_KEYS or (
            key.startswith(INDEXED_KEYS) and key.rsplit(".", 1)[1].isdigit()
        )
        if not known:
            raise ConfigParseError(f"unknown key {key!r}", lineno)
        if key in raw:
            raise ConfigParseError(
                f"duplicate key {key!r} (first set on line {raw[key][1]})", lineno
            )
        raw[key] = (value, lineno)

    for key in REQUIRED:
        if key not in raw:
            raise ConfigParseError(f"missing required key {key!r}", last_line + 1)

    def get(key):
        value, lineno = raw[key]
        parser = SCALAR_KEYS[key][0]
        try:
            return parser(value)
        except ValueError as exc:
            raise ConfigParseError(f"{key}: {exc}", lineno) from None

    def guarded(key, fn):
        try:
            return fn()
        except ConfigParseError:
            raise
        except ConfigError as exc:
            raise ConfigParseError(str(exc), raw[key][1]) from None

    hp_kwargs = {}
    for key, (_, field_name) in SCALAR_KEYS.items():
        if field_name and key in raw:
            hp_kwargs[field_name] = get(key)
    if "sched.M" in raw and hp_kwargs["m"] < 1:
        raise ConfigParseError("M must be ≥ 1", raw["sched.M"][1])
    hp_key = next(iter(k for k in raw if SCALAR_KEYS.get(k, (None, None))[1]), "env.target")
    hp = guarded(hp_key, lambda: Hyperparams(**hp_kwargs))

    target = guarded("env.target", lambda: parse_env(get("env.target")))
    variant_name = get("agent.variant")
    if variant_name not in VARIANTS:
        raise ConfigParseError(
            f"agent.variant must be one of {VARIANTS}, got {variant_name!r}", raw["agent.variant"][1]
        )
    variant = AgentVariant.named(variant_name, robust=hp.lam > 0.0)

    sources = []
    if "env.sources" in raw:
        sources = guarded(
            "env.sources", lambda: [parse_env(n) for n in split_top_level(get("env.sources"))]
        )
    if variant.uses_sources and not sources:
        line = raw.get("env.sources", ("", raw["agent.variant"][1]))[1]
        raise ConfigParseError(f"variant {variant_name} needs env.sources", line)

    mappers, aligners = {}, {}
    for key, (value, lineno) in raw.items():
        if not key.startswith(INDEXED_KEYS):
            continue
        i = int(key.rsplit(".", 1)[1])
        if i >= len(sources):
            raise ConfigParseError(f"{key} refers to source {i} but only {len(sources)} are listed", lineno)
        if key.startswith("env.mapper."):
            if value not in ("pad", "truncate", "grid-rescale"):
                raise ConfigParseError(f"{key}: unknown mapper mode {value!r}", lineno)
            mappers[i] = value
        else:
            aligners[i] = guarded(key, lambda: ActionAligner.parse(value, target.n_actions))
    for i, src in enumerate(sources):
        if i not in aligners:
            if src.n_actions != target.n_actions:
                raise ConfigParseError(
                    f"source {i} ({src.name}) has {src.n_actions} actions but the target has "
                    f"{target.n_actions}; env.aligner.{i} is required",
                    raw["env.sources"][1],
                )
            aligners[i] = ActionAligner.identity(target.n_actions)
        if len(aligners[i].table) != src.n_actions:
            key = f"env.aligner.{i}"
            raise ConfigParseError(
                f"{key} lists {len(aligners[i].table)} entries for a source with {src.n_actions} actions",
                raw[key][1],
            )
        mkey = f"env.mapper.{i}"
        guarded(mkey if mkey in raw else "env.sources",
                lambda: default_mapper(target, src, mappers.get(i)))

    cfg = ExperimentConfig(
        target=target,
        variant=variant,
        hp=hp,
        sources=sources,
        mappers=mappers,
        aligners=aligners,
        text=text,
        base_dir=Path(base_dir) if base_dir is not None else Path.cwd(),
    )
    if "env.source_dir" in raw:
        cfg.source_dir = get("env.source_dir")
    if "pretrain.episodes" in raw:
        cfg.pretrain_episodes = get("pretrain.episodes")
    if "pretrain.threshold" in raw:
        cfg.pretrain_threshold = get("pretrain.threshold")
    if "eval.episodes" in raw:
        cfg.eval_episodes = get("eval.episodes")
    if "eval.perturb" in raw:
        cfg.eval_perturbation = guarded("eval.perturb", lambda: PerturbationConfig.parse(get("eval.perturb")))
    if "eval.heldout" in raw:
        cfg.eval_heldout = get("eval.heldout")
    if "out.dir" in raw:
        cfg.out_dir = get("out.dir")
    cfg.seeds = get("seeds") if "seeds" in raw else (hp.seed,)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, base_dir=path.parent)
