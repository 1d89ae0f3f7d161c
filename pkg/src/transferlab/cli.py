"""Command-line entry point: ``transferlab <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .envs import PerturbationConfig, apply_perturbation, parse_env
from .errors import ConfigError, NumericalError, UsageError
from .harness.config import load_config
from .harness.gradcheck import TOLERANCE, run_grad_checks
from .harness.metrics import evaluate, generalization_gap, robustness_score
from .harness.presets import EXPERIMENTS
from .harness.runner import load_agent, pretrain_sources, train_run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("transferlab")


def _emit(payload: dict):
    print(json.dumps(payload, indent=2, sort_keys=True, default=float))


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else cfg.resolve(cfg.out_dir)
    start = time.perf_counter()
    rows, _ = train_run(cfg, seed=args.seed, out_dir=out)
    rets = [r.ret for r in rows]
    _emit({
        "episodes": len(rows),
        "mean_return": float(np.mean(rets)) if rets else None,
        "final50_return": float(np.mean(rets[-50:])) if rets else None,
        "source_forward_passes": rows[-1].source_forward_passes if rows else 0,
        "metrics": str(out / f"metrics_seed{args.seed}.csv"),
        "checkpoint": str(out / f"checkpoint_seed{args.seed}.json"),
        "wall_seconds": round(time.perf_counter() - start, 3),
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    agent, cfg = load_agent(args.checkpoint)
    spec = parse_env(args.env)
    episodes = args.episodes or cfg.eval_episodes
    rng_seed = args.seed
    start = "heldout" if args.heldout else "train"
    result = {"env": spec.name, "episodes": episodes, "start": start}
    result["mean_return"] = evaluate(agent, spec, episodes, start, rng=np.random.default_rng(rng_seed))
    if args.perturb:
        pert = PerturbationConfig.parse(args.perturb)
        apply_perturbation(spec, pert)  # validate before running
        result["perturbed_return"] = evaluate(agent, spec, episodes, start, pert,
                                              np.random.default_rng(rng_seed))
        result["robustness"] = robustness_score(agent, spec, pert, episodes, seed=rng_seed)
    if args.heldout:
        result["generalization_gap"] = generalization_gap(agent, spec, episodes, seed=rng_seed)
    _emit(result)
    return EXIT_OK


def cmd_bench(args) -> int:
    name = args.experiment.upper()
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {args.experiment!r}; expected one of {sorted(EXPERIMENTS)}")
    start = time.perf_counter()
    kwargs = {"out_dir": args.out} if args.out else {}
    if args.episodes:
        kwargs["episodes"] = args.episodes
    result = EXPERIMENTS[name](list(range(args.seeds)), args.source_dir, **kwargs)
    # wall-clock is informational only; the compute-cost metric is the forward-pass counter
    result["wall_seconds"] = round(time.perf_counter() - start, 3)
    result["experiment"] = name
    _emit(result)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    errors = run_grad_checks(args.probes, args.seed)
    ok = all(e <= TOLERANCE for e in errors.values())
    _emit({"max_relative_error": errors, "tolerance": TOLERANCE, "passed": ok})
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_pretrain_sources(args) -> int:
    cfg = load_config(args.config)
    paths = pretrain_sources(cfg, force=args.force)
    _emit({"sources": [str(p) for p in paths]})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transferlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one seeded run from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", help="output directory (default: out.dir from the config)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a run checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env", required=True)
    e.add_argument("--perturb", help="e.g. obs=0.1,slip=0.05,drift=0.39,reward=0")
    e.add_argument("--heldout", action="store_true", help="start from heldout states")
    e.add_argument("--episodes", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run a shipped experiment preset over k seeds")
    b.add_argument("--experiment", required=True, help="CROSS, ROBUST, EFFIC or NEGATIVE")
    b.add_argument("--seeds", type=int, default=5)
    b.add_argument("--episodes", type=int, default=0)
    b.add_argument("--source-dir", default="sources")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("grad-check", help="finite-difference check of every loss gradient")
    g.add_argument("--probes", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("pretrain-sources", help="pretrain and freeze the configured source solutions")
    s.add_argument("--config", required=True)
    s.add_argument("--force", action="store_true", help="retrain even if checkpoints exist")
    s.set_defaults(func=cmd_pretrain_sources)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
