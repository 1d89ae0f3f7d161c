"""Acceptance criteria, one test each; every test records a pass/fail line."""

import itertools
import time
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from transferlab.adapter import gate_weights, robust_loss
from transferlab.envs import Env, parse_env
from transferlab.harness.checkpoint import load_checkpoint
from transferlab.harness.config import parse_config
from transferlab.harness.gradcheck import TOLERANCE, run_grad_checks
from transferlab.harness.presets import (
    cross_experiment, effic_experiment, negative_experiment, robust_experiment,
)
from transferlab.harness.runner import pretrain_sources, train_run
from transferlab.oracle import optimal_return
from transferlab.representation import vae_loss
from transferlab.scheduler import EPS_FLOOR, sample_subset
from transferlab.trainer import Agent, AgentVariant, Hyperparams, RunRngs, train_agent

from test_adapter import toy_model

SEEDS = range(5)


@pytest.fixture(scope="module")
def preset_sources(tmp_path_factory):
    return tmp_path_factory.mktemp("preset_sources")


def test_1_gradient_integrity(criterion):
    start = time.perf_counter()
    errors = run_grad_checks(probes=50)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    ok = worst <= TOLERANCE and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    assert criterion(1, "gradient integrity", ok, f"max rel err {worst:.1e} ({detail}); {elapsed:.1f}s")


def test_2_simplex(criterion):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst_sum = worst_shift = 0.0
    in_range = True
    for _ in range(10_000):
        n = int(rng.integers(1, 8))
        logits = rng.normal(scale=5.0, size=n + 1)
        sel = sorted(rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False).tolist())
        w = gate_weights(logits, sel).weights
        shifted = gate_weights(logits + rng.normal(scale=100.0), sel).weights
        worst_sum = max(worst_sum, abs(w.sum() - 1.0))
        worst_shift = max(worst_shift, float(np.max(np.abs(w - shifted))))
        in_range &= bool(np.all((w >= 0.0) & (w <= 1.0)))
    elapsed = time.perf_counter() - start
    ok = worst_sum <= 1e-9 and worst_shift <= 1e-9 and in_range and elapsed < 5
    assert criterion(2, "simplex", ok,
                     f"max |sum-1| {worst_sum:.1e}, max shift diff {worst_shift:.1e}; {elapsed:.1f}s")


def test_3_kl(criterion):
    rng = np.random.default_rng(1)
    worst = 0.0
    # pairs at the agents' default latent width; with tiny KL the 2% bound is MC noise
    for _ in range(100):
        k = 8
        mean, logvar = rng.normal(size=k), rng.uniform(-2.0, 2.0, size=k)
        std = np.exp(0.5 * logvar)
        z = mean + std * rng.standard_normal((100_000, k))
        mc = float(np.mean(0.5 * np.sum(z * z - ((z - mean) / std) ** 2 - logvar, axis=1)))
        closed = vae_loss([0.0], [0.0], mean, logvar)[2]
        worst = max(worst, abs(mc - closed) / closed)
    zero = vae_loss([0.0], [0.0], np.zeros(3), np.zeros(3))[2]
    ok = worst < 0.02 and zero == 0.0
    assert criterion(3, "KL correctness", ok, f"max MC rel diff {worst:.4f}; KL(0,0) = {zero}")


def test_4_robust_identity(criterion):
    rng = np.random.default_rng(2)
    nonzero = 0
    for i in range(1000):
        model = toy_model(n_sources=int(rng.integers(1, 4)), seed=i)
        sel = sorted(rng.choice(model.n_sources, size=int(rng.integers(0, model.n_sources + 1)),
                                replace=False).tolist())
        s, z = rng.normal(size=3), rng.normal(size=2)
        space = "latent" if i % 2 else "state"
        loss = robust_loss(model, s, z, sel, 0.0, rng, space=space, gate_input_fn=lambda x: x[1:])
        nonzero += loss != 0.0
    assert criterion(4, "robust loss identity", nonzero == 0, f"{nonzero}/1000 nonzero at sigma 0")


def test_5_scheduler_distribution(criterion):
    rng = np.random.default_rng(3)
    scores = np.array([0.9, 0.05, 0.4, 0.2, 0.0])
    first = Counter(sample_subset(scores, 2, rng).indices[0] for _ in range(100_000))
    p = (scores + EPS_FLOOR) / (scores + EPS_FLOOR).sum()
    # the zero-score source has expected count 0.2; pool it with its neighbour for the test
    obs = [first[0], first[1], first[2], first[3] + first[4]]
    exp = np.array([p[0], p[1], p[2], p[3] + p[4]]) * 100_000
    p_first = chisquare(obs, exp).pvalue

    pairs = Counter(frozenset(sample_subset(np.full(4, 0.5), 2, rng).indices) for _ in range(60_000))
    freqs = [pairs[frozenset(c)] / 60_000 for c in itertools.combinations(range(4), 2)]
    worst = max(abs(f - 1 / 6) for f in freqs)
    ok = p_first > 0.01 and worst <= 0.01
    assert criterion(5, "scheduler distribution", ok,
                     f"first-draw chi-square p={p_first:.3f}; max |pair freq - 1/6| {worst:.4f}")


def test_6_efficiency(criterion, preset_sources):
    res = effic_experiment(SEEDS, preset_sources)
    ok = all(r == 0.5 for r in res["ratio"])
    assert criterion(6, "efficiency (EFFIC)", ok,
                     f"forward-pass ratio per seed {res['ratio']} (M={res['m']}, N={res['n']})")


def test_7_negative_transfer(criterion, preset_sources):
    res = negative_experiment(SEEDS, preset_sources)
    ok = res["passes"] >= 4
    weights = ", ".join(f"{w:.3f}" for w in res["negated_weight"])
    assert criterion(7, "negative-transfer avoidance (NEGATIVE)", ok,
                     f"negated-source weight [{weights}] < {res['limit']:.3f} in {res['passes']}/5")


def test_8_transfer_benefit(criterion, preset_sources):
    start = time.perf_counter()
    res = cross_experiment(SEEDS, preset_sources)
    elapsed = time.perf_counter() - start
    g = ", ".join(f"{x:.3f}" for x in res["mean_return"]["gatn"])
    d = ", ".join(f"{x:.3f}" for x in res["mean_return"]["dqn-scratch"])
    ok = res["wins"] >= 4 and elapsed < 300
    assert criterion(8, "transfer benefit (CROSS)", ok,
                     f"gatn [{g}] vs dqn [{d}]: {res['wins']}/5; {elapsed:.0f}s incl. source pretraining")


def test_9_robustness_ablation(criterion, preset_sources):
    res = robust_experiment(SEEDS, preset_sources)
    r = ", ".join(f"{x:.3f}" for x in res["robustness"]["robust"])
    p = ", ".join(f"{x:.3f}" for x in res["robustness"]["plain"])
    ok = res["wins"] >= 4
    assert criterion(9, "robustness ablation (ROBUST)", ok,
                     f"with L_robust [{r}] vs without [{p}]: {res['wins']}/5")


def test_10_baseline_sanity(criterion):
    spec = parse_env("line-world(10)")
    target = 0.9 * optimal_return(spec)
    finals = []
    for seed in SEEDS:
        agent = Agent(AgentVariant.named("dqn-scratch"), spec, Hyperparams(seed=seed))
        rows = train_agent(agent, Env(spec), 500, RunRngs.from_seed(seed))
        finals.append(float(np.mean([r.ret for r in rows[-50:]])))
    ok = all(f >= target for f in finals)
    assert criterion(10, "baseline sanity", ok,
                     f"last-50 returns [{', '.join(f'{f:.3f}' for f in finals)}] >= {target:.3f}")


def test_11_determinism(criterion, preset_sources, tmp_path):
    cfg = parse_config(
        "env.target = intent-world(4,8)\n"
        "env.sources = intent-world(4,8), intent-world(4,6)\n"
        "agent.variant = gatn\ntrain.episodes = 30\n"
        f"env.source_dir = {preset_sources}\n"
    )
    pretrain_sources(cfg)
    _, agent = train_run(cfg, seed=7, out_dir=tmp_path / "a")
    train_run(cfg, seed=7, out_dir=tmp_path / "b")
    same_csv = (tmp_path / "a" / "metrics_seed7.csv").read_bytes() == \
        (tmp_path / "b" / "metrics_seed7.csv").read_bytes()
    back = load_checkpoint(tmp_path / "a" / "checkpoint_seed7.json")["groups"]
    groups = agent.trainable_groups() + agent.frozen_groups()
    exact = all(back[g.name].values.tobytes() == g.values.tobytes() for g in groups)
    assert criterion(11, "determinism", same_csv and exact,
                     f"CSV byte-identical: {same_csv}; checkpoint bit-exact over {len(groups)} groups: {exact}")
