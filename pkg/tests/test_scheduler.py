import itertools
import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import chisquare

from transferlab.diffcore import Mlp, MlpSpec, grad_check
from transferlab.scheduler import (
    EPS_FLOOR, Scheduler, log_prob_backward, relevance_scores, sample_subset, selection_log_prob,
)


def sched_net(n=4, latent=3, seed=0):
    return Mlp(MlpSpec.hidden(latent, [5], n, seed=seed), "sched")


class TestScores:
    def test_zero_network(self):
        net = sched_net()
        net.params.values[:] = 0.0
        np.testing.assert_array_equal(relevance_scores(net, np.ones(3)), 0.5)

    def test_sigmoid_arithmetic(self):
        net = Mlp(MlpSpec([1, 2], ["identity"]), "sched")
        net.params.assign([0.0, 0.0, math.log(3), 0.0])
        np.testing.assert_allclose(relevance_scores(net, [1.0]), [0.75, 0.5], rtol=0, atol=1e-15)

    def test_range(self):
        net = sched_net()
        for z in np.random.default_rng(0).normal(scale=5, size=(100, 3)):
            r = relevance_scores(net, z)
            assert np.all((r > 0) & (r < 1))


class TestSampling:
    def test_distinct_indices(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            sel = sample_subset(rng.random(5), 3, rng)
            assert len(set(sel.indices)) == 3

    def test_uniform_pairs(self):
        rng = np.random.default_rng(1)
        counts = Counter(frozenset(sample_subset(np.full(4, 0.5), 2, rng).indices)
                         for _ in range(60_000))
        pairs = [frozenset(p) for p in itertools.combinations(range(4), 2)]
        assert chisquare([counts[p] for p in pairs]).pvalue > 0.01

    def test_dominant_pair_probability(self):
        scores = np.array([0.5, 0.5, 0.0, 0.0])
        p = math.exp(selection_log_prob(scores, [0, 1])) + math.exp(selection_log_prob(scores, [1, 0]))
        # exact rational oracle: 2 * (a / (2a + 2e)) * (a / (a + 2e)), a = 0.5 + e
        e = Fraction(1, 10**6)
        a = Fraction(1, 2) + e
        exact = 2 * (a / (2 * a + 2 * e)) * (a / (a + 2 * e))
        assert p == pytest.approx(float(exact), abs=1e-12)
        assert p > 0.99999

    def test_m_exceeds_n(self, caplog):
        sel = sample_subset([0.3], 2, np.random.default_rng(0))
        assert sel.indices == [0]
        assert "exceeds" in caplog.text

    def test_m_zero(self):
        with pytest.raises(ValueError):
            sample_subset([0.3, 0.4], 0, np.random.default_rng(0))

    def test_first_draw_frequencies(self):
        scores = np.array([0.9, 0.1, 0.5, 0.3])
        rng = np.random.default_rng(2)
        counts = Counter(sample_subset(scores, 2, rng).indices[0] for _ in range(100_000))
        p = (scores + EPS_FLOOR) / (scores + EPS_FLOOR).sum()
        assert chisquare([counts[i] for i in range(4)], p * 100_000).pvalue > 0.01

    def test_recorded_log_prob_is_exact(self):
        rng = np.random.default_rng(3)
        scores = rng.random(5)
        sel = sample_subset(scores, 3, rng)
        assert sel.log_prob == pytest.approx(selection_log_prob(scores, sel.indices), abs=1e-12)

    def test_ordered_probabilities_sum_to_one(self):
        scores = np.array([0.2, 0.7, 0.1])
        total = sum(math.exp(selection_log_prob(scores, list(p)))
                    for p in itertools.permutations(range(3), 2))
        assert total == pytest.approx(1.0, abs=1e-12)


class TestUpdate:
    def test_log_prob_gradient(self):
        net = sched_net(seed=4)
        z = np.array([0.4, -1.0, 0.2])
        assert grad_check(lambda: log_prob_backward(net, z, [2, 0]), net.params, probes=50) <= 1e-4

    def test_centered_advantage_is_noop(self):
        sch = Scheduler(sched_net(), 2)
        sch.baseline = 0.7
        before = sch.net.params.values.copy()
        sch.update([(np.ones(3), [0, 1])], 0.7, 0.1)
        np.testing.assert_array_equal(sch.net.params.values, before)

    def test_baseline_updates_after_step(self):
        sch = Scheduler(sched_net(), 2, decay=0.5)
        assert sch.update([(np.ones(3), [0, 1])], 2.0, 0.1) == 0.0
        assert sch.baseline == 2.0
        adv = sch.update([(np.ones(3), [0, 1])], 4.0, 0.1)
        assert adv == 2.0 and sch.baseline == 3.0

    def test_bandit_prefers_rewarding_source(self):
        net = Mlp(MlpSpec.hidden(2, [8], 2, seed=0), "sched")
        sch = Scheduler(net, 1)
        rng = np.random.default_rng(0)
        z = np.array([1.0, -1.0])
        for _ in range(2000):
            sel = sch.select(z, rng)
            sch.update([(z, sel.indices)], 1.0 if sel.indices == [0] else 0.0, 0.01)
        r = relevance_scores(net, z)
        assert r[0] - r[1] > 0.3
