"""Finite-difference checks of every differentiable loss on small fixed models."""

from __future__ import annotations

import numpy as np

from ..adapter import (
    ActionAligner, AdapterModel, SourceEntry, SourceLibrary, robust_loss, td_loss_backward,
)
from ..diffcore import Mlp, MlpSpec, grad_check
from ..envs import StateMapper
from ..representation import Vae, VaeConfig
from ..scheduler import log_prob_backward

TOLERANCE = 1e-4


def _adapter(seed: int) -> AdapterModel:
    entries = [
        SourceEntry(f"toy{i}", Mlp(MlpSpec.hidden(4, [5], 3, seed=seed + 10 + i), f"source.{i}"),
                    StateMapper("pad", 4), ActionAligner.identity(3))
        for i in range(2)
    ]
    gate = Mlp(MlpSpec.hidden(3, [6], 3, seed=seed), "gate")
    base = Mlp(MlpSpec.hidden(4, [6], 3, seed=seed + 1), "base")
    return AdapterModel(gate, base, SourceLibrary(entries))


def run_grad_checks(probes: int = 50, seed: int = 0) -> dict:
    """Max relative error per loss: vae, robust, td, sched."""
    rng = np.random.default_rng(seed)
    out = {}

    vae = Vae(VaeConfig(6, 3, hidden=(8,), seed=seed))
    batch = rng.normal(size=(4, 6))
    eta = rng.standard_normal((4, 3))
    out["vae"] = grad_check(lambda: vae.loss_and_backward(batch, eta), vae.groups,
                            probes, rng=np.random.default_rng(seed + 1))

    model = _adapter(seed)
    s, z = rng.normal(size=4), rng.normal(size=3)
    noise_seed = seed + 2
    out["robust"] = grad_check(
        lambda: robust_loss(model, s, z, [0, 1], 0.5, np.random.default_rng(noise_seed)),
        [model.gate.params, model.base.params], probes, rng=np.random.default_rng(seed + 3),
    )

    # semi-gradient TD: the bootstrapped target is held fixed, as in training
    target = 0.4 + 0.9 * float(np.max(model.predict(s + 0.1, z, [0, 1])))
    out["td"] = grad_check(
        lambda: td_loss_backward(model, model.forward(s, z, [0, 1]), 1, target),
        [model.gate.params, model.base.params], probes, rng=np.random.default_rng(seed + 5),
    )

    sched = Mlp(MlpSpec.hidden(3, [6], 4, seed=seed + 6), "sched")
    zs = rng.normal(size=3)
    out["sched"] = grad_check(lambda: log_prob_backward(sched, zs, [2, 0]), sched.params, probes,
                              rng=np.random.default_rng(seed + 7))
    return out
