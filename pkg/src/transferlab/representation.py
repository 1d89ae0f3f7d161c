"""Gaussian-latent VAE shared by all tasks (states zero-padded to a common width)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Mlp, MlpSpec, sgd_step
from .errors import ConfigError, NumericalError

LOGVAR_CLAMP = 10.0


@dataclass
class VaeConfig:
    input_dim: int
    latent_dim: int = 8
    hidden: tuple = (32,)
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1 or self.input_dim < 1:
            raise ConfigError("VAE dimensions must be positive")


@dataclass
class LatentCode:
    mean: np.ndarray
    logvar: np.ndarray
    z: np.ndarray


class Vae:
    def __init__(self, config: VaeConfig, encoder=None, decoder=None):
        self.config = config
        d, k = config.input_dim, config.latent_dim
        self.encoder = encoder or Mlp(
            MlpSpec.hidden(d, config.hidden, 2 * k, seed=config.seed), "rep.encoder"
        )
        self.decoder = decoder or Mlp(
            MlpSpec.hidden(k, config.hidden, d, seed=config.seed + 1), "rep.decoder"
        )

    @property
    def groups(self):
        return [self.encoder.params, self.decoder.params]

    @property
    def latent_dim(self):
        return self.config.latent_dim

    def _split(self, out):
        k = self.config.latent_dim
        mean = out[..., :k]
        raw = out[..., k:]
        return mean, np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP), raw

    def encode(self, state, eta=None) -> LatentCode:
        """Reparameterized encoding; ``eta=None`` means the mean path (z = mean)."""
        out = self.encoder.predict(state)
        mean, logvar, _ = self._split(out)
        if eta is None:
            return LatentCode(mean, logvar, mean.copy())
        return LatentCode(mean, logvar, mean + np.exp(0.5 * logvar) * eta)

    def encode_mean(self, state) -> np.ndarray:
        return self._split(self.encoder.predict(state))[0]

    def decode(self, z) -> np.ndarray:
        return self.decoder.predict(z)

    def loss_and_backward(self, batch, eta) -> float:
        """Mean L_VAE over ``batch`` rows; accumulates gradients into both groups."""
        x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        n = x.shape[0]
        out, enc_tape = self.encoder(x)
        mean, logvar, raw = self._split(out)
        std = np.exp(0.5 * logvar)
        z = mean + std * eta
        xhat, dec_tape = self.decoder(z)
        diff = xhat - x
        var = np.exp(logvar)
        recon = np.sum(diff * diff, axis=1)
        kl = 0.5 * np.sum(mean * mean + var - 1.0 - logvar, axis=1)
        total = float(np.mean(recon + kl))
        if not np.isfinite(total):
            raise NumericalError(f"non-finite VAE loss {total}")

        dz = dec_tape.backward(2.0 * diff / n)
        dmean = dz + mean / n
        dlogvar = dz * eta * 0.5 * std + 0.5 * (var - 1.0) / n
        dlogvar = dlogvar * ((raw > -LOGVAR_CLAMP) & (raw < LOGVAR_CLAMP))
        enc_tape.backward(np.concatenate([dmean, dlogvar], axis=1))
        return total


def vae_loss(s, s_hat, mean, logvar) -> tuple[float, float, float]:
    """(total, recon, kl) for one state against a standard-normal prior."""
    s, s_hat = np.asarray(s, dtype=np.float64), np.asarray(s_hat, dtype=np.float64)
    mean, logvar = np.asarray(mean, dtype=np.float64), np.asarray(logvar, dtype=np.float64)
    recon = float(np.sum((s - s_hat) ** 2))
    kl = float(0.5 * np.sum(mean ** 2 + np.exp(logvar) - 1.0 - logvar))
    return recon + kl, recon, kl


def update_rep(vae: Vae, batch, lr: float, rng) -> float:
    """One SGD step on the batch-mean VAE loss; returns the pre-step loss."""
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[0] == 0:
        raise ConfigError("VAE update needs a nonempty batch")
    eta = rng.standard_normal((x.shape[0], vae.latent_dim))
    for g in vae.groups:
        g.zero_grad()
    loss = vae.loss_and_backward(x, eta)
    for g in vae.groups:
        sgd_step(g, lr)
    return loss
