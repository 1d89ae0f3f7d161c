"""Transfer-RL laboratory: VAE representations, gated source mixtures and an M-of-N scheduler."""

__version__ = "0.1.0"
