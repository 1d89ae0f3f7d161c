"""Configuration, persistence, metrics and experiment presets."""
